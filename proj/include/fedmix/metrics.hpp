#pragma once

#include "fedmix/data.hpp"
#include "fedmix/param_vector.hpp"

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace fedmix::metrics {

// Weighted pairwise divergence of per-shard update deltas,
// sum_i sum_j w_i w_j 0.5 (1 - cos(d_i, d_j)), computed per parameter block
// and summed over blocks. A zero-norm block treats the cosine as 0 and sets
// the flag when one is given.
double gradient_divergence(const std::vector<const ParamVector*>& deltas,
                           const std::vector<double>& weights,
                           bool* saw_zero_delta = nullptr);

// arithmetic mean of the trailing `window` values (all values when fewer)
double sliding_mean(const std::vector<double>& values, std::size_t window);

enum class ReconMode { single_full_batch, multi_step };

// Label-marginal reconstruction from the output-layer bias movement. The
// single-step protocol (one full-batch step from uniform predictions) is
// exact; the multi-step protocol normalizes the positive part of the drift.
std::vector<double> privacy_reconstruct(const std::vector<double>& bias_before,
                                        const std::vector<double>& bias_after,
                                        double lr, std::size_t C, ReconMode mode);

// Fraction of shards whose argmax expert matches their ground-truth cluster
// under the best injective relabeling of clusters into experts.
double clustering_score(const std::vector<std::vector<double>>& q_by_shard,
                        const std::vector<int>& ground_truth, std::size_t K);

using Predictor = std::function<std::vector<double>(const std::vector<double>&)>;

// top-1 accuracy over the given index set; argmax ties break to the lowest
// class index
double split_accuracy(const data::ShardDataset& shard,
                      const std::vector<std::size_t>& split, const Predictor& predict);

struct RoundMetrics {
    std::uint64_t round = 0;
    std::string algo;
    std::size_t K = 1;
    double local_acc = 0.0;
    double global_acc = 0.0;
    std::size_t bytes_up = 0;
    std::size_t bytes_down = 0;
    double gd = 0.0;
    double gd_window = 0.0;
    double phi_entropy = 0.0;
    double active_experts_mean = 0.0;
    double clustering_score = -1.0; // -1 when the run has no ground truth
};

std::string metrics_csv_header();
std::string metrics_csv_row(const RoundMetrics& m);

} // namespace fedmix::metrics
