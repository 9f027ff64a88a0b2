#include "fedmix/metrics.hpp"

#include "fedmix/errors.hpp"
#include "fedmix/kernels.hpp"
#include "fedmix/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedmix::metrics {

namespace {

double block_cosine(const Block& a, const Block& b, bool* saw_zero) {
    const double ab = kernels::dot(a.values.data(), b.values.data(), a.size());
    const double aa = kernels::dot(a.values.data(), a.values.data(), a.size());
    const double bb = kernels::dot(b.values.data(), b.values.data(), b.size());
    if (aa <= 0.0 || bb <= 0.0) {
        if (saw_zero) *saw_zero = true;
        return 0.0;
    }
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

} // namespace

double gradient_divergence(const std::vector<const ParamVector*>& deltas,
                           const std::vector<double>& weights,
                           bool* saw_zero_delta) {
    if (deltas.empty())
        throw ContractViolation("gradient_divergence: no deltas");
    if (deltas.size() != weights.size())
        throw ContractViolation("gradient_divergence: weight count mismatch");
    for (std::size_t i = 1; i < deltas.size(); ++i)
        deltas[i]->require_aligned(*deltas[0], "gradient_divergence");
    if (saw_zero_delta) *saw_zero_delta = false;

    double total = 0.0;
    for (std::size_t bi = 0; bi < deltas[0]->blocks.size(); ++bi) {
        for (std::size_t i = 0; i < deltas.size(); ++i) {
            for (std::size_t j = 0; j < deltas.size(); ++j) {
                const double cos = block_cosine(
                    deltas[i]->blocks[bi], deltas[j]->blocks[bi], saw_zero_delta);
                total += weights[i] * weights[j] * 0.5 * (1.0 - cos);
            }
        }
    }
    return total;
}

double sliding_mean(const std::vector<double>& values, std::size_t window) {
    if (values.empty() || window == 0)
        throw ContractViolation("sliding_mean: empty input");
    const std::size_t n = std::min(window, values.size());
    double sum = 0.0;
    for (std::size_t i = values.size() - n; i < values.size(); ++i) sum += values[i];
    return sum / static_cast<double>(n);
}

std::vector<double> privacy_reconstruct(const std::vector<double>& bias_before,
                                        const std::vector<double>& bias_after,
                                        double lr, std::size_t C, ReconMode mode) {
    if (bias_before.size() != C || bias_after.size() != C)
        throw ContractViolation("privacy_reconstruct: bias width mismatch");
    if (lr <= 0.0) throw ConfigError("privacy_reconstruct: lr must be positive");

    std::vector<double> p(C, 0.0);
    if (mode == ReconMode::single_full_batch) {
        // One full-batch step from uniform predictions moves the bias by
        // lr * (p_hat - 1/C), so the drift inverts exactly.
        for (std::size_t c = 0; c < C; ++c)
            p[c] = (bias_after[c] - bias_before[c]) / lr + 1.0 / static_cast<double>(C);
        return p;
    }

    double sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        p[c] = std::max(0.0, bias_after[c] - bias_before[c]);
        sum += p[c];
    }
    if (sum <= 0.0) {
        std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(C));
        return p;
    }
    for (double& v : p) v /= sum;
    return p;
}

double clustering_score(const std::vector<std::vector<double>>& q_by_shard,
                        const std::vector<int>& ground_truth, std::size_t K) {
    if (q_by_shard.empty() || q_by_shard.size() != ground_truth.size())
        throw ContractViolation("clustering_score: shard count mismatch");
    int max_label = 0;
    for (int g : ground_truth) {
        if (g < 0) throw ContractViolation("clustering_score: negative cluster id");
        max_label = std::max(max_label, g);
    }
    const std::size_t n = std::max(static_cast<std::size_t>(max_label) + 1, K);

    // contingency[g][e] counts shards of cluster g whose argmax expert is e;
    // padding to a square makes every injective relabeling a permutation
    std::vector<std::vector<std::size_t>> contingency(n, std::vector<std::size_t>(n, 0));
    for (std::size_t s = 0; s < q_by_shard.size(); ++s) {
        const auto& q = q_by_shard[s];
        if (q.size() != K)
            throw ContractViolation("clustering_score: q row width mismatch");
        std::size_t best = 0;
        for (std::size_t k = 1; k < K; ++k)
            if (q[k] > q[best]) best = k;
        contingency[static_cast<std::size_t>(ground_truth[s])][best] += 1;
    }

    // exhaustive search over relabelings, factorial in max(K, clusters);
    // intended for single-digit expert counts
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::size_t best_hits = 0;
    do {
        std::size_t hits = 0;
        for (std::size_t g = 0; g < n; ++g) hits += contingency[g][perm[g]];
        best_hits = std::max(best_hits, hits);
    } while (std::next_permutation(perm.begin(), perm.end()));

    return static_cast<double>(best_hits) / static_cast<double>(q_by_shard.size());
}

double split_accuracy(const data::ShardDataset& shard,
                      const std::vector<std::size_t>& split, const Predictor& predict) {
    if (split.empty()) throw ContractViolation("split_accuracy: empty split");
    std::size_t hits = 0;
    for (std::size_t idx : split) {
        const std::vector<double> p = predict(shard.x[idx]);
        std::size_t best = 0;
        for (std::size_t c = 1; c < p.size(); ++c)
            if (p[c] > p[best]) best = c;
        if (static_cast<int>(best) == shard.y[idx]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(split.size());
}

std::string metrics_csv_header() {
    return "round,algo,K,local_acc,global_acc,bytes_up,bytes_down,gd,gd_window,"
           "phi_entropy,active_experts_mean,clustering_score";
}

std::string metrics_csv_row(const RoundMetrics& m) {
    std::string row;
    row += std::to_string(m.round);
    row += ',';
    row += m.algo;
    row += ',';
    row += std::to_string(m.K);
    row += ',';
    row += format_double(m.local_acc);
    row += ',';
    row += format_double(m.global_acc);
    row += ',';
    row += std::to_string(m.bytes_up);
    row += ',';
    row += std::to_string(m.bytes_down);
    row += ',';
    row += format_double(m.gd);
    row += ',';
    row += format_double(m.gd_window);
    row += ',';
    row += format_double(m.phi_entropy);
    row += ',';
    row += format_double(m.active_experts_mean);
    row += ',';
    row += format_double(m.clustering_score);
    return row;
}

} // namespace fedmix::metrics
