#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedmix::data {

// In-memory synthetic dataset: x[i] is a d-vector, y[i] its class in [0, C).
struct Dataset {
    std::size_t C = 0;
    std::size_t d = 0;
    std::vector<std::vector<double>> x;
    std::vector<int> y;
};

struct Splits {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

struct ShardDataset {
    int shard_id = 0;
    std::size_t C = 0;
    std::size_t d = 0;
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    std::vector<int> side;  // transform index per example, 0 when unused
    Splits splits;
    bool all_train = false; // shards under 10 examples keep everything in train
};

// C Gaussian clusters with seeded means on a scaled axis arrangement;
// per-class counts balanced within one.
Dataset make_blobs(std::size_t C, std::size_t d, std::size_t n, double spread,
                   std::uint64_t seed);

// Label-skew partition: each shard draws class proportions from Dir(alpha)
// and fills its equal-size quota by sampling classes without replacement
// from per-class pools (renormalizing over classes with data left).
std::vector<ShardDataset> dirichlet_label_partition(const Dataset& ds, std::size_t S,
                                                    double alpha, std::uint64_t seed);

inline constexpr std::size_t kTransformCount = 8;

// Eight seeded orthogonal d x d matrices, index 0 the identity, row-major.
struct TransformBank {
    std::size_t d = 0;
    std::vector<std::vector<double>> mats;
};

TransformBank make_transform_bank(std::size_t d, std::uint64_t seed);
std::vector<double> apply_transform(const TransformBank& bank, int r,
                                    const std::vector<double>& x);

// Covariate-shift partition: uniform split across shards (or Dirichlet label
// skew when combined is set), then each shard draws a Dir(alpha) distribution
// over the 8 transforms and every example (test splits included) is
// transformed by a draw from it, fixed once at partition time.
std::vector<ShardDataset> transform_partition(const Dataset& ds, std::size_t S,
                                              double alpha, std::uint64_t seed,
                                              bool combined_label_skew = false,
                                              double label_alpha = 0.1);

// n_perms distinct permutations of [0, C).
std::vector<std::vector<int>> make_permutations(std::size_t C, std::size_t n_perms,
                                                std::uint64_t seed);

struct PermutationPartition {
    std::vector<ShardDataset> shards;
    std::vector<int> assignment; // shard -> permutation id (ground truth)
};

// Concept-shift partition: uniform split, shard s relabels through
// perms[s % perms.size()] (balanced round-robin).
PermutationPartition permutation_partition(const Dataset& ds, std::size_t S,
                                           const std::vector<std::vector<int>>& perms,
                                           std::uint64_t seed);

// CSV with header shard,split,side,y,x0,...,x{d-1}
std::string shards_to_csv(const std::vector<ShardDataset>& shards);
std::vector<ShardDataset> shards_from_csv(const std::string& csv);

} // namespace fedmix::data
