#pragma once

#include "fedmix/config.hpp"
#include "fedmix/federation.hpp"
#include "fedmix/metrics.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fedmix::runner {

struct PartitionResult {
    std::vector<data::ShardDataset> shards;
    // permutation id per shard under the label_permutation scheme, else empty
    std::vector<int> ground_truth;
};

PartitionResult build_shards(const config::ExperimentConfig& cfg);

// the round's cohort: `m` of `S` shard ids without replacement, ascending
std::vector<std::size_t> sample_cohort(std::size_t S, std::size_t m,
                                       std::uint64_t seed, std::uint64_t round);

struct RunResult {
    std::string metrics_csv;
    std::string phi_snapshots_csv;
    federation::ServerState server;
    std::vector<federation::ClientState> clients;
    PartitionResult partition;
    std::vector<metrics::RoundMetrics> rows;
};

// Executes the full round schedule. `jobs` parallelizes the client phase;
// every output is byte-identical across jobs settings because client RNG is
// keyed by (seed, round, shard, epoch) and aggregation sorts by shard id.
RunResult run_experiment(const config::ExperimentConfig& cfg, std::size_t jobs = 1);

// p(y|x) under the client's last communicated snapshot
std::vector<double> personalized_predict(const config::ExperimentConfig& cfg,
                                         const federation::ClientState& client,
                                         const std::vector<double>& x);

// unweighted mean test accuracy over clients that have communicated at least
// once and own a nonempty test split; the others are counted into `skipped`
double local_accuracy(const config::ExperimentConfig& cfg,
                      const std::vector<data::ShardDataset>& shards,
                      const std::vector<federation::ClientState>& clients,
                      std::size_t* evaluated = nullptr,
                      std::size_t* skipped = nullptr);

// pooled test accuracy of the server model over every shard: the gate
// ensemble for fedmix, the extractor ensemble for local_global, the plain
// forward pass otherwise
double global_accuracy(const config::ExperimentConfig& cfg,
                       const std::vector<data::ShardDataset>& shards,
                       const std::vector<federation::ClientState>& clients,
                       const federation::ServerState& server);

void save_checkpoint(const std::string& dir, const federation::ServerState& server,
                     const std::vector<federation::ClientState>& clients,
                     const std::string& cfg_hash);

struct Checkpoint {
    federation::ServerState server;
    std::vector<federation::ClientState> clients;
    std::string cfg_hash;
};

Checkpoint load_checkpoint(const std::string& dir, const MlpSpec& spec);

struct AuditRow {
    int shard = 0;
    int cls = 0;
    double true_p = 0.0;
    double recon_p = 0.0;
    std::string mode; // "single" or "multi"
    double shard_l1 = 0.0;
};

// Label-marginal reconstruction audit over every shard, run against a fresh
// model whose output layer is zeroed so its first predictions are exactly
// uniform. Returns the CSV text; rows also land in `out` when given.
std::string privacy_audit_csv(const config::ExperimentConfig& cfg,
                              std::vector<AuditRow>* out = nullptr);

} // namespace fedmix::runner
