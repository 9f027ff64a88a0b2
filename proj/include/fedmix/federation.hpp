#pragma once

#include "fedmix/data.hpp"
#include "fedmix/moe.hpp"
#include "fedmix/optim.hpp"
#include "fedmix/posterior.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fedmix::federation {

enum class Algorithm { fedmix, fedavg, biased_fedavg, local_global };
enum class SideInfoMode { label, transform_index };

Algorithm algorithm_from_string(const std::string& name);
std::string to_string(Algorithm algo);
SideInfoMode side_info_from_string(const std::string& name);
std::string to_string(SideInfoMode mode);

struct RoundConfig {
    std::size_t K = 1;
    double beta_entropy = 1.0; // temperature of the closed-form phi update
    double gamma = 0.75;       // phi dampening
    double eta = 0.0;          // pruning threshold, 0 disables
    std::size_t clients_per_round = 1;
    std::size_t E = 1;
    std::size_t B = 32;
    double lr_client = 0.05;
    double lr_server = 0.01;
    Algorithm algorithm = Algorithm::fedmix;
    SideInfoMode side_info = SideInfoMode::label;
    std::uint64_t seed = 0;
    bool entropy_reg = true; // marginal-entropy term in the server phi delta
    bool gate_grad_to_features = false;

    void validate() const;
};

// what a client keeps of its model between rounds: the expert copies it last
// trained (all K without pruning) plus which bank slots they are
struct ModelSnapshot {
    std::vector<std::size_t> expert_ids;
    std::vector<ParamVector> experts;

    bool empty() const { return experts.empty(); }
};

struct ClientState {
    int shard_id = -1;
    moe::LocalGate gate;              // persists across rounds, never communicated
    std::vector<double> local_bias;   // biased_fedavg: output bias, local only
    ParamVector local_feature_layers; // local_global: first hidden layer, local only
    ModelSnapshot last_communicated;  // personalized evaluation model
};

struct ClientReport {
    int shard_id = -1;
    std::map<std::size_t, ParamVector> updated_bank; // transmitted experts only
    posterior::PosteriorTable updated_phi;           // fedmix only
    std::vector<double> q_z_given_s;
    std::size_t n_examples = 0;
    std::size_t bytes_up = 0;
};

struct ServerState {
    moe::ExpertBank bank;
    posterior::PosteriorTable phi;
    std::vector<AdamState> adam_bank; // parallel to bank.experts
    AdamState adam_phi;               // over phi flattened to one block
    std::map<int, std::vector<double>> stored_qzs;
    std::uint64_t round = 0;

    // expert k drawn from the (seed, "expert-init", k) stream, phi uniform
    static ServerState init(const MlpSpec& spec, std::size_t K, std::size_t C_side,
                            std::uint64_t seed);
    void validate() const;
};

// client-side filter: keep k iff q(z=k|s) >= eta/K
std::vector<std::size_t> prune_filter(const std::vector<double>& q, double eta,
                                      std::size_t K);

// server transmission filter over the stored q of a shard; a shard with no
// stored row gets every expert (a uniform row passes for any eta <= 1)
std::vector<std::size_t> transmission_filter(const std::vector<double>* stored_q,
                                             double eta, std::size_t K);

// One local FedMix pass: E epochs of minibatch ascent on the bound, the
// closed-form phi update dampened after every batch, q(z|s) recomputed over
// the full training split at the end. The gate lives in ClientState and is
// trained in place. Returns nothing when the shard has no training data.
std::optional<ClientReport> client_update(ClientState& client,
                                          const data::ShardDataset& shard,
                                          const moe::ExpertBank& bank,
                                          const posterior::PosteriorTable& phi,
                                          const RoundConfig& cfg, std::uint64_t round);

// Pruned variant: `received` lists the bank slots the server transmitted
// (the transmission_filter output). Per batch the active set is re-derived
// from the current local q(z|s); the closed-form row is computed over the
// active set, rescaled by the phi mass it covers, and only surviving experts
// are reported. With eta = 0 this is byte-for-byte client_update.
std::optional<ClientReport> client_update_pruned(ClientState& client,
                                                 const data::ShardDataset& shard,
                                                 const moe::ExpertBank& bank,
                                                 const std::vector<std::size_t>& received,
                                                 const posterior::PosteriorTable& phi,
                                                 const RoundConfig& cfg,
                                                 std::uint64_t round);

// FedAvg and its two personalization baselines share one loop: E epochs of
// cross-entropy ascent on a single model. biased_fedavg keeps the output
// bias local and persistent; local_global does the same with the first
// hidden layer. Local blocks are reset to the server's round-start values in
// the transmitted copy, so their deltas are exactly zero.
std::optional<ClientReport> baseline_client_update(ClientState& client,
                                                   const data::ShardDataset& shard,
                                                   const moe::ExpertBank& bank,
                                                   const RoundConfig& cfg,
                                                   std::uint64_t round);

// Aggregates a cohort: per expert, the delta is the p(s|z=k)-weighted sum of
// (old - new) over reports that transmitted it, stepped with that expert's
// Adam state. Experts no report carries are frozen, moments untouched. For
// fedmix the phi table takes the p(s)-weighted delta minus the
// marginal-entropy gradient, then a re-projection. Aggregation order is
// fixed by sorting reports by shard_id.
void server_round(ServerState& server, std::vector<ClientReport> reports,
                  const RoundConfig& cfg);

struct LocalSnapshot {
    std::vector<std::size_t> expert_ids;
    std::vector<ParamVector> experts;
    moe::LocalGate gate;
    posterior::PosteriorTable phi;
};

// a few personalization epochs on copies; server and client state stay as
// they are
LocalSnapshot finetune(const ClientState& client, const data::ShardDataset& shard,
                       const moe::ExpertBank& bank,
                       const posterior::PosteriorTable& phi, const RoundConfig& cfg,
                       std::size_t epochs);

// train a fresh gate against a frozen bank and phi (new-client inference)
moe::LocalGate fit_new_client_gate(const data::ShardDataset& shard,
                                   const moe::ExpertBank& bank,
                                   const posterior::PosteriorTable& phi,
                                   const RoundConfig& cfg, std::size_t epochs);

struct EnsemblePrediction {
    std::vector<double> p_z;
    std::vector<double> p_y;
};

// p_z = sum_s p_s * gate_probs_s(x), p_y = sum_z expert predictive * p_z
EnsemblePrediction ensemble_gate_predict(const std::vector<double>& x,
                                         const std::vector<const moe::LocalGate*>& gates,
                                         const std::vector<double>& p_s,
                                         const moe::ExpertBank& bank);

// global prediction for local_global: first-hidden activations averaged over
// the stored extractors, pushed through the global model's remaining layers
std::vector<double> local_global_ensemble_predict(
    const std::vector<double>& x, const std::vector<const ParamVector*>& extractors,
    const ParamVector& global_model, const MlpSpec& spec);

// per-example side category and category counts over an index set
int side_category(const data::ShardDataset& shard, std::size_t index,
                  SideInfoMode mode, std::size_t C_side);
std::vector<double> side_counts(const data::ShardDataset& shard,
                                const std::vector<std::size_t>& indices,
                                SideInfoMode mode, std::size_t C_side);

std::size_t param_bytes(const ParamVector& params);
std::size_t phi_bytes(const posterior::PosteriorTable& table);

// training indices (the whole shard when it was too small to split)
const std::vector<std::size_t>& train_indices(const data::ShardDataset& shard);

} // namespace fedmix::federation
