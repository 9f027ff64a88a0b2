#include "fedmix/federation.hpp"

#include "fedmix/errors.hpp"
#include "fedmix/kernels.hpp"
#include "fedmix/rng.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <utility>

namespace fedmix::federation {

namespace {

// phi rides through the server Adam step as a single-block ParamVector
ParamVector phi_to_params(const posterior::PosteriorTable& table) {
    Block b;
    b.name = "phi";
    b.dims = {table.C_side, table.K};
    b.values.reserve(table.C_side * table.K);
    for (const auto& row : table.phi)
        b.values.insert(b.values.end(), row.begin(), row.end());
    ParamVector pv;
    pv.blocks.push_back(std::move(b));
    return pv;
}

void params_to_phi(const ParamVector& pv, posterior::PosteriorTable& table) {
    const Block& b = pv.blocks.front();
    for (std::size_t c = 0; c < table.C_side; ++c)
        for (std::size_t k = 0; k < table.K; ++k)
            table.phi[c][k] = b.values[c * table.K + k];
}

struct LocalTrainResult {
    moe::ExpertBank bank; // full-width local copy; slots outside `received`
                          // are carried only to keep expert indices aligned
    posterior::PosteriorTable phi;
    std::vector<double> q;
};

// The client inner loop shared by FedMix, its pruned variant, the FedAvg
// family (single-expert bank), and finetuning. Trains `gate` in place,
// touches only experts in `received`, and dampens phi after every batch.
LocalTrainResult local_train(moe::LocalGate& gate, const data::ShardDataset& shard,
                             const moe::ExpertBank& bank,
                             const std::vector<std::size_t>& received,
                             const posterior::PosteriorTable& phi,
                             const RoundConfig& cfg, std::uint64_t round,
                             std::size_t epochs, const char* stream_tag) {
    const std::size_t K = bank.K();
    LocalTrainResult out{bank, phi, {}};

    const std::vector<std::size_t>& train = train_indices(shard);
    const std::vector<double> counts =
        side_counts(shard, train, cfg.side_info, phi.C_side);
    const double threshold = cfg.eta / static_cast<double>(K);
    const std::uint64_t sid = static_cast<std::uint64_t>(shard.shard_id);
    bool warned = false;

    for (std::size_t e = 0; e < epochs; ++e) {
        std::vector<std::size_t> order = train;
        RngStream rng = RngStream::named(cfg.seed, stream_tag, round, sid, e);
        rng.shuffle(order);

        for (std::size_t start = 0; start < order.size(); start += cfg.B) {
            const std::size_t stop = std::min(start + cfg.B, order.size());

            std::vector<std::size_t> active;
            if (cfg.eta > 0.0) {
                const std::vector<double> q_now =
                    posterior::marginal_q_z_given_s(out.phi, counts);
                for (std::size_t k : received)
                    if (q_now[k] >= threshold) active.push_back(k);
            } else {
                active = received;
            }
            if (active.empty()) {
                if (!warned) {
                    std::cerr << "fedmix: shard " << shard.shard_id
                              << " pruned every received expert; skipping batches\n";
                    warned = true;
                }
                continue;
            }
            const bool full = active.size() == K;

            moe::Batch batch;
            std::vector<int> cats;
            batch.reserve(stop - start);
            cats.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                const std::size_t idx = order[i];
                batch.push_back({&shard.x[idx], shard.y[idx]});
                cats.push_back(side_category(shard, idx, cfg.side_info, phi.C_side));
            }

            const moe::BatchEval eval = moe::eval_batch(out.bank, gate, batch, active);
            const auto rows =
                posterior::closed_form_phi(eval.log_joint, cats, cfg.beta_entropy);

            if (full) {
                posterior::dampen(out.phi, rows, cfg.gamma);
            } else {
                // the closed-form row redistributes only the phi mass that
                // currently sits on the active set; inactive entries hold
                for (const auto& [c, row] : rows) {
                    auto& target = out.phi.phi[static_cast<std::size_t>(c)];
                    double mass = 0.0;
                    for (std::size_t m = 0; m < active.size(); ++m)
                        mass += target[active[m]];
                    for (std::size_t m = 0; m < active.size(); ++m)
                        target[active[m]] = cfg.gamma * target[active[m]] +
                                            (1.0 - cfg.gamma) * row[m] * mass;
                }
            }

            // likelihood weights renormalize phi over the active set; the
            // gate term keeps the raw mass so pruned-away probability is not
            // re-awarded to the survivors
            std::vector<std::vector<double>> q_like(batch.size());
            std::vector<std::vector<double>> q_gate(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const auto& prow = out.phi.phi[static_cast<std::size_t>(cats[i])];
                if (full) {
                    q_like[i] = prow;
                    q_gate[i] = prow;
                    continue;
                }
                std::vector<double> raw(active.size());
                double sum = 0.0;
                for (std::size_t m = 0; m < active.size(); ++m) {
                    raw[m] = prow[active[m]];
                    sum += raw[m];
                }
                q_gate[i] = raw;
                if (sum > 0.0)
                    for (double& v : raw) v /= sum;
                else
                    std::fill(raw.begin(), raw.end(),
                              1.0 / static_cast<double>(active.size()));
                q_like[i] = std::move(raw);
            }

            const moe::LowerBoundResult lb =
                moe::lower_bound_grads(out.bank, gate, eval, batch, q_like, q_gate,
                                       active, cfg.gate_grad_to_features);
            if (!std::isfinite(lb.loss))
                throw DivergenceError(round, "non-finite client loss on shard " +
                                                 std::to_string(shard.shard_id));

            // ascent on the bound
            for (std::size_t m = 0; m < active.size(); ++m)
                sgd_step(out.bank.experts[active[m]], lb.grads_bank[m],
                         -cfg.lr_client);
            lb.grad_gate.axpy_into(gate, cfg.lr_client);
        }
    }

    out.q = posterior::marginal_q_z_given_s(out.phi, counts);
    return out;
}

std::optional<ClientReport> run_fedmix_client(ClientState& client,
                                              const data::ShardDataset& shard,
                                              const moe::ExpertBank& bank,
                                              const std::vector<std::size_t>& received,
                                              const posterior::PosteriorTable& phi,
                                              const RoundConfig& cfg,
                                              std::uint64_t round) {
    cfg.validate();
    const std::vector<std::size_t>& train = train_indices(shard);
    if (train.empty()) return std::nullopt;

    const std::size_t K = bank.K();
    for (std::size_t k : received)
        if (k >= K) throw StructuralError("client_update: received expert out of range");
    if (client.gate.K() == 0)
        client.gate = moe::LocalGate::zeros(bank.spec.penultimate_dim(), K);

    LocalTrainResult res =
        local_train(client.gate, shard, bank, received, phi, cfg, round, cfg.E, "batch");

    ClientReport rep;
    rep.shard_id = shard.shard_id;
    rep.updated_phi = res.phi;
    rep.q_z_given_s = res.q;
    rep.n_examples = train.size();

    std::vector<std::size_t> surviving;
    if (cfg.eta > 0.0) {
        const double threshold = cfg.eta / static_cast<double>(K);
        for (std::size_t k : received)
            if (res.q[k] >= threshold) surviving.push_back(k);
    } else {
        surviving = received;
    }

    rep.bytes_up = phi_bytes(res.phi);
    for (std::size_t k : surviving) {
        rep.updated_bank.emplace(k, res.bank.experts[k]);
        rep.bytes_up += param_bytes(res.bank.experts[k]);
    }

    client.last_communicated.expert_ids = received;
    client.last_communicated.experts.clear();
    for (std::size_t k : received)
        client.last_communicated.experts.push_back(res.bank.experts[k]);
    return rep;
}

} // namespace

Algorithm algorithm_from_string(const std::string& name) {
    if (name == "fedmix") return Algorithm::fedmix;
    if (name == "fedavg") return Algorithm::fedavg;
    if (name == "biased_fedavg") return Algorithm::biased_fedavg;
    if (name == "local_global") return Algorithm::local_global;
    throw ConfigError("unknown algorithm: " + name);
}

std::string to_string(Algorithm algo) {
    switch (algo) {
        case Algorithm::fedmix: return "fedmix";
        case Algorithm::fedavg: return "fedavg";
        case Algorithm::biased_fedavg: return "biased_fedavg";
        case Algorithm::local_global: return "local_global";
    }
    throw ConfigError("unknown algorithm value");
}

SideInfoMode side_info_from_string(const std::string& name) {
    if (name == "label") return SideInfoMode::label;
    if (name == "transform_index") return SideInfoMode::transform_index;
    throw ConfigError("unknown side_info mode: " + name);
}

std::string to_string(SideInfoMode mode) {
    return mode == SideInfoMode::label ? "label" : "transform_index";
}

void RoundConfig::validate() const {
    if (K == 0) throw ConfigError("K must be at least 1");
    if (!(beta_entropy > 0.0)) throw ConfigError("beta_entropy must be positive");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0,1]");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in [0,1]");
    if (clients_per_round == 0) throw ConfigError("clients_per_round must be at least 1");
    if (B == 0) throw ConfigError("B must be at least 1");
    if (!(lr_client >= 0.0)) throw ConfigError("lr_client must be nonnegative");
    if (!(lr_server >= 0.0)) throw ConfigError("lr_server must be nonnegative");
}

ServerState ServerState::init(const MlpSpec& spec, std::size_t K, std::size_t C_side,
                              std::uint64_t seed) {
    spec.validate();
    if (K == 0) throw ConfigError("K must be at least 1");
    if (C_side == 0) throw ConfigError("C_side must be at least 1");

    ServerState s;
    s.bank.spec = spec;
    s.bank.experts.reserve(K);
    for (std::size_t k = 0; k < K; ++k) {
        RngStream rng = RngStream::named(seed, "expert-init", k);
        s.bank.experts.push_back(init_params(spec, rng));
    }
    s.phi = posterior::PosteriorTable::uniform(C_side, K);
    s.adam_bank.reserve(K);
    for (std::size_t k = 0; k < K; ++k)
        s.adam_bank.push_back(AdamState::init(s.bank.experts[k]));
    s.adam_phi = AdamState::init(phi_to_params(s.phi));
    return s;
}

void ServerState::validate() const {
    bank.validate();
    phi.validate();
    if (phi.K != bank.K()) throw StructuralError("phi width does not match bank");
    if (adam_bank.size() != bank.K())
        throw StructuralError("adam states do not match bank");
    for (std::size_t k = 0; k < bank.K(); ++k)
        adam_bank[k].m.require_aligned(bank.experts[k], "server adam state");
    for (const auto& [sid, q] : stored_qzs) {
        if (q.size() != bank.K())
            throw StructuralError("stored q width does not match bank");
        double sum = 0.0;
        for (double v : q) sum += v;
        if (std::abs(sum - 1.0) > 1e-9)
            throw ContractViolation("stored q off the simplex for shard " +
                                    std::to_string(sid));
    }
}

std::vector<std::size_t> prune_filter(const std::vector<double>& q, double eta,
                                      std::size_t K) {
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in [0,1]");
    if (q.size() != K) throw StructuralError("prune_filter: q width mismatch");
    std::vector<std::size_t> active;
    const double threshold = eta / static_cast<double>(K);
    for (std::size_t k = 0; k < K; ++k)
        if (q[k] >= threshold) active.push_back(k);
    return active;
}

std::vector<std::size_t> transmission_filter(const std::vector<double>* stored_q,
                                             double eta, std::size_t K) {
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in [0,1]");
    if (stored_q == nullptr) return moe::all_experts(K);
    if (stored_q->size() != K)
        throw StructuralError("transmission_filter: q width mismatch");
    std::vector<std::size_t> active;
    const double threshold = 0.9 * eta / static_cast<double>(K);
    for (std::size_t k = 0; k < K; ++k)
        if ((*stored_q)[k] >= threshold) active.push_back(k);
    return active;
}

std::optional<ClientReport> client_update(ClientState& client,
                                          const data::ShardDataset& shard,
                                          const moe::ExpertBank& bank,
                                          const posterior::PosteriorTable& phi,
                                          const RoundConfig& cfg, std::uint64_t round) {
    return run_fedmix_client(client, shard, bank, moe::all_experts(bank.K()), phi,
                             cfg, round);
}

std::optional<ClientReport> client_update_pruned(ClientState& client,
                                                 const data::ShardDataset& shard,
                                                 const moe::ExpertBank& bank,
                                                 const std::vector<std::size_t>& received,
                                                 const posterior::PosteriorTable& phi,
                                                 const RoundConfig& cfg,
                                                 std::uint64_t round) {
    return run_fedmix_client(client, shard, bank, received, phi, cfg, round);
}

std::optional<ClientReport> baseline_client_update(ClientState& client,
                                                   const data::ShardDataset& shard,
                                                   const moe::ExpertBank& bank,
                                                   const RoundConfig& cfg,
                                                   std::uint64_t round) {
    cfg.validate();
    const std::vector<std::size_t>& train = train_indices(shard);
    if (train.empty()) return std::nullopt;
    if (bank.K() != 1)
        throw StructuralError("baseline_client_update: bank must hold one model");

    const MlpSpec& spec = bank.spec;
    const std::string bias_name =
        "L" + std::to_string(spec.num_layers() - 1) + "/b";

    std::vector<std::string> local_blocks;
    if (cfg.algorithm == Algorithm::biased_fedavg) {
        local_blocks = {bias_name};
    } else if (cfg.algorithm == Algorithm::local_global) {
        local_blocks = {"L0/W", "L0/b"};
    } else if (cfg.algorithm != Algorithm::fedavg) {
        throw ConfigError("baseline_client_update: fedmix config not accepted");
    }

    moe::ExpertBank local;
    local.spec = spec;
    local.experts.push_back(bank.experts[0]);
    ParamVector& model = local.experts[0];

    // plant persistent local blocks; first participation adopts the server's
    if (cfg.algorithm == Algorithm::biased_fedavg) {
        if (client.local_bias.empty())
            client.local_bias = model.block(bias_name).values;
        else
            model.block(bias_name).values = client.local_bias;
    } else if (cfg.algorithm == Algorithm::local_global) {
        if (client.local_feature_layers.blocks.empty()) {
            client.local_feature_layers.blocks.push_back(model.block("L0/W"));
            client.local_feature_layers.blocks.push_back(model.block("L0/b"));
        } else {
            model.block("L0/W").values =
                client.local_feature_layers.block("L0/W").values;
            model.block("L0/b").values =
                client.local_feature_layers.block("L0/b").values;
        }
    }

    if (client.gate.K() == 0)
        client.gate = moe::LocalGate::zeros(spec.penultimate_dim(), 1);

    // with one expert the bound reduces to plain cross-entropy and the phi
    // machinery is inert; the side-category count only sizes inert rows
    std::size_t c_side = 1;
    for (std::size_t idx : train) {
        const int c = cfg.side_info == SideInfoMode::label ? shard.y[idx]
                                                           : shard.side[idx];
        c_side = std::max(c_side, static_cast<std::size_t>(c) + 1);
    }
    const posterior::PosteriorTable phi1 = posterior::PosteriorTable::uniform(c_side, 1);

    LocalTrainResult res =
        local_train(client.gate, shard, local, {0}, phi1, cfg, round, cfg.E, "batch");
    ParamVector& updated = res.bank.experts[0];

    if (cfg.algorithm == Algorithm::biased_fedavg) {
        client.local_bias = updated.block(bias_name).values;
    } else if (cfg.algorithm == Algorithm::local_global) {
        client.local_feature_layers.block("L0/W").values =
            updated.block("L0/W").values;
        client.local_feature_layers.block("L0/b").values =
            updated.block("L0/b").values;
    }

    // the transmitted copy carries the server's round-start local blocks, so
    // their deltas are exactly zero and they drop out of byte accounting
    ParamVector transmitted = updated;
    std::size_t local_values = 0;
    for (const std::string& name : local_blocks) {
        transmitted.block(name).values = bank.experts[0].block(name).values;
        local_values += transmitted.block(name).size();
    }

    ClientReport rep;
    rep.shard_id = shard.shard_id;
    rep.q_z_given_s = res.q;
    rep.n_examples = train.size();
    rep.bytes_up = (transmitted.value_count() - local_values) * sizeof(double);
    rep.updated_bank.emplace(0, std::move(transmitted));

    client.last_communicated.expert_ids = {0};
    client.last_communicated.experts = {std::move(updated)};
    return rep;
}

void server_round(ServerState& server, std::vector<ClientReport> reports,
                  const RoundConfig& cfg) {
    cfg.validate();
    if (reports.empty()) throw ContractViolation("server_round: no reports");
    std::sort(reports.begin(), reports.end(),
              [](const ClientReport& a, const ClientReport& b) {
                  return a.shard_id < b.shard_id;
              });

    const std::size_t K = server.bank.K();
    double total = 0.0;
    for (const ClientReport& r : reports) {
        if (r.q_z_given_s.size() != K)
            throw StructuralError("server_round: report q width mismatch");
        if (r.n_examples == 0)
            throw ContractViolation("server_round: report with no examples");
        total += static_cast<double>(r.n_examples);
    }
    std::vector<double> p_s(reports.size());
    for (std::size_t i = 0; i < reports.size(); ++i)
        p_s[i] = static_cast<double>(reports[i].n_examples) / total;

    for (std::size_t k = 0; k < K; ++k) {
        bool transmitted = false;
        double weight_sum = 0.0;
        for (std::size_t i = 0; i < reports.size(); ++i) {
            weight_sum += reports[i].q_z_given_s[k] * p_s[i];
            if (reports[i].updated_bank.count(k)) transmitted = true;
        }
        // an expert nobody carries (or nobody owns mass on) is frozen: zero
        // delta and untouched Adam moments
        if (!transmitted || weight_sum <= 0.0) continue;

        ParamVector delta = ParamVector::zeros_like(server.bank.experts[k]);
        for (std::size_t i = 0; i < reports.size(); ++i) {
            const auto it = reports[i].updated_bank.find(k);
            if (it == reports[i].updated_bank.end()) continue;
            const double w = reports[i].q_z_given_s[k] * p_s[i] / weight_sum;
            delta.axpy(w, difference(server.bank.experts[k], it->second));
        }
        adam_step(server.adam_bank[k], server.bank.experts[k], delta, cfg.lr_server);
    }

    if (cfg.algorithm == Algorithm::fedmix) {
        const std::size_t C_side = server.phi.C_side;
        std::vector<std::vector<double>> delta(C_side, std::vector<double>(K, 0.0));
        for (std::size_t i = 0; i < reports.size(); ++i) {
            const posterior::PosteriorTable& rphi = reports[i].updated_phi;
            if (rphi.C_side != C_side || rphi.K != K)
                throw StructuralError("server_round: report phi shape mismatch");
            for (std::size_t c = 0; c < C_side; ++c)
                for (std::size_t k = 0; k < K; ++k)
                    delta[c][k] +=
                        p_s[i] * (server.phi.phi[c][k] - rphi.phi[c][k]);
        }
        if (cfg.entropy_reg) {
            // descending the delta then ascends marginal entropy, which is
            // what keeps rarely-claimed experts alive
            const std::vector<double> p_y(C_side, 1.0 / static_cast<double>(C_side));
            const auto g = posterior::marginal_entropy_grad(server.phi, p_y);
            for (std::size_t c = 0; c < C_side; ++c)
                for (std::size_t k = 0; k < K; ++k) delta[c][k] -= g[c][k];
        }

        ParamVector phi_params = phi_to_params(server.phi);
        posterior::PosteriorTable delta_table = server.phi;
        delta_table.phi = delta;
        const ParamVector phi_delta = phi_to_params(delta_table);
        adam_step(server.adam_phi, phi_params, phi_delta, cfg.lr_server);
        params_to_phi(phi_params, server.phi);
        posterior::project_rows(server.phi);
    }

    for (ClientReport& r : reports)
        server.stored_qzs[r.shard_id] = std::move(r.q_z_given_s);
    server.round += 1;
}

LocalSnapshot finetune(const ClientState& client, const data::ShardDataset& shard,
                       const moe::ExpertBank& bank,
                       const posterior::PosteriorTable& phi, const RoundConfig& cfg,
                       std::size_t epochs) {
    cfg.validate();
    if (train_indices(shard).empty())
        throw ContractViolation("finetune: shard has no training data");

    LocalSnapshot snap;
    snap.gate = client.gate.K() == bank.K()
                    ? client.gate
                    : moe::LocalGate::zeros(bank.spec.penultimate_dim(), bank.K());
    snap.expert_ids = moe::all_experts(bank.K());

    LocalTrainResult res = local_train(snap.gate, shard, bank, snap.expert_ids, phi,
                                       cfg, 0, epochs, "finetune");
    snap.experts = std::move(res.bank.experts);
    snap.phi = std::move(res.phi);
    return snap;
}

moe::LocalGate fit_new_client_gate(const data::ShardDataset& shard,
                                   const moe::ExpertBank& bank,
                                   const posterior::PosteriorTable& phi,
                                   const RoundConfig& cfg, std::size_t epochs) {
    cfg.validate();
    const std::vector<std::size_t>& train = train_indices(shard);
    if (train.empty())
        throw ContractViolation("fit_new_client_gate: shard has no training data");

    const std::size_t K = bank.K();
    moe::LocalGate gate = moe::LocalGate::zeros(bank.spec.penultimate_dim(), K);
    const std::vector<std::size_t> active = moe::all_experts(K);
    const std::uint64_t sid = static_cast<std::uint64_t>(shard.shard_id);

    for (std::size_t e = 0; e < epochs; ++e) {
        std::vector<std::size_t> order = train;
        RngStream rng = RngStream::named(cfg.seed, "newgate", sid, e);
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.B) {
            const std::size_t stop = std::min(start + cfg.B, order.size());
            moe::Batch batch;
            std::vector<std::vector<double>> q;
            for (std::size_t i = start; i < stop; ++i) {
                const std::size_t idx = order[i];
                batch.push_back({&shard.x[idx], shard.y[idx]});
                const int c = side_category(shard, idx, cfg.side_info, phi.C_side);
                q.push_back(phi.phi[static_cast<std::size_t>(c)]);
            }
            const moe::BatchEval eval = moe::eval_batch(bank, gate, batch, active);
            const moe::LowerBoundResult lb =
                moe::lower_bound_grads(bank, gate, eval, batch, q, q, active, false);
            if (!std::isfinite(lb.loss))
                throw DivergenceError(0, "non-finite loss fitting a new gate");
            lb.grad_gate.axpy_into(gate, cfg.lr_client);
        }
    }
    return gate;
}

EnsemblePrediction ensemble_gate_predict(const std::vector<double>& x,
                                         const std::vector<const moe::LocalGate*>& gates,
                                         const std::vector<double>& p_s,
                                         const moe::ExpertBank& bank) {
    if (gates.empty()) throw ContractViolation("ensemble_gate_predict: no gates");
    if (gates.size() != p_s.size())
        throw ContractViolation("ensemble_gate_predict: weight count mismatch");

    const std::size_t K = bank.K();
    EnsemblePrediction out;
    out.p_z.assign(K, 0.0);
    for (std::size_t s = 0; s < gates.size(); ++s) {
        const std::vector<double> pz = moe::gate_probs(bank, *gates[s], x);
        for (std::size_t k = 0; k < K; ++k) out.p_z[k] += p_s[s] * pz[k];
    }

    out.p_y.assign(static_cast<std::size_t>(bank.spec.output_dim()), 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        const ForwardResult f = forward(bank.spec, bank.experts[k], x);
        const std::vector<double> py = softmax(f.logits);
        for (std::size_t c = 0; c < out.p_y.size(); ++c)
            out.p_y[c] += out.p_z[k] * py[c];
    }
    return out;
}

std::vector<double> local_global_ensemble_predict(
    const std::vector<double>& x, const std::vector<const ParamVector*>& extractors,
    const ParamVector& global_model, const MlpSpec& spec) {
    if (extractors.empty())
        throw ContractViolation("local_global_ensemble_predict: no extractors");

    const std::size_t width0 = spec.widths[1];
    std::vector<double> mean_h(width0, 0.0);
    std::vector<double> h(width0);
    for (const ParamVector* ex : extractors) {
        const Block& W = ex->block("L0/W");
        const Block& b = ex->block("L0/b");
        kernels::matvec(W.values.data(), x.data(), h.data(), width0, x.size());
        for (std::size_t i = 0; i < width0; ++i) h[i] += b.values[i];
        kernels::relu(width0, h.data(), h.data());
        for (std::size_t i = 0; i < width0; ++i) mean_h[i] += h[i];
    }
    const double inv = 1.0 / static_cast<double>(extractors.size());
    for (double& v : mean_h) v *= inv;

    // remaining layers come from the global model
    std::vector<double> a = std::move(mean_h);
    for (std::size_t layer = 1; layer < spec.num_layers(); ++layer) {
        const Block& W = global_model.block("L" + std::to_string(layer) + "/W");
        const Block& b = global_model.block("L" + std::to_string(layer) + "/b");
        const std::size_t rows = W.dims[0];
        std::vector<double> z(rows);
        kernels::matvec(W.values.data(), a.data(), z.data(), rows, a.size());
        for (std::size_t i = 0; i < rows; ++i) z[i] += b.values[i];
        if (layer + 1 < spec.num_layers()) kernels::relu(rows, z.data(), z.data());
        a = std::move(z);
    }
    return softmax(a);
}

int side_category(const data::ShardDataset& shard, std::size_t index,
                  SideInfoMode mode, std::size_t C_side) {
    const int c = mode == SideInfoMode::label ? shard.y[index]
                                              : shard.side[index];
    if (c < 0 || static_cast<std::size_t>(c) >= C_side)
        throw StructuralError("side category " + std::to_string(c) +
                              " outside the phi table");
    return c;
}

std::vector<double> side_counts(const data::ShardDataset& shard,
                                const std::vector<std::size_t>& indices,
                                SideInfoMode mode, std::size_t C_side) {
    std::vector<double> counts(C_side, 0.0);
    for (std::size_t idx : indices)
        counts[static_cast<std::size_t>(side_category(shard, idx, mode, C_side))] +=
            1.0;
    return counts;
}

std::size_t param_bytes(const ParamVector& params) {
    return params.value_count() * sizeof(double);
}

std::size_t phi_bytes(const posterior::PosteriorTable& table) {
    return table.C_side * table.K * sizeof(double);
}

const std::vector<std::size_t>& train_indices(const data::ShardDataset& shard) {
    return shard.splits.train;
}

} // namespace fedmix::federation
