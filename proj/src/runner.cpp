#include "fedmix/runner.hpp"

#include "fedmix/errors.hpp"
#include "fedmix/rng.hpp"
#include "fedmix/serialize.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>

namespace fedmix::runner {

namespace fs = std::filesystem;
namespace fed = federation;

namespace {

std::size_t argmax_lowest(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

// restricting a gate to a subset of experts renormalizes both softmaxes
moe::LocalGate slice_gate(const moe::LocalGate& gate,
                          const std::vector<std::size_t>& ids) {
    const std::size_t K = gate.K();
    const std::size_t P = K == 0 ? 0 : gate.A.size() / K;
    moe::LocalGate out = moe::LocalGate::zeros(P, ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out.pi_logits[i] = gate.pi_logits[ids[i]];
        out.b[i] = gate.b[ids[i]];
        for (std::size_t p = 0; p < P; ++p)
            out.A[p * ids.size() + i] = gate.A[p * K + ids[i]];
    }
    return out;
}

std::vector<std::string> local_block_names(fed::Algorithm algo, const MlpSpec& spec) {
    if (algo == fed::Algorithm::biased_fedavg)
        return {"L" + std::to_string(spec.num_layers() - 1) + "/b"};
    if (algo == fed::Algorithm::local_global) return {"L0/W", "L0/b"};
    return {};
}

ParamVector drop_blocks(const ParamVector& pv, const std::vector<std::string>& names) {
    if (names.empty()) return pv;
    ParamVector out;
    for (const Block& b : pv.blocks)
        if (std::find(names.begin(), names.end(), b.name) == names.end())
            out.blocks.push_back(b);
    return out;
}

std::size_t wire_down_bytes(const ParamVector& model, fed::Algorithm algo,
                            const MlpSpec& spec) {
    // the biased baseline broadcasts the full model (only the uplink skips
    // the bias); local-global never moves the first layer in either direction
    std::size_t values = model.value_count();
    if (algo == fed::Algorithm::local_global)
        for (const std::string& name : local_block_names(algo, spec))
            values -= model.block(name).size();
    return values * sizeof(double);
}

void ensure_finite(const fed::ServerState& server, std::uint64_t round) {
    for (const ParamVector& e : server.bank.experts)
        for (const Block& b : e.blocks)
            for (double v : b.values)
                if (!std::isfinite(v))
                    throw DivergenceError(round, "non-finite server parameter");
    for (const auto& row : server.phi.phi)
        for (double v : row)
            if (!std::isfinite(v))
                throw DivergenceError(round, "non-finite server phi");
}

double round_gd(const config::ExperimentConfig& cfg, const fed::ServerState& server,
                const std::vector<fed::ClientReport>& reports) {
    double total_n = 0.0;
    for (const auto& r : reports) total_n += static_cast<double>(r.n_examples);
    std::vector<double> p_s(reports.size());
    for (std::size_t i = 0; i < reports.size(); ++i)
        p_s[i] = static_cast<double>(reports[i].n_examples) / total_n;

    const MlpSpec spec = cfg.mlp_spec();
    if (cfg.round.algorithm == fed::Algorithm::fedmix) {
        // per expert, the deltas of its transmitters weighted by p(s|z=k);
        // the round's divergence is the mean over live experts
        double sum = 0.0;
        std::size_t counted = 0;
        for (std::size_t k = 0; k < cfg.round.K; ++k) {
            double wsum = 0.0;
            for (std::size_t i = 0; i < reports.size(); ++i)
                if (reports[i].updated_bank.count(k))
                    wsum += reports[i].q_z_given_s[k] * p_s[i];
            if (wsum <= 0.0) continue;
            std::vector<ParamVector> deltas;
            std::vector<double> weights;
            for (std::size_t i = 0; i < reports.size(); ++i) {
                const auto it = reports[i].updated_bank.find(k);
                if (it == reports[i].updated_bank.end()) continue;
                deltas.push_back(difference(server.bank.experts[k], it->second));
                weights.push_back(reports[i].q_z_given_s[k] * p_s[i] / wsum);
            }
            std::vector<const ParamVector*> ptrs;
            for (const ParamVector& d : deltas) ptrs.push_back(&d);
            sum += metrics::gradient_divergence(ptrs, weights);
            ++counted;
        }
        return counted == 0 ? 0.0 : sum / static_cast<double>(counted);
    }

    // baselines: one delta per report over the blocks that actually moved
    const auto locals = local_block_names(cfg.round.algorithm, spec);
    std::vector<ParamVector> deltas;
    for (const auto& r : reports)
        deltas.push_back(drop_blocks(
            difference(server.bank.experts[0], r.updated_bank.at(0)), locals));
    std::vector<const ParamVector*> ptrs;
    for (const ParamVector& d : deltas) ptrs.push_back(&d);
    return metrics::gradient_divergence(ptrs, p_s);
}

ParamVector gate_to_params(const moe::LocalGate& gate) {
    const std::size_t K = gate.K();
    const std::size_t P = K == 0 ? 0 : gate.A.size() / K;
    ParamVector pv;
    Block pi;
    pi.name = "pi_logits";
    pi.dims = {K};
    pi.values = gate.pi_logits;
    Block a;
    a.name = "A";
    a.dims = {P, K};
    a.values = gate.A;
    Block b;
    b.name = "b";
    b.dims = {K};
    b.values = gate.b;
    pv.blocks = {std::move(pi), std::move(a), std::move(b)};
    return pv;
}

moe::LocalGate params_to_gate(const ParamVector& pv) {
    moe::LocalGate gate;
    gate.pi_logits = pv.block("pi_logits").values;
    gate.A = pv.block("A").values;
    gate.b = pv.block("b").values;
    return gate;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

double csv_double(const std::string& s, const char* where) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw StructuralError(std::string(where) + ": bad number '" + s + "'");
    return v;
}

std::uint64_t csv_u64(const std::string& s, const char* where) {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw StructuralError(std::string(where) + ": bad integer '" + s + "'");
    return v;
}

} // namespace

PartitionResult build_shards(const config::ExperimentConfig& cfg) {
    const data::Dataset ds =
        data::make_blobs(cfg.C, cfg.d, cfg.n, cfg.spread, cfg.round.seed);
    PartitionResult out;
    if (cfg.scheme == "dirichlet_label") {
        out.shards = data::dirichlet_label_partition(ds, cfg.S, cfg.alpha,
                                                     cfg.round.seed);
    } else if (cfg.scheme == "transform_skew") {
        out.shards = data::transform_partition(ds, cfg.S, cfg.alpha, cfg.round.seed,
                                               cfg.combined, cfg.label_alpha);
    } else if (cfg.scheme == "label_permutation") {
        const auto perms =
            data::make_permutations(cfg.C, cfg.n_permutations, cfg.round.seed);
        data::PermutationPartition pp =
            data::permutation_partition(ds, cfg.S, perms, cfg.round.seed);
        out.shards = std::move(pp.shards);
        out.ground_truth = std::move(pp.assignment);
    } else {
        throw ConfigError("config field partition.scheme: unknown scheme '" +
                          cfg.scheme + "'");
    }
    return out;
}

std::vector<std::size_t> sample_cohort(std::size_t S, std::size_t m,
                                       std::uint64_t seed, std::uint64_t round) {
    if (m > S) throw ConfigError("sample_cohort: cohort larger than population");
    std::vector<std::size_t> ids(S);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    RngStream stream = RngStream::named(seed, "sample", round);
    stream.shuffle(ids);
    ids.resize(m);
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::vector<double> personalized_predict(const config::ExperimentConfig& cfg,
                                         const fed::ClientState& client,
                                         const std::vector<double>& x) {
    const fed::ModelSnapshot& snap = client.last_communicated;
    if (snap.empty())
        throw ContractViolation("personalized_predict: client never communicated");
    const MlpSpec spec = cfg.mlp_spec();
    if (cfg.round.algorithm == fed::Algorithm::fedmix) {
        moe::ExpertBank bank;
        bank.spec = spec;
        bank.experts = snap.experts;
        return moe::mixture_predict(bank, slice_gate(client.gate, snap.expert_ids), x);
    }
    return softmax(forward(spec, snap.experts[0], x).logits);
}

double local_accuracy(const config::ExperimentConfig& cfg,
                      const std::vector<data::ShardDataset>& shards,
                      const std::vector<fed::ClientState>& clients,
                      std::size_t* evaluated, std::size_t* skipped) {
    double sum = 0.0;
    std::size_t n = 0, skip = 0;
    for (const fed::ClientState& client : clients) {
        if (client.shard_id < 0 ||
            static_cast<std::size_t>(client.shard_id) >= shards.size())
            throw StructuralError("local_accuracy: client without a shard");
        const data::ShardDataset& shard =
            shards[static_cast<std::size_t>(client.shard_id)];
        if (client.last_communicated.empty() || shard.splits.test.empty()) {
            ++skip;
            continue;
        }
        sum += metrics::split_accuracy(
            shard, shard.splits.test,
            [&](const std::vector<double>& x) {
                return personalized_predict(cfg, client, x);
            });
        ++n;
    }
    if (evaluated) *evaluated = n;
    if (skipped) *skipped = skip;
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double global_accuracy(const config::ExperimentConfig& cfg,
                       const std::vector<data::ShardDataset>& shards,
                       const std::vector<fed::ClientState>& clients,
                       const fed::ServerState& server) {
    const MlpSpec spec = cfg.mlp_spec();
    metrics::Predictor predict;

    moe::LocalGate fallback_gate;
    std::vector<const moe::LocalGate*> gates;
    std::vector<double> gate_w;
    std::vector<const ParamVector*> extractors;

    switch (cfg.round.algorithm) {
    case fed::Algorithm::fedmix: {
        double total = 0.0;
        for (const fed::ClientState& c : clients) {
            if (c.gate.K() != server.bank.K()) continue;
            gates.push_back(&c.gate);
            const double w = static_cast<double>(
                fed::train_indices(shards[static_cast<std::size_t>(c.shard_id)])
                    .size());
            gate_w.push_back(w);
            total += w;
        }
        if (gates.empty() || total <= 0.0) {
            // nobody has trained a gate yet: a zero gate mixes uniformly
            fallback_gate =
                moe::LocalGate::zeros(spec.penultimate_dim(), server.bank.K());
            gates = {&fallback_gate};
            gate_w = {1.0};
        } else {
            for (double& w : gate_w) w /= total;
        }
        predict = [&](const std::vector<double>& x) {
            return fed::ensemble_gate_predict(x, gates, gate_w, server.bank).p_y;
        };
        break;
    }
    case fed::Algorithm::local_global: {
        for (const fed::ClientState& c : clients)
            if (!c.local_feature_layers.blocks.empty())
                extractors.push_back(&c.local_feature_layers);
        if (extractors.empty()) {
            predict = [&](const std::vector<double>& x) {
                return softmax(forward(spec, server.bank.experts[0], x).logits);
            };
        } else {
            predict = [&](const std::vector<double>& x) {
                return fed::local_global_ensemble_predict(
                    x, extractors, server.bank.experts[0], spec);
            };
        }
        break;
    }
    default:
        predict = [&](const std::vector<double>& x) {
            return softmax(forward(spec, server.bank.experts[0], x).logits);
        };
    }

    std::size_t correct = 0, total = 0;
    for (const data::ShardDataset& shard : shards) {
        for (std::size_t i : shard.splits.test) {
            const auto p = predict(shard.x[i]);
            if (static_cast<int>(argmax_lowest(p)) == shard.y[i]) ++correct;
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

RunResult run_experiment(const config::ExperimentConfig& cfg, std::size_t jobs) {
    cfg.validate();
    if (cfg.round.algorithm != fed::Algorithm::fedmix && cfg.round.K != 1)
        throw ConfigError("config field training.K: baselines run with K = 1");
    if (jobs == 0) jobs = 1;

    RunResult res;
    res.partition = build_shards(cfg);
    const MlpSpec spec = cfg.mlp_spec();
    res.server =
        fed::ServerState::init(spec, cfg.round.K, cfg.c_side(), cfg.round.seed);
    res.clients.assign(cfg.S, fed::ClientState{});
    for (std::size_t s = 0; s < cfg.S; ++s)
        res.clients[s].shard_id = res.partition.shards[s].shard_id;

    res.metrics_csv = metrics::metrics_csv_header() + "\n";
    res.phi_snapshots_csv = "round,category,expert,prob\n";

    std::vector<double> gd_history;
    std::size_t bytes_up_total = 0, bytes_down_total = 0;

    for (std::uint64_t r = 0; r < cfg.rounds; ++r) {
        const auto cohort =
            sample_cohort(cfg.S, cfg.round.clients_per_round, cfg.round.seed, r);

        std::vector<std::vector<std::size_t>> received(cohort.size());
        for (std::size_t i = 0; i < cohort.size(); ++i) {
            if (cfg.round.algorithm == fed::Algorithm::fedmix &&
                cfg.round.eta > 0.0) {
                const auto it =
                    res.server.stored_qzs.find(res.clients[cohort[i]].shard_id);
                received[i] = fed::transmission_filter(
                    it == res.server.stored_qzs.end() ? nullptr : &it->second,
                    cfg.round.eta, cfg.round.K);
            } else {
                received[i] = moe::all_experts(cfg.round.K);
            }
        }

        std::vector<std::optional<fed::ClientReport>> slots(cohort.size());
        auto run_client = [&](std::size_t i) {
            fed::ClientState& client = res.clients[cohort[i]];
            const data::ShardDataset& shard = res.partition.shards[cohort[i]];
            if (cfg.round.algorithm == fed::Algorithm::fedmix) {
                slots[i] = cfg.round.eta > 0.0
                               ? fed::client_update_pruned(client, shard,
                                                           res.server.bank,
                                                           received[i],
                                                           res.server.phi,
                                                           cfg.round, r)
                               : fed::client_update(client, shard, res.server.bank,
                                                    res.server.phi, cfg.round, r);
            } else {
                slots[i] = fed::baseline_client_update(client, shard,
                                                       res.server.bank, cfg.round, r);
            }
        };

        if (jobs <= 1 || cohort.size() <= 1) {
            for (std::size_t i = 0; i < cohort.size(); ++i) run_client(i);
        } else {
            // slots are disjoint and every client stream is keyed by
            // (seed, round, shard, epoch), so scheduling cannot change bytes
            std::atomic<std::size_t> next{0};
            const std::size_t workers = std::min(jobs, cohort.size());
            std::vector<std::exception_ptr> errors(workers);
            std::vector<std::thread> pool;
            pool.reserve(workers);
            for (std::size_t w = 0; w < workers; ++w)
                pool.emplace_back([&, w] {
                    try {
                        for (std::size_t i = next.fetch_add(1); i < cohort.size();
                             i = next.fetch_add(1))
                            run_client(i);
                    } catch (...) {
                        errors[w] = std::current_exception();
                    }
                });
            for (std::thread& t : pool) t.join();
            for (const std::exception_ptr& e : errors)
                if (e) std::rethrow_exception(e);
        }

        for (std::size_t i = 0; i < cohort.size(); ++i) {
            if (cfg.round.algorithm == fed::Algorithm::fedmix) {
                for (std::size_t k : received[i])
                    bytes_down_total += fed::param_bytes(res.server.bank.experts[k]);
                bytes_down_total += fed::phi_bytes(res.server.phi);
            } else {
                bytes_down_total += wire_down_bytes(res.server.bank.experts[0],
                                                    cfg.round.algorithm, spec);
            }
        }

        std::vector<fed::ClientReport> reports;
        for (auto& s : slots)
            if (s) reports.push_back(std::move(*s));
        for (const fed::ClientReport& rep : reports) bytes_up_total += rep.bytes_up;

        gd_history.push_back(reports.empty() ? 0.0
                                             : round_gd(cfg, res.server, reports));

        if (reports.empty())
            res.server.round += 1; // the round clock ticks even for a no-op
        else
            fed::server_round(res.server, std::move(reports), cfg.round);

        ensure_finite(res.server, r);
        const std::uint64_t round_now = r + 1;

        if (cfg.phi_snapshot_every > 0 && round_now % cfg.phi_snapshot_every == 0) {
            for (std::size_t c = 0; c < res.server.phi.C_side; ++c)
                for (std::size_t k = 0; k < res.server.phi.K; ++k)
                    res.phi_snapshots_csv +=
                        std::to_string(round_now) + "," + std::to_string(c) + "," +
                        std::to_string(k) + "," +
                        format_double(res.server.phi.phi[c][k]) + "\n";
        }

        if (round_now % cfg.eval_every == 0 || round_now == cfg.rounds) {
            metrics::RoundMetrics row;
            row.round = round_now;
            row.algo = fed::to_string(cfg.round.algorithm);
            row.K = cfg.round.K;
            row.local_acc =
                local_accuracy(cfg, res.partition.shards, res.clients);
            row.global_acc = global_accuracy(cfg, res.partition.shards, res.clients,
                                             res.server);
            row.bytes_up = bytes_up_total;
            row.bytes_down = bytes_down_total;
            row.gd = gd_history.back();
            row.gd_window = metrics::sliding_mean(gd_history, 10);
            row.phi_entropy = res.server.phi.mean_row_entropy();

            if (!res.server.stored_qzs.empty()) {
                double active = 0.0;
                for (const auto& [sid, q] : res.server.stored_qzs) {
                    std::size_t count = 0;
                    for (double v : q)
                        if (v > 0.05) ++count;
                    active += static_cast<double>(count);
                }
                row.active_experts_mean =
                    active / static_cast<double>(res.server.stored_qzs.size());
            }

            if (!res.partition.ground_truth.empty() &&
                !res.server.stored_qzs.empty()) {
                std::vector<std::vector<double>> q_rows;
                std::vector<int> truth;
                for (const auto& [sid, q] : res.server.stored_qzs) {
                    q_rows.push_back(q);
                    truth.push_back(
                        res.partition.ground_truth[static_cast<std::size_t>(sid)]);
                }
                row.clustering_score =
                    metrics::clustering_score(q_rows, truth, cfg.round.K);
            }

            res.rows.push_back(row);
            res.metrics_csv += metrics::metrics_csv_row(row) + "\n";
        }
    }
    return res;
}

void save_checkpoint(const std::string& dir, const fed::ServerState& server,
                     const std::vector<fed::ClientState>& clients,
                     const std::string& cfg_hash) {
    fs::create_directories(dir);
    const std::size_t K = server.bank.K();

    std::string manifest;
    manifest += "config_hash " + cfg_hash + "\n";
    manifest += "round " + std::to_string(server.round) + "\n";
    manifest += "K " + std::to_string(K) + "\n";
    manifest += "C_side " + std::to_string(server.phi.C_side) + "\n";
    for (std::size_t k = 0; k < K; ++k) {
        manifest += "adam_t " + std::to_string(k) + " " +
                    std::to_string(server.adam_bank[k].t) + "\n";
        save_params(server.bank.experts[k], dir + "/bank_" + std::to_string(k) + ".bin");
        save_params(server.adam_bank[k].m,
                    dir + "/adam_" + std::to_string(k) + "_m.bin");
        save_params(server.adam_bank[k].v,
                    dir + "/adam_" + std::to_string(k) + "_v.bin");
    }
    manifest += "phi_adam_t " + std::to_string(server.adam_phi.t) + "\n";
    save_params(server.adam_phi.m, dir + "/phi_adam_m.bin");
    save_params(server.adam_phi.v, dir + "/phi_adam_v.bin");

    std::string phi_csv = "category,expert,prob\n";
    for (std::size_t c = 0; c < server.phi.C_side; ++c)
        for (std::size_t k = 0; k < K; ++k)
            phi_csv += std::to_string(c) + "," + std::to_string(k) + "," +
                       format_double(server.phi.phi[c][k]) + "\n";
    write_text_file(dir + "/phi.csv", phi_csv);

    std::string q_csv = "shard,expert,q\n";
    for (const auto& [sid, q] : server.stored_qzs)
        for (std::size_t k = 0; k < q.size(); ++k)
            q_csv += std::to_string(sid) + "," + std::to_string(k) + "," +
                     format_double(q[k]) + "\n";
    write_text_file(dir + "/stored_q.csv", q_csv);

    manifest += "clients " + std::to_string(clients.size()) + "\n";
    for (const fed::ClientState& c : clients) {
        const std::string sid = std::to_string(c.shard_id);
        const bool has_gate = c.gate.K() > 0;
        const bool has_bias = !c.local_bias.empty();
        const bool has_features = !c.local_feature_layers.blocks.empty();
        std::string comm = "-";
        if (!c.last_communicated.empty()) {
            comm.clear();
            for (std::size_t k : c.last_communicated.expert_ids) {
                if (!comm.empty()) comm += ",";
                comm += std::to_string(k);
            }
        }
        manifest += "client " + sid + " gate=" + (has_gate ? "1" : "0") +
                    " bias=" + (has_bias ? "1" : "0") +
                    " features=" + (has_features ? "1" : "0") + " comm=" + comm +
                    "\n";
        if (has_gate)
            save_params(gate_to_params(c.gate), dir + "/client_" + sid + "_gate.bin");
        if (has_bias) {
            ParamVector pv;
            Block b;
            b.name = "bias";
            b.dims = {c.local_bias.size()};
            b.values = c.local_bias;
            pv.blocks.push_back(std::move(b));
            save_params(pv, dir + "/client_" + sid + "_bias.bin");
        }
        if (has_features)
            save_params(c.local_feature_layers,
                        dir + "/client_" + sid + "_features.bin");
        for (std::size_t i = 0; i < c.last_communicated.expert_ids.size(); ++i)
            save_params(c.last_communicated.experts[i],
                        dir + "/client_" + sid + "_comm_" +
                            std::to_string(c.last_communicated.expert_ids[i]) +
                            ".bin");
    }
    write_text_file(dir + "/manifest.txt", manifest);
}

Checkpoint load_checkpoint(const std::string& dir, const MlpSpec& spec) {
    const std::string manifest = read_text_file(dir + "/manifest.txt");
    Checkpoint out;
    std::size_t K = 0, C_side = 0, client_count = 0;
    std::map<std::size_t, std::uint64_t> adam_t;
    std::uint64_t phi_adam_t = 0;

    struct ClientLine {
        int shard_id = -1;
        bool gate = false, bias = false, features = false;
        std::vector<std::size_t> comm;
    };
    std::vector<ClientLine> client_lines;

    std::stringstream ss(manifest);
    std::string line;
    while (std::getline(ss, line)) {
        std::stringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "config_hash") {
            ls >> out.cfg_hash;
        } else if (key == "round") {
            ls >> out.server.round;
        } else if (key == "K") {
            ls >> K;
        } else if (key == "C_side") {
            ls >> C_side;
        } else if (key == "adam_t") {
            std::size_t k = 0;
            std::uint64_t t = 0;
            ls >> k >> t;
            adam_t[k] = t;
        } else if (key == "phi_adam_t") {
            ls >> phi_adam_t;
        } else if (key == "clients") {
            ls >> client_count;
        } else if (key == "client") {
            ClientLine cl;
            std::string gate, bias, features, comm;
            ls >> cl.shard_id >> gate >> bias >> features >> comm;
            cl.gate = gate == "gate=1";
            cl.bias = bias == "bias=1";
            cl.features = features == "features=1";
            if (comm.rfind("comm=", 0) != 0)
                throw StructuralError("checkpoint manifest: malformed client line");
            const std::string ids = comm.substr(5);
            if (ids != "-")
                for (const std::string& part : split_csv_line(ids))
                    cl.comm.push_back(csv_u64(part, "checkpoint manifest"));
            client_lines.push_back(std::move(cl));
        } else if (!key.empty()) {
            throw StructuralError("checkpoint manifest: unknown key '" + key + "'");
        }
    }
    if (K == 0 || C_side == 0)
        throw StructuralError("checkpoint manifest: missing K or C_side");

    out.server.bank.spec = spec;
    for (std::size_t k = 0; k < K; ++k) {
        out.server.bank.experts.push_back(
            load_params(dir + "/bank_" + std::to_string(k) + ".bin"));
        AdamState st = AdamState::init(out.server.bank.experts[k]);
        st.m = load_params(dir + "/adam_" + std::to_string(k) + "_m.bin");
        st.v = load_params(dir + "/adam_" + std::to_string(k) + "_v.bin");
        st.t = adam_t.count(k) ? adam_t[k] : 0;
        st.m.require_aligned(out.server.bank.experts[k], "checkpoint adam m");
        st.v.require_aligned(out.server.bank.experts[k], "checkpoint adam v");
        out.server.adam_bank.push_back(std::move(st));
    }
    out.server.bank.validate();
    std::size_t expected = 0;
    for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l)
        expected += spec.widths[l + 1] * spec.widths[l] + spec.widths[l + 1];
    if (out.server.bank.experts[0].value_count() != expected)
        throw StructuralError("checkpoint bank does not match the configured model");

    out.server.phi = posterior::PosteriorTable::uniform(C_side, K);
    {
        std::stringstream ps(read_text_file(dir + "/phi.csv"));
        std::string row;
        std::getline(ps, row); // header
        while (std::getline(ps, row)) {
            if (row.empty()) continue;
            const auto f = split_csv_line(row);
            if (f.size() != 3) throw StructuralError("checkpoint phi.csv: bad row");
            const std::size_t c = csv_u64(f[0], "phi.csv");
            const std::size_t k = csv_u64(f[1], "phi.csv");
            if (c >= C_side || k >= K)
                throw StructuralError("checkpoint phi.csv: index out of range");
            out.server.phi.phi[c][k] = csv_double(f[2], "phi.csv");
        }
    }
    {
        ParamVector like;
        Block b;
        b.name = "phi";
        b.dims = {C_side, K};
        b.values.assign(C_side * K, 0.0);
        like.blocks.push_back(std::move(b));
        AdamState st = AdamState::init(like);
        st.m = load_params(dir + "/phi_adam_m.bin");
        st.v = load_params(dir + "/phi_adam_v.bin");
        st.t = phi_adam_t;
        st.m.require_aligned(like, "checkpoint phi adam m");
        st.v.require_aligned(like, "checkpoint phi adam v");
        out.server.adam_phi = std::move(st);
    }
    {
        std::stringstream qs(read_text_file(dir + "/stored_q.csv"));
        std::string row;
        std::getline(qs, row); // header
        while (std::getline(qs, row)) {
            if (row.empty()) continue;
            const auto f = split_csv_line(row);
            if (f.size() != 3)
                throw StructuralError("checkpoint stored_q.csv: bad row");
            const int sid = static_cast<int>(csv_u64(f[0], "stored_q.csv"));
            const std::size_t k = csv_u64(f[1], "stored_q.csv");
            auto& q = out.server.stored_qzs[sid];
            if (q.size() != K) q.assign(K, 0.0);
            if (k >= K) throw StructuralError("checkpoint stored_q.csv: bad expert");
            q[k] = csv_double(f[2], "stored_q.csv");
        }
    }
    out.server.validate();

    if (client_lines.size() != client_count)
        throw StructuralError("checkpoint manifest: client count mismatch");
    for (const ClientLine& cl : client_lines) {
        fed::ClientState c;
        c.shard_id = cl.shard_id;
        const std::string sid = std::to_string(cl.shard_id);
        if (cl.gate) {
            c.gate = params_to_gate(load_params(dir + "/client_" + sid + "_gate.bin"));
            if (c.gate.K() != K)
                throw StructuralError("checkpoint client gate width mismatch");
        }
        if (cl.bias)
            c.local_bias =
                load_params(dir + "/client_" + sid + "_bias.bin").block("bias").values;
        if (cl.features)
            c.local_feature_layers =
                load_params(dir + "/client_" + sid + "_features.bin");
        for (std::size_t k : cl.comm) {
            c.last_communicated.expert_ids.push_back(k);
            c.last_communicated.experts.push_back(load_params(
                dir + "/client_" + sid + "_comm_" + std::to_string(k) + ".bin"));
        }
        out.clients.push_back(std::move(c));
    }
    return out;
}

std::string privacy_audit_csv(const config::ExperimentConfig& cfg,
                              std::vector<AuditRow>* out) {
    cfg.validate();
    const PartitionResult part = build_shards(cfg);
    const MlpSpec spec = cfg.mlp_spec();

    // fresh model with a zeroed output layer: its predictions are exactly
    // uniform, which the single-step reconstruction formula assumes
    ParamVector model =
        fed::ServerState::init(spec, 1, cfg.c_side(), cfg.round.seed).bank.experts[0];
    const std::string last = std::to_string(spec.num_layers() - 1);
    std::fill(model.block("L" + last + "/W").values.begin(),
              model.block("L" + last + "/W").values.end(), 0.0);
    std::fill(model.block("L" + last + "/b").values.begin(),
              model.block("L" + last + "/b").values.end(), 0.0);
    const std::vector<double> bias_before(cfg.C, 0.0);

    std::string csv = "shard,class,true_p,recon_p,mode,shard_l1\n";
    for (const data::ShardDataset& shard : part.shards) {
        const auto& train = fed::train_indices(shard);
        if (train.empty()) continue;

        std::vector<double> true_p(cfg.C, 0.0);
        for (std::size_t i : train) true_p[static_cast<std::size_t>(shard.y[i])] += 1.0;
        for (double& v : true_p) v /= static_cast<double>(train.size());

        for (const bool single : {true, false}) {
            fed::RoundConfig rc = cfg.round;
            rc.algorithm = fed::Algorithm::fedavg;
            rc.K = 1;
            rc.E = 1;
            rc.eta = 0.0;
            rc.B = single ? train.size() : std::size_t{8};

            moe::ExpertBank bank;
            bank.spec = spec;
            bank.experts = {model};
            fed::ClientState probe;
            const auto rep = fed::baseline_client_update(probe, shard, bank, rc, 0);
            if (!rep) continue;
            const std::vector<double>& bias_after =
                rep->updated_bank.at(0).block("L" + last + "/b").values;

            const auto recon = metrics::privacy_reconstruct(
                bias_before, bias_after, rc.lr_client, cfg.C,
                single ? metrics::ReconMode::single_full_batch
                       : metrics::ReconMode::multi_step);
            double l1 = 0.0;
            for (std::size_t c = 0; c < cfg.C; ++c)
                l1 += std::abs(true_p[c] - recon[c]);

            const char* mode = single ? "single" : "multi";
            for (std::size_t c = 0; c < cfg.C; ++c) {
                csv += std::to_string(shard.shard_id) + "," + std::to_string(c) +
                       "," + format_double(true_p[c]) + "," +
                       format_double(recon[c]) + "," + mode + "," +
                       format_double(l1) + "\n";
                if (out)
                    out->push_back({shard.shard_id, static_cast<int>(c), true_p[c],
                                    recon[c], mode, l1});
            }
        }
    }
    return csv;
}

} // namespace fedmix::runner
