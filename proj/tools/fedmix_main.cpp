#include "fedmix/config.hpp"
#include "fedmix/errors.hpp"
#include "fedmix/runner.hpp"
#include "fedmix/serialize.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>

namespace fs = std::filesystem;
using namespace fedmix;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

std::string resolve_output(const config::ExperimentConfig& cfg,
                           const std::string& flag) {
    return flag.empty() ? cfg.output_dir : flag;
}

int cmd_run(const std::string& config_path, const std::string& output_flag,
            std::size_t jobs) {
    const config::ExperimentConfig cfg = config::load_config(config_path);
    const std::string out = resolve_output(cfg, output_flag);

    runner::RunResult res = runner::run_experiment(cfg, jobs);

    fs::create_directories(out);
    write_text_file(out + "/metrics.csv", res.metrics_csv);
    write_text_file(out + "/phi_snapshots.csv", res.phi_snapshots_csv);
    runner::save_checkpoint(out + "/checkpoint", res.server, res.clients,
                            config::config_hash(cfg));

    if (!res.rows.empty()) {
        const metrics::RoundMetrics& last = res.rows.back();
        std::cout << "completed " << cfg.rounds << " rounds of "
                  << federation::to_string(cfg.round.algorithm)
                  << ": local_acc=" << format_double(last.local_acc)
                  << " global_acc=" << format_double(last.global_acc) << "\n";
    }
    std::cout << "outputs in " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint_flag,
             const std::string& output_flag, std::size_t finetune_epochs,
             bool finetune_set, int holdout) {
    const config::ExperimentConfig cfg = config::load_config(config_path);
    const std::string out = resolve_output(cfg, output_flag);
    const std::string ckpt_dir =
        checkpoint_flag.empty() ? out + "/checkpoint" : checkpoint_flag;

    const runner::Checkpoint ckpt =
        runner::load_checkpoint(ckpt_dir, cfg.mlp_spec());
    if (ckpt.cfg_hash != config::config_hash(cfg))
        std::cerr << "warning: checkpoint was written under a different config\n";

    const runner::PartitionResult part = runner::build_shards(cfg);
    if (part.shards.size() != ckpt.clients.size())
        throw StructuralError("eval: checkpoint client count does not match S");

    std::size_t evaluated = 0, skipped = 0;
    const double local =
        runner::local_accuracy(cfg, part.shards, ckpt.clients, &evaluated, &skipped);
    const double global =
        runner::global_accuracy(cfg, part.shards, ckpt.clients, ckpt.server);

    std::cout << "metric,value\n";
    std::cout << "round," << ckpt.server.round << "\n";
    std::cout << "local_acc," << format_double(local) << "\n";
    std::cout << "global_acc," << format_double(global) << "\n";
    std::cout << "local_evaluated," << evaluated << "\n";
    std::cout << "local_skipped," << skipped << "\n";

    const std::size_t epochs = finetune_set ? finetune_epochs : cfg.finetune_epochs;
    if (epochs > 0) {
        if (cfg.round.algorithm != federation::Algorithm::fedmix)
            throw ConfigError("eval: finetune requires algorithm = fedmix");
        double sum = 0.0;
        std::size_t n = 0;
        for (const federation::ClientState& client : ckpt.clients) {
            const data::ShardDataset& shard =
                part.shards[static_cast<std::size_t>(client.shard_id)];
            if (federation::train_indices(shard).empty() ||
                shard.splits.test.empty())
                continue;
            const federation::LocalSnapshot snap = federation::finetune(
                client, shard, ckpt.server.bank, ckpt.server.phi, cfg.round, epochs);
            moe::ExpertBank bank;
            bank.spec = cfg.mlp_spec();
            bank.experts = snap.experts;
            sum += metrics::split_accuracy(
                shard, shard.splits.test, [&](const std::vector<double>& x) {
                    return moe::mixture_predict(bank, snap.gate, x);
                });
            ++n;
        }
        std::cout << "finetune_epochs," << epochs << "\n";
        std::cout << "finetuned_local_acc,"
                  << format_double(n == 0 ? 0.0 : sum / static_cast<double>(n))
                  << "\n";
    }

    if (holdout >= 0) {
        if (cfg.round.algorithm != federation::Algorithm::fedmix)
            throw ConfigError("eval: new-client mode requires algorithm = fedmix");
        if (static_cast<std::size_t>(holdout) >= part.shards.size())
            throw ConfigError("eval: holdout shard out of range");
        const data::ShardDataset& shard =
            part.shards[static_cast<std::size_t>(holdout)];
        const moe::LocalGate gate = federation::fit_new_client_gate(
            shard, ckpt.server.bank, ckpt.server.phi, cfg.round,
            epochs > 0 ? epochs : 1);
        const auto& bank = ckpt.server.bank;
        double acc = 0.0;
        if (!shard.splits.test.empty())
            acc = metrics::split_accuracy(
                shard, shard.splits.test, [&](const std::vector<double>& x) {
                    return moe::mixture_predict(bank, gate, x);
                });
        std::cout << "new_client_shard," << holdout << "\n";
        std::cout << "new_client_acc," << format_double(acc) << "\n";
    }
    return 0;
}

int cmd_audit(const std::string& config_path, const std::string& output_flag) {
    const config::ExperimentConfig cfg = config::load_config(config_path);
    const std::string out = resolve_output(cfg, output_flag);

    std::vector<runner::AuditRow> rows;
    const std::string csv = runner::privacy_audit_csv(cfg, &rows);
    fs::create_directories(out);
    write_text_file(out + "/privacy_audit.csv", csv);

    double l1_single = 0.0, l1_multi = 0.0;
    std::size_t n_single = 0, n_multi = 0;
    for (const runner::AuditRow& r : rows) {
        if (r.cls != 0) continue; // the shard L1 repeats on every class row
        if (r.mode == "single") {
            l1_single += r.shard_l1;
            ++n_single;
        } else {
            l1_multi += r.shard_l1;
            ++n_multi;
        }
    }
    std::cout << "metric,value\n";
    std::cout << "audit_shards," << n_single << "\n";
    std::cout << "mean_l1_single,"
              << format_double(n_single ? l1_single / static_cast<double>(n_single)
                                        : 0.0)
              << "\n";
    std::cout << "mean_l1_multi,"
              << format_double(n_multi ? l1_multi / static_cast<double>(n_multi)
                                       : 0.0)
              << "\n";
    std::cout << "audit written to " << out << "/privacy_audit.csv\n";
    return 0;
}

int cmd_partition(const std::string& config_path, const std::string& output_flag) {
    const config::ExperimentConfig cfg = config::load_config(config_path);
    const std::string out = resolve_output(cfg, output_flag);

    const runner::PartitionResult part = runner::build_shards(cfg);
    fs::create_directories(out);
    write_text_file(out + "/shards.csv", data::shards_to_csv(part.shards));
    std::cout << part.shards.size() << " shards written to " << out
              << "/shards.csv\n";
    if (!part.ground_truth.empty()) {
        std::string gt = "shard,permutation\n";
        for (std::size_t s = 0; s < part.ground_truth.size(); ++s)
            gt += std::to_string(s) + "," + std::to_string(part.ground_truth[s]) +
                  "\n";
        write_text_file(out + "/ground_truth.csv", gt);
        std::cout << "permutation assignment written to " << out
                  << "/ground_truth.csv\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated mixture-of-experts experiment runner"};
    app.require_subcommand(1);

    std::string config_path, output_flag, checkpoint_flag;
    std::size_t jobs = 1;
    std::size_t finetune_epochs = 0;
    int holdout = -1;

    CLI::App* run = app.add_subcommand("run", "train per the config");
    run->add_option("--config", config_path, "experiment config path")->required();
    run->add_option("--jobs", jobs, "parallel client workers");
    run->add_option("--output", output_flag, "output directory override");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--config", config_path, "experiment config path")->required();
    eval->add_option("--checkpoint", checkpoint_flag,
                     "checkpoint directory (default <output>/checkpoint)");
    eval->add_option("--output", output_flag, "output directory override");
    CLI::Option* ft = eval->add_option("--finetune-epochs", finetune_epochs,
                                       "personalization epochs before local eval");
    eval->add_option("--holdout", holdout,
                     "fit a fresh gate for this shard and report its accuracy");

    CLI::App* audit = app.add_subcommand("audit-privacy",
                                         "reconstruct label marginals from updates");
    audit->add_option("--config", config_path, "experiment config path")->required();
    audit->add_option("--output", output_flag, "output directory override");

    CLI::App* partition =
        app.add_subcommand("partition", "dump the partitioned shards to CSV");
    partition->add_option("--config", config_path, "experiment config path")
        ->required();
    partition->add_option("--output", output_flag, "output directory override");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, output_flag, jobs);
        if (eval->parsed())
            return cmd_eval(config_path, checkpoint_flag, output_flag,
                            finetune_epochs, ft->count() > 0, holdout);
        if (audit->parsed()) return cmd_audit(config_path, output_flag);
        if (partition->parsed()) return cmd_partition(config_path, output_flag);
    } catch (const DivergenceError& e) {
        std::cerr << "error: training diverged at round " << e.round() << ": "
                  << e.what() << "\n";
        return kExitDiverged;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const StructuralError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
