#pragma once

#include "fedmix/federation.hpp"
#include "fedmix/mlp.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fedmix::config {

// One experiment, end to end: dataset synthesis, partitioning, the round
// schedule, and evaluation cadence. The textual form is versioned INI
// (config_version is mandatory) and round-trips losslessly through
// parse_config(render_config(cfg)).
struct ExperimentConfig {
    // [dataset]
    std::size_t C = 4;
    std::size_t d = 8;
    std::size_t n = 1000;
    double spread = 0.5;

    // [partition]
    std::string scheme = "dirichlet_label"; // dirichlet_label | transform_skew | label_permutation
    std::size_t S = 4;
    double alpha = 1.0;
    std::size_t n_permutations = 4;
    bool combined = false;    // transform_skew only: add label skew on top
    double label_alpha = 0.1; // Dirichlet alpha of that label skew

    // [training]
    federation::RoundConfig round;
    std::vector<std::size_t> hidden{32};
    std::uint64_t rounds = 1;

    // [eval]
    std::uint64_t eval_every = 1;
    std::uint64_t phi_snapshot_every = 0; // 0 disables snapshots
    std::size_t finetune_epochs = 0;
    std::string output_dir = "out";

    MlpSpec mlp_spec() const;
    std::size_t c_side() const;
    void validate() const;
};

// Errors name the offending field as section.key.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

std::string render_config(const ExperimentConfig& cfg);

// FNV-1a over the canonical rendering; stamped into checkpoints so a later
// eval can detect a drifted setup
std::string config_hash(const ExperimentConfig& cfg);

} // namespace fedmix::config
