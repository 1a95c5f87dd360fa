#pragma once

// Experiment configuration files: flat key = value lines grouped under
// [section] headers. '#' and ';' start comments. Unknown sections and keys
// are rejected so typos do not silently fall back to defaults.

#include "koopflow/systems.hpp"
#include "koopflow/training.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace koopflow {

struct ExperimentConfig {
    std::string name = "experiment";
    int n_samples = 120;
    std::uint64_t seed = 42;  // dataset draw
    // Network initialisation and shuffling; follows `seed` unless set.
    std::optional<std::uint64_t> init_seed;
    SplitFractions split;
    int threads = 0;  // 0: one per hardware thread
    std::string output_dir = "out";

    SystemParams system;
    FlowDmdConfig flowdmd;  // network.dim is filled from the system
    AeConfig ae;

    std::uint64_t training_seed() const { return init_seed.value_or(seed); }
    /// Copy of flowdmd with the derived dimension and seed filled in.
    FlowDmdConfig resolved_flowdmd() const;
};

/// Reference setups for each benchmark system.
ExperimentConfig preset(SystemKind kind);

/// Parses a config. `source` names the input in error messages. Settings not
/// present keep the preset of the declared system (fixed_point if none).
ExperimentConfig parse_config(std::istream& in, const std::string& source = "<config>");
ExperimentConfig load_config_file(const std::string& path);

/// Writes a config that parse_config reads back to the same values.
void write_config(std::ostream& out, const ExperimentConfig& cfg);

/// Worker threads for dataset generation: cfg.threads (or the hardware
/// count), capped by KOOPMAN_FLOW_THREADS when set.
int generation_threads(const ExperimentConfig& cfg);

}  // namespace koopflow
