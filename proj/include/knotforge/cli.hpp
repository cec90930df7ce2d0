#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "knotforge/model.hpp"
#include "knotforge/scheduler.hpp"
#include "knotforge/topology.hpp"

namespace knotforge::cli {

enum class Mode { Rollout, Baseline, Iou, Contribution, Bench };

std::string to_string(Mode m);
Mode parse_mode(const std::string& name);

/// Fully resolved invocation. Defaults < config file < flags.
struct RunSpec {
    Mode mode = Mode::Rollout;
    std::string config_path;
    std::string output_dir = "knotforge_out";
    sched::RolloutConfig rollout;
    model::ModelConfig model;
    std::string mask_design = "all";  // iou: all | GrowingCache | SinkWindow | KnotForcing
    bool drive = true;                // synthesize a driving signal
    bool zero_drive = false;          // all-zero driving signal
    std::int64_t anchor = 9;          // contribution anchor frame
    std::size_t contribution_seeds = 20;
    std::string load_weights;          // optional weight blob stem
    bool save_weights = false;
    std::size_t bench_repeats = 3;

    friend bool operator==(const RunSpec&, const RunSpec&) = default;
};

nlohmann::json to_json(const RunSpec& spec);
RunSpec run_spec_from_json(const nlohmann::json& j);

/// FNV-1a 64 of the canonical JSON of the resolved spec, as 16 hex digits.
std::string config_hash(const RunSpec& spec);

/// Parses argv into a spec. Throws ConfigError on bad input. `dump_path` is
/// set when --dump-config was given.
RunSpec parse_args(const std::vector<std::string>& args, std::optional<std::string>* dump_path);

/// Executes a spec, writing outputs under spec.output_dir. Returns the exit code.
int run(const RunSpec& spec, std::ostream& log);

/// parse_args + run with error-to-exit-code mapping: 2 bad config, 3 numeric abort.
int main_entry(const std::vector<std::string>& args, std::ostream& log, std::ostream& err);

/// Ablation scores of one anchor over consecutive seeds. Seed i uses model
/// seed model.seed + i and rollout seed rollout.seed + i; the rollout is
/// extended so the anchor's whole chunk exists.
struct ContributionSweep {
    std::int64_t anchor = 0;
    std::vector<std::int64_t> frames;         // context frames, reference is -1
    std::vector<std::vector<double>> scores;  // [seed][frame]

    std::vector<double> mean() const;
};

ContributionSweep contribution_sweep(const RunSpec& spec);

/// Deterministic multi-frequency sinusoid features:
/// value(f, d) = sin(2*pi*f*omega_d + phi_d), omega_d and phi_d drawn from `seed`.
model::DrivingSignal synth_driving(std::size_t frames, std::size_t d_drive, std::uint64_t seed,
                                   bool zeros = false);

/// Per-dimension (omega_d, phi_d) used by synth_driving.
std::vector<std::pair<double, double>> driving_frequencies(std::size_t d_drive, std::uint64_t seed);

}  // namespace knotforge::cli
