#pragma once

#include "n2ntd/projsim/phantom.hpp"
#include "n2ntd/projsim/projection.hpp"
#include "n2ntd/training/trainer.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

// Command-line front end: declarative JSON experiment configs driving the
// simulate / train / denoise / reconstruct / evaluate pipeline. Everything
// here is callable in-process so tests can run whole commands without
// spawning binaries.

namespace n2ntd::cli {

struct ExperimentConfig {
    // simulate
    projsim::PhantomSpec phantom;
    projsim::Geometry geometry{128, 0.0, 0.0, 128, 64, true};
    double noise_lambda = 50.0;
    double noise_a = 1e-3;
    uint64_t noise_seed = 1;
    int num_stacks = 1;
    std::string id_prefix = "stack";

    // train
    training::TrainConfig train;
    std::vector<std::string> train_stacks;
    std::vector<std::string> val_stacks;

    // denoise
    std::string checkpoint;
    std::string input;
    std::string output = "denoised.ctpk";
    projsim::Boundary denoise_boundary = projsim::Boundary::wrap;

    // reconstruct
    std::string recon_input;
    std::string recon_output = "volume.ctvl";
    int grid = 128;
    bool cosine = false;

    // evaluate
    std::string eval_noisy;
    std::string eval_denoised;
    std::string eval_clean;
    std::string eval_report = "report.csv";
    bool with_recon = false;
    std::string eval_checkpoint;  // optional: learned (a, lambda) for the report
};

// Parses and schema-validates a JSON config document; unknown keys anywhere
// are rejected (Err::ConfigError).
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Fully resolved config back to canonical JSON text.
std::string resolved_config_text(const ExperimentConfig& cfg);

// Command implementations. `out_dir` receives all outputs plus
// resolved_config.json; `seed_override`, when set, replaces the relevant
// config seed (phantom/noise for simulate, training seed for train).
void cmd_simulate(ExperimentConfig cfg, const std::string& out_dir,
                  std::optional<uint64_t> seed_override);
void cmd_train(ExperimentConfig cfg, const std::string& out_dir,
               std::optional<uint64_t> seed_override);
void cmd_denoise(ExperimentConfig cfg, const std::string& out_dir);
void cmd_reconstruct(ExperimentConfig cfg, const std::string& out_dir);
void cmd_evaluate(ExperimentConfig cfg, const std::string& out_dir);

// argv-style entry point used by the n2ntd binary and by in-process tests;
// returns the process exit code and reports errors as single
// "error: <category>: <message>" lines on stderr.
int cli_main(const std::vector<std::string>& args);

} // namespace n2ntd::cli
