#include "n2ntd/cli/cli.hpp"

#include "n2ntd/core/errors.hpp"
#include "n2ntd/core/logging.hpp"
#include "n2ntd/core/rng.hpp"
#include "n2ntd/metrics/metrics.hpp"
#include "n2ntd/noiseloss/noise.hpp"
#include "n2ntd/recon/fbp.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace n2ntd::cli {

namespace fs = std::filesystem;

namespace {

std::string join_out(const std::string& out_dir, const std::string& file)
{
    fs::path p(file);
    if (p.is_absolute()) return file;
    return (fs::path(out_dir) / p).string();
}

void ensure_out_dir(const std::string& out_dir)
{
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec)
        throw Error(Err::IoError,
                    "cannot create output directory " + out_dir + ": " +
                        ec.message());
}

// Output file names from configs may carry subdirectories.
void ensure_parent_dir(const std::string& file_path)
{
    const fs::path parent = fs::path(file_path).parent_path();
    if (!parent.empty()) ensure_out_dir(parent.string());
}

void write_resolved_config(const ExperimentConfig& cfg,
                           const std::string& out_dir)
{
    const std::string path = join_out(out_dir, "resolved_config.json");
    std::ofstream os(path);
    if (!os)
        throw Error(Err::IoError, "cannot write " + path);
    os << resolved_config_text(cfg);
    if (!os)
        throw Error(Err::IoError, "failed writing " + path);
}

void resolve_geometry(projsim::Geometry& g)
{
    if (g.angle_step == 0.0 && g.num_angles > 0)
        g.angle_step =
            (g.circular ? 2.0 : 1.0) * 3.14159265358979323846 / g.num_angles;
}

std::vector<projsim::ProjectionStack>
read_stacks(const std::vector<std::string>& paths, const char* what)
{
    if (paths.empty())
        throw Error(Err::ConfigError,
                    std::string("no ") + what + " stacks configured");
    std::vector<projsim::ProjectionStack> out;
    out.reserve(paths.size());
    for (const std::string& p : paths) out.push_back(projsim::read_stack(p));
    return out;
}

} // namespace

void cmd_simulate(ExperimentConfig cfg, const std::string& out_dir,
                  std::optional<uint64_t> seed_override)
{
    if (seed_override) {
        cfg.phantom.seed = *seed_override;
        cfg.noise_seed = derive_seed(*seed_override, 1);
    }
    resolve_geometry(cfg.geometry);
    if (cfg.num_stacks < 1)
        throw Error(Err::ConfigError, "num_stacks must be >= 1");
    ensure_out_dir(out_dir);

    for (int i = 0; i < cfg.num_stacks; ++i) {
        projsim::PhantomSpec spec = cfg.phantom;
        if (cfg.num_stacks > 1) spec.seed = derive_seed(cfg.phantom.seed, uint64_t(i));
        const projsim::Phantom ph = projsim::make_phantom(spec);

        projsim::ProjectionStack clean = projsim::project_stack(ph, cfg.geometry);
        std::string id = cfg.id_prefix;
        if (cfg.num_stacks > 1) id += "_" + std::to_string(i);
        clean.id = id;

        const uint64_t nseed = cfg.num_stacks > 1
                                   ? derive_seed(cfg.noise_seed, uint64_t(i))
                                   : cfg.noise_seed;
        projsim::ProjectionStack noisy =
            projsim::apply_noise(clean, cfg.noise_lambda, cfg.noise_a, nseed);

        // the clean file carries the normalized frames so both files share
        // one intensity scale
        projsim::ProjectionStack clean_out;
        clean_out.geometry = noisy.geometry;
        clean_out.frames = noisy.clean_frames;
        clean_out.scale_factor = noisy.scale_factor;
        clean_out.id = id + ":clean";

        const std::string clean_path = join_out(out_dir, id + "_clean.ctpk");
        const std::string noisy_path = join_out(out_dir, id + "_noisy.ctpk");
        ensure_parent_dir(clean_path);
        projsim::write_stack(clean_out, clean_path);
        projsim::write_stack(noisy, noisy_path);

        std::ostringstream ss;
        ss.precision(6);
        ss << id << ": " << cfg.geometry.num_angles << " angles x "
           << cfg.geometry.num_rows << " rows x " << cfg.geometry.detector_bins
           << " bins, lambda " << cfg.noise_lambda << ", a " << cfg.noise_a
           << ", noise seed " << nseed << ", scale "
           << noisy.scale_factor << " -> " << noisy_path;
        log::info(ss.str());
    }
    write_resolved_config(cfg, out_dir);
}

void cmd_train(ExperimentConfig cfg, const std::string& out_dir,
               std::optional<uint64_t> seed_override)
{
    if (seed_override) cfg.train.seed = *seed_override;
    training::resolve_train_config(cfg.train);
    ensure_out_dir(out_dir);

    const std::vector<projsim::ProjectionStack> train_stacks =
        read_stacks(cfg.train_stacks, "training");
    const std::vector<projsim::ProjectionStack> val_stacks =
        read_stacks(cfg.val_stacks, "validation");

    const std::string history_path = join_out(out_dir, "history.csv");
    training::Checkpoint ck =
        training::fit(train_stacks, val_stacks, cfg.train, history_path);

    const std::string ckpt_path = join_out(out_dir, "checkpoint.n2td");
    training::save_checkpoint(ck, ckpt_path);
    write_resolved_config(cfg, out_dir);

    std::ostringstream ss;
    ss.precision(6);
    ss << "checkpoint (best epoch " << ck.epoch << ", a " << ck.params.a()
       << ", lambda " << ck.params.lambda() << ") -> " << ckpt_path;
    log::info(ss.str());
}

void cmd_denoise(ExperimentConfig cfg, const std::string& out_dir)
{
    if (cfg.checkpoint.empty() || cfg.input.empty())
        throw Error(Err::ConfigError,
                    "denoise requires checkpoint and input paths");
    const training::Checkpoint ck = training::load_checkpoint(cfg.checkpoint);
    const projsim::ProjectionStack stack = projsim::read_stack(cfg.input);
    ensure_out_dir(out_dir);

    const int N = stack.geometry.num_angles;
    const int Z = stack.geometry.num_rows, U = stack.geometry.detector_bins;
    const int k = ck.config.k;
    const bool sup = ck.config.mode == training::TrainMode::supervised_mse;
    const noiseloss::NoiseMode nmode = training::noise_mode_of(ck.config.mode);

    projsim::ProjectionStack out = stack;
    out.noise_truth.reset();
    out.id = stack.id + ":denoised";

    const int c0 = cfg.denoise_boundary == projsim::Boundary::wrap ? 0 : k;
    const int c1 = cfg.denoise_boundary == projsim::Boundary::wrap ? N : N - k;
    if (c0 >= c1)
        throw Error(Err::InvalidArgument,
                    "stack too short for the sequence window");
    for (int center = c0; center < c1; ++center) {
        const projsim::SequenceSample sample =
            projsim::take_sequence(stack, k, center, cfg.denoise_boundary);
        TensorF den;
        if (sup)
            den = model::predict_prior(ck.state, sample).mu;
        else
            den = noiseloss::denoise_frame(ck.state, ck.params, sample, nmode);
        std::copy(den.v.begin(), den.v.end(),
                  out.frames.v.begin() + size_t(center) * Z * U);
    }

    const std::string out_path = join_out(out_dir, cfg.output);
    ensure_parent_dir(out_path);
    projsim::write_stack(out, out_path);
    write_resolved_config(cfg, out_dir);
    log::info("denoised " + std::to_string(c1 - c0) + "/" + std::to_string(N) +
              " frames -> " + out_path);
}

void cmd_reconstruct(ExperimentConfig cfg, const std::string& out_dir)
{
    if (cfg.recon_input.empty())
        throw Error(Err::ConfigError, "reconstruct requires an input path");
    const projsim::ProjectionStack stack = projsim::read_stack(cfg.recon_input);
    ensure_out_dir(out_dir);
    const recon::Volume vol = recon::reconstruct(stack, cfg.grid, cfg.cosine);
    const std::string out_path = join_out(out_dir, cfg.recon_output);
    ensure_parent_dir(out_path);
    recon::write_volume(vol, out_path);
    write_resolved_config(cfg, out_dir);
    std::ostringstream ss;
    ss << "volume " << vol.voxels.dim(0) << " x " << vol.voxels.dim(1) << " x "
       << vol.voxels.dim(2) << " -> " << out_path;
    log::info(ss.str());
}

void cmd_evaluate(ExperimentConfig cfg, const std::string& out_dir)
{
    if (cfg.eval_noisy.empty() || cfg.eval_denoised.empty() ||
        cfg.eval_clean.empty())
        throw Error(Err::ConfigError,
                    "evaluate requires noisy, denoised, and clean paths");
    const projsim::ProjectionStack noisy = projsim::read_stack(cfg.eval_noisy);
    const projsim::ProjectionStack denoised =
        projsim::read_stack(cfg.eval_denoised);
    const projsim::ProjectionStack clean = projsim::read_stack(cfg.eval_clean);
    ensure_out_dir(out_dir);

    std::vector<metrics::MetricReport> reports =
        metrics::evaluate_report(noisy, denoised, clean, cfg.with_recon);
    if (!cfg.eval_checkpoint.empty()) {
        const training::Checkpoint ck =
            training::load_checkpoint(cfg.eval_checkpoint);
        for (metrics::MetricReport& r : reports)
            r.noise_params = {double(ck.params.a()), double(ck.params.lambda())};
        std::ostringstream ss;
        ss.precision(6);
        ss << "learned noise parameters: a " << ck.params.a() << ", lambda "
           << ck.params.lambda();
        log::info(ss.str());
    }

    const std::string report_path = join_out(out_dir, cfg.eval_report);
    ensure_parent_dir(report_path);
    metrics::write_report_csv(reports, report_path);
    write_resolved_config(cfg, out_dir);

    for (const metrics::MetricReport& r : reports)
        for (const metrics::PairReport& p : r.pairs) {
            std::ostringstream ss;
            ss.precision(6);
            ss << r.domain << " " << p.pair << ": psnr "
               << p.aggregate.psnr_db << " dB, ssim " << p.aggregate.ssim
               << ", l1 " << p.aggregate.l1;
            log::info(ss.str());
        }
    log::info("report -> " + report_path);
}

int cli_main(const std::vector<std::string>& args)
{
    CLI::App app{"self-supervised CT projection sequence denoising toolkit"};
    app.require_subcommand(1);

    struct SubOpts {
        std::string config_path;
        std::string out_dir = ".";
        uint64_t seed = 0;
        bool quiet = false;
        CLI::App* sub = nullptr;
    };
    const std::vector<std::pair<std::string, std::string>> names = {
        {"simulate", "generate clean and low-dose projection stacks"},
        {"train", "train a denoising model"},
        {"denoise", "denoise a projection stack with a trained checkpoint"},
        {"reconstruct", "filtered back-projection of a stack"},
        {"evaluate", "metric report for noisy/denoised/clean stacks"},
    };
    std::vector<SubOpts> opts(names.size());
    for (size_t i = 0; i < names.size(); ++i) {
        CLI::App* s = app.add_subcommand(names[i].first, names[i].second);
        s->add_option("--config", opts[i].config_path, "experiment config JSON")
            ->required();
        s->add_option("--seed", opts[i].seed, "override the config seed");
        s->add_option("--out", opts[i].out_dir, "output directory");
        s->add_flag("--quiet", opts[i].quiet, "suppress informational output");
        opts[i].sub = s;
    }

    std::vector<const char*> argv;
    argv.push_back("n2ntd");
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        app.parse(int(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() != 0)
            std::cerr << "error: usage: " << e.what() << "\n";
        else
            (void)app.exit(e);  // --help and friends
        return e.get_exit_code();
    }

    try {
        for (size_t i = 0; i < names.size(); ++i) {
            if (!opts[i].sub->parsed()) continue;
            log::set_quiet(opts[i].quiet);
            std::optional<uint64_t> seed;
            if (opts[i].sub->count("--seed")) seed = opts[i].seed;
            ExperimentConfig cfg = load_config(opts[i].config_path);
            const std::string& name = names[i].first;
            if (name == "simulate")
                cmd_simulate(std::move(cfg), opts[i].out_dir, seed);
            else if (name == "train")
                cmd_train(std::move(cfg), opts[i].out_dir, seed);
            else if (name == "denoise")
                cmd_denoise(std::move(cfg), opts[i].out_dir);
            else if (name == "reconstruct")
                cmd_reconstruct(std::move(cfg), opts[i].out_dir);
            else if (name == "evaluate")
                cmd_evaluate(std::move(cfg), opts[i].out_dir);
            log::set_quiet(false);
        }
        return 0;
    } catch (const Error& e) {
        log::set_quiet(false);
        std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        log::set_quiet(false);
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
}

} // namespace n2ntd::cli
