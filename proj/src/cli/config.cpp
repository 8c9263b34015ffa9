#include "n2ntd/cli/cli.hpp"

#include "n2ntd/core/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace n2ntd::cli {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& where)
{
    if (!j.is_object())
        throw Error(Err::ConfigError, where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw Error(Err::ConfigError,
                        "unknown key \"" + it.key() + "\" in " + where);
}

template <typename T>
void get_if(const json& j, const char* key, T& dst)
{
    if (j.contains(key)) {
        try {
            dst = j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw Error(Err::ConfigError,
                        std::string("bad value for \"") + key + "\": " + e.what());
        }
    }
}

projsim::Boundary parse_boundary(const std::string& s, const char* where)
{
    if (s == "wrap") return projsim::Boundary::wrap;
    if (s == "skip") return projsim::Boundary::skip;
    throw Error(Err::ConfigError,
                std::string("unknown boundary \"") + s + "\" in " + where);
}

model::BlindMode parse_blind(const std::string& s)
{
    if (s == "paper") return model::BlindMode::paper;
    if (s == "strict") return model::BlindMode::strict;
    throw Error(Err::ConfigError, "unknown blind_mode \"" + s + "\"");
}

void parse_phantom(const json& j, projsim::PhantomSpec& p)
{
    check_keys(j,
               {"seed", "min_ellipses", "max_ellipses", "min_density",
                "max_density"},
               "phantom");
    get_if(j, "seed", p.seed);
    get_if(j, "min_ellipses", p.min_ellipses);
    get_if(j, "max_ellipses", p.max_ellipses);
    get_if(j, "min_density", p.min_density);
    get_if(j, "max_density", p.max_density);
}

void parse_geometry(const json& j, projsim::Geometry& g)
{
    check_keys(j,
               {"num_angles", "angle_start", "angle_step", "detector_bins",
                "num_rows", "circular"},
               "geometry");
    get_if(j, "num_angles", g.num_angles);
    get_if(j, "angle_start", g.angle_start);
    get_if(j, "angle_step", g.angle_step);
    get_if(j, "detector_bins", g.detector_bins);
    get_if(j, "num_rows", g.num_rows);
    get_if(j, "circular", g.circular);
}

void parse_model(const json& j, model::ModelConfig& m)
{
    check_keys(j,
               {"channels", "lstm_hidden_bottleneck", "lstm_hidden_tail",
                "kernel_size", "attention_reduction"},
               "model");
    get_if(j, "channels", m.channels);
    m.levels = int(m.channels.size());
    get_if(j, "lstm_hidden_bottleneck", m.lstm_hidden_bottleneck);
    get_if(j, "lstm_hidden_tail", m.lstm_hidden_tail);
    get_if(j, "kernel_size", m.kernel_size);
    get_if(j, "attention_reduction", m.attention_reduction);
}

void parse_train(const json& j, ExperimentConfig& cfg)
{
    check_keys(j,
               {"mode", "k", "blind_mode", "lr", "batch_size", "crop",
                "max_epochs", "patience", "seed", "w_ssim", "w_l1",
                "steps_per_epoch", "noise_lr_scale", "sigma_reg", "boundary",
                "train_stacks", "val_stacks"},
               "train");
    training::TrainConfig& t = cfg.train;
    if (j.contains("mode"))
        t.mode = training::parse_train_mode(j.at("mode").get<std::string>());
    get_if(j, "k", t.k);
    if (j.contains("blind_mode"))
        t.blind_mode = parse_blind(j.at("blind_mode").get<std::string>());
    get_if(j, "lr", t.lr);
    get_if(j, "batch_size", t.batch_size);
    get_if(j, "crop", t.crop);
    get_if(j, "max_epochs", t.max_epochs);
    get_if(j, "patience", t.patience);
    get_if(j, "seed", t.seed);
    get_if(j, "w_ssim", t.w_ssim);
    get_if(j, "w_l1", t.w_l1);
    get_if(j, "steps_per_epoch", t.steps_per_epoch);
    get_if(j, "noise_lr_scale", t.noise_lr_scale);
    get_if(j, "sigma_reg", t.sigma_reg);
    if (j.contains("boundary"))
        t.boundary =
            parse_boundary(j.at("boundary").get<std::string>(), "train");
    get_if(j, "train_stacks", cfg.train_stacks);
    get_if(j, "val_stacks", cfg.val_stacks);
}

} // namespace

ExperimentConfig parse_config_text(const std::string& text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(Err::ConfigError, std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(j,
               {"phantom", "geometry", "noise", "simulate", "model", "train",
                "denoise", "reconstruct", "evaluate"},
               "config root");
    ExperimentConfig cfg;
    try {
        if (j.contains("phantom")) parse_phantom(j.at("phantom"), cfg.phantom);
        if (j.contains("geometry")) parse_geometry(j.at("geometry"), cfg.geometry);
        if (j.contains("noise")) {
            const json& n = j.at("noise");
            check_keys(n, {"lambda", "a", "seed"}, "noise");
            get_if(n, "lambda", cfg.noise_lambda);
            get_if(n, "a", cfg.noise_a);
            get_if(n, "seed", cfg.noise_seed);
        }
        if (j.contains("simulate")) {
            const json& s = j.at("simulate");
            check_keys(s, {"num_stacks", "id_prefix"}, "simulate");
            get_if(s, "num_stacks", cfg.num_stacks);
            get_if(s, "id_prefix", cfg.id_prefix);
        }
        if (j.contains("model")) parse_model(j.at("model"), cfg.train.model);
        if (j.contains("train")) parse_train(j.at("train"), cfg);
        if (j.contains("denoise")) {
            const json& d = j.at("denoise");
            check_keys(d, {"checkpoint", "input", "output", "boundary"},
                       "denoise");
            get_if(d, "checkpoint", cfg.checkpoint);
            get_if(d, "input", cfg.input);
            get_if(d, "output", cfg.output);
            if (d.contains("boundary"))
                cfg.denoise_boundary = parse_boundary(
                    d.at("boundary").get<std::string>(), "denoise");
        }
        if (j.contains("reconstruct")) {
            const json& r = j.at("reconstruct");
            check_keys(r, {"input", "output", "grid", "cosine"}, "reconstruct");
            get_if(r, "input", cfg.recon_input);
            get_if(r, "output", cfg.recon_output);
            get_if(r, "grid", cfg.grid);
            get_if(r, "cosine", cfg.cosine);
        }
        if (j.contains("evaluate")) {
            const json& e = j.at("evaluate");
            check_keys(e,
                       {"noisy", "denoised", "clean", "report", "with_recon",
                        "checkpoint"},
                       "evaluate");
            get_if(e, "noisy", cfg.eval_noisy);
            get_if(e, "denoised", cfg.eval_denoised);
            get_if(e, "clean", cfg.eval_clean);
            get_if(e, "report", cfg.eval_report);
            get_if(e, "with_recon", cfg.with_recon);
            get_if(e, "checkpoint", cfg.eval_checkpoint);
        }
    } catch (const Error&) {
        throw;
    } catch (const json::exception& e) {
        throw Error(Err::ConfigError, std::string("invalid config: ") + e.what());
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw Error(Err::IoError, "cannot open config " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

std::string resolved_config_text(const ExperimentConfig& cfg)
{
    json j;
    j["phantom"] = {{"seed", cfg.phantom.seed},
                    {"min_ellipses", cfg.phantom.min_ellipses},
                    {"max_ellipses", cfg.phantom.max_ellipses},
                    {"min_density", cfg.phantom.min_density},
                    {"max_density", cfg.phantom.max_density}};
    j["geometry"] = {{"num_angles", cfg.geometry.num_angles},
                     {"angle_start", cfg.geometry.angle_start},
                     {"angle_step", cfg.geometry.angle_step},
                     {"detector_bins", cfg.geometry.detector_bins},
                     {"num_rows", cfg.geometry.num_rows},
                     {"circular", cfg.geometry.circular}};
    j["noise"] = {{"lambda", cfg.noise_lambda},
                  {"a", cfg.noise_a},
                  {"seed", cfg.noise_seed}};
    j["simulate"] = {{"num_stacks", cfg.num_stacks},
                     {"id_prefix", cfg.id_prefix}};
    const model::ModelConfig& m = cfg.train.model;
    j["model"] = {{"channels", m.channels},
                  {"lstm_hidden_bottleneck", m.lstm_hidden_bottleneck},
                  {"lstm_hidden_tail", m.lstm_hidden_tail},
                  {"kernel_size", m.kernel_size},
                  {"attention_reduction", m.attention_reduction}};
    const training::TrainConfig& t = cfg.train;
    j["train"] = {
        {"mode", training::train_mode_name(t.mode)},
        {"k", t.k},
        {"blind_mode",
         t.blind_mode == model::BlindMode::strict ? "strict" : "paper"},
        {"lr", t.lr},
        {"batch_size", t.batch_size},
        {"crop", t.crop},
        {"max_epochs", t.max_epochs},
        {"patience", t.patience},
        {"seed", t.seed},
        {"w_ssim", t.w_ssim},
        {"w_l1", t.w_l1},
        {"steps_per_epoch", t.steps_per_epoch},
        {"noise_lr_scale", t.noise_lr_scale},
        {"sigma_reg", t.sigma_reg},
        {"boundary",
         t.boundary == projsim::Boundary::wrap ? "wrap" : "skip"},
        {"train_stacks", cfg.train_stacks},
        {"val_stacks", cfg.val_stacks}};
    j["denoise"] = {{"checkpoint", cfg.checkpoint},
                    {"input", cfg.input},
                    {"output", cfg.output},
                    {"boundary", cfg.denoise_boundary == projsim::Boundary::wrap
                                     ? "wrap"
                                     : "skip"}};
    j["reconstruct"] = {{"input", cfg.recon_input},
                        {"output", cfg.recon_output},
                        {"grid", cfg.grid},
                        {"cosine", cfg.cosine}};
    j["evaluate"] = {{"noisy", cfg.eval_noisy},
                     {"denoised", cfg.eval_denoised},
                     {"clean", cfg.eval_clean},
                     {"report", cfg.eval_report},
                     {"with_recon", cfg.with_recon},
                     {"checkpoint", cfg.eval_checkpoint}};
    return j.dump(2) + "\n";
}

} // namespace n2ntd::cli
