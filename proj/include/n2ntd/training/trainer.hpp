#pragma once

#include "n2ntd/core/rng.hpp"
#include "n2ntd/core/tensor.hpp"
#include "n2ntd/model/net.hpp"
#include "n2ntd/noiseloss/noise.hpp"
#include "n2ntd/projsim/projection.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

// Self-supervised / supervised training loop: crop sampling, hand-rolled
// reverse-mode gradients through the network, Adam, validation-based early
// stopping, and checkpoint persistence.

namespace n2ntd::training {

enum class TrainMode {
    selfsup_mixed,
    selfsup_gaussian,
    selfsup_poisson,
    supervised_mse,
};

const char* train_mode_name(TrainMode m);
TrainMode parse_train_mode(const std::string& s);
bool is_selfsup(TrainMode m);
noiseloss::NoiseMode noise_mode_of(TrainMode m);

struct TrainConfig {
    TrainMode mode = TrainMode::selfsup_mixed;
    model::ModelConfig model;       // k and blind_mode below override these
    int k = 3;
    model::BlindMode blind_mode = model::BlindMode::paper;
    double lr = -1;                 // <=0: resolved to 1e-4 selfsup / 4e-4 supervised
    int batch_size = -1;            // <=0: resolved to 8 selfsup / 64 supervised
    int crop = 64;
    int max_epochs = 20;
    int patience = 3;               // consecutive degraded validations tolerated
    uint64_t seed = 0;
    double w_ssim = 0.86;
    double w_l1 = 0.14;
    int steps_per_epoch = 500;      // validation cadence
    // The noise raw parameters are two scalars competing with ~100k tensor
    // weights; with a shared learning rate they move orders of magnitude
    // slower than the loss surface allows, so their Adam group gets a
    // separate multiplier.
    double noise_lr_scale = 1000;
    double sigma_reg = 0.1;         // regularizer coefficient, fixed by default
    projsim::Boundary boundary = projsim::Boundary::wrap;

    // effective model config: `model` with k/blind_mode overridden
    model::ModelConfig effective_model() const
    {
        model::ModelConfig m = model;
        m.k = k;
        m.blind_mode = blind_mode;
        return m;
    }
};

// Fills mode-dependent defaults (lr, batch size) and validates; throws
// Err::ConfigError on violations.
void resolve_train_config(TrainConfig& cfg);

// Canonical digest over every semantic config field; checkpoints refuse to
// load into a run with a different digest.
std::string config_digest(const TrainConfig& cfg);

// Guarded access to the training corpus: self-supervised modes must never
// touch clean frames, and the guard turns such an access into an error
// instead of a silent leak.
class TrainingView {
public:
    TrainingView(const std::vector<projsim::ProjectionStack>& stacks,
                 bool allow_clean);

    size_t size() const { return stacks_->size(); }
    const projsim::Geometry& geometry(size_t i) const;
    int rows(size_t i) const;
    int bins(size_t i) const;

    // noisy-frame sequence extraction (always allowed)
    projsim::SequenceSample sequence(size_t i, int k, int center,
                                     projsim::Boundary boundary) const;

    // clean middle-frame crop (supervised targets only)
    TensorF clean_crop(size_t i, int angle, int row0, int bin0, int crop) const;

    bool clean_allowed() const { return allow_clean_; }

private:
    const std::vector<projsim::ProjectionStack>* stacks_;
    bool allow_clean_;
};

struct TrainBatch {
    std::vector<projsim::SequenceSample> samples;
    std::vector<TensorF> clean_middles;  // filled in supervised mode only
};

// Draws batch_size (stack, center angle, crop origin) triples uniformly and
// crops the same window from all 2k+1 frames of each sample.
TrainBatch sample_batch(const TrainingView& view, const TrainConfig& cfg,
                        Rng& rng);

// Adam moments, laid out in the parameter registry order.
struct AdamState {
    model::ModelState<float> m, v;
    float m_a = 0, v_a = 0, m_lambda = 0, v_lambda = 0;
    int64_t t = 0;
};

AdamState init_adam(const model::ModelState<float>& state);

// One optimization step over a batch: accumulates analytic gradients through
// the network and the likelihood loss (or MSE vs clean targets in supervised
// mode) and applies an Adam update (beta1 0.9, beta2 0.999, eps 1e-8) to all
// trainable parameters, including raw_a / raw_lambda in self-supervised
// modes. Returns the batch loss.
float train_step(model::ModelState<float>& state,
                 noiseloss::NoiseModelParamsF& params, AdamState& opt,
                 const TrainBatch& batch, const TrainConfig& cfg);

struct ValMetrics {
    double psnr_db = 0;
    double ssim = 0;
    double l1 = 0;
    double stop_metric = 0;
};

// Denoises every eligible center frame of every validation stack and
// averages frame metrics; stop_metric = w_ssim*(1-SSIM) + w_l1*L1.
ValMetrics validate(const model::ModelState<float>& state,
                    const noiseloss::NoiseModelParamsF& params,
                    const std::vector<projsim::ProjectionStack>& val_stacks,
                    const TrainConfig& cfg);

struct ValRecord {
    int64_t step = 0;
    double loss = 0;
    double psnr_db = 0;
    double ssim = 0;
    double l1 = 0;
    double stop_metric = 0;
    double a = 0;
    double lambda = 0;
};

// True iff the last `patience` consecutive records each degrade BOTH
// criteria relative to the running best before them.
bool early_stop(const std::vector<ValRecord>& history, int patience);

struct Checkpoint {
    model::ModelState<float> state;
    noiseloss::NoiseModelParamsF params;
    AdamState opt;
    TrainConfig config;
    int epoch = 0;
    std::vector<ValRecord> history;
    std::array<uint64_t, 4> rng_state{};
};

// Runs up to max_epochs epochs of steps_per_epoch steps with validation
// after each; stops early per early_stop; returns the checkpoint of the
// best-stop-metric epoch. history_csv, when non-empty, receives the metric
// history table.
Checkpoint fit(const std::vector<projsim::ProjectionStack>& train_stacks,
               const std::vector<projsim::ProjectionStack>& val_stacks,
               TrainConfig cfg, const std::string& history_csv = "");

// Container: magic N2TD, version, JSON manifest (config + digest, epoch,
// history, rng state), CRC-checksummed named f32 parameter blocks. Byte
// layout depends only on checkpoint content, never on wall-clock state.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

void write_history_csv(const std::vector<ValRecord>& history,
                       const std::string& path);

} // namespace n2ntd::training
