#include "n2ntd/training/trainer.hpp"

#include "n2ntd/core/binio.hpp"
#include "n2ntd/core/errors.hpp"
#include "n2ntd/core/logging.hpp"
#include "n2ntd/metrics/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace n2ntd::training {

const char* train_mode_name(TrainMode m)
{
    switch (m) {
    case TrainMode::selfsup_mixed:    return "selfsup_mixed";
    case TrainMode::selfsup_gaussian: return "selfsup_gaussian";
    case TrainMode::selfsup_poisson:  return "selfsup_poisson";
    case TrainMode::supervised_mse:   return "supervised_mse";
    }
    return "?";
}

TrainMode parse_train_mode(const std::string& s)
{
    if (s == "selfsup_mixed") return TrainMode::selfsup_mixed;
    if (s == "selfsup_gaussian") return TrainMode::selfsup_gaussian;
    if (s == "selfsup_poisson") return TrainMode::selfsup_poisson;
    if (s == "supervised_mse") return TrainMode::supervised_mse;
    throw Error(Err::ConfigError, "unknown training mode: " + s);
}

bool is_selfsup(TrainMode m) { return m != TrainMode::supervised_mse; }

noiseloss::NoiseMode noise_mode_of(TrainMode m)
{
    switch (m) {
    case TrainMode::selfsup_gaussian: return noiseloss::NoiseMode::gaussian;
    case TrainMode::selfsup_poisson:  return noiseloss::NoiseMode::poisson;
    default:                          return noiseloss::NoiseMode::mixed;
    }
}

void resolve_train_config(TrainConfig& cfg)
{
    if (cfg.lr <= 0)
        cfg.lr = is_selfsup(cfg.mode) ? 1e-4 : 4e-4;
    if (cfg.batch_size <= 0)
        cfg.batch_size = is_selfsup(cfg.mode) ? 8 : 64;
    if (cfg.crop < 16)
        throw Error(Err::ConfigError, "crop must be >= 16");
    if (cfg.k < 1)
        throw Error(Err::ConfigError, "k must be >= 1");
    if (cfg.patience < 1)
        throw Error(Err::ConfigError, "patience must be >= 1");
    if (cfg.max_epochs < 0)
        throw Error(Err::ConfigError, "max_epochs must be >= 0");
    if (cfg.steps_per_epoch < 1)
        throw Error(Err::ConfigError, "steps_per_epoch must be >= 1");
    if (std::abs(cfg.w_ssim + cfg.w_l1 - 1.0) > 1e-9)
        throw Error(Err::ConfigError, "stop-metric weights must sum to 1");
    if (cfg.w_ssim < 0 || cfg.w_l1 < 0)
        throw Error(Err::ConfigError, "stop-metric weights must be nonnegative");
    if (cfg.noise_lr_scale <= 0)
        throw Error(Err::ConfigError, "noise_lr_scale must be positive");
    if (cfg.sigma_reg < 0)
        throw Error(Err::ConfigError, "sigma_reg must be nonnegative");
    model::validate_config(cfg.effective_model());
}

std::string config_digest(const TrainConfig& cfg)
{
    std::ostringstream ss;
    ss.precision(17);
    const model::ModelConfig m = cfg.effective_model();
    ss << "mode=" << train_mode_name(cfg.mode) << ";k=" << cfg.k
       << ";blind=" << (cfg.blind_mode == model::BlindMode::strict ? "strict" : "paper")
       << ";lr=" << cfg.lr << ";batch=" << cfg.batch_size
       << ";crop=" << cfg.crop << ";max_epochs=" << cfg.max_epochs
       << ";patience=" << cfg.patience << ";seed=" << cfg.seed
       << ";w_ssim=" << cfg.w_ssim << ";w_l1=" << cfg.w_l1
       << ";spe=" << cfg.steps_per_epoch << ";nls=" << cfg.noise_lr_scale
       << ";sreg=" << cfg.sigma_reg
       << ";boundary=" << (cfg.boundary == projsim::Boundary::wrap ? "wrap" : "skip")
       << ";channels=";
    for (size_t i = 0; i < m.channels.size(); ++i)
        ss << (i ? "," : "") << m.channels[i];
    ss << ";hb=" << m.lstm_hidden_bottleneck << ";ht=" << m.lstm_hidden_tail
       << ";kernel=" << m.kernel_size << ";att=" << m.attention_reduction;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  (unsigned long long)io::fnv1a64(ss.str()));
    return buf;
}

// ---- TrainingView ----

TrainingView::TrainingView(const std::vector<projsim::ProjectionStack>& stacks,
                           bool allow_clean)
    : stacks_(&stacks), allow_clean_(allow_clean)
{
}

const projsim::Geometry& TrainingView::geometry(size_t i) const
{
    return (*stacks_)[i].geometry;
}

int TrainingView::rows(size_t i) const { return (*stacks_)[i].geometry.num_rows; }
int TrainingView::bins(size_t i) const
{
    return (*stacks_)[i].geometry.detector_bins;
}

projsim::SequenceSample TrainingView::sequence(size_t i, int k, int center,
                                               projsim::Boundary boundary) const
{
    return projsim::take_sequence((*stacks_)[i], k, center, boundary);
}

TensorF TrainingView::clean_crop(size_t i, int angle, int row0, int bin0,
                                 int crop) const
{
    if (!allow_clean_)
        throw Error(Err::GuardViolation,
                    "clean frames are off-limits in self-supervised training");
    const projsim::ProjectionStack& st = (*stacks_)[i];
    if (!st.has_clean())
        throw Error(Err::InvalidArgument, "stack has no clean frames");
    const int Z = st.geometry.num_rows, U = st.geometry.detector_bins;
    TensorF out({crop, crop});
    for (int r = 0; r < crop; ++r)
        for (int c = 0; c < crop; ++c)
            out.at(r, c) = st.clean_frames.at(angle, row0 + r, bin0 + c);
    (void)Z;
    (void)U;
    return out;
}

// ---- batch sampling ----

static TensorF crop_frames(const TensorF& frames, int row0, int bin0, int crop)
{
    const int Tn = frames.dim(0);
    TensorF out({Tn, crop, crop});
    for (int t = 0; t < Tn; ++t)
        for (int r = 0; r < crop; ++r)
            for (int c = 0; c < crop; ++c)
                out.at(t, r, c) = frames.at(t, row0 + r, bin0 + c);
    return out;
}

TrainBatch sample_batch(const TrainingView& view, const TrainConfig& cfg,
                        Rng& rng)
{
    if (view.size() == 0)
        throw Error(Err::InvalidArgument, "no training stacks");
    TrainBatch batch;
    const bool sup = cfg.mode == TrainMode::supervised_mse;
    for (int s = 0; s < cfg.batch_size; ++s) {
        const size_t si = size_t(rng.uniform_int(0, int64_t(view.size()) - 1));
        const projsim::Geometry& g = view.geometry(si);
        const int Z = view.rows(si), U = view.bins(si);
        if (cfg.crop > Z || cfg.crop > U)
            throw Error(Err::InvalidArgument, "crop larger than frames");
        int center;
        if (cfg.boundary == projsim::Boundary::wrap) {
            center = int(rng.uniform_int(0, g.num_angles - 1));
        } else {
            if (g.num_angles < 2 * cfg.k + 1)
                throw Error(Err::InvalidArgument,
                            "stack too short for the sequence window");
            center = int(rng.uniform_int(cfg.k, g.num_angles - cfg.k - 1));
        }
        const int r0 = int(rng.uniform_int(0, Z - cfg.crop));
        const int b0 = int(rng.uniform_int(0, U - cfg.crop));
        projsim::SequenceSample sample =
            view.sequence(si, cfg.k, center, cfg.boundary);
        sample.frames = crop_frames(sample.frames, r0, b0, cfg.crop);
        sample.crop_row = r0;
        sample.crop_bin = b0;
        batch.samples.push_back(std::move(sample));
        if (sup)
            batch.clean_middles.push_back(
                view.clean_crop(si, center, r0, b0, cfg.crop));
    }
    return batch;
}

// ---- Adam ----

AdamState init_adam(const model::ModelState<float>& state)
{
    AdamState opt;
    opt.m = model::zero_like(state);
    opt.v = model::zero_like(state);
    return opt;
}

static void adam_update_tensor(Tensor<float>& p, const Tensor<float>& g,
                               Tensor<float>& m, Tensor<float>& v, double lr,
                               double bc1, double bc2)
{
    for (size_t i = 0; i < p.v.size(); ++i) {
        const double gi = double(g.v[i]);
        const double mi = 0.9 * double(m.v[i]) + 0.1 * gi;
        const double vi = 0.999 * double(v.v[i]) + 0.001 * gi * gi;
        m.v[i] = float(mi);
        v.v[i] = float(vi);
        p.v[i] = float(double(p.v[i]) -
                       lr * (mi / bc1) / (std::sqrt(vi / bc2) + 1e-8));
    }
}

static void adam_update_scalar(float& p, double g, float& m, float& v,
                               double lr, double bc1, double bc2)
{
    const double mi = 0.9 * double(m) + 0.1 * g;
    const double vi = 0.999 * double(v) + 0.001 * g * g;
    m = float(mi);
    v = float(vi);
    p = float(double(p) - lr * (mi / bc1) / (std::sqrt(vi / bc2) + 1e-8));
}

float train_step(model::ModelState<float>& state,
                 noiseloss::NoiseModelParamsF& params, AdamState& opt,
                 const TrainBatch& batch, const TrainConfig& cfg)
{
    const size_t B = batch.samples.size();
    if (B == 0)
        throw Error(Err::InvalidArgument, "empty batch");
    const bool sup = cfg.mode == TrainMode::supervised_mse;
    if (sup && batch.clean_middles.size() != B)
        throw Error(Err::InvalidArgument, "supervised batch lacks clean targets");

    model::ModelState<float> grads = model::zero_like(state);
    double gacc_a = 0, gacc_lambda = 0, loss_acc = 0;
    const noiseloss::NoiseMode nmode = noise_mode_of(cfg.mode);
    const float inv_b = 1.0f / float(B);

    for (size_t bi = 0; bi < B; ++bi) {
        const projsim::SequenceSample& sample = batch.samples[bi];
        model::PriorCache<float> cache;
        model::PriorPrediction<float> pred =
            model::predict_prior(state, sample, &cache);
        const int H = pred.mu.dim(0), W = pred.mu.dim(1);
        const size_t npix = size_t(H) * W;

        if (sup) {
            const TensorF& clean = batch.clean_middles[bi];
            if (clean.shape != pred.mu.shape)
                throw Error(Err::InvalidArgument, "clean target shape mismatch");
            TensorF dmu({H, W}), dlv({H, W});
            double mse = 0;
            const float scale = 2.0f / float(npix) * inv_b;
            for (size_t i = 0; i < npix; ++i) {
                const double r = double(pred.mu.v[i]) - double(clean.v[i]);
                mse += r * r;
                dmu.v[i] = float(r) * scale;
            }
            loss_acc += mse / double(npix) * double(inv_b);
            model::backward_prior(state, cache, dmu, dlv, grads);
        } else {
            TensorF y({H, W});
            const float* src =
                sample.frames.data() + size_t(sample.middle_index) * npix;
            std::copy(src, src + npix, y.v.begin());
            noiseloss::LossTerms<float> terms = noiseloss::loss_gradients(
                y, pred, params, nmode, float(cfg.sigma_reg));
            loss_acc += double(terms.value) * double(inv_b);
            for (size_t i = 0; i < npix; ++i) {
                terms.dmu.v[i] *= inv_b;
                terms.dlog_var.v[i] *= inv_b;
            }
            model::backward_prior(state, cache, terms.dmu, terms.dlog_var, grads);
            gacc_a += double(terms.draw_a) * double(inv_b);
            gacc_lambda += double(terms.draw_lambda) * double(inv_b);
        }
    }

    if (!std::isfinite(loss_acc))
        throw Error(Err::NonFiniteLoss,
                    "training loss diverged (non-finite batch loss)");

    opt.t += 1;
    const double bc1 = 1.0 - std::pow(0.9, double(opt.t));
    const double bc2 = 1.0 - std::pow(0.999, double(opt.t));

    std::vector<Tensor<float>*> ps, gs, ms, vs;
    state.for_each_param([&](const std::string&, Tensor<float>& t) { ps.push_back(&t); });
    grads.for_each_param([&](const std::string&, Tensor<float>& t) { gs.push_back(&t); });
    opt.m.for_each_param([&](const std::string&, Tensor<float>& t) { ms.push_back(&t); });
    opt.v.for_each_param([&](const std::string&, Tensor<float>& t) { vs.push_back(&t); });
    for (size_t i = 0; i < ps.size(); ++i)
        adam_update_tensor(*ps[i], *gs[i], *ms[i], *vs[i], cfg.lr, bc1, bc2);

    if (!sup) {
        const double nlr = cfg.lr * cfg.noise_lr_scale;
        adam_update_scalar(params.raw_a, gacc_a, opt.m_a, opt.v_a, nlr, bc1, bc2);
        adam_update_scalar(params.raw_lambda, gacc_lambda, opt.m_lambda,
                           opt.v_lambda, nlr, bc1, bc2);
    }
    return float(loss_acc);
}

// ---- validation ----

ValMetrics validate(const model::ModelState<float>& state,
                    const noiseloss::NoiseModelParamsF& params,
                    const std::vector<projsim::ProjectionStack>& val_stacks,
                    const TrainConfig& cfg)
{
    if (val_stacks.empty())
        throw Error(Err::InvalidArgument, "no validation stacks");
    const bool sup = cfg.mode == TrainMode::supervised_mse;
    const noiseloss::NoiseMode nmode = noise_mode_of(cfg.mode);
    double psnr_sum = 0, ssim_sum = 0, l1_sum = 0;
    int64_t count = 0;
    for (const projsim::ProjectionStack& st : val_stacks) {
        if (!st.has_clean())
            throw Error(Err::InvalidArgument,
                        "validation stack lacks clean frames");
        const int N = st.geometry.num_angles;
        const int Z = st.geometry.num_rows, U = st.geometry.detector_bins;
        float lo = st.clean_frames.v[0], hi = lo;
        for (float v : st.clean_frames.v) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double dr = double(hi) - double(lo);  // clean data range
        const int c0 = cfg.boundary == projsim::Boundary::wrap ? 0 : cfg.k;
        const int c1 = cfg.boundary == projsim::Boundary::wrap ? N : N - cfg.k;
        for (int center = c0; center < c1; ++center) {
            projsim::SequenceSample sample =
                projsim::take_sequence(st, cfg.k, center, cfg.boundary);
            TensorF den;
            if (sup) {
                den = model::predict_prior(state, sample).mu;
            } else {
                den = noiseloss::denoise_frame(state, params, sample, nmode);
            }
            TensorF clean({Z, U});
            const float* src =
                st.clean_frames.data() + size_t(center) * Z * U;
            std::copy(src, src + size_t(Z) * U, clean.v.begin());
            psnr_sum += metrics::psnr(den, clean, dr);
            ssim_sum += metrics::ssim(den, clean, dr);
            l1_sum += metrics::l1(den, clean);
            ++count;
        }
    }
    if (count == 0)
        throw Error(Err::InvalidArgument, "no eligible validation frames");
    ValMetrics out;
    out.psnr_db = psnr_sum / double(count);
    out.ssim = ssim_sum / double(count);
    out.l1 = l1_sum / double(count);
    out.stop_metric = metrics::stop_metric(out.ssim, out.l1, cfg.w_ssim, cfg.w_l1);
    return out;
}

bool early_stop(const std::vector<ValRecord>& history, int patience)
{
    if (history.empty())
        throw Error(Err::InvalidArgument, "early_stop on empty history");
    double best_psnr = -std::numeric_limits<double>::infinity();
    double best_stop = std::numeric_limits<double>::infinity();
    int run = 0;
    for (const ValRecord& r : history) {
        const bool degraded = r.psnr_db < best_psnr && r.stop_metric > best_stop;
        run = degraded ? run + 1 : 0;
        best_psnr = std::max(best_psnr, r.psnr_db);
        best_stop = std::min(best_stop, r.stop_metric);
    }
    return run >= patience;
}

// ---- fit ----

Checkpoint fit(const std::vector<projsim::ProjectionStack>& train_stacks,
               const std::vector<projsim::ProjectionStack>& val_stacks,
               TrainConfig cfg, const std::string& history_csv)
{
    resolve_train_config(cfg);
    if (train_stacks.empty())
        throw Error(Err::ConfigError, "at least one training stack required");
    TrainingView view(train_stacks, cfg.mode == TrainMode::supervised_mse);
    Rng rng(cfg.seed);

    Checkpoint ck;
    ck.config = cfg;
    ck.state = model::init_model<float>(cfg.effective_model(), cfg.seed);
    ck.params = noiseloss::NoiseModelParamsF();
    ck.opt = init_adam(ck.state);
    ck.rng_state = rng.state();

    if (cfg.max_epochs == 0) {
        if (!history_csv.empty()) write_history_csv({}, history_csv);
        return ck;
    }

    Checkpoint best = ck;
    double best_stop = std::numeric_limits<double>::infinity();
    std::vector<ValRecord> history;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        double loss_sum = 0;
        for (int s = 0; s < cfg.steps_per_epoch; ++s) {
            TrainBatch batch = sample_batch(view, cfg, rng);
            loss_sum += double(train_step(ck.state, ck.params, ck.opt, batch, cfg));
        }
        const ValMetrics vm = validate(ck.state, ck.params, val_stacks, cfg);
        ValRecord rec;
        rec.step = int64_t(epoch) * cfg.steps_per_epoch;
        rec.loss = loss_sum / double(cfg.steps_per_epoch);
        rec.psnr_db = vm.psnr_db;
        rec.ssim = vm.ssim;
        rec.l1 = vm.l1;
        rec.stop_metric = vm.stop_metric;
        rec.a = double(ck.params.a());
        rec.lambda = double(ck.params.lambda());
        history.push_back(rec);

        ck.epoch = epoch;
        ck.history = history;
        ck.rng_state = rng.state();

        {
            std::ostringstream ss;
            ss.precision(6);
            ss << "epoch " << epoch << " step " << rec.step << " loss "
               << rec.loss << " val_psnr " << rec.psnr_db << " ssim "
               << rec.ssim << " stop " << rec.stop_metric << " a " << rec.a
               << " lambda " << rec.lambda;
            log::info(ss.str());
        }

        if (rec.stop_metric < best_stop) {
            best_stop = rec.stop_metric;
            best = ck;
        }
        if (early_stop(history, cfg.patience)) {
            log::info("early stop: validation degraded for " +
                      std::to_string(cfg.patience) + " consecutive epochs");
            break;
        }
    }

    best.history = history;
    if (!history_csv.empty()) write_history_csv(history, history_csv);
    return best;
}

void write_history_csv(const std::vector<ValRecord>& history,
                       const std::string& path)
{
    std::ofstream os(path);
    if (!os)
        throw Error(Err::IoError, "cannot open " + path);
    os << "step,loss,val_psnr_db,val_ssim,val_l1,stop_metric,a,lambda\n";
    os.precision(10);
    for (const ValRecord& r : history)
        os << r.step << "," << r.loss << "," << r.psnr_db << "," << r.ssim
           << "," << r.l1 << "," << r.stop_metric << "," << r.a << ","
           << r.lambda << "\n";
    if (!os)
        throw Error(Err::IoError, "failed writing " + path);
}

} // namespace n2ntd::training
