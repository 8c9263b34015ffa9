#pragma once

#include "n2ntd/core/errors.hpp"
#include "n2ntd/core/tensor.hpp"
#include "n2ntd/model/net.hpp"

#include <cmath>
#include <string>

// Mixed Poisson-Gaussian observation model with learnable (a, lambda), the
// reference-free likelihood loss, and the posterior-mean estimator used at
// inference time.

namespace n2ntd::noiseloss {

enum class NoiseMode { mixed, gaussian, poisson };

inline const char* noise_mode_name(NoiseMode m)
{
    switch (m) {
    case NoiseMode::mixed:    return "mixed";
    case NoiseMode::gaussian: return "gaussian";
    case NoiseMode::poisson:  return "poisson";
    }
    return "?";
}

inline NoiseMode parse_noise_mode(const std::string& s)
{
    if (s == "mixed") return NoiseMode::mixed;
    if (s == "gaussian") return NoiseMode::gaussian;
    if (s == "poisson") return NoiseMode::poisson;
    throw Error(Err::ConfigError, "unknown noise mode: " + s);
}

namespace detail {

// overflow-safe softplus and its inverse
template <typename T>
T softplus(T x)
{
    if (x > T(30)) return x;
    if (x < T(-30)) return std::exp(x);
    return std::log1p(std::exp(x));
}

template <typename T>
T softplus_inv(T y)
{
    if (y > T(30)) return y;
    return std::log(std::expm1(y));
}

template <typename T>
T logistic(T x)
{
    return T(1) / (T(1) + std::exp(-x));
}

} // namespace detail

// Unconstrained raw parameters; the positive values are
// a = softplus(raw_a) + 1e-8 and lambda = softplus(raw_lambda) + 1e-8.
// Both are trained jointly with the network.
template <typename T>
struct NoiseModelParams {
    T raw_a;
    T raw_lambda;

    // defaults give a ~ 1e-3 and lambda ~ 100 in normalized units
    NoiseModelParams()
        : raw_a(detail::softplus_inv(T(1e-3) - T(1e-8))),
          raw_lambda(detail::softplus_inv(T(100) - T(1e-8)))
    {
    }

    static NoiseModelParams from_values(T a, T lambda)
    {
        NoiseModelParams p;
        p.raw_a = detail::softplus_inv(a - T(1e-8));
        p.raw_lambda = detail::softplus_inv(lambda - T(1e-8));
        return p;
    }

    T a() const { return detail::softplus(raw_a) + T(1e-8); }
    T lambda() const { return detail::softplus(raw_lambda) + T(1e-8); }
};

using NoiseModelParamsF = NoiseModelParams<float>;

// sigma_n^2 for one predicted mean; negative means are clamped to zero
// inside the variance term only.
template <typename T>
inline T noise_variance_scalar(T mu, T a, T lambda, NoiseMode mode)
{
    const T m = mu > T(0) ? mu : T(0);
    switch (mode) {
    case NoiseMode::mixed:    return m / lambda + a;
    case NoiseMode::gaussian: return a;
    case NoiseMode::poisson:  return m / lambda;
    }
    return T(0);
}

template <typename T>
Tensor<T> noise_variance(const Tensor<T>& mu, const NoiseModelParams<T>& params,
                         NoiseMode mode)
{
    const T a = params.a(), lambda = params.lambda();
    Tensor<T> out;
    out.shape = mu.shape;
    out.v.resize(mu.v.size());
    for (size_t i = 0; i < mu.v.size(); ++i) {
        if (!std::isfinite(double(mu.v[i])))
            throw Error(Err::InvalidArgument, "non-finite predicted mean");
        out.v[i] = noise_variance_scalar(mu.v[i], a, lambda, mode);
    }
    return out;
}

// sigma_x^2 = exp(s) clamped to [1e-6, 1e6]
template <typename T>
inline T prior_variance_scalar(T s)
{
    const T e = std::exp(s);
    if (e < T(1e-6)) return T(1e-6);
    if (e > T(1e6)) return T(1e6);
    return e;
}

// Per-pixel likelihood summand:
//   (y - mu)^2 / (2 sigma^2) + 1/2 ln sigma^2 - 0.1 sigma_n,
// with sigma^2 = sigma_x^2 + sigma_n^2, averaged over pixels,
// natural log. The regularizer acts on the noise standard deviation
// sigma_n rather than total sigma: rewarding only the corruption term is
// what makes the sigma_x/sigma_n split identifiable, so the learned (a,
// lambda) converge to the simulated dose parameters; a total-sigma reward
// is invariant to the split and leaves them unconstrained.
template <typename T>
struct LossTerms {
    T value;                 // mean loss
    Tensor<T> dmu;           // d loss / d mu (per pixel)
    Tensor<T> dlog_var;      // d loss / d s (per pixel)
    T draw_a;                // d loss / d raw_a
    T draw_lambda;           // d loss / d raw_lambda
};

namespace detail {

template <typename T>
void check_loss_inputs(const Tensor<T>& y, const model::PriorPrediction<T>& prior)
{
    if (y.shape != prior.mu.shape || y.shape != prior.log_var.shape)
        throw Error(Err::InvalidArgument, "loss shapes disagree");
    if (y.v.empty())
        throw Error(Err::InvalidArgument, "loss over empty array");
    for (size_t i = 0; i < y.v.size(); ++i)
        if (!std::isfinite(double(y.v[i])) ||
            !std::isfinite(double(prior.mu.v[i])) ||
            !std::isfinite(double(prior.log_var.v[i])))
            throw Error(Err::NonFiniteLoss, "non-finite loss input");
}

} // namespace detail

template <typename T>
T loss(const Tensor<T>& y, const model::PriorPrediction<T>& prior,
       const NoiseModelParams<T>& params, NoiseMode mode, T sigma_reg = T(0.1))
{
    detail::check_loss_inputs(y, prior);
    const T a = params.a(), lambda = params.lambda();
    double acc = 0;
    for (size_t i = 0; i < y.v.size(); ++i) {
        const T mu = prior.mu.v[i];
        const T var_x = prior_variance_scalar(prior.log_var.v[i]);
        const T var_n = noise_variance_scalar(mu, a, lambda, mode);
        const T var = var_x + var_n;
        const T r = y.v[i] - mu;
        acc += double(r) * double(r) / (2.0 * double(var)) +
               0.5 * std::log(double(var)) -
               double(sigma_reg) * std::sqrt(double(var_n));
    }
    const T out = T(acc / double(y.v.size()));
    if (!std::isfinite(double(out)))
        throw Error(Err::NonFiniteLoss, "loss is not finite");
    return out;
}

// Analytic gradients of loss() w.r.t. (mu, log_var, raw_a, raw_lambda).
// Doubles as the finite-difference test target.
template <typename T>
LossTerms<T> loss_gradients(const Tensor<T>& y,
                            const model::PriorPrediction<T>& prior,
                            const NoiseModelParams<T>& params, NoiseMode mode,
                            T sigma_reg = T(0.1))
{
    detail::check_loss_inputs(y, prior);
    const T a = params.a(), lambda = params.lambda();
    const size_t n = y.v.size();
    LossTerms<T> out;
    out.dmu.shape = y.shape;
    out.dmu.v.assign(n, T(0));
    out.dlog_var.shape = y.shape;
    out.dlog_var.v.assign(n, T(0));
    double acc = 0, acc_da = 0, acc_dl = 0;
    const double inv_n = 1.0 / double(n);
    for (size_t i = 0; i < n; ++i) {
        const double mu = double(prior.mu.v[i]);
        const double s = double(prior.log_var.v[i]);
        const double yv = double(y.v[i]);
        const double ex = std::exp(s);
        const double var_x = ex < 1e-6 ? 1e-6 : (ex > 1e6 ? 1e6 : ex);
        const double m = mu > 0 ? mu : 0;
        double var_n, dvn_dmu, dvn_da, dvn_dl;
        switch (mode) {
        case NoiseMode::mixed:
            var_n = m / double(lambda) + double(a);
            dvn_dmu = mu > 0 ? 1.0 / double(lambda) : 0.0;
            dvn_da = 1.0;
            dvn_dl = -m / (double(lambda) * double(lambda));
            break;
        case NoiseMode::gaussian:
            var_n = double(a);
            dvn_dmu = 0.0;
            dvn_da = 1.0;
            dvn_dl = 0.0;
            break;
        case NoiseMode::poisson:
            var_n = m / double(lambda);
            dvn_dmu = mu > 0 ? 1.0 / double(lambda) : 0.0;
            dvn_da = 0.0;
            dvn_dl = -m / (double(lambda) * double(lambda));
            break;
        default:
            var_n = dvn_dmu = dvn_da = dvn_dl = 0.0;
        }
        const double var = var_x + var_n;
        const double r = yv - mu;
        const double sn = std::sqrt(var_n);
        acc += r * r / (2.0 * var) + 0.5 * std::log(var) -
               double(sigma_reg) * sn;

        // d/d(var) of the first two terms
        const double dvar = -r * r / (2.0 * var * var) + 0.5 / var;
        // d/d(var_n) of the regularizer; subgradient 0 at var_n = 0
        const double dreg = sn > 0 ? -double(sigma_reg) / (2.0 * sn) : 0.0;
        const double dvarn = dvar + dreg;

        out.dmu.v[i] = T((-r / var + dvarn * dvn_dmu) * inv_n);
        const double dvx_ds = (ex >= 1e-6 && ex <= 1e6) ? ex : 0.0;
        out.dlog_var.v[i] = T(dvar * dvx_ds * inv_n);
        acc_da += dvarn * dvn_da;
        acc_dl += dvarn * dvn_dl;
    }
    out.value = T(acc * inv_n);
    if (!std::isfinite(double(out.value)))
        throw Error(Err::NonFiniteLoss, "loss is not finite");
    // chain through the softplus mapping
    out.draw_a = T(acc_da * inv_n * double(detail::logistic(params.raw_a)));
    out.draw_lambda =
        T(acc_dl * inv_n * double(detail::logistic(params.raw_lambda)));
    return out;
}

// Posterior mean under the Gaussian model: (mu_x var_n + y var_x) / (var_n + var_x),
// an element-wise convex combination of mu_x and y.
template <typename T>
Tensor<T> posterior_mean(const Tensor<T>& y, const Tensor<T>& mu_x,
                         const Tensor<T>& var_x, const Tensor<T>& var_n)
{
    if (y.shape != mu_x.shape || y.shape != var_x.shape || y.shape != var_n.shape)
        throw Error(Err::InvalidArgument, "posterior_mean shapes disagree");
    Tensor<T> out;
    out.shape = y.shape;
    out.v.resize(y.v.size());
    for (size_t i = 0; i < y.v.size(); ++i) {
        const T vx = var_x.v[i], vn = var_n.v[i];
        if (vx < T(0) || vn < T(0))
            throw Error(Err::InvalidArgument, "negative variance");
        const T denom = vx + vn;
        if (denom <= T(0))
            throw Error(Err::DegeneratePosterior, "degenerate posterior");
        out.v[i] = (mu_x.v[i] * vn + y.v[i] * vx) / denom;
    }
    return out;
}

// Full inference step for one sequence sample: predict the prior for the
// middle frame, then shrink the noisy middle frame toward it.
template <typename T>
Tensor<T> denoise_frame(const model::ModelState<T>& state,
                        const NoiseModelParams<T>& params,
                        const projsim::SequenceSample& sample, NoiseMode mode)
{
    model::PriorPrediction<T> pred = model::predict_prior(state, sample);
    const int H = pred.mu.dim(0), W = pred.mu.dim(1);
    Tensor<T> y({H, W});
    const float* src =
        sample.frames.data() + size_t(sample.middle_index) * H * W;
    for (size_t i = 0; i < size_t(H) * W; ++i) y.v[i] = T(src[i]);
    Tensor<T> var_x;
    var_x.shape = pred.log_var.shape;
    var_x.v.resize(pred.log_var.v.size());
    for (size_t i = 0; i < var_x.v.size(); ++i)
        var_x.v[i] = prior_variance_scalar(pred.log_var.v[i]);
    Tensor<T> var_n = noise_variance(pred.mu, params, mode);
    return posterior_mean(y, pred.mu, var_x, var_n);
}

} // namespace n2ntd::noiseloss
