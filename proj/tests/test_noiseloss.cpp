#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "n2ntd/core/errors.hpp"
#include "n2ntd/core/rng.hpp"
#include "n2ntd/model/net.hpp"
#include "n2ntd/noiseloss/noise.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

using namespace n2ntd;
using namespace n2ntd::noiseloss;

namespace {

template <typename Fn>
Err thrown_code(Fn&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error to be thrown");
    return Err::ConfigError;
}

// single uniform pixel field with a fixed residual r = y - mu
model::PriorPrediction<double> uniform_prior(double mu, double log_var,
                                             std::vector<int> shape = {1, 1})
{
    model::PriorPrediction<double> p;
    p.mu = Tensor<double>(shape);
    p.mu.fill(mu);
    p.log_var = Tensor<double>(shape);
    p.log_var.fill(log_var);
    return p;
}

Tensor<double> uniform_obs(double y, std::vector<int> shape = {1, 1})
{
    Tensor<double> t(shape);
    t.fill(y);
    return t;
}

template <typename T>
Tensor<T> random_tensor(std::vector<int> shape, Rng& rng, double lo, double hi)
{
    Tensor<T> t(std::move(shape));
    for (auto& v : t.v) v = T(rng.uniform(lo, hi));
    return t;
}

} // namespace

TEST_CASE("noise mode names round trip and bad names are rejected")
{
    CHECK(parse_noise_mode("mixed") == NoiseMode::mixed);
    CHECK(parse_noise_mode("gaussian") == NoiseMode::gaussian);
    CHECK(parse_noise_mode("poisson") == NoiseMode::poisson);
    for (NoiseMode m : {NoiseMode::mixed, NoiseMode::gaussian, NoiseMode::poisson})
        CHECK(parse_noise_mode(noise_mode_name(m)) == m);
    CHECK(thrown_code([] { parse_noise_mode("laplace"); }) == Err::ConfigError);
}

TEST_CASE("parameter mapping recovers requested values and defaults")
{
    const auto p = NoiseModelParams<double>::from_values(0.5, 50.0);
    CHECK(std::abs(p.a() - 0.5) < 1e-12);
    CHECK(std::abs(p.lambda() - 50.0) < 1e-10);

    const NoiseModelParams<double> d;
    CHECK(std::abs(d.a() - 1e-3) < 1e-12);
    CHECK(std::abs(d.lambda() - 100.0) < 1e-9);

    // raw parameters stay finite even for extreme positive targets
    const auto big = NoiseModelParams<double>::from_values(1e-7, 1e12);
    CHECK(std::isfinite(big.raw_a));
    CHECK(std::isfinite(big.raw_lambda));
    CHECK(std::abs(big.lambda() - 1e12) / 1e12 < 1e-12);
}

TEST_CASE("noise variance follows the mixed Poisson-Gaussian law")
{
    // frozen examples
    CHECK(noise_variance_scalar(100.0, 0.5, 50.0, NoiseMode::mixed) ==
          doctest::Approx(2.5).epsilon(1e-12));
    CHECK(noise_variance_scalar(100.0, 0.5, 50.0, NoiseMode::gaussian) == 0.5);
    CHECK(noise_variance_scalar(100.0, 0.5, 50.0, NoiseMode::poisson) ==
          doctest::Approx(2.0).epsilon(1e-12));

    // negative predicted means clamp to zero inside the variance
    CHECK(noise_variance_scalar(-1.0, 0.5, 50.0, NoiseMode::mixed) == 0.5);
    CHECK(noise_variance_scalar(-1.0, 0.5, 50.0, NoiseMode::poisson) == 0.0);

    // monotone nondecreasing in mu for the signal-dependent modes
    double prev = -1.0;
    for (double mu = -0.5; mu <= 1.5; mu += 0.01) {
        const double v = noise_variance_scalar(mu, 1e-3, 50.0, NoiseMode::mixed);
        CHECK(v >= prev);
        prev = v;
    }

    // tensor version matches the scalar map element-wise
    Rng rng(4);
    const auto mu = random_tensor<double>({3, 5}, rng, -0.2, 1.2);
    const auto params = NoiseModelParams<double>::from_values(0.01, 80.0);
    const auto v = noise_variance(mu, params, NoiseMode::mixed);
    REQUIRE(v.shape == mu.shape);
    for (size_t i = 0; i < mu.v.size(); ++i)
        CHECK(v.v[i] == noise_variance_scalar(mu.v[i], params.a(),
                                              params.lambda(), NoiseMode::mixed));

    Tensor<double> bad({1, 2});
    bad.v = {0.5, std::numeric_limits<double>::quiet_NaN()};
    CHECK(thrown_code([&] { noise_variance(bad, params, NoiseMode::mixed); }) ==
          Err::InvalidArgument);
}

TEST_CASE("prior variance is exp(log_var) clamped to [1e-6, 1e6]")
{
    CHECK(prior_variance_scalar(0.0) == 1.0);
    CHECK(prior_variance_scalar(1.0) == doctest::Approx(std::exp(1.0)).epsilon(1e-15));
    CHECK(prior_variance_scalar(-20.0) == 1e-6);
    CHECK(prior_variance_scalar(-14.0) == 1e-6);  // exp(-14) ~ 8.3e-7 < floor
    CHECK(prior_variance_scalar(20.0) == 1e6);
    CHECK(prior_variance_scalar(-13.0) > 1e-6);   // exp(-13) ~ 2.3e-6 above floor
}

TEST_CASE("loss reproduces frozen hand-computed values")
{
    // With log_var = -20 the prior variance sits on its 1e-6 floor, so in
    // gaussian mode with noise variance a the per-pixel loss is
    //   r^2 / (2 (a + 1e-6)) + 0.5 ln(a + 1e-6) - 0.1 sqrt(a)
    // which for a = 1 and r in {0, 1} gives -0.1 and 0.4 up to O(1e-6), and
    // for a = 4, r = 2 gives 0.5 + ln 2 - 0.2.
    const auto p1 = NoiseModelParams<double>::from_values(1.0, 100.0);
    const auto p4 = NoiseModelParams<double>::from_values(4.0, 100.0);

    const double l0 = loss(uniform_obs(0.5), uniform_prior(0.5, -20.0), p1,
                           NoiseMode::gaussian);
    CHECK(std::abs(l0 - (-0.1)) < 1e-5);

    const double l1 = loss(uniform_obs(1.5), uniform_prior(0.5, -20.0), p1,
                           NoiseMode::gaussian);
    CHECK(std::abs(l1 - 0.4) < 1e-5);

    const double l2 = loss(uniform_obs(2.5), uniform_prior(0.5, -20.0), p4,
                           NoiseMode::gaussian);
    CHECK(std::abs(l2 - (0.5 + std::log(2.0) - 0.2)) < 1e-5);

    // the loss is the mean over pixels: a field holding both examples
    Tensor<double> y({1, 2});
    y.v = {0.5, 1.5};
    model::PriorPrediction<double> pr;
    pr.mu = Tensor<double>({1, 2});
    pr.mu.fill(0.5);
    pr.log_var = Tensor<double>({1, 2});
    pr.log_var.fill(-20.0);
    const double lm = loss(y, pr, p1, NoiseMode::gaussian);
    CHECK(std::abs(lm - 0.5 * (l0 + l1)) < 1e-12);

    // a custom regularizer weight scales only the -w * sigma_n term
    const double lw = loss(uniform_obs(0.5), uniform_prior(0.5, -20.0), p1,
                           NoiseMode::gaussian, 0.3);
    CHECK(std::abs(lw - (l0 - 0.2)) < 1e-12);
}

TEST_CASE("loss value agrees between loss() and loss_gradients()")
{
    Rng rng(9);
    const auto y = random_tensor<double>({4, 5}, rng, 0.0, 1.0);
    model::PriorPrediction<double> pr;
    pr.mu = random_tensor<double>({4, 5}, rng, 0.0, 1.0);
    pr.log_var = random_tensor<double>({4, 5}, rng, -8.0, 1.0);
    const auto params = NoiseModelParams<double>::from_values(0.01, 60.0);
    for (NoiseMode mode :
         {NoiseMode::mixed, NoiseMode::gaussian, NoiseMode::poisson}) {
        const double lv = loss(y, pr, params, mode);
        const auto terms = loss_gradients(y, pr, params, mode);
        CHECK(std::abs(lv - terms.value) <= 1e-12 * std::max(1.0, std::abs(lv)));
    }
}

TEST_CASE("loss is invariant under joint pixel permutation")
{
    Rng rng(12);
    const int n = 64;
    auto y = random_tensor<double>({8, 8}, rng, 0.0, 1.0);
    model::PriorPrediction<double> pr;
    pr.mu = random_tensor<double>({8, 8}, rng, 0.0, 1.0);
    pr.log_var = random_tensor<double>({8, 8}, rng, -6.0, 1.0);
    const auto params = NoiseModelParams<double>::from_values(2e-3, 40.0);
    const double base = loss(y, pr, params, NoiseMode::mixed);

    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i)
        std::swap(perm[size_t(i)], perm[size_t(rng.uniform_int(0, i))]);
    Tensor<double> y2({8, 8});
    model::PriorPrediction<double> pr2;
    pr2.mu = Tensor<double>({8, 8});
    pr2.log_var = Tensor<double>({8, 8});
    for (int i = 0; i < n; ++i) {
        y2.v[size_t(i)] = y.v[size_t(perm[size_t(i)])];
        pr2.mu.v[size_t(i)] = pr.mu.v[size_t(perm[size_t(i)])];
        pr2.log_var.v[size_t(i)] = pr.log_var.v[size_t(perm[size_t(i)])];
    }
    const double shuffled = loss(y2, pr2, params, NoiseMode::mixed);
    CHECK(std::abs(base - shuffled) <= 1e-12 * std::max(1.0, std::abs(base)));
}

TEST_CASE("analytic loss gradients match central finite differences")
{
    Rng rng(21);
    const auto y = random_tensor<double>({3, 4}, rng, 0.0, 1.0);
    model::PriorPrediction<double> pr;
    pr.mu = random_tensor<double>({3, 4}, rng, 0.05, 0.95);
    pr.log_var = random_tensor<double>({3, 4}, rng, -9.0, 1.0);
    auto params = NoiseModelParams<double>::from_values(5e-3, 70.0);

    const double h = 1e-6;
    for (NoiseMode mode :
         {NoiseMode::mixed, NoiseMode::gaussian, NoiseMode::poisson}) {
        const auto terms = loss_gradients(y, pr, params, mode);

        auto rel = [](double fd, double an) {
            return std::abs(fd - an) /
                   std::max({std::abs(fd), std::abs(an), 1e-8});
        };

        for (size_t i = 0; i < y.v.size(); ++i) {
            double& m = pr.mu.v[i];
            const double m0 = m;
            m = m0 + h;
            const double lp = loss(y, pr, params, mode);
            m = m0 - h;
            const double lm = loss(y, pr, params, mode);
            m = m0;
            CHECK(rel((lp - lm) / (2 * h), terms.dmu.v[i]) < 1e-5);

            double& s = pr.log_var.v[i];
            const double s0 = s;
            s = s0 + h;
            const double sp = loss(y, pr, params, mode);
            s = s0 - h;
            const double sm = loss(y, pr, params, mode);
            s = s0;
            CHECK(rel((sp - sm) / (2 * h), terms.dlog_var.v[i]) < 1e-5);
        }

        {
            const double r0 = params.raw_a;
            params.raw_a = r0 + h;
            const double ap = loss(y, pr, params, mode);
            params.raw_a = r0 - h;
            const double am = loss(y, pr, params, mode);
            params.raw_a = r0;
            const double fd = (ap - am) / (2 * h);
            if (mode == NoiseMode::poisson)
                CHECK(terms.draw_a == 0.0);
            else
                CHECK(rel(fd, terms.draw_a) < 1e-5);
        }
        {
            const double r0 = params.raw_lambda;
            params.raw_lambda = r0 + h;
            const double lp = loss(y, pr, params, mode);
            params.raw_lambda = r0 - h;
            const double lm = loss(y, pr, params, mode);
            params.raw_lambda = r0;
            const double fd = (lp - lm) / (2 * h);
            if (mode == NoiseMode::gaussian)
                CHECK(terms.draw_lambda == 0.0);
            else
                CHECK(rel(fd, terms.draw_lambda) < 1e-5);
        }
    }
}

TEST_CASE("loss input validation raises typed errors")
{
    const auto params = NoiseModelParams<double>::from_values(1e-3, 100.0);
    const auto y = uniform_obs(0.5, {2, 2});
    auto pr = uniform_prior(0.4, 0.0, {2, 2});

    auto bad_shape = uniform_prior(0.4, 0.0, {2, 3});
    CHECK(thrown_code([&] { loss(y, bad_shape, params, NoiseMode::mixed); }) ==
          Err::InvalidArgument);

    Tensor<double> empty;
    empty.shape = {0, 0};
    model::PriorPrediction<double> pe;
    pe.mu = empty;
    pe.log_var = empty;
    CHECK(thrown_code([&] { loss(empty, pe, params, NoiseMode::mixed); }) ==
          Err::InvalidArgument);

    auto nan_pr = pr;
    nan_pr.mu.v[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK(thrown_code([&] { loss(y, nan_pr, params, NoiseMode::mixed); }) ==
          Err::NonFiniteLoss);
    auto inf_y = y;
    inf_y.v[0] = std::numeric_limits<double>::infinity();
    CHECK(thrown_code([&] { loss(inf_y, pr, params, NoiseMode::mixed); }) ==
          Err::NonFiniteLoss);
    CHECK(thrown_code([&] {
        loss_gradients(inf_y, pr, params, NoiseMode::mixed);
    }) == Err::NonFiniteLoss);

    // finite inputs whose residual overflows the quadratic term
    auto huge = y;
    huge.v[0] = 1e200;
    CHECK(thrown_code([&] { loss(huge, pr, params, NoiseMode::mixed); }) ==
          Err::NonFiniteLoss);
}

TEST_CASE("posterior mean analytic limits are exact")
{
    Tensor<double> y({1, 2});
    y.v = {4.0, 0.75};
    Tensor<double> mu({1, 2});
    mu.v = {2.0, 0.25};
    Tensor<double> zero({1, 2});
    zero.fill(0.0);
    Tensor<double> one({1, 2});
    one.fill(1.0);

    // zero prior variance: the estimate is exactly the prior mean
    const auto to_mu = posterior_mean(y, mu, zero, one);
    CHECK(to_mu.v[0] == 2.0);
    CHECK(to_mu.v[1] == 0.25);

    // zero noise variance: the estimate is exactly the observation
    const auto to_y = posterior_mean(y, mu, one, zero);
    CHECK(to_y.v[0] == 4.0);
    CHECK(to_y.v[1] == 0.75);

    // equal unit variances: the exact midpoint
    const auto mid = posterior_mean(y, mu, one, one);
    CHECK(mid.v[0] == 3.0);
    CHECK(mid.v[1] == 0.5);
}

TEST_CASE("posterior mean is a convex combination and monotone in y")
{
    Rng rng(33);
    Tensor<double> y({1, 1}), mu({1, 1}), vx({1, 1}), vn({1, 1});
    for (int trial = 0; trial < 1000; ++trial) {
        y.v[0] = rng.uniform(-2.0, 2.0);
        mu.v[0] = rng.uniform(-2.0, 2.0);
        vx.v[0] = rng.uniform(0.0, 3.0);
        vn.v[0] = rng.uniform(1e-6, 3.0);
        const double out = posterior_mean(y, mu, vx, vn).v[0];
        const double lo = std::min(y.v[0], mu.v[0]);
        const double hi = std::max(y.v[0], mu.v[0]);
        CHECK(out >= lo - 1e-12);
        CHECK(out <= hi + 1e-12);

        // raising the observation can only raise the estimate
        Tensor<double> y2 = y;
        y2.v[0] += 0.5;
        const double out2 = posterior_mean(y2, mu, vx, vn).v[0];
        CHECK(out2 - out >= -1e-12);
        if (vx.v[0] > 0.01)
            CHECK(out2 - out > 0.5 * vx.v[0] / (vx.v[0] + vn.v[0]) - 1e-9);
    }

    // agreement between prior and observation is a fixed point
    y.v[0] = 0.7319;
    mu.v[0] = 0.7319;
    vx.v[0] = 0.37;
    vn.v[0] = 1.21;
    const double fixed = posterior_mean(y, mu, vx, vn).v[0];
    CHECK(std::abs(fixed - 0.7319) < 1e-12);
}

TEST_CASE("posterior mean rejects degenerate and invalid variances")
{
    Tensor<double> y({1, 1}), mu({1, 1}), vx({1, 1}), vn({1, 1});
    y.v[0] = 1.0;
    mu.v[0] = 0.5;

    vx.v[0] = 0.0;
    vn.v[0] = 0.0;
    CHECK(thrown_code([&] { posterior_mean(y, mu, vx, vn); }) ==
          Err::DegeneratePosterior);

    vx.v[0] = -1e-3;
    vn.v[0] = 1.0;
    CHECK(thrown_code([&] { posterior_mean(y, mu, vx, vn); }) ==
          Err::InvalidArgument);
    vx.v[0] = 1.0;
    vn.v[0] = -1e-3;
    CHECK(thrown_code([&] { posterior_mean(y, mu, vx, vn); }) ==
          Err::InvalidArgument);

    Tensor<double> wrong({1, 2});
    wrong.fill(1.0);
    CHECK(thrown_code([&] { posterior_mean(y, mu, vx, wrong); }) ==
          Err::InvalidArgument);
}

TEST_CASE("mixed loss converges to the gaussian loss as lambda grows")
{
    Rng rng(44);
    const auto y = random_tensor<double>({6, 6}, rng, 0.0, 1.0);
    model::PriorPrediction<double> pr;
    pr.mu = random_tensor<double>({6, 6}, rng, 0.0, 1.0);  // bounded means
    pr.log_var = random_tensor<double>({6, 6}, rng, -6.0, 0.0);

    const double a = 3e-3;
    const auto big = NoiseModelParams<double>::from_values(a, 1e12);
    const auto gauss = NoiseModelParams<double>::from_values(a, 100.0);

    const double lm = loss(y, pr, big, NoiseMode::mixed);
    const double lg = loss(y, pr, gauss, NoiseMode::gaussian);
    CHECK(std::abs(lm - lg) < 1e-6);

    const auto tm = loss_gradients(y, pr, big, NoiseMode::mixed);
    const auto tg = loss_gradients(y, pr, gauss, NoiseMode::gaussian);
    for (size_t i = 0; i < y.v.size(); ++i) {
        CHECK(std::abs(tm.dmu.v[i] - tg.dmu.v[i]) < 1e-6);
        CHECK(std::abs(tm.dlog_var.v[i] - tg.dlog_var.v[i]) < 1e-6);
    }
}

TEST_CASE("sigma scan finds the local minimizer implied by stationarity")
{
    // With the prior variance floored (log_var = -20) and gaussian noise of
    // variance a = sigma^2, the per-pixel loss as a function of sigma is
    //   f(sigma) = r^2 / (2 sigma^2) + ln sigma - 0.1 sigma   (up to consts),
    // whose interior stationary point satisfies sigma^2 - 0.1 sigma^3 = r^2.
    // That local minimizer exists only for moderate residuals (the cubic term
    // wins for r beyond ~3.85), so the scan stays at r <= 3.5.
    for (double r : {0.5, 1.0, 2.0, 3.0, 3.5}) {
        const auto y = uniform_obs(r);
        const auto pr = uniform_prior(0.0, -20.0);

        double best_sigma = 0.0, best_loss = std::numeric_limits<double>::max();
        const double lo = 0.2, hi = 6.0, step = 1e-3;
        for (double sg = lo; sg <= hi; sg += step) {
            const auto p = NoiseModelParams<double>::from_values(sg * sg, 100.0);
            const double l = loss(y, pr, p, NoiseMode::gaussian);
            if (l < best_loss) {
                best_loss = l;
                best_sigma = sg;
            }
        }
        // interior minimizer satisfying the stationarity identity
        CHECK(best_sigma > lo + 10 * step);
        CHECK(best_sigma < hi - 10 * step);
        const double g = best_sigma * best_sigma -
                         0.1 * best_sigma * best_sigma * best_sigma;
        CHECK(std::abs(g - r * r) < 0.05);

        // the analytic noise-parameter gradient changes sign across it
        const double sl = best_sigma - 0.05, sr = best_sigma + 0.05;
        const auto pl = NoiseModelParams<double>::from_values(sl * sl, 100.0);
        const auto prm = NoiseModelParams<double>::from_values(sr * sr, 100.0);
        CHECK(loss_gradients(y, pr, pl, NoiseMode::gaussian).draw_a < 0.0);
        CHECK(loss_gradients(y, pr, prm, NoiseMode::gaussian).draw_a > 0.0);
    }

    // the minimizer is local, not global: far out the -0.1 sigma reward wins
    {
        const auto y = uniform_obs(1.0);
        const auto pr = uniform_prior(0.0, -20.0);
        const auto near = NoiseModelParams<double>::from_values(1.054 * 1.054, 100.0);
        const auto far = NoiseModelParams<double>::from_values(3600.0, 100.0);
        CHECK(loss(y, pr, far, NoiseMode::gaussian) <
              loss(y, pr, near, NoiseMode::gaussian));
    }
}

TEST_CASE("denoise_frame shrinks the noisy middle frame toward the prior")
{
    model::ModelConfig cfg;
    cfg.k = 2;
    cfg.channels = {2, 3, 4};
    cfg.lstm_hidden_bottleneck = 3;
    cfg.lstm_hidden_tail = 2;
    cfg.kernel_size = 3;
    cfg.attention_reduction = 2;
    auto st = model::init_model<double>(cfg, 17);

    Rng rng(18);
    projsim::SequenceSample sample;
    sample.frames = random_tensor<float>({5, 12, 12}, rng, 0.1, 0.9);
    sample.middle_index = 2;

    const auto params = NoiseModelParams<double>::from_values(5e-3, 60.0);
    const auto out = denoise_frame(st, params, sample, NoiseMode::mixed);
    REQUIRE(out.shape == std::vector<int>{12, 12});

    const auto pred = model::predict_prior(st, sample);
    const float* mid = sample.frames.data() + size_t(2) * 12 * 12;
    for (size_t i = 0; i < out.v.size(); ++i) {
        CHECK(std::isfinite(out.v[i]));
        const double lo = std::min(double(mid[i]), pred.mu.v[i]);
        const double hi = std::max(double(mid[i]), pred.mu.v[i]);
        CHECK(out.v[i] >= lo - 1e-9);
        CHECK(out.v[i] <= hi + 1e-9);
    }

    // a zeroed network predicts mu = 0 with unit prior variance, so the
    // posterior collapses to y / (1 + a)
    st.for_each_param(
        [](const std::string&, Tensor<double>& t) { t.fill(0.0); });
    const auto flat = denoise_frame(st, params, sample, NoiseMode::mixed);
    const double denom = 1.0 + params.a();
    for (size_t i = 0; i < flat.v.size(); ++i)
        CHECK(std::abs(flat.v[i] - double(mid[i]) / denom) < 1e-12);
}
