// Micro-benchmark comparing the serial reference kernels against the
// optimized (and optionally OpenMP-parallel) paths used by the library.
// Run manually: build/tools/bench [reps]

#include "n2ntd/core/parallel.hpp"
#include "n2ntd/core/rng.hpp"
#include "n2ntd/core/tensor.hpp"
#include "n2ntd/kernels/conv2d.hpp"
#include "n2ntd/metrics/metrics.hpp"
#include "n2ntd/projsim/phantom.hpp"
#include "n2ntd/projsim/projection.hpp"
#include "n2ntd/recon/fbp.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>

using namespace n2ntd;

namespace {

double time_ms(const std::function<void()>& fn, int reps)
{
    fn();  // warm-up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void fill_random(TensorF& t, Rng& rng)
{
    for (float& v : t.v) v = float(rng.uniform(-1.0, 1.0));
}

void report(const char* name, double ref_ms, double ser_ms, double par_ms,
            double gflop)
{
    std::printf("%-22s ref %8.2f ms", name, ref_ms);
    if (gflop > 0) std::printf(" (%5.2f GF/s)", gflop / ref_ms);
    std::printf(" | serial %8.2f ms", ser_ms);
    if (gflop > 0) std::printf(" (%5.2f GF/s)", gflop / ser_ms);
    std::printf(" | parallel %8.2f ms", par_ms);
    if (gflop > 0) std::printf(" (%5.2f GF/s)", gflop / par_ms);
    std::printf(" | speedup %4.2fx\n", ref_ms / par_ms);
}

} // namespace

int main(int argc, char** argv)
{
    const int reps = argc > 1 ? std::atoi(argv[1]) : 3;
    Rng rng(7);

    // conv2d on a training-sized activation block
    const int n = 8, ic = 32, oc = 32, h = 64, w = 64, k = 3;
    TensorF in({n, ic, h, w}), wt({oc, ic, k, k}), out({n, oc, h, w});
    TensorF gin({n, ic, h, w}), gwt({oc, ic, k, k});
    fill_random(in, rng);
    fill_random(wt, rng);
    fill_random(out, rng);
    const double flop = 2.0 * n * oc * ic * h * w * k * k / 1e6;  // ms -> GF/s

    {
        TensorF o({n, oc, h, w});
        const double ref = time_ms(
            [&] {
                kernels::reference::conv2d_fwd(in.data(), n, ic, h, w,
                                               wt.data(), oc, k, o.data());
            },
            reps);
        par::set_enabled(false);
        const double ser =
            time_ms([&] { kernels::conv2d_fwd(in, wt, o); }, reps);
        par::set_enabled(true);
        const double par_t =
            time_ms([&] { kernels::conv2d_fwd(in, wt, o); }, reps);
        report("conv2d fwd", ref, ser, par_t, flop);
    }
    {
        const double ref = time_ms(
            [&] {
                kernels::reference::conv2d_bwd_input(out.data(), n, oc, h, w,
                                                     wt.data(), ic, k,
                                                     gin.data());
            },
            reps);
        par::set_enabled(false);
        const double ser =
            time_ms([&] { kernels::conv2d_bwd_input(out, wt, gin); }, reps);
        par::set_enabled(true);
        const double par_t =
            time_ms([&] { kernels::conv2d_bwd_input(out, wt, gin); }, reps);
        report("conv2d bwd_input", ref, ser, par_t, flop);
    }
    {
        const double ref = time_ms(
            [&] {
                kernels::reference::conv2d_bwd_weight(out.data(), in.data(), n,
                                                      oc, ic, h, w, k,
                                                      gwt.data());
            },
            reps);
        par::set_enabled(false);
        const double ser =
            time_ms([&] { kernels::conv2d_bwd_weight(out, in, k, gwt); }, reps);
        par::set_enabled(true);
        const double par_t =
            time_ms([&] { kernels::conv2d_bwd_weight(out, in, k, gwt); }, reps);
        report("conv2d bwd_weight", ref, ser, par_t, flop);
    }

    // analytic projection of a procedural phantom
    {
        projsim::PhantomSpec spec;
        spec.seed = 11;
        const projsim::Phantom ph = projsim::make_phantom(spec);
        projsim::Geometry g;
        g.num_angles = 180;
        g.angle_step = 3.14159265358979323846 / g.num_angles;
        g.detector_bins = 128;
        g.num_rows = 4;
        g.circular = false;
        par::set_enabled(false);
        const double ser =
            time_ms([&] { (void)projsim::project_stack(ph, g); }, reps);
        par::set_enabled(true);
        const double par_t =
            time_ms([&] { (void)projsim::project_stack(ph, g); }, reps);
        report("radon 180x4x128", ser, ser, par_t, 0);
    }

    // filtered back-projection
    {
        projsim::PhantomSpec spec;
        spec.seed = 11;
        const projsim::Phantom ph = projsim::make_phantom(spec);
        projsim::Geometry g;
        g.num_angles = 360;
        g.angle_step = 2.0 * 3.14159265358979323846 / g.num_angles;
        g.detector_bins = 128;
        g.num_rows = 1;
        g.circular = true;
        const projsim::ProjectionStack st = projsim::project_stack(ph, g);
        par::set_enabled(false);
        const double ser =
            time_ms([&] { (void)recon::reconstruct(st, 128, false); }, reps);
        par::set_enabled(true);
        const double par_t =
            time_ms([&] { (void)recon::reconstruct(st, 128, false); }, reps);
        report("fbp 360->128^2", ser, ser, par_t, 0);
    }

    // SSIM on a large frame
    {
        TensorF a({512, 512}), b({512, 512});
        fill_random(a, rng);
        fill_random(b, rng);
        par::set_enabled(false);
        const double ser =
            time_ms([&] { (void)metrics::ssim(a, b, 2.0); }, reps);
        par::set_enabled(true);
        const double par_t =
            time_ms([&] { (void)metrics::ssim(a, b, 2.0); }, reps);
        report("ssim 512^2", ser, ser, par_t, 0);
    }

    std::printf("threads available: %d\n", par::max_threads());
    return 0;
}
