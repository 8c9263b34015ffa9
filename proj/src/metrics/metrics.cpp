#include "n2ntd/metrics/metrics.hpp"

#include "n2ntd/core/errors.hpp"
#include "n2ntd/core/parallel.hpp"
#include "n2ntd/recon/fbp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace n2ntd::metrics {

static void check_shapes(const TensorF& x, const TensorF& ref)
{
    if (!x.same_shape(ref))
        throw Error(Err::InvalidArgument, "metric inputs must have equal shapes");
    if (x.empty())
        throw Error(Err::InvalidArgument, "metric inputs must be non-empty");
}

double psnr(const TensorF& x, const TensorF& ref, double data_range)
{
    check_shapes(x, ref);
    if (data_range <= 0)
        throw Error(Err::InvalidArgument, "data_range must be positive");
    double mse = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double d = double(x.v[i]) - double(ref.v[i]);
        mse += d * d;
    }
    mse /= double(x.size());
    if (mse == 0) return 99.0;  // exact-match sentinel
    const double v = 10.0 * std::log10(data_range * data_range / mse);
    return std::min(v, 99.0);
}

double psnr(const TensorF& x, const TensorF& ref)
{
    check_shapes(x, ref);
    const auto [mn, mx] = std::minmax_element(ref.v.begin(), ref.v.end());
    return psnr(x, ref, double(*mx) - double(*mn));
}

// 11x11 Gaussian window, sigma = 1.5, normalized to sum 1.
static const std::vector<double>& ssim_window()
{
    static const std::vector<double> win = [] {
        std::vector<double> w(11 * 11);
        double sum = 0;
        for (int i = 0; i < 11; ++i)
            for (int j = 0; j < 11; ++j) {
                const double dy = i - 5, dx = j - 5;
                w[i * 11 + j] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
                sum += w[i * 11 + j];
            }
        for (auto& v : w) v /= sum;
        return w;
    }();
    return win;
}

double ssim(const TensorF& x, const TensorF& ref, double data_range)
{
    check_shapes(x, ref);
    if (x.rank() != 2)
        throw Error(Err::InvalidArgument, "ssim expects 2-D images");
    const int H = x.dim(0), W = x.dim(1);
    if (H < 11 || W < 11)
        throw Error(Err::InvalidArgument, "image smaller than the 11x11 ssim window");
    if (data_range <= 0)
        throw Error(Err::InvalidArgument, "data_range must be positive");
    const double c1 = (0.01 * data_range) * (0.01 * data_range);
    const double c2 = (0.03 * data_range) * (0.03 * data_range);
    const auto& win = ssim_window();

    double total = 0;
    const int ny = H - 10, nx = W - 10;
#pragma omp parallel for schedule(static) reduction(+ : total) if (par::enabled() && ny >= 64)
    for (int y = 0; y < ny; ++y) {
        double rowsum = 0;
        for (int xo = 0; xo < nx; ++xo) {
            double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    const double wv = win[i * 11 + j];
                    const double a = x.at(y + i, xo + j);
                    const double b = ref.at(y + i, xo + j);
                    mx += wv * a;
                    my += wv * b;
                    sxx += wv * a * a;
                    syy += wv * b * b;
                    sxy += wv * a * b;
                }
            sxx -= mx * mx;
            syy -= my * my;
            sxy -= mx * my;
            rowsum += ((2 * mx * my + c1) * (2 * sxy + c2)) /
                      ((mx * mx + my * my + c1) * (sxx + syy + c2));
        }
        total += rowsum;
    }
    return total / (double(ny) * nx);
}

double ssim(const TensorF& x, const TensorF& ref)
{
    check_shapes(x, ref);
    const auto [mn, mx] = std::minmax_element(ref.v.begin(), ref.v.end());
    return ssim(x, ref, double(*mx) - double(*mn));
}

double l1(const TensorF& x, const TensorF& ref)
{
    check_shapes(x, ref);
    double acc = 0;
    for (size_t i = 0; i < x.size(); ++i)
        acc += std::abs(double(x.v[i]) - double(ref.v[i]));
    return acc / double(x.size());
}

double stop_metric(double ssim_value, double l1_value, double w_ssim, double w_l1)
{
    return w_ssim * (1.0 - ssim_value) + w_l1 * l1_value;
}

// One 2-D view of frame i of an [N, Z, U] stack tensor.
static TensorF frame_view(const TensorF& t, int i)
{
    const int Z = t.dim(1), U = t.dim(2);
    TensorF f({Z, U});
    std::copy(t.v.begin() + size_t(i) * Z * U,
              t.v.begin() + size_t(i + 1) * Z * U, f.v.begin());
    return f;
}

static PairReport pair_report(const std::string& name, const TensorF& x,
                              const TensorF& ref, double data_range)
{
    PairReport pr;
    pr.pair = name;
    const int n = x.dim(0);
    double sp = 0, ss = 0, sl = 0;
    for (int i = 0; i < n; ++i) {
        const TensorF a = frame_view(x, i), b = frame_view(ref, i);
        FrameMetrics fm;
        fm.frame_index = i;
        fm.psnr_db = psnr(a, b, data_range);
        fm.ssim = ssim(a, b, data_range);
        fm.l1 = l1(a, b);
        sp += fm.psnr_db;
        ss += fm.ssim;
        sl += fm.l1;
        pr.frames.push_back(fm);
    }
    pr.aggregate = FrameMetrics{-1, sp / n, ss / n, sl / n};
    return pr;
}

static double range_of(const TensorF& t)
{
    const auto [mn, mx] = std::minmax_element(t.v.begin(), t.v.end());
    const double r = double(*mx) - double(*mn);
    if (r <= 0)
        throw Error(Err::InvalidArgument, "clean reference has zero data range");
    return r;
}

std::vector<MetricReport> evaluate_report(const projsim::ProjectionStack& noisy,
                                          const projsim::ProjectionStack& denoised,
                                          const projsim::ProjectionStack& clean,
                                          bool with_recon)
{
    const TensorF& ref = clean.has_clean() ? clean.clean_frames : clean.frames;
    if (!noisy.frames.same_shape(ref) || !denoised.frames.same_shape(ref))
        throw Error(Err::InvalidArgument, "stacks are misaligned");
    if (noisy.geometry.num_angles != clean.geometry.num_angles ||
        std::abs(noisy.geometry.angle_start - clean.geometry.angle_start) > 1e-12 ||
        std::abs(noisy.geometry.angle_step - clean.geometry.angle_step) > 1e-12)
        throw Error(Err::InvalidArgument, "stack angles are misaligned");

    std::vector<MetricReport> out;
    MetricReport proj;
    proj.domain = "projection";
    proj.data_range = range_of(ref);  // range of the clean reference
    proj.pairs.push_back(pair_report("noisy_vs_clean", noisy.frames, ref, proj.data_range));
    proj.pairs.push_back(pair_report("denoised_vs_clean", denoised.frames, ref, proj.data_range));
    out.push_back(std::move(proj));

    if (with_recon) {
        projsim::ProjectionStack cleanref = clean;
        cleanref.frames = ref;
        const recon::Volume vn = recon::reconstruct(noisy);
        const recon::Volume vd = recon::reconstruct(denoised);
        const recon::Volume vc = recon::reconstruct(cleanref);
        MetricReport img;
        img.domain = "image";
        img.data_range = range_of(vc.voxels);
        img.pairs.push_back(pair_report("noisy_vs_clean", vn.voxels, vc.voxels, img.data_range));
        img.pairs.push_back(pair_report("denoised_vs_clean", vd.voxels, vc.voxels, img.data_range));
        out.push_back(std::move(img));
    }
    return out;
}

void write_report_csv(const std::vector<MetricReport>& reports,
                      const std::string& path)
{
    std::ofstream os(path);
    if (!os) throw Error(Err::IoError, "cannot open for writing: " + path);
    os << "domain,pair,frame_index,psnr_db,ssim,l1\n";
    os.precision(10);
    for (const auto& rep : reports)
        for (const auto& pr : rep.pairs) {
            for (const auto& fm : pr.frames)
                os << rep.domain << ',' << pr.pair << ',' << fm.frame_index
                   << ',' << fm.psnr_db << ',' << fm.ssim << ',' << fm.l1 << '\n';
            os << rep.domain << ',' << pr.pair << ",-1," << pr.aggregate.psnr_db
               << ',' << pr.aggregate.ssim << ',' << pr.aggregate.l1 << '\n';
        }
    if (!os) throw Error(Err::IoError, "write failed: " + path);
}

} // namespace n2ntd::metrics
