#pragma once

#include "n2ntd/core/tensor.hpp"
#include "n2ntd/projsim/projection.hpp"

#include <optional>
#include <string>
#include <vector>

namespace n2ntd::metrics {

// PSNR in dB: 10*log10(data_range^2 / MSE), capped at the 99 dB sentinel
// (exact matches included). data_range <= 0 is rejected.
double psnr(const TensorF& x, const TensorF& ref, double data_range);

// data_range defaulted to ref max - ref min.
double psnr(const TensorF& x, const TensorF& ref);

// Single-scale SSIM, 11x11 Gaussian window sigma=1.5, k1=0.01, k2=0.03,
// mean over valid (fully interior) window positions. Inputs are 2-D.
double ssim(const TensorF& x, const TensorF& ref, double data_range);
double ssim(const TensorF& x, const TensorF& ref);

// Mean absolute difference.
double l1(const TensorF& x, const TensorF& ref);

// Validation stopping score in loss form: w_ssim*(1-SSIM) + w_l1*L1.
double stop_metric(double ssim_value, double l1_value, double w_ssim = 0.86,
                   double w_l1 = 0.14);

struct FrameMetrics {
    int frame_index = 0;  // -1 flags the aggregate row
    double psnr_db = 0;
    double ssim = 0;
    double l1 = 0;
};

struct PairReport {
    std::string pair;  // e.g. "noisy_vs_clean"
    std::vector<FrameMetrics> frames;  // per-frame rows then aggregate
    FrameMetrics aggregate;
};

struct MetricReport {
    std::string domain;  // "projection" | "image"
    std::vector<PairReport> pairs;
    double data_range = 0;  // taken from the clean reference
    std::optional<std::pair<double, double>> noise_params;  // learned (a, lambda)
};

// Projection-domain report always; image-domain report appended when
// with_recon (per-slice FBP of all three stacks).
std::vector<MetricReport> evaluate_report(const projsim::ProjectionStack& noisy,
                                          const projsim::ProjectionStack& denoised,
                                          const projsim::ProjectionStack& clean,
                                          bool with_recon);

// CSV columns: domain, pair, frame_index, psnr_db, ssim, l1; aggregate rows
// have frame_index = -1.
void write_report_csv(const std::vector<MetricReport>& reports,
                      const std::string& path);

} // namespace n2ntd::metrics
