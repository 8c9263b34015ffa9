#include "n2ntd/recon/fbp.hpp"

#include "n2ntd/core/binio.hpp"
#include "n2ntd/core/errors.hpp"
#include "n2ntd/core/logging.hpp"
#include "n2ntd/core/parallel.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <vector>

namespace n2ntd::recon {

using nlohmann::json;

double ramlak_tap(int n, double ds)
{
    if (n == 0) return 1.0 / (4.0 * ds * ds);
    if (n % 2 == 0) return 0.0;
    return -1.0 / (M_PI * M_PI * double(n) * double(n) * ds * ds);
}

// Kernel taps for offsets -(U-1)..(U-1), optionally apodized by a cosine
// window applied to the kernel's frequency response (synthesized on a 4U
// grid).
static std::vector<double> build_taps(int U, double ds, bool cosine)
{
    const int half = U - 1;
    std::vector<double> taps(2 * half + 1);
    for (int n = -half; n <= half; ++n)
        taps[size_t(n + half)] = ramlak_tap(n, ds);
    if (!cosine) return taps;

    const int M = 4 * U;
    std::vector<double> H(M);
    for (int m = 0; m < M; ++m) {
        double acc = taps[size_t(half)];
        for (int n = 1; n <= half; ++n)
            acc += 2.0 * taps[size_t(n + half)] * std::cos(2.0 * M_PI * n * m / M);
        const int folded = std::min(m, M - m);
        acc *= std::cos(M_PI * folded / M);  // cos(pi*nu/(2*nu_nyquist))
        H[size_t(m)] = acc;
    }
    for (int n = -half; n <= half; ++n) {
        double acc = 0;
        for (int m = 0; m < M; ++m)
            acc += H[size_t(m)] * std::cos(2.0 * M_PI * n * m / M);
        taps[size_t(n + half)] = acc / M;
    }
    return taps;
}

TensorF ramp_filter(const TensorF& sinogram, double ds, bool cosine)
{
    if (sinogram.rank() != 2)
        throw Error(Err::InvalidArgument, "ramp_filter expects an [N, U] sinogram");
    const int N = sinogram.dim(0), U = sinogram.dim(1);
    if (U < 4)
        throw Error(Err::InvalidArgument, "ramp_filter requires U >= 4");
    const std::vector<double> taps = build_taps(U, ds, cosine);
    const int half = U - 1;
    TensorF out({N, U});
#pragma omp parallel for schedule(static) if (par::enabled())
    for (int i = 0; i < N; ++i) {
        const float* row = sinogram.data() + size_t(i) * U;
        float* orow = out.data() + size_t(i) * U;
        for (int u = 0; u < U; ++u) {
            double acc = 0;
            // zero-padded linear convolution: only in-range source bins
            const int v0 = std::max(0, u - half), v1 = std::min(U - 1, u + half);
            for (int v = v0; v <= v1; ++v)
                acc += taps[size_t(u - v + half)] * row[v];
            orow[u] = float(acc * ds);
        }
    }
    return out;
}

TensorF fbp_slice(const TensorF& sinogram, const projsim::Geometry& g,
                  int grid, bool cosine)
{
    if (sinogram.rank() != 2 || sinogram.dim(0) != g.num_angles ||
        sinogram.dim(1) != g.detector_bins)
        throw Error(Err::InvalidArgument, "sinogram shape does not match geometry");
    const int N = g.num_angles, U = g.detector_bins, P = grid;
    const double ds = 2.0 / U;
    const double span = N * g.angle_step;
    if (span < M_PI * (1.0 - 1e-6))
        log::warn("angular coverage below pi; reconstruction will be distorted");
    // per-angle weight: delta/2 over a full circle (each ray seen twice),
    // delta otherwise; equals pi/N for uniform pi- or 2pi-spanning schedules
    const double w = (std::abs(span - 2.0 * M_PI) < 1e-6) ? g.angle_step / 2.0
                                                          : g.angle_step;
    const TensorF filt = ramp_filter(sinogram, ds, cosine);

    std::vector<double> cs(N), sn(N);
    for (int i = 0; i < N; ++i) {
        const double th = g.angle_start + i * g.angle_step;
        cs[size_t(i)] = std::cos(th);
        sn[size_t(i)] = std::sin(th);
    }
    TensorF img({P, P});
    const double dp = 2.0 / P;
#pragma omp parallel for schedule(static) if (par::enabled())
    for (int iy = 0; iy < P; ++iy) {
        const double y = -1.0 + (iy + 0.5) * dp;
        for (int ix = 0; ix < P; ++ix) {
            const double x = -1.0 + (ix + 0.5) * dp;
            double acc = 0;
            for (int i = 0; i < N; ++i) {
                const double s = x * cs[size_t(i)] + y * sn[size_t(i)];
                const double u = (s + 1.0) / ds - 0.5;
                const int i0 = int(std::floor(u));
                const double fr = u - i0;
                const float* row = filt.data() + size_t(i) * U;
                const double v0 = (i0 >= 0 && i0 < U) ? row[i0] : 0.0;
                const double v1 = (i0 + 1 >= 0 && i0 + 1 < U) ? row[i0 + 1] : 0.0;
                acc += (1.0 - fr) * v0 + fr * v1;
            }
            img.at(iy, ix) = float(acc * w);
        }
    }
    return img;
}

Volume reconstruct(const projsim::ProjectionStack& stack, int grid, bool cosine)
{
    const auto& g = stack.geometry;
    const int N = g.num_angles, Z = g.num_rows, U = g.detector_bins;
    Volume vol;
    vol.pixel_size = 2.0 / grid;
    vol.voxels.resize({Z, grid, grid});
    for (int z = 0; z < Z; ++z) {
        TensorF sino({N, U});
        for (int i = 0; i < N; ++i)
            std::copy(stack.frames.v.begin() + (size_t(i) * Z + z) * U,
                      stack.frames.v.begin() + (size_t(i) * Z + z + 1) * U,
                      sino.v.begin() + size_t(i) * U);
        const TensorF img = fbp_slice(sino, g, grid, cosine);
        std::copy(img.v.begin(), img.v.end(),
                  vol.voxels.v.begin() + size_t(z) * grid * grid);
    }
    return vol;
}

void write_volume(const Volume& vol, const std::string& path)
{
    json hdr;
    hdr["version"] = 1;
    hdr["n_slices"] = vol.voxels.dim(0);
    hdr["grid"] = vol.voxels.dim(1);
    hdr["pixel_size"] = vol.pixel_size;
    const std::string htxt = hdr.dump();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(Err::IoError, "cannot open for writing: " + path);
    os.write("CTVL", 4);
    io::write_u32(os, uint32_t(htxt.size()));
    os.write(htxt.data(), std::streamsize(htxt.size()));
    io::write_f32(os, vol.voxels.data(), vol.voxels.size());
    if (!os) throw Error(Err::IoError, "write failed: " + path);
}

Volume read_volume(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(Err::IoError, "cannot open for reading: " + path);
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "CTVL")
        throw Error(Err::MalformedHeader, "bad magic bytes");
    uint32_t hlen = 0;
    if (!io::read_u32(is, hlen))
        throw Error(Err::MalformedHeader, "missing header length");
    std::string htxt(hlen, '\0');
    if (!is.read(htxt.data(), hlen))
        throw Error(Err::MalformedHeader, "header shorter than declared");
    json hdr = json::parse(htxt, nullptr, false);
    if (hdr.is_discarded())
        throw Error(Err::MalformedHeader, "header is not valid JSON");
    Volume vol;
    try {
        if (hdr.at("version").get<int>() != 1)
            throw Error(Err::VersionMismatch,
                        "unsupported version " + hdr["version"].dump());
        const int Z = hdr.at("n_slices").get<int>();
        const int P = hdr.at("grid").get<int>();
        vol.pixel_size = hdr.at("pixel_size").get<double>();
        if (Z < 1 || P < 1)
            throw Error(Err::MalformedHeader, "non-positive shape in header");
        vol.voxels.resize({Z, P, P});
        if (!io::read_f32(is, vol.voxels.data(), vol.voxels.size()))
            throw Error(Err::TruncatedPayload, "voxel block shorter than header implies");
    } catch (const json::exception& e) {
        throw Error(Err::MalformedHeader, std::string("header: ") + e.what());
    }
    return vol;
}

} // namespace n2ntd::recon
