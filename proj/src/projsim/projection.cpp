#include "n2ntd/projsim/projection.hpp"

#include "n2ntd/core/binio.hpp"
#include "n2ntd/core/parallel.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace n2ntd::projsim {

using nlohmann::json;

void validate_geometry(const Geometry& g)
{
    if (g.num_angles < 1 || g.detector_bins < 1 || g.num_rows < 1)
        throw Error(Err::InvalidArgument, "geometry counts must be positive");
    if (g.circular) {
        const double span = g.num_angles * g.angle_step;
        if (std::abs(span - 2.0 * M_PI) > 1e-9)
            throw Error(Err::InvalidArgument,
                        "circular geometry requires N*angle_step == 2*pi");
    }
}

double slice_scale(int z, int num_rows)
{
    const double zeta = (2.0 * z - (num_rows - 1)) / std::max(num_rows - 1, 1);
    return std::sqrt(1.0 - 0.36 * zeta * zeta);
}

Phantom phantom_slice(const Phantom& ph, int z, int num_rows)
{
    const double s = slice_scale(z, num_rows);
    Phantom out;
    out.ellipses.reserve(ph.ellipses.size());
    for (Ellipse e : ph.ellipses) {
        e.cx *= s;
        e.cy *= s;
        e.ax *= s;
        e.ay *= s;
        out.ellipses.push_back(e);
    }
    return out;
}

double ellipse_chord(const Ellipse& e, double theta, double s)
{
    // Ray {p : p.x cos + p.y sin == s}, direction d = (-sin, cos). Map into
    // the frame where the ellipse is a unit circle; the quadratic in the ray
    // parameter gives chord = 2*sqrt(delta)/(e.e) since |d| == 1.
    const double ct = std::cos(theta), st = std::sin(theta);
    const double cr = std::cos(e.rot), sr = std::sin(e.rot);
    // ray anchor relative to center
    const double px = s * ct - e.cx, py = s * st - e.cy;
    // rotate by -rot, scale by 1/semi-axes
    const double w0x = (cr * px + sr * py) / e.ax;
    const double w0y = (-sr * px + cr * py) / e.ay;
    const double ex = (cr * -st + sr * ct) / e.ax;
    const double ey = (-sr * -st + cr * ct) / e.ay;
    const double ee = ex * ex + ey * ey;
    const double b = w0x * ex + w0y * ey;
    const double c = w0x * w0x + w0y * w0y - 1.0;
    const double delta = b * b - ee * c;
    if (delta <= 0) return 0.0;
    return 2.0 * std::sqrt(delta) / ee;
}

TensorF project_frame(const Phantom& ph, const Geometry& g, double angle)
{
    validate_geometry(g);
    const int Z = g.num_rows, U = g.detector_bins;
    TensorF frame({Z, U});
    const double ds = 2.0 / U;
#pragma omp parallel for schedule(static) if (par::enabled())
    for (int z = 0; z < Z; ++z) {
        const Phantom slice = phantom_slice(ph, z, Z);
        for (int u = 0; u < U; ++u) {
            const double s = -1.0 + (u + 0.5) * ds;
            double acc = 0;
            for (const auto& e : slice.ellipses)
                acc += e.density * ellipse_chord(e, angle, s);
            frame.at(z, u) = float(acc);
        }
    }
    return frame;
}

ProjectionStack project_stack(const Phantom& ph, const Geometry& g)
{
    validate_geometry(g);
    const int N = g.num_angles, Z = g.num_rows, U = g.detector_bins;
    ProjectionStack stack;
    stack.geometry = g;
    stack.frames.resize({N, Z, U});
    // The row loop inside project_frame does not nest a second team: OpenMP
    // nested parallelism stays off, so the inner pragma is a no-op here.
#pragma omp parallel for schedule(static) if (par::enabled())
    for (int i = 0; i < N; ++i) {
        const TensorF f = project_frame(ph, g, g.angle_start + i * g.angle_step);
        std::copy(f.v.begin(), f.v.end(), stack.frames.v.begin() + size_t(i) * Z * U);
    }
    stack.clean_frames = stack.frames;
    return stack;
}

// 99.9th percentile by nearest rank; deterministic.
static double percentile999(const std::vector<float>& v)
{
    std::vector<float> tmp(v);
    std::sort(tmp.begin(), tmp.end());
    const size_t idx = std::min(tmp.size() - 1,
                                size_t(std::ceil(0.999 * tmp.size())) - 1);
    return tmp[idx];
}

ProjectionStack apply_noise(const ProjectionStack& stack, double lambda,
                            double a, uint64_t seed)
{
    if (lambda <= 0) throw Error(Err::InvalidArgument, "lambda must be positive");
    if (a < 0) throw Error(Err::InvalidArgument, "a must be non-negative");
    if (!stack.has_clean())
        throw Error(Err::InvalidArgument, "apply_noise requires clean frames");
    for (float v : stack.clean_frames.v)
        if (v < 0)
            throw Error(Err::InvalidArgument, "negative clean values in stack");

    ProjectionStack out = stack;
    if (out.scale_factor == 0) {
        // rescale so the 99.9th percentile of clean values maps to 1.0.
        const double p = percentile999(out.clean_frames.v);
        if (p <= 0)
            throw Error(Err::InvalidArgument, "cannot normalize all-zero stack");
        const float f = float(1.0 / p);
        for (auto& v : out.clean_frames.v) v *= f;
        out.scale_factor = 1.0 / p;
    }
    const double sd = std::sqrt(a);
    Rng rng(seed);
    out.frames.resize(out.clean_frames.shape);
    for (size_t i = 0; i < out.clean_frames.v.size(); ++i) {
        const double x = out.clean_frames.v[i];
        const double y = rng.poisson(lambda * x) / lambda + rng.normal(0.0, sd);
        out.frames.v[i] = float(y);
    }
    out.noise_truth = NoiseTruth{lambda, a, seed};
    return out;
}

SequenceSample take_sequence(const ProjectionStack& stack, int k, int center,
                             Boundary boundary)
{
    const Geometry& g = stack.geometry;
    const int N = g.num_angles, Z = g.num_rows, U = g.detector_bins;
    const int T = 2 * k + 1;
    if (k < 1 || T > N)
        throw Error(Err::InvalidArgument, "window 2k+1 exceeds stack size");
    if (boundary == Boundary::wrap && !g.circular)
        throw Error(Err::InvalidArgument, "wrap boundary requires circular geometry");
    SequenceSample smp;
    smp.frames.resize({T, Z, U});
    smp.middle_index = k;
    smp.source_angle_index = center;
    for (int t = 0; t < T; ++t) {
        int idx = center - k + t;
        if (boundary == Boundary::wrap) {
            idx = ((idx % N) + N) % N;
        } else if (idx < 0 || idx >= N) {
            throw Error(Err::InvalidArgument, "window out of range for skip boundary");
        }
        std::copy(stack.frames.v.begin() + size_t(idx) * Z * U,
                  stack.frames.v.begin() + size_t(idx + 1) * Z * U,
                  smp.frames.v.begin() + size_t(t) * Z * U);
    }
    return smp;
}

std::vector<SequenceSample> make_sequences(const ProjectionStack& stack,
                                           int k, Boundary boundary)
{
    const int N = stack.geometry.num_angles;
    if (2 * k + 1 > N)
        throw Error(Err::InvalidArgument, "window 2k+1 exceeds stack size");
    std::vector<SequenceSample> out;
    if (boundary == Boundary::wrap) {
        for (int c = 0; c < N; ++c)
            out.push_back(take_sequence(stack, k, c, boundary));
    } else {
        for (int c = k; c <= N - k - 1; ++c)
            out.push_back(take_sequence(stack, k, c, boundary));
    }
    return out;
}

void write_stack(const ProjectionStack& stack, const std::string& path)
{
    const Geometry& g = stack.geometry;
    json hdr;
    hdr["version"] = 1;
    hdr["n_angles"] = g.num_angles;
    hdr["n_rows"] = g.num_rows;
    hdr["n_bins"] = g.detector_bins;
    hdr["angle_start"] = g.angle_start;
    hdr["angle_step"] = g.angle_step;
    hdr["circular"] = g.circular;
    hdr["scale_factor"] = stack.scale_factor;
    hdr["has_clean"] = stack.has_clean();
    if (stack.noise_truth)
        hdr["noise_truth"] = {{"lambda", stack.noise_truth->lambda},
                              {"a", stack.noise_truth->a},
                              {"seed", stack.noise_truth->seed}};
    else
        hdr["noise_truth"] = nullptr;
    hdr["id"] = stack.id;
    const std::string htxt = hdr.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(Err::IoError, "cannot open for writing: " + path);
    os.write("CTPK", 4);
    io::write_u32(os, uint32_t(htxt.size()));
    os.write(htxt.data(), std::streamsize(htxt.size()));
    io::write_f32(os, stack.frames.data(), stack.frames.size());
    if (stack.has_clean())
        io::write_f32(os, stack.clean_frames.data(), stack.clean_frames.size());
    if (!os) throw Error(Err::IoError, "write failed: " + path);
}

ProjectionStack read_stack(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(Err::IoError, "cannot open for reading: " + path);
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "CTPK")
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

    ProjectionStack stack;
    try {
        if (hdr.at("version").get<int>() != 1)
            throw Error(Err::VersionMismatch,
                        "unsupported version " + hdr["version"].dump());
        stack.geometry.num_angles = hdr.at("n_angles").get<int>();
        stack.geometry.num_rows = hdr.at("n_rows").get<int>();
        stack.geometry.detector_bins = hdr.at("n_bins").get<int>();
        stack.geometry.angle_start = hdr.at("angle_start").get<double>();
        stack.geometry.angle_step = hdr.at("angle_step").get<double>();
        stack.geometry.circular = hdr.at("circular").get<bool>();
        stack.scale_factor = hdr.at("scale_factor").get<double>();
        stack.id = hdr.at("id").get<std::string>();
        if (!hdr.at("noise_truth").is_null()) {
            NoiseTruth nt;
            nt.lambda = hdr["noise_truth"].at("lambda").get<double>();
            nt.a = hdr["noise_truth"].at("a").get<double>();
            nt.seed = hdr["noise_truth"].at("seed").get<uint64_t>();
            stack.noise_truth = nt;
        }
        const bool has_clean = hdr.at("has_clean").get<bool>();
        const Geometry& g = stack.geometry;
        if (g.num_angles < 1 || g.num_rows < 1 || g.detector_bins < 1)
            throw Error(Err::MalformedHeader, "non-positive shape in header");
        stack.frames.resize({g.num_angles, g.num_rows, g.detector_bins});
        if (!io::read_f32(is, stack.frames.data(), stack.frames.size()))
            throw Error(Err::TruncatedPayload, "frame block shorter than header implies");
        if (has_clean) {
            stack.clean_frames.resize(stack.frames.shape);
            if (!io::read_f32(is, stack.clean_frames.data(), stack.clean_frames.size()))
                throw Error(Err::TruncatedPayload, "clean block shorter than header implies");
        }
    } catch (const json::exception& e) {
        throw Error(Err::MalformedHeader, std::string("header: ") + e.what());
    }
    return stack;
}

} // namespace n2ntd::projsim
