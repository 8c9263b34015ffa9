#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "n2ntd/core/errors.hpp"
#include "n2ntd/core/rng.hpp"
#include "n2ntd/projsim/phantom.hpp"
#include "n2ntd/projsim/projection.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

using namespace n2ntd;
using namespace n2ntd::projsim;

namespace {

// Independent point-membership density (no shared code with ellipse_chord).
double density_at(const std::vector<Ellipse>& es, double x, double y)
{
    double d = 0;
    for (const Ellipse& e : es) {
        const double c = std::cos(e.rot), s = std::sin(e.rot);
        const double dx = x - e.cx, dy = y - e.cy;
        const double u = (c * dx + s * dy) / e.ax;
        const double v = (-s * dx + c * dy) / e.ay;
        if (u * u + v * v <= 1.0) d += e.density;
    }
    return d;
}

// Midpoint-rule line integral along the ray at angle theta, offset s.
double march_ray(const std::vector<Ellipse>& es, double theta, double s)
{
    const double ct = std::cos(theta), st = std::sin(theta);
    const double dt = 1e-4, lim = 1.7;
    double acc = 0;
    for (double t = -lim + dt / 2; t < lim; t += dt)
        acc += density_at(es, s * ct - t * st, s * st + t * ct);
    return acc * dt;
}

Geometry simple_geometry(int n_angles, int rows, int bins, bool circular)
{
    Geometry g;
    g.num_angles = n_angles;
    g.num_rows = rows;
    g.detector_bins = bins;
    g.circular = circular;
    g.angle_step = (circular ? 2.0 : 1.0) * M_PI / n_angles;
    return g;
}

std::string temp_path(const char* name)
{
    return std::string("/tmp/n2ntd_projsim_") + name;
}

} // namespace

TEST_CASE("ellipse chord matches ray-marching on random triples")
{
    Rng rng(42);
    for (int trial = 0; trial < 100; ++trial) {
        Ellipse e;
        do {
            e.ax = rng.uniform(0.05, 0.5);
            e.ay = rng.uniform(0.05, 0.5);
            e.rot = rng.uniform(0.0, M_PI);
            e.cx = rng.uniform(-0.5, 0.5);
            e.cy = rng.uniform(-0.5, 0.5);
        } while (!ellipse_in_fov(e));
        e.density = rng.uniform(0.05, 0.5);
        const double theta = rng.uniform(0.0, 2.0 * M_PI);
        const double s = rng.uniform(-1.0, 1.0);
        const double analytic = e.density * ellipse_chord(e, theta, s);
        const double numeric = march_ray({e}, theta, s);
        CHECK(std::abs(analytic - numeric) < 1e-3);
    }
}

TEST_CASE("project_frame matches ray-marching with slice scaling")
{
    PhantomSpec spec;
    spec.seed = 7;
    const Phantom ph = make_phantom(spec);
    const Geometry g = simple_geometry(4, 3, 16, false);
    Rng rng(11);
    for (int i = 0; i < 4; ++i) {
        const double angle = g.angle_start + i * g.angle_step;
        const TensorF frame = project_frame(ph, g, angle);
        for (int probe = 0; probe < 6; ++probe) {
            const int z = int(rng.uniform_int(0, g.num_rows - 1));
            const int u = int(rng.uniform_int(0, g.detector_bins - 1));
            const double s = -1.0 + (u + 0.5) * 2.0 / g.detector_bins;
            const Phantom slice = phantom_slice(ph, z, g.num_rows);
            const double numeric = march_ray(slice.ellipses, angle, s);
            CHECK(std::abs(double(frame.at(z, u)) - numeric) < 2e-3);
        }
    }
}

TEST_CASE("slice scale profile and phantom_slice arithmetic")
{
    CHECK(slice_scale(0, 1) == doctest::Approx(1.0));
    CHECK(slice_scale(0, 5) == doctest::Approx(0.8));
    CHECK(slice_scale(2, 5) == doctest::Approx(1.0));
    CHECK(slice_scale(4, 5) == doctest::Approx(0.8));
    Ellipse e;
    e.cx = 0.2;
    e.cy = -0.1;
    e.ax = 0.3;
    e.ay = 0.4;
    e.rot = 0.7;
    e.density = 0.25;
    Phantom ph;
    ph.ellipses.push_back(e);
    const Phantom sl = phantom_slice(ph, 0, 5);
    CHECK(sl.ellipses[0].cx == doctest::Approx(0.16));
    CHECK(sl.ellipses[0].cy == doctest::Approx(-0.08));
    CHECK(sl.ellipses[0].ax == doctest::Approx(0.24));
    CHECK(sl.ellipses[0].ay == doctest::Approx(0.32));
    CHECK(sl.ellipses[0].rot == doctest::Approx(0.7));
    CHECK(sl.ellipses[0].density == doctest::Approx(0.25));
}

TEST_CASE("projection mass is conserved across angles")
{
    // ellipses kept inside the unit disk so no ray bundle clips any mass
    Phantom ph;
    Ellipse a;
    a.cx = 0.2;
    a.cy = 0.1;
    a.ax = 0.3;
    a.ay = 0.2;
    a.rot = 0.4;
    a.density = 0.4;
    Ellipse b;
    b.cx = -0.3;
    b.cy = -0.2;
    b.ax = 0.15;
    b.ay = 0.25;
    b.rot = 2.0;
    b.density = 0.2;
    ph.ellipses = {a, b};

    const Geometry g = simple_geometry(12, 3, 256, false);
    const ProjectionStack st = project_stack(ph, g);
    const double ds = 2.0 / g.detector_bins;
    for (int z = 0; z < g.num_rows; ++z) {
        const double s2 = slice_scale(z, g.num_rows) * slice_scale(z, g.num_rows);
        const double mass = s2 * M_PI *
                            (a.density * a.ax * a.ay + b.density * b.ax * b.ay);
        for (int i = 0; i < g.num_angles; ++i) {
            double sum = 0;
            for (int u = 0; u < g.detector_bins; ++u)
                sum += st.frames.at(i, z, u) * ds;
            CHECK(sum == doctest::Approx(mass).epsilon(0.05));
        }
    }
}

TEST_CASE("geometry validation")
{
    Geometry g = simple_geometry(8, 2, 4, true);
    CHECK_NOTHROW(validate_geometry(g));
    g.angle_step = 0.1;  // 8 * 0.1 != 2*pi
    CHECK_THROWS_AS(validate_geometry(g), Error);
    Geometry h = simple_geometry(8, 2, 4, false);
    h.num_rows = 0;
    CHECK_THROWS_AS(validate_geometry(h), Error);
}

TEST_CASE("noise matches the mixed Poisson-Gaussian variance model")
{
    const double x = 0.5, lambda = 50.0, a = 1e-3;
    ProjectionStack st;
    st.geometry = simple_geometry(1, 100, 1000, false);
    st.frames.resize({1, 100, 1000});
    st.frames.fill(float(x));
    st.clean_frames = st.frames;
    st.scale_factor = 1.0;  // already normalized; keeps the constant value

    auto sample_var = [&](double lam, uint64_t seed, double& mean_out) {
        const ProjectionStack noisy = apply_noise(st, lam, a, seed);
        double m = 0;
        for (float v : noisy.frames.v) m += v - x;
        m /= double(noisy.frames.size());
        double var = 0;
        for (float v : noisy.frames.v) var += (v - x - m) * (v - x - m);
        var /= double(noisy.frames.size() - 1);
        mean_out = m;
        return var;
    };

    double m50 = 0, m25 = 0;
    const double v50 = sample_var(lambda, 101, m50);
    const double v25 = sample_var(lambda / 2, 202, m25);
    CHECK(std::abs(m50) < 1.5e-3);  // unbiased: E[y] = x
    CHECK(std::abs(m25) < 2.0e-3);
    CHECK(v50 == doctest::Approx(x / 50.0 + a).epsilon(0.03));
    CHECK(v25 == doctest::Approx(x / 25.0 + a).epsilon(0.03));
    // halving the dose doubles the Poisson part of the variance
    CHECK((v25 - a) / (v50 - a) == doctest::Approx(2.0).epsilon(0.06));
}

TEST_CASE("apply_noise is deterministic in the seed and records the truth")
{
    PhantomSpec spec;
    spec.seed = 3;
    const Phantom ph = make_phantom(spec);
    const ProjectionStack clean = project_stack(ph, simple_geometry(6, 4, 32, false));
    const ProjectionStack n1 = apply_noise(clean, 50.0, 1e-3, 77);
    const ProjectionStack n2 = apply_noise(clean, 50.0, 1e-3, 77);
    const ProjectionStack n3 = apply_noise(clean, 50.0, 1e-3, 78);
    CHECK(n1.frames.v == n2.frames.v);
    CHECK(n1.frames.v != n3.frames.v);
    REQUIRE(n1.noise_truth.has_value());
    CHECK(n1.noise_truth->lambda == 50.0);
    CHECK(n1.noise_truth->a == 1e-3);
    CHECK(n1.noise_truth->seed == 77);
    CHECK(n1.has_clean());
}

TEST_CASE("normalization maps the 99.9th percentile to one")
{
    ProjectionStack st;
    st.geometry = simple_geometry(1, 100, 100, false);
    st.frames.resize({1, 100, 100});
    for (int i = 0; i < 10000; ++i) st.frames.v[size_t(i)] = float(i);
    st.clean_frames = st.frames;

    const ProjectionStack noisy = apply_noise(st, 1e9, 0.0, 5);
    // nearest-rank: ceil(0.999 * 10000) - 1 = index 9989 -> value 9989
    CHECK(noisy.scale_factor == doctest::Approx(1.0 / 9989.0).epsilon(1e-12));
    float mx = 0;
    for (float v : noisy.clean_frames.v) mx = std::max(mx, v);
    CHECK(mx == doctest::Approx(9999.0 / 9989.0).epsilon(1e-6));
    // already-normalized stacks are left untouched
    const ProjectionStack again = apply_noise(noisy, 1e9, 0.0, 5);
    CHECK(again.scale_factor == noisy.scale_factor);
    CHECK(again.clean_frames.v == noisy.clean_frames.v);
}

TEST_CASE("apply_noise input validation")
{
    ProjectionStack st;
    st.geometry = simple_geometry(1, 2, 2, false);
    st.frames.resize({1, 2, 2});
    st.frames.fill(0.5f);
    CHECK_THROWS_AS(apply_noise(st, 50.0, 1e-3, 1), Error);  // no clean
    st.clean_frames = st.frames;
    CHECK_THROWS_AS(apply_noise(st, 0.0, 1e-3, 1), Error);
    CHECK_THROWS_AS(apply_noise(st, 50.0, -1.0, 1), Error);
    st.clean_frames.v[0] = -0.1f;
    CHECK_THROWS_AS(apply_noise(st, 50.0, 1e-3, 1), Error);
    ProjectionStack zeros;
    zeros.geometry = st.geometry;
    zeros.frames.resize({1, 2, 2});
    zeros.clean_frames = zeros.frames;
    CHECK_THROWS_AS(apply_noise(zeros, 50.0, 1e-3, 1), Error);  // all-zero
}

TEST_CASE("sequence windows: wrap and skip semantics")
{
    const int N = 8, Z = 2, U = 3, k = 2;
    ProjectionStack st;
    st.geometry = simple_geometry(N, Z, U, true);
    st.frames.resize({N, Z, U});
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < Z * U; ++j)
            st.frames.v[size_t(i) * Z * U + size_t(j)] = float(i);

    SUBCASE("wrap indexes modularly")
    {
        const SequenceSample smp = take_sequence(st, k, 0, Boundary::wrap);
        CHECK(smp.middle_index == k);
        CHECK(smp.source_angle_index == 0);
        const int expect[5] = {6, 7, 0, 1, 2};
        for (int t = 0; t < 5; ++t)
            CHECK(smp.frames.at(t, 0, 0) == float(expect[t]));
        const auto all = make_sequences(st, k, Boundary::wrap);
        CHECK(all.size() == size_t(N));
        CHECK(all[5].frames.at(0, 1, 2) == 3.0f);
    }
    SUBCASE("skip drops boundary centers")
    {
        const auto all = make_sequences(st, k, Boundary::skip);
        CHECK(all.size() == size_t(N - 2 * k));
        CHECK(all.front().source_angle_index == k);
        CHECK(all.back().source_angle_index == N - k - 1);
        for (int t = 0; t < 5; ++t)
            CHECK(all.front().frames.at(t, 0, 0) == float(t));
        CHECK_THROWS_AS(take_sequence(st, k, 0, Boundary::skip), Error);
        CHECK_THROWS_AS(take_sequence(st, k, N - 1, Boundary::skip), Error);
    }
    SUBCASE("window validation")
    {
        CHECK_THROWS_AS(take_sequence(st, 0, 3, Boundary::wrap), Error);
        CHECK_THROWS_AS(take_sequence(st, 4, 3, Boundary::wrap), Error);  // 9 > 8
        ProjectionStack flat = st;
        flat.geometry.circular = false;
        flat.geometry.angle_step = M_PI / N;
        CHECK_THROWS_AS(take_sequence(flat, k, 3, Boundary::wrap), Error);
        CHECK_NOTHROW(take_sequence(flat, k, 3, Boundary::skip));
    }
}

TEST_CASE("ctpk round trip preserves everything bit-exactly")
{
    PhantomSpec spec;
    spec.seed = 9;
    const Phantom ph = make_phantom(spec);
    ProjectionStack st = apply_noise(
        project_stack(ph, simple_geometry(6, 4, 32, true)), 37.0, 2e-3, 123);
    st.id = "roundtrip-stack";

    const std::string path = temp_path("roundtrip.ctpk");
    write_stack(st, path);
    const ProjectionStack rd = read_stack(path);
    CHECK(rd.frames.shape == st.frames.shape);
    CHECK(rd.frames.v == st.frames.v);
    CHECK(rd.clean_frames.v == st.clean_frames.v);
    CHECK(rd.geometry.num_angles == st.geometry.num_angles);
    CHECK(rd.geometry.angle_step == st.geometry.angle_step);
    CHECK(rd.geometry.circular == st.geometry.circular);
    CHECK(rd.scale_factor == st.scale_factor);
    CHECK(rd.id == st.id);
    REQUIRE(rd.noise_truth.has_value());
    CHECK(rd.noise_truth->lambda == 37.0);
    CHECK(rd.noise_truth->a == 2e-3);
    CHECK(rd.noise_truth->seed == 123);
    std::remove(path.c_str());
}

TEST_CASE("ctpk rejects malformed files with typed errors")
{
    ProjectionStack st;
    st.geometry = simple_geometry(2, 2, 2, false);
    st.frames.resize({2, 2, 2});
    st.frames.fill(1.0f);
    const std::string path = temp_path("bad.ctpk");
    write_stack(st, path);

    auto slurp = [&]() {
        std::ifstream is(path, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(is), {});
    };
    auto spit = [&](const std::string& bytes) {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os.write(bytes.data(), std::streamsize(bytes.size()));
    };
    const std::string good = slurp();

    SUBCASE("bad magic")
    {
        std::string b = good;
        b[0] = 'X';
        spit(b);
        CHECK_THROWS_WITH_AS(read_stack(path), "bad magic bytes", Error);
        try {
            read_stack(path);
        } catch (const Error& e) {
            CHECK(e.code() == Err::MalformedHeader);
        }
    }
    SUBCASE("unsupported version")
    {
        std::string b = good;
        const size_t pos = b.find("\"version\":1");
        REQUIRE(pos != std::string::npos);
        b[pos + 10] = '2';
        spit(b);
        try {
            read_stack(path);
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == Err::VersionMismatch);
        }
    }
    SUBCASE("truncated payload")
    {
        spit(good.substr(0, good.size() - 10));
        try {
            read_stack(path);
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == Err::TruncatedPayload);
        }
    }
    SUBCASE("truncated header")
    {
        spit(good.substr(0, 12));
        try {
            read_stack(path);
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == Err::MalformedHeader);
        }
    }
    SUBCASE("missing file")
    {
        try {
            read_stack(temp_path("nope.ctpk"));
            CHECK(false);
        } catch (const Error& e) {
            CHECK(e.code() == Err::IoError);
        }
    }
    std::remove(path.c_str());
}

TEST_CASE("phantom generation: determinism, field of view, ranges")
{
    PhantomSpec spec;
    spec.seed = 5;
    spec.min_ellipses = 4;
    spec.max_ellipses = 9;
    spec.min_density = 0.1;
    spec.max_density = 0.3;
    const Phantom p1 = make_phantom(spec);
    const Phantom p2 = make_phantom(spec);
    REQUIRE(p1.ellipses.size() == p2.ellipses.size());
    for (size_t i = 0; i < p1.ellipses.size(); ++i) {
        CHECK(p1.ellipses[i].cx == p2.ellipses[i].cx);
        CHECK(p1.ellipses[i].density == p2.ellipses[i].density);
    }
    CHECK(p1.ellipses.size() >= size_t(1 + spec.min_ellipses));
    CHECK(p1.ellipses.size() <= size_t(1 + spec.max_ellipses));
    for (const Ellipse& e : p1.ellipses) CHECK(ellipse_in_fov(e));
    for (size_t i = 1; i < p1.ellipses.size(); ++i) {
        CHECK(p1.ellipses[i].density >= spec.min_density);
        CHECK(p1.ellipses[i].density <= spec.max_density);
    }
    PhantomSpec other = spec;
    other.seed = 6;
    const Phantom p3 = make_phantom(other);
    CHECK(p1.ellipses[0].ax != p3.ellipses[0].ax);
}

TEST_CASE("forced phantom bypasses generation but validates")
{
    Ellipse e;
    e.cx = 0.1;
    e.cy = 0.0;
    e.ax = 0.2;
    e.ay = 0.3;
    e.rot = 0.0;
    e.density = 0.5;
    PhantomSpec spec;
    spec.forced = {e};
    const Phantom ph = make_phantom(spec);
    REQUIRE(ph.ellipses.size() == 1);
    CHECK(ph.ellipses[0].ay == 0.3);

    Ellipse bad = e;
    bad.cx = 0.95;  // bbox exceeds the field of view
    PhantomSpec badspec;
    badspec.forced = {bad};
    CHECK_THROWS_AS(make_phantom(badspec), Error);
    Ellipse tiny = e;
    tiny.ax = 1e-9;
    badspec.forced = {tiny};
    CHECK_THROWS_AS(make_phantom(badspec), Error);
}

TEST_CASE("generation parameter validation")
{
    PhantomSpec spec;
    spec.min_ellipses = 5;
    spec.max_ellipses = 2;
    CHECK_THROWS_AS(make_phantom(spec), Error);
    spec.max_ellipses = 6;
    spec.min_density = 0.0;
    CHECK_THROWS_AS(make_phantom(spec), Error);
}
