#include "n2ntd/projsim/phantom.hpp"

#include <cmath>

namespace n2ntd::projsim {

void ellipse_bbox(const Ellipse& e, double& ex, double& ey)
{
    const double c = std::cos(e.rot), s = std::sin(e.rot);
    ex = std::sqrt(e.ax * e.ax * c * c + e.ay * e.ay * s * s);
    ey = std::sqrt(e.ax * e.ax * s * s + e.ay * e.ay * c * c);
}

bool ellipse_in_fov(const Ellipse& e)
{
    double ex, ey;
    ellipse_bbox(e, ex, ey);
    return std::abs(e.cx) + ex <= 1.0 && std::abs(e.cy) + ey <= 1.0;
}

static void validate_ellipse(const Ellipse& e)
{
    if (e.ax < 1e-6 || e.ay < 1e-6)
        throw Error(Err::InvalidArgument, "degenerate ellipse (semi-axis < 1e-6)");
    if (!ellipse_in_fov(e))
        throw Error(Err::InvalidArgument, "ellipse outside [-1,1]^2 field of view");
}

Phantom make_phantom(const PhantomSpec& spec)
{
    if (!spec.forced.empty()) {
        Phantom ph;
        for (const auto& e : spec.forced) {
            validate_ellipse(e);
            ph.ellipses.push_back(e);
        }
        return ph;
    }
    if (spec.min_ellipses < 1 || spec.max_ellipses < spec.min_ellipses)
        throw Error(Err::InvalidArgument, "empty ellipse count range");
    if (spec.min_density <= 0 || spec.max_density < spec.min_density)
        throw Error(Err::InvalidArgument, "non-positive density range");

    Rng rng(spec.seed);
    Phantom ph;
    // Background ellipse: large, centered, mildly anisotropic, so most rays
    // see nonzero attenuation.
    Ellipse bg;
    bg.cx = 0;
    bg.cy = 0;
    bg.ax = rng.uniform(0.75, 0.9);
    bg.ay = rng.uniform(0.75, 0.9);
    bg.rot = 0;
    bg.density = rng.uniform(0.3, 0.5);
    ph.ellipses.push_back(bg);

    const int n = int(rng.uniform_int(spec.min_ellipses, spec.max_ellipses));
    for (int i = 0; i < n; ++i) {
        // rejection-sample until the rotated bbox fits the field of view
        for (;;) {
            Ellipse e;
            e.ax = rng.uniform(0.05, 0.4);
            e.ay = rng.uniform(0.05, 0.4);
            e.rot = rng.uniform(0.0, 3.14159265358979323846);
            e.cx = rng.uniform(-0.8, 0.8);
            e.cy = rng.uniform(-0.8, 0.8);
            e.density = rng.uniform(spec.min_density, spec.max_density);
            if (ellipse_in_fov(e)) {
                ph.ellipses.push_back(e);
                break;
            }
        }
    }
    return ph;
}

double phantom_density(const Phantom& ph, double x, double y)
{
    double d = 0;
    for (const auto& e : ph.ellipses) {
        const double c = std::cos(e.rot), s = std::sin(e.rot);
        const double dx = x - e.cx, dy = y - e.cy;
        const double u = (c * dx + s * dy) / e.ax;
        const double v = (-s * dx + c * dy) / e.ay;
        if (u * u + v * v <= 1.0) d += e.density;
    }
    return d;
}

} // namespace n2ntd::projsim
