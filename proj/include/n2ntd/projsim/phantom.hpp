#pragma once

#include "n2ntd/core/errors.hpp"
#include "n2ntd/core/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace n2ntd::projsim {

// One additive ellipse of the procedural phantom. The rotated bounding box
// of every ellipse must stay inside the [-1,1]^2 field of view.
struct Ellipse {
    double cx = 0, cy = 0;
    double ax = 0, ay = 0;   // semi-axes, > 0
    double rot = 0;          // radians
    double density = 0;      // additive
};

struct Phantom {
    std::vector<Ellipse> ellipses;
};

// Generator spec. When `forced` is non-empty the random generation is
// bypassed and the listed ellipses are validated and used as-is (minus the
// implicit background disk), which keeps degenerate single-ellipse phantoms
// expressible for tests.
struct PhantomSpec {
    uint64_t seed = 0;
    int min_ellipses = 5;
    int max_ellipses = 10;
    double min_density = 0.05;
    double max_density = 0.5;
    std::vector<Ellipse> forced;
};

// Half-extents of the axis-aligned bounding box of a rotated ellipse.
void ellipse_bbox(const Ellipse& e, double& ex, double& ey);

bool ellipse_in_fov(const Ellipse& e);

// Deterministic per seed. Includes one large centered background ellipse so
// projections are mostly nonzero, then min..max random interior ellipses via
// rejection sampling on the field-of-view constraint.
Phantom make_phantom(const PhantomSpec& spec);

// Signed density of the phantom at a point (sum over covering ellipses).
double phantom_density(const Phantom& ph, double x, double y);

} // namespace n2ntd::projsim
