#pragma once

#include "n2ntd/core/tensor.hpp"
#include "n2ntd/projsim/projection.hpp"

#include <string>

namespace n2ntd::recon {

struct Volume {
    TensorF voxels;        // [Z, P, P] over the [-1,1]^2 field of view
    double pixel_size = 0; // 2/P
};

// Discrete spatial Ram-Lak kernel tap h[n] for detector spacing ds:
// h[0] = 1/(4 ds^2), h[n odd] = -1/(pi^2 n^2 ds^2), h[n even] = 0.
double ramlak_tap(int n, double ds);

// Filters each angle's detector row with the Ram-Lak kernel by zero-padded
// (linear) convolution, scaled by ds. `cosine` applies a cosine
// apodization window to the kernel's frequency response.
TensorF ramp_filter(const TensorF& sinogram, double ds, bool cosine = false);

// Parallel-beam FBP of one [N, U] sinogram onto a P x P grid spanning
// [-1,1]^2, linear detector interpolation, per-angle weight pi/N for
// uniform pi- or 2pi-spanning schedules.
TensorF fbp_slice(const TensorF& sinogram, const projsim::Geometry& g,
                  int grid = 128, bool cosine = false);

// Per-detector-row FBP of a whole stack.
Volume reconstruct(const projsim::ProjectionStack& stack, int grid = 128,
                   bool cosine = false);

void write_volume(const Volume& vol, const std::string& path);
Volume read_volume(const std::string& path);

} // namespace n2ntd::recon
