#pragma once

#include "n2ntd/core/tensor.hpp"
#include "n2ntd/projsim/phantom.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace n2ntd::projsim {

struct Geometry {
    int num_angles = 0;      // N
    double angle_start = 0;  // radians
    double angle_step = 0;   // radians
    int detector_bins = 0;   // U, detector coordinate s spans [-1,1]
    int num_rows = 0;        // Z phantom slices
    bool circular = false;   // full-circle acquisition: N * step == 2*pi
};

void validate_geometry(const Geometry& g);

struct NoiseTruth {
    double lambda = 0;
    double a = 0;
    uint64_t seed = 0;
};

// Ordered set of 2-D projection frames indexed by rotation angle.
// frames/clean_frames are [N, Z, U].
struct ProjectionStack {
    Geometry geometry;
    TensorF frames;
    TensorF clean_frames;                // empty when absent
    std::optional<NoiseTruth> noise_truth;
    double scale_factor = 0;             // 0 = not normalized yet
    std::string id;

    bool has_clean() const { return !clean_frames.empty(); }
};

// Per-slice scale of the z-stacked phantom: slice z uses the 2-D ellipse set
// shrunk by s(zeta) = sqrt(1 - 0.36*zeta^2), zeta in [-1,1] across rows, so
// adjacent detector rows see smoothly varying content.
double slice_scale(int z, int num_rows);
Phantom phantom_slice(const Phantom& ph, int z, int num_rows);

// Analytic parallel-beam Radon transform of the scaled z-slices: frame[z,u]
// is the chord-length-weighted density sum along the ray at detector offset
// s(u) and the given angle. Detector bin centers: s_u = -1 + (u+0.5)*2/U.
TensorF project_frame(const Phantom& ph, const Geometry& g, double angle);

// Chord length of a single ellipse for a ray at angle theta, offset s
// (the ray is {p : p.x*cos+p.y*sin == s} in the slice plane).
double ellipse_chord(const Ellipse& e, double theta, double s);

ProjectionStack project_stack(const Phantom& ph, const Geometry& g);

// Mixed Poisson-Gaussian dose degradation: y = Poisson(lambda*x)/lambda +
// N(0, a), i.i.d. per pixel in normalized intensity units. If the
// stack has not been normalized yet, it is rescaled first so the 99.9th
// percentile of clean values maps to 1.0 and the factor is recorded.
ProjectionStack apply_noise(const ProjectionStack& stack, double lambda,
                            double a, uint64_t seed);

// A window of 2k+1 consecutive frames centered on the frame to denoise.
struct SequenceSample {
    TensorF frames;          // [2k+1, Z', U']
    int middle_index = 0;    // == k
    int source_angle_index = 0;
    int crop_row = 0;
    int crop_bin = 0;
};

enum class Boundary { wrap, skip };

// Centered windows over the stack: `wrap` (circular geometry only) yields N
// samples with modular indexing; `skip` yields N-2k samples.
std::vector<SequenceSample> make_sequences(const ProjectionStack& stack,
                                           int k, Boundary boundary);

// Single window centered on `center` (uncropped). Shared by make_sequences
// and the trainer's random crop sampler.
SequenceSample take_sequence(const ProjectionStack& stack, int k, int center,
                             Boundary boundary);

void write_stack(const ProjectionStack& stack, const std::string& path);
ProjectionStack read_stack(const std::string& path);

} // namespace n2ntd::projsim
