#pragma once

#include <cstdint>
#include <vector>

#include "vpo/diffusion.hpp"

namespace vpo::data {

// Template parameters of one condition class: a sinusoidal orbit with a
// per-class frequency, amplitude, phase, and linear drift.
struct ClassSpec {
  int id = 0;
  double frequency = 1.0;  // cycles per trajectory
  double amplitude = 1.0;
  double phase = 0.0;
  std::vector<double> drift;  // per-dim velocity, units per frame
};

// C distinct specs with frequencies evenly spread over [0.5, 2.0]; amplitude,
// phase, and drift are seeded per class.
std::vector<ClassSpec> make_class_specs(int num_classes, int dims, uint64_t seed);

// frame f = amplitude*[sin(2*pi*freq*f/F + phase), cos(...)] padded to D dims,
// plus drift*f, plus Gaussian noise (clamped at 6 sigma) of scale noise_scale.
diffusion::Trajectory sample_trajectory(const ClassSpec& spec, int frames,
                                        int dims, double noise_scale,
                                        uint64_t seed);

// Noiseless template of the class.
diffusion::Trajectory class_template(const ClassSpec& spec, int frames, int dims);

struct Dataset {
  std::vector<diffusion::Trajectory> items;  // class-major order
  uint64_t seed = 0;
  double noise_scale = 0.0;
};

Dataset make_dataset(const std::vector<ClassSpec>& specs, int n_per_class,
                     int frames, int dims, double noise_scale, uint64_t seed);

// Index of the template closest to y in flattened L2 (lowest index on ties).
int nearest_template_class(const diffusion::Trajectory& y,
                           const std::vector<diffusion::Trajectory>& templates);

}  // namespace vpo::data
