#include "vpo/toy_data.hpp"

#include <algorithm>
#include <cmath>

#include "vpo/errors.hpp"

namespace vpo::data {

std::vector<ClassSpec> make_class_specs(int num_classes, int dims, uint64_t seed) {
  if (num_classes < 2) throw ConfigError("need at least 2 classes");
  if (dims < 1) throw ConfigError("need at least 1 dim");
  std::vector<ClassSpec> specs(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    ClassSpec& s = specs[static_cast<std::size_t>(c)];
    Rng rng(mix_seed(seed, static_cast<uint64_t>(c)));
    s.id = c;
    s.frequency = 0.5 + 1.5 * static_cast<double>(c) / (num_classes - 1);
    s.amplitude = rng.uniform(0.8, 1.2);
    s.phase = rng.uniform(0.0, 2.0 * M_PI);
    s.drift.resize(static_cast<std::size_t>(dims));
    for (double& v : s.drift) v = rng.uniform(-0.02, 0.02);
  }
  return specs;
}

diffusion::Trajectory sample_trajectory(const ClassSpec& spec, int frames,
                                        int dims, double noise_scale,
                                        uint64_t seed) {
  if (frames < 3) throw ShapeError("trajectories need at least 3 frames");
  if (static_cast<int>(spec.drift.size()) < dims) {
    throw ShapeError("class drift has fewer dims than requested");
  }
  diffusion::Trajectory y = diffusion::make_trajectory(frames, dims, spec.id);
  y.seed = seed;
  Rng rng(seed);
  for (int f = 0; f < frames; ++f) {
    double theta = 2.0 * M_PI * spec.frequency * f / frames + spec.phase;
    for (int d = 0; d < dims; ++d) {
      double base = 0.0;
      if (d == 0) base = spec.amplitude * std::sin(theta);
      if (d == 1) base = spec.amplitude * std::cos(theta);
      double v = base + spec.drift[static_cast<std::size_t>(d)] * f;
      if (noise_scale > 0.0) {
        double z = std::clamp(rng.normal(), -6.0, 6.0);
        v += noise_scale * z;
      }
      y.at(f, d) = v;
    }
  }
  return y;
}

diffusion::Trajectory class_template(const ClassSpec& spec, int frames, int dims) {
  diffusion::Trajectory y = sample_trajectory(spec, frames, dims, 0.0, 0);
  y.seed.reset();
  return y;
}

Dataset make_dataset(const std::vector<ClassSpec>& specs, int n_per_class,
                     int frames, int dims, double noise_scale, uint64_t seed) {
  if (n_per_class < 1) throw ConfigError("n_per_class must be >= 1");
  if (specs.empty()) throw ConfigError("no class specs");
  Dataset ds;
  ds.seed = seed;
  ds.noise_scale = noise_scale;
  ds.items.reserve(specs.size() * static_cast<std::size_t>(n_per_class));
  for (const ClassSpec& spec : specs) {
    for (int i = 0; i < n_per_class; ++i) {
      uint64_t item_seed = mix_seed(seed, static_cast<uint64_t>(spec.id),
                                    static_cast<uint64_t>(i));
      ds.items.push_back(sample_trajectory(spec, frames, dims, noise_scale, item_seed));
    }
  }
  return ds;
}

int nearest_template_class(const diffusion::Trajectory& y,
                           const std::vector<diffusion::Trajectory>& templates) {
  if (templates.empty()) throw ConfigError("no templates");
  int best = 0;
  double best_d = 0.0;
  for (std::size_t c = 0; c < templates.size(); ++c) {
    const auto& t = templates[c];
    if (t.values.size() != y.values.size()) {
      throw ShapeError("template/trajectory shape mismatch");
    }
    double d = 0.0;
    for (std::size_t i = 0; i < y.values.size(); ++i) {
      double diff = y.values[i] - t.values[i];
      d += diff * diff;
    }
    if (c == 0 || d < best_d) {
      best = static_cast<int>(c);
      best_d = d;
    }
  }
  return best;
}

}  // namespace vpo::data
