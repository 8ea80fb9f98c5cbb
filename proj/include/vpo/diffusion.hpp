#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vpo/nn.hpp"
#include "vpo/rng.hpp"

namespace vpo::diffusion {

// Linear-beta DDPM schedule. alpha_bar is the running product of alpha and is
// strictly decreasing.
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  int timesteps() const { return static_cast<int>(beta.size()); }
};

NoiseSchedule make_schedule(int timesteps, double beta_start, double beta_end);

// A synthetic "video": frames x dims values plus the condition class that
// produced (or should produce) it.
struct Trajectory {
  int frames = 0;
  int dims = 0;
  std::vector<double> values;  // row-major [frame][dim]
  int condition = 0;
  std::optional<uint64_t> seed;

  double at(int f, int d) const {
    return values[static_cast<std::size_t>(f) * dims + d];
  }
  double& at(int f, int d) {
    return values[static_cast<std::size_t>(f) * dims + d];
  }
};

Trajectory make_trajectory(int frames, int dims, int condition);

// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise
Trajectory forward_diffuse(const Trajectory& x0, int t,
                           std::span<const double> noise,
                           const NoiseSchedule& sched);

// Noise-prediction network over flattened frames, a sinusoidal timestep
// embedding, and a one-hot condition embedding.
struct Denoiser {
  nn::DenseNet net;
  int frames = 0;
  int dims = 0;
  int t_embed_width = 16;
  int num_classes = 0;

  int frame_values() const { return frames * dims; }
};

Denoiser make_denoiser(int frames, int dims, int num_classes,
                       const std::vector<int>& hidden, int t_embed_width,
                       uint64_t seed);

std::vector<double> time_embedding(int t, int width);

std::vector<double> denoiser_input(const Denoiser& d,
                                   std::span<const double> x_t, int t,
                                   int condition);

std::vector<double> predict_noise(const Denoiser& d, std::span<const double> x_t,
                                  int t, int condition,
                                  nn::ForwardTrace* trace = nullptr);

// x0_hat = (x_t - sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_bar_t)
Trajectory predict_x0(const Denoiser& d, const Trajectory& x_t, int t,
                      int condition, const NoiseSchedule& sched);

// Descending subsequence of [0, T) with `steps` entries, endpoints T-1 and 0.
std::vector<int> strided_timesteps(int timesteps, int steps);

// Ancestral DDPM sampling down the strided schedule; fresh posterior noise on
// every step except the (noiseless) final one. Deterministic given the rng.
// If initial_noise is non-null it receives the prior draw at the chain head.
Trajectory sample(const Denoiser& d, int condition, const NoiseSchedule& sched,
                  int steps, Rng& rng,
                  std::vector<double>* initial_noise = nullptr);

// Runs the same chain but stops at timestep t_stop (which must lie on the
// strided schedule) and returns x_{t_stop}.
std::vector<double> sample_to(const Denoiser& d, int condition,
                              const NoiseSchedule& sched, int steps, int t_stop,
                              Rng& rng);

// Process-wide count of sampler invocations; lets tests assert that a code
// path never sampled.
uint64_t sampler_call_count();
void reset_sampler_call_count();

// --- serialization ---
// Single-trajectory CSV: a comment line with condition/seed, a header row of
// dim names, then one row per frame.
void save_trajectory_csv(const Trajectory& y, const std::string& path);
Trajectory load_trajectory_csv(const std::string& path);

// Compact batch format for datasets of trajectories.
void save_trajectory_batch(const std::vector<Trajectory>& items,
                           const std::string& path);
std::vector<Trajectory> load_trajectory_batch(const std::string& path);

}  // namespace vpo::diffusion
