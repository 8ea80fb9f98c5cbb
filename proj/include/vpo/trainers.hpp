#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "vpo/diffusion.hpp"
#include "vpo/rewards.hpp"
#include "vpo/toy_data.hpp"

namespace vpo::train {

struct PreferencePair {
  enum class Source { online, offline };

  int condition = 0;
  diffusion::Trajectory winner;
  diffusion::Trajectory loser;
  Source source = Source::online;
  long source_index = 0;  // online step index or offline dataset id
  rewards::RewardVector winner_scores;
  rewards::RewardVector loser_scores;
  double winner_sel = 0.0;  // selection-criterion scores
  double loser_sel = 0.0;
};

struct VpoConfig {
  int n_candidates = 4;
  int k_interval = 200;
  double beta = 1.0;
  int steps = 500;
  int batch_size = 8;
  int sampler_steps = 30;
  rewards::Dimension dimension = rewards::Dimension::temporal_consistency;
  double lr = 1e-3;
  uint64_t seed = 0;
};

void validate(const VpoConfig& cfg);

struct StepRecord {
  int step = 0;
  double loss = std::numeric_limits<double>::quiet_NaN();
  std::array<double, 4> cand_mean{};  // raw per-dimension means
  double gap = 0.0;                   // winner - loser on the criterion
  bool ref_update = false;
  bool skipped = false;
};

struct EvalRecord {
  int step = 0;
  std::array<double, 4> mean{};
  std::array<double, 4> stddev{};
};

struct TrainRunMetrics {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  std::vector<int> ref_update_steps;
};

struct EvalSpec {
  bool enabled = true;
  int interval = 50;
  int samples = 32;  // per prompt
  uint64_t seed = 0;
};

using StepCallback = std::function<void(const StepRecord&)>;

// Append-only CSV with one row per training step.
void save_curve_csv(const TrainRunMetrics& m, const std::string& path);
void save_evals_csv(const TrainRunMetrics& m, const std::string& path);

// Standard DDPM noise-prediction pretraining (per-element mean MSE).
// Returns the per-epoch mean loss; the denoiser is trained in place.
std::vector<double> pretrain(diffusion::Denoiser& den, const data::Dataset& ds,
                             const diffusion::NoiseSchedule& sched, int epochs,
                             double lr, uint64_t seed, int batch_size = 8);

// Squared-error terms entering the preference objective.
struct DpoTerms {
  double policy_winner = 0.0;
  double ref_winner = 0.0;
  double policy_loser = 0.0;
  double ref_loser = 0.0;
};

// h = -(beta/2) * [(policy_w - ref_w) - (policy_l - ref_l)];
// loss = softplus(-h). Returns (h, loss).
std::pair<double, double> dpo_h_and_loss(const DpoTerms& t, double beta);

// Preference loss on one pair with a shared timestep and shared fresh noise
// across both trajectories and both models. Accumulates policy gradients into
// the tape (the reference contributes constants only).
double dpo_loss(const diffusion::Denoiser& policy,
                const diffusion::Denoiser& reference, const PreferencePair& pair,
                double beta, const diffusion::NoiseSchedule& sched, Rng& rng,
                nn::GradientTape& tape);

// Reward value and gradient w.r.t. flattened trajectory values.
using RewardGradFn = std::function<std::pair<double, std::vector<double>>(
    std::span<const double> values, int frames, int dims, int condition)>;

// One reward-feedback step: run the sampler to a random timestep inside
// t_range = [lo, hi), predict x0 from there, and ascend the reward through
// that last denoiser call only (the gradient stops at x_t). Returns the loss
// (-reward); x0_out, when given, receives the predicted clean trajectory.
double refl_step(diffusion::Denoiser& policy, nn::AdamState& opt,
                 const RewardGradFn& reward, int condition,
                 const diffusion::NoiseSchedule& sched,
                 std::pair<int, int> t_range, int sampler_steps, Rng& rng,
                 diffusion::Trajectory* x0_out = nullptr);

// N ancestral samples from distinct substreams of `base`.
std::vector<diffusion::Trajectory> generate_candidates(
    const diffusion::Denoiser& policy, int condition,
    const diffusion::NoiseSchedule& sched, int n, int sampler_steps,
    const Rng& base);

struct SelectResult {
  bool skip = false;
  int winner = 0;
  int loser = 0;
};

// winner = argmax, loser = argmin, ties to the lowest index; max == min
// exactly means there is no informative pair and the step is skipped.
SelectResult select_pair(std::span<const double> scores);
SelectResult select_pair(const std::vector<diffusion::Trajectory>& candidates,
                         std::span<const double> scores);

using CandidateScorer =
    std::function<rewards::RewardVector(const diffusion::Trajectory&, int)>;

// Online preference optimization: per step, sample N candidates for the next
// prompt, rank them with the reward model, apply the preference loss on the
// (winner, loser) pair, and refresh the reference model from the policy every
// k_interval steps.
TrainRunMetrics train_online_vpo(diffusion::Denoiser& policy,
                                 const rewards::RewardModel& rm,
                                 const std::vector<int>& prompts,
                                 const VpoConfig& cfg,
                                 const diffusion::NoiseSchedule& sched,
                                 const EvalSpec& eval = {},
                                 const StepCallback& on_step = nullptr);

// Test seam: same trainer with an injected per-candidate scorer.
TrainRunMetrics train_online_vpo(diffusion::Denoiser& policy,
                                 const rewards::RewardModel& rm,
                                 const CandidateScorer& scorer,
                                 const std::vector<int>& prompts,
                                 const VpoConfig& cfg,
                                 const diffusion::NoiseSchedule& sched,
                                 const EvalSpec& eval = {},
                                 const StepCallback& on_step = nullptr);

// Pre-collects preference pairs from a frozen policy via the same
// generate/score/select pipeline the online trainer uses.
std::vector<PreferencePair> build_offline_dataset(
    const diffusion::Denoiser& frozen_policy, const rewards::RewardModel& rm,
    const std::vector<int>& prompts, int pairs, const VpoConfig& cfg,
    const diffusion::NoiseSchedule& sched);

// Standard DPO over a fixed pair dataset with a fixed reference model; never
// samples after dataset construction.
TrainRunMetrics train_offline_dpo(diffusion::Denoiser& policy,
                                  const std::vector<PreferencePair>& dataset,
                                  const rewards::RewardModel& rm,
                                  const VpoConfig& cfg,
                                  const diffusion::NoiseSchedule& sched,
                                  const EvalSpec& eval = {},
                                  const StepCallback& on_step = nullptr);

// Reward-feedback training loop (the ReFL baseline) on the configured
// dimension; t_range_frac is the low-noise fraction of the chain used for
// x0 prediction.
TrainRunMetrics train_refl(diffusion::Denoiser& policy,
                           const rewards::RewardModel& rm,
                           const std::vector<int>& prompts, const VpoConfig& cfg,
                           const diffusion::NoiseSchedule& sched,
                           double t_range_frac = 0.3, const EvalSpec& eval = {},
                           const StepCallback& on_step = nullptr);

using SampleFn = std::function<diffusion::Trajectory(int condition, Rng& rng)>;

// Held-out statistics: n samples per prompt, per-dimension mean and std
// computed within each prompt and then averaged across prompts (so std is
// exactly 0 when n == 1).
EvalRecord held_out_eval(const SampleFn& sampler, const rewards::RewardModel& rm,
                         const std::vector<int>& prompts, int samples_per_prompt,
                         uint64_t seed);

EvalRecord held_out_eval(const diffusion::Denoiser& policy,
                         const rewards::RewardModel& rm,
                         const std::vector<int>& prompts, int samples_per_prompt,
                         uint64_t seed, const diffusion::NoiseSchedule& sched,
                         int sampler_steps);

}  // namespace vpo::train
