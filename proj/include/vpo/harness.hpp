#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vpo/trainers.hpp"

namespace vpo::harness {

enum class ExperimentKind { pretrain, online_vpo, offline_dpo, refl, rm_eval, sweep };

const char* kind_name(ExperimentKind k);
ExperimentKind parse_kind(const std::string& name);

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::online_vpo;
  train::VpoConfig vpo;
  std::vector<uint64_t> seeds = {1, 2, 3};
  std::string out_dir = "runs";
  int eval_interval = 50;
  int eval_samples = 32;

  // toy domain
  int frames = 16;
  int dims = 2;
  int num_classes = 4;
  int timesteps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.05;
  double data_noise = 0.05;
  int n_per_class = 256;
  std::vector<int> hidden = {64, 64};
  int t_embed_width = 16;

  // pretraining
  int pretrain_epochs = 20;
  double pretrain_lr = 1e-3;

  // offline baseline
  int offline_pairs = 500;

  // refl baseline
  double t_range_frac = 0.3;

  // reward-model evaluation
  int rm_sets = 300;
  int rm_candidates = 8;

  // sweep grids (empty = use the single configured value)
  std::vector<int> sweep_n;
  std::vector<int> sweep_k;
  std::string trainer = "online_vpo";
};

void validate(const ExperimentConfig& cfg);

// JSON config file; fields mirror ExperimentConfig names. Values present in
// the file overwrite `base`.
ExperimentConfig load_config_json(const std::string& path,
                                  const ExperimentConfig& base = {});

// Shared toy-domain state derived from one config.
struct Domain {
  std::vector<data::ClassSpec> specs;
  diffusion::NoiseSchedule sched;
  rewards::RewardModel rm;
  std::vector<int> prompts;
};

Domain make_domain(const ExperimentConfig& cfg);

// Deterministic pretrained base policy for one run seed.
diffusion::Denoiser make_pretrained_policy(const ExperimentConfig& cfg,
                                           const Domain& dom, uint64_t seed);

struct RunResult {
  uint64_t seed = 0;
  bool ok = false;
  std::string error;
  train::EvalRecord final_eval;
  std::string curve_file;
  std::string evals_file;
};

struct MethodReport {
  std::string method;
  std::vector<RunResult> runs;
};

struct PairwiseEntry {
  std::string method_a;
  std::string method_b;
  int wins_a = 0;
  int wins_b = 0;
  int ties = 0;
};

struct RmMetricsRow {
  std::string scorer;
  rewards::MetricBundle metrics;
};

struct ComparisonReport {
  std::vector<MethodReport> methods;
  std::vector<PairwiseEntry> pairwise;
  std::vector<RmMetricsRow> rm_metrics;
};

// Runs the configured experiment, writing per-run curve/eval CSVs and a
// summary under <out_dir>/<experiment>/. Per-run failures are recorded in the
// report; the remaining runs still execute.
ComparisonReport run_experiment(const ExperimentConfig& cfg);

// Per-dimension mean/std over n samples per prompt (see held_out_eval).
train::EvalRecord evaluate_policy(const diffusion::Denoiser& policy,
                                  const rewards::RewardModel& rm,
                                  const std::vector<int>& prompts, int n,
                                  uint64_t seed,
                                  const diffusion::NoiseSchedule& sched,
                                  int sampler_steps);

// Pairwise per-seed win/loss/tie table on the target dimension's final
// held-out mean. Reports must cover identical seed lists.
ComparisonReport compare_methods(const std::vector<MethodReport>& reports,
                                 rewards::Dimension dimension);

double eval_value(const train::EvalRecord& e, rewards::Dimension d);

void write_report_json(const ComparisonReport& report, const std::string& path);

bool all_runs_ok(const ComparisonReport& report);

}  // namespace vpo::harness
