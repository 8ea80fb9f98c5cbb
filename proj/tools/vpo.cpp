// Experiment runner: pretraining, preference-alignment trainers, reward-model
// evaluation, and N/K sweeps over the synthetic trajectory domain.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vpo/harness.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::vector<uint64_t>> seeds;
  std::optional<std::string> out;
  std::optional<int> steps;
  std::optional<int> n_candidates;
  std::optional<int> k_interval;
  std::optional<double> beta;
  std::optional<double> lr;
  std::optional<std::string> dimension;
  std::optional<int> sampler_steps;
  std::optional<int> eval_interval;
  std::optional<int> eval_samples;
  std::optional<int> pretrain_epochs;
  std::optional<int> offline_pairs;
  std::optional<double> t_range_frac;
  std::optional<int> rm_sets;
  std::optional<std::vector<int>> sweep_n;
  std::optional<std::vector<int>> sweep_k;
  std::optional<std::string> trainer;
};

void add_common_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON config file; flags override its values");
  cmd->add_option("--seed", f.seeds, "run seeds (repeatable)");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--steps", f.steps, "optimization steps per run");
  cmd->add_option("--n-candidates", f.n_candidates, "candidates per online step");
  cmd->add_option("--k-interval", f.k_interval, "reference refresh interval");
  cmd->add_option("--beta", f.beta, "preference temperature");
  cmd->add_option("--lr", f.lr, "optimizer learning rate");
  cmd->add_option("--dimension", f.dimension,
                  "reward dimension: visual_quality | temporal_consistency | "
                  "dynamic_degree | alignment | global");
  cmd->add_option("--sampler-steps", f.sampler_steps, "ancestral sampler steps");
  cmd->add_option("--eval-interval", f.eval_interval, "held-out eval cadence");
  cmd->add_option("--eval-samples", f.eval_samples, "held-out samples per prompt");
  cmd->add_option("--pretrain-epochs", f.pretrain_epochs, "base-model epochs");
  cmd->add_option("--offline-pairs", f.offline_pairs, "offline dataset size");
  cmd->add_option("--t-range-frac", f.t_range_frac, "low-noise chain fraction for refl");
  cmd->add_option("--rm-sets", f.rm_sets, "candidate sets for rm_eval");
  cmd->add_option("--n-list", f.sweep_n, "sweep grid over candidate counts");
  cmd->add_option("--k-list", f.sweep_k, "sweep grid over refresh intervals");
  cmd->add_option("--trainer", f.trainer, "trainer used by sweep");
}

vpo::harness::ExperimentConfig build_config(const Flags& f,
                                            vpo::harness::ExperimentKind kind) {
  vpo::harness::ExperimentConfig cfg;
  if (!f.config.empty()) cfg = vpo::harness::load_config_json(f.config, cfg);
  cfg.kind = kind;
  if (f.seeds) cfg.seeds = *f.seeds;
  if (f.out) cfg.out_dir = *f.out;
  if (f.steps) cfg.vpo.steps = *f.steps;
  if (f.n_candidates) cfg.vpo.n_candidates = *f.n_candidates;
  if (f.k_interval) cfg.vpo.k_interval = *f.k_interval;
  if (f.beta) cfg.vpo.beta = *f.beta;
  if (f.lr) cfg.vpo.lr = *f.lr;
  if (f.dimension) cfg.vpo.dimension = vpo::rewards::parse_dimension(*f.dimension);
  if (f.sampler_steps) cfg.vpo.sampler_steps = *f.sampler_steps;
  if (f.eval_interval) cfg.eval_interval = *f.eval_interval;
  if (f.eval_samples) cfg.eval_samples = *f.eval_samples;
  if (f.pretrain_epochs) cfg.pretrain_epochs = *f.pretrain_epochs;
  if (f.offline_pairs) cfg.offline_pairs = *f.offline_pairs;
  if (f.t_range_frac) cfg.t_range_frac = *f.t_range_frac;
  if (f.rm_sets) cfg.rm_sets = *f.rm_sets;
  if (f.sweep_n) cfg.sweep_n = *f.sweep_n;
  if (f.sweep_k) cfg.sweep_k = *f.sweep_k;
  if (f.trainer) cfg.trainer = *f.trainer;
  return cfg;
}

void print_report(const vpo::harness::ComparisonReport& report) {
  for (const auto& mr : report.methods) {
    for (const auto& run : mr.runs) {
      if (run.ok) {
        std::printf("[%s] seed %llu ok  tc=%.6f vq=%.6f dd=%.6f al=%.6f\n",
                    mr.method.c_str(), static_cast<unsigned long long>(run.seed),
                    run.final_eval.mean[1], run.final_eval.mean[0],
                    run.final_eval.mean[2], run.final_eval.mean[3]);
      } else {
        std::printf("[%s] seed %llu FAILED: %s\n", mr.method.c_str(),
                    static_cast<unsigned long long>(run.seed), run.error.c_str());
      }
    }
  }
  for (const auto& pw : report.pairwise) {
    std::printf("%s vs %s: %d / %d wins, %d ties\n", pw.method_a.c_str(),
                pw.method_b.c_str(), pw.wins_a, pw.wins_b, pw.ties);
  }
  for (const auto& row : report.rm_metrics) {
    std::printf("%-24s mrr=%.4f r@1=%.4f r@2=%.4f r@4=%.4f\n", row.scorer.c_str(),
                row.metrics.mrr, row.metrics.recall1, row.metrics.recall2,
                row.metrics.recall4);
  }
}

int run_kind(const Flags& f, vpo::harness::ExperimentKind kind) {
  auto cfg = build_config(f, kind);
  auto report = vpo::harness::run_experiment(cfg);
  print_report(report);
  return vpo::harness::all_runs_ok(report) ? 0 : 1;
}

int run_compare(const Flags& f) {
  auto online_cfg = build_config(f, vpo::harness::ExperimentKind::online_vpo);
  auto offline_cfg = build_config(f, vpo::harness::ExperimentKind::offline_dpo);
  auto online = vpo::harness::run_experiment(online_cfg);
  auto offline = vpo::harness::run_experiment(offline_cfg);
  auto report = vpo::harness::compare_methods(
      {online.methods.front(), offline.methods.front()}, online_cfg.vpo.dimension);
  std::filesystem::create_directories(
      std::filesystem::path(online_cfg.out_dir) / "compare");
  vpo::harness::write_report_json(
      report, (std::filesystem::path(online_cfg.out_dir) / "compare" /
               "comparison.json").string());
  print_report(report);
  return vpo::harness::all_runs_ok(report) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-optimization lab for toy trajectory diffusion models"};
  app.require_subcommand(1);

  Flags flags;
  using Kind = vpo::harness::ExperimentKind;
  struct Row {
    const char* name;
    const char* help;
    Kind kind;
  };
  const Row rows[] = {
      {"pretrain", "train the base diffusion model", Kind::pretrain},
      {"online_vpo", "online preference optimization with curriculum reference updates",
       Kind::online_vpo},
      {"offline_dpo", "preference optimization over a pre-collected pair dataset",
       Kind::offline_dpo},
      {"refl", "direct reward-feedback fine-tuning baseline", Kind::refl},
      {"rm_eval", "rank candidate sets with every scorer and report MRR/recall",
       Kind::rm_eval},
      {"sweep", "grid over candidate counts and refresh intervals", Kind::sweep},
  };
  for (const Row& row : rows) {
    CLI::App* cmd = app.add_subcommand(row.name, row.help);
    add_common_flags(cmd, flags);
    Kind kind = row.kind;
    cmd->callback([&flags, kind]() {
      int rc = run_kind(flags, kind);
      if (rc != 0) throw CLI::RuntimeError(rc);
    });
  }
  CLI::App* cmp = app.add_subcommand(
      "compare", "run online_vpo and offline_dpo on matched seeds and compare");
  add_common_flags(cmp, flags);
  cmp->callback([&flags]() {
    int rc = run_compare(flags);
    if (rc != 0) throw CLI::RuntimeError(rc);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
