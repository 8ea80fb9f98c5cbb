#include "vpo/harness.hpp"

#include <filesystem>
#include <fstream>
#include <functional>

#include <json.hpp>

#include "vpo/errors.hpp"
#include "vpo/textio.hpp"

namespace vpo::harness {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

// The class templates define the task itself, so they are pinned to one seed
// and shared by every run and method.
constexpr uint64_t kDomainSeed = 9001;

std::string dim_key(int i) {
  const char* names[4] = {"visual_quality", "temporal_consistency",
                          "dynamic_degree", "alignment"};
  return names[i];
}

ordered_json eval_to_json(const train::EvalRecord& e) {
  ordered_json j;
  j["step"] = e.step;
  for (int i = 0; i < 4; ++i) {
    j[dim_key(i) + "_mean"] = e.mean[static_cast<std::size_t>(i)];
    j[dim_key(i) + "_std"] = e.stddev[static_cast<std::size_t>(i)];
  }
  return j;
}

ordered_json run_to_json(const RunResult& r) {
  ordered_json j;
  j["seed"] = r.seed;
  j["ok"] = r.ok;
  if (!r.ok) j["error"] = r.error;
  if (r.ok) j["final_eval"] = eval_to_json(r.final_eval);
  if (!r.curve_file.empty()) j["curve"] = r.curve_file;
  if (!r.evals_file.empty()) j["evals"] = r.evals_file;
  return j;
}

// A training recipe for one seed: returns metrics and leaves the trained
// policy in `policy`.
using TrainerFn = std::function<train::TrainRunMetrics(
    diffusion::Denoiser& policy, const train::EvalSpec& eval)>;

RunResult run_one(const ExperimentConfig& cfg, const Domain& dom,
                  const std::string& method_dir, uint64_t seed,
                  const TrainerFn& trainer) {
  RunResult res;
  res.seed = seed;
  fs::path dir = fs::path(cfg.out_dir) / method_dir / std::to_string(seed);
  try {
    fs::create_directories(dir);
    diffusion::Denoiser policy = make_pretrained_policy(cfg, dom, seed);
    train::EvalSpec eval;
    eval.enabled = true;
    eval.interval = cfg.eval_interval;
    eval.samples = cfg.eval_samples;
    eval.seed = mix_seed(seed, stream::kEval);

    train::TrainRunMetrics metrics = trainer(policy, eval);

    fs::path curve = dir / "curve.csv";
    fs::path evals = dir / "evals.csv";
    train::save_curve_csv(metrics, curve.string());
    train::save_evals_csv(metrics, evals.string());
    nn::save_checkpoint(policy.net, (dir / "policy.ckpt").string());
    res.curve_file = curve.string();
    res.evals_file = evals.string();
    if (!metrics.evals.empty()) {
      res.final_eval = metrics.evals.back();
    } else {
      res.final_eval = train::held_out_eval(policy, dom.rm, dom.prompts,
                                            cfg.eval_samples,
                                            mix_seed(seed, stream::kEval),
                                            dom.sched, cfg.vpo.sampler_steps);
      res.final_eval.step = cfg.vpo.steps;
    }
    res.ok = true;
  } catch (const std::exception& e) {
    res.ok = false;
    res.error = e.what();
  }
  return res;
}

MethodReport run_method(const ExperimentConfig& cfg, const Domain& dom,
                        const std::string& method, const std::string& method_dir,
                        const std::function<TrainerFn(uint64_t seed)>& make_trainer) {
  MethodReport report;
  report.method = method;
  for (uint64_t seed : cfg.seeds) {
    report.runs.push_back(run_one(cfg, dom, method_dir, seed, make_trainer(seed)));
  }
  return report;
}

TrainerFn online_trainer(const ExperimentConfig& cfg, const Domain& dom,
                         uint64_t seed, train::VpoConfig vpo) {
  vpo.seed = seed;
  return [cfg, &dom, vpo](diffusion::Denoiser& policy, const train::EvalSpec& eval) {
    return train::train_online_vpo(policy, dom.rm, dom.prompts, vpo, dom.sched, eval);
  };
}

TrainerFn offline_trainer(const ExperimentConfig& cfg, const Domain& dom,
                          uint64_t seed, train::VpoConfig vpo) {
  vpo.seed = seed;
  int pairs = cfg.offline_pairs;
  return [cfg, &dom, vpo, pairs](diffusion::Denoiser& policy,
                                 const train::EvalSpec& eval) {
    std::vector<train::PreferencePair> dataset = train::build_offline_dataset(
        policy, dom.rm, dom.prompts, pairs, vpo, dom.sched);
    return train::train_offline_dpo(policy, dataset, dom.rm, vpo, dom.sched, eval);
  };
}

TrainerFn refl_trainer(const ExperimentConfig& cfg, const Domain& dom,
                       uint64_t seed, train::VpoConfig vpo) {
  vpo.seed = seed;
  double frac = cfg.t_range_frac;
  return [cfg, &dom, vpo, frac](diffusion::Denoiser& policy,
                                const train::EvalSpec& eval) {
    return train::train_refl(policy, dom.rm, dom.prompts, vpo, dom.sched, frac, eval);
  };
}

void write_summary(const ExperimentConfig& cfg, const std::string& method_dir,
                   const ComparisonReport& report) {
  fs::path dir = fs::path(cfg.out_dir) / method_dir;
  fs::create_directories(dir);
  write_report_json(report, (dir / "summary.json").string());
}

MethodReport run_rm_eval(const ExperimentConfig& cfg, const Domain& dom,
                         std::vector<RmMetricsRow>* rows_out) {
  MethodReport mr;
  mr.method = "rm_eval";
  RunResult res;
  res.seed = cfg.seeds.front();
  try {
    fs::path dir = fs::path(cfg.out_dir) / "rm_eval";
    fs::create_directories(dir);
    diffusion::Denoiser policy = make_pretrained_policy(cfg, dom, res.seed);

    std::vector<rewards::CandidateSet> sets;
    std::vector<int> best;
    Rng master(mix_seed(res.seed, stream::kCandidates));
    for (int q = 0; q < cfg.rm_sets; ++q) {
      rewards::CandidateSet set;
      set.condition = dom.prompts[static_cast<std::size_t>(q % static_cast<int>(dom.prompts.size()))];
      Rng base = master.substream(static_cast<uint64_t>(q));
      set.candidates = train::generate_candidates(policy, set.condition, dom.sched,
                                                  cfg.rm_candidates,
                                                  cfg.vpo.sampler_steps, base);
      best.push_back(rewards::oracle_best_index(
          set, dom.rm.templates[static_cast<std::size_t>(set.condition)]));
      sets.push_back(std::move(set));
    }

    std::vector<RmMetricsRow> rows;
    const rewards::Dimension dims[5] = {
        rewards::Dimension::visual_quality, rewards::Dimension::temporal_consistency,
        rewards::Dimension::dynamic_degree, rewards::Dimension::alignment,
        rewards::Dimension::global};
    for (rewards::Dimension d : dims) {
      rewards::RewardModel rm = dom.rm;
      rm.dimension = d;
      rows.push_back({rewards::dimension_name(d),
                      rewards::evaluate_reward_model(rm, sets, best)});
    }
    rewards::Scorer frame_scorer = [&dom](const diffusion::Trajectory& y, int c) {
      return rewards::per_frame_manifold_score(
          y, dom.rm.templates[static_cast<std::size_t>(c)]);
    };
    rows.push_back({"per_frame_baseline",
                    rewards::evaluate_reward_model(frame_scorer, sets, best)});

    std::ofstream out(dir / "metrics.csv");
    if (!out) throw ConfigError("cannot write rm_eval metrics");
    out << "scorer,metric,value\n";
    for (const auto& row : rows) {
      out << row.scorer << ",mrr," << textio::fmt(row.metrics.mrr) << "\n";
      out << row.scorer << ",recall@1," << textio::fmt(row.metrics.recall1) << "\n";
      out << row.scorer << ",recall@2," << textio::fmt(row.metrics.recall2) << "\n";
      out << row.scorer << ",recall@4," << textio::fmt(row.metrics.recall4) << "\n";
    }
    res.ok = true;
    res.curve_file = (dir / "metrics.csv").string();
    mr.runs.push_back(res);
    if (rows_out) *rows_out = rows;
  } catch (const std::exception& e) {
    res.ok = false;
    res.error = e.what();
    mr.runs.push_back(res);
  }
  return mr;
}

}  // namespace

const char* kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::pretrain:
      return "pretrain";
    case ExperimentKind::online_vpo:
      return "online_vpo";
    case ExperimentKind::offline_dpo:
      return "offline_dpo";
    case ExperimentKind::refl:
      return "refl";
    case ExperimentKind::rm_eval:
      return "rm_eval";
    case ExperimentKind::sweep:
      return "sweep";
  }
  return "online_vpo";
}

ExperimentKind parse_kind(const std::string& name) {
  if (name == "pretrain") return ExperimentKind::pretrain;
  if (name == "online_vpo") return ExperimentKind::online_vpo;
  if (name == "offline_dpo") return ExperimentKind::offline_dpo;
  if (name == "refl") return ExperimentKind::refl;
  if (name == "rm_eval") return ExperimentKind::rm_eval;
  if (name == "sweep") return ExperimentKind::sweep;
  throw ConfigError("unknown experiment kind: " + name);
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.seeds.empty()) throw ConfigError("seed list is empty");
  if (cfg.eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
  if (cfg.eval_samples < 1) throw ConfigError("eval_samples must be >= 1");
  if (cfg.out_dir.empty()) throw ConfigError("out_dir is empty");
  if (cfg.frames < 3) throw ConfigError("frames must be >= 3");
  if (cfg.num_classes < 2) throw ConfigError("num_classes must be >= 2");
}

ExperimentConfig load_config_json(const std::string& path,
                                  const ExperimentConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  ExperimentConfig cfg = base;
  if (j.contains("kind")) cfg.kind = parse_kind(j["kind"].get<std::string>());
  if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<uint64_t>>();
  if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
  if (j.contains("eval_interval")) cfg.eval_interval = j["eval_interval"].get<int>();
  if (j.contains("eval_samples")) cfg.eval_samples = j["eval_samples"].get<int>();
  if (j.contains("steps")) cfg.vpo.steps = j["steps"].get<int>();
  if (j.contains("n_candidates")) cfg.vpo.n_candidates = j["n_candidates"].get<int>();
  if (j.contains("k_interval")) cfg.vpo.k_interval = j["k_interval"].get<int>();
  if (j.contains("beta")) cfg.vpo.beta = j["beta"].get<double>();
  if (j.contains("batch_size")) cfg.vpo.batch_size = j["batch_size"].get<int>();
  if (j.contains("sampler_steps")) cfg.vpo.sampler_steps = j["sampler_steps"].get<int>();
  if (j.contains("lr")) cfg.vpo.lr = j["lr"].get<double>();
  if (j.contains("dimension")) {
    cfg.vpo.dimension = rewards::parse_dimension(j["dimension"].get<std::string>());
  }
  if (j.contains("frames")) cfg.frames = j["frames"].get<int>();
  if (j.contains("dims")) cfg.dims = j["dims"].get<int>();
  if (j.contains("num_classes")) cfg.num_classes = j["num_classes"].get<int>();
  if (j.contains("timesteps")) cfg.timesteps = j["timesteps"].get<int>();
  if (j.contains("beta_start")) cfg.beta_start = j["beta_start"].get<double>();
  if (j.contains("beta_end")) cfg.beta_end = j["beta_end"].get<double>();
  if (j.contains("data_noise")) cfg.data_noise = j["data_noise"].get<double>();
  if (j.contains("n_per_class")) cfg.n_per_class = j["n_per_class"].get<int>();
  if (j.contains("hidden")) cfg.hidden = j["hidden"].get<std::vector<int>>();
  if (j.contains("t_embed_width")) cfg.t_embed_width = j["t_embed_width"].get<int>();
  if (j.contains("pretrain_epochs")) cfg.pretrain_epochs = j["pretrain_epochs"].get<int>();
  if (j.contains("pretrain_lr")) cfg.pretrain_lr = j["pretrain_lr"].get<double>();
  if (j.contains("offline_pairs")) cfg.offline_pairs = j["offline_pairs"].get<int>();
  if (j.contains("t_range_frac")) cfg.t_range_frac = j["t_range_frac"].get<double>();
  if (j.contains("rm_sets")) cfg.rm_sets = j["rm_sets"].get<int>();
  if (j.contains("rm_candidates")) cfg.rm_candidates = j["rm_candidates"].get<int>();
  if (j.contains("sweep_n")) cfg.sweep_n = j["sweep_n"].get<std::vector<int>>();
  if (j.contains("sweep_k")) cfg.sweep_k = j["sweep_k"].get<std::vector<int>>();
  if (j.contains("trainer")) cfg.trainer = j["trainer"].get<std::string>();
  return cfg;
}

Domain make_domain(const ExperimentConfig& cfg) {
  Domain dom;
  dom.specs = data::make_class_specs(cfg.num_classes, cfg.dims, kDomainSeed);
  dom.sched = diffusion::make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);
  dom.rm = rewards::make_reward_model(dom.specs, cfg.frames, cfg.dims,
                                      cfg.vpo.dimension);
  for (int c = 0; c < cfg.num_classes; ++c) dom.prompts.push_back(c);
  return dom;
}

diffusion::Denoiser make_pretrained_policy(const ExperimentConfig& cfg,
                                           const Domain& dom, uint64_t seed) {
  data::Dataset ds = data::make_dataset(dom.specs, cfg.n_per_class, cfg.frames,
                                        cfg.dims, cfg.data_noise,
                                        mix_seed(seed, stream::kData));
  diffusion::Denoiser den =
      diffusion::make_denoiser(cfg.frames, cfg.dims, cfg.num_classes, cfg.hidden,
                               cfg.t_embed_width, mix_seed(seed, stream::kInit));
  train::pretrain(den, ds, dom.sched, cfg.pretrain_epochs, cfg.pretrain_lr,
                  mix_seed(seed, stream::kPretrain), cfg.vpo.batch_size);
  return den;
}

train::EvalRecord evaluate_policy(const diffusion::Denoiser& policy,
                                  const rewards::RewardModel& rm,
                                  const std::vector<int>& prompts, int n,
                                  uint64_t seed,
                                  const diffusion::NoiseSchedule& sched,
                                  int sampler_steps) {
  return train::held_out_eval(policy, rm, prompts, n, seed, sched, sampler_steps);
}

double eval_value(const train::EvalRecord& e, rewards::Dimension d) {
  switch (d) {
    case rewards::Dimension::visual_quality:
      return e.mean[0];
    case rewards::Dimension::temporal_consistency:
      return e.mean[1];
    case rewards::Dimension::dynamic_degree:
      return e.mean[2];
    case rewards::Dimension::alignment:
      return e.mean[3];
    case rewards::Dimension::global:
      return (e.mean[0] + e.mean[1] + e.mean[2] + e.mean[3]) / 4.0;
  }
  return e.mean[1];
}

ComparisonReport compare_methods(const std::vector<MethodReport>& reports,
                                 rewards::Dimension dimension) {
  if (reports.size() < 2) throw ConfigError("need >= 2 method reports");
  const std::vector<RunResult>& first = reports.front().runs;
  for (const MethodReport& mr : reports) {
    if (mr.runs.size() != first.size()) throw ConfigError("seed lists differ");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (mr.runs[i].seed != first[i].seed) {
        throw ConfigError("method reports are not on matched seeds");
      }
    }
  }
  ComparisonReport report;
  report.methods = reports;
  for (std::size_t a = 0; a < reports.size(); ++a) {
    for (std::size_t b = a + 1; b < reports.size(); ++b) {
      PairwiseEntry pw;
      pw.method_a = reports[a].method;
      pw.method_b = reports[b].method;
      for (std::size_t i = 0; i < first.size(); ++i) {
        const RunResult& ra = reports[a].runs[i];
        const RunResult& rb = reports[b].runs[i];
        if (!ra.ok && !rb.ok) {
          pw.ties += 1;
          continue;
        }
        if (!ra.ok) {
          pw.wins_b += 1;
          continue;
        }
        if (!rb.ok) {
          pw.wins_a += 1;
          continue;
        }
        double va = eval_value(ra.final_eval, dimension);
        double vb = eval_value(rb.final_eval, dimension);
        if (va > vb) {
          pw.wins_a += 1;
        } else if (vb > va) {
          pw.wins_b += 1;
        } else {
          pw.ties += 1;
        }
      }
      report.pairwise.push_back(pw);
    }
  }
  return report;
}

void write_report_json(const ComparisonReport& report, const std::string& path) {
  ordered_json j;
  j["methods"] = ordered_json::array();
  for (const MethodReport& mr : report.methods) {
    ordered_json m;
    m["method"] = mr.method;
    m["runs"] = ordered_json::array();
    for (const RunResult& r : mr.runs) m["runs"].push_back(run_to_json(r));
    j["methods"].push_back(m);
  }
  if (!report.pairwise.empty()) {
    j["pairwise"] = ordered_json::array();
    for (const PairwiseEntry& p : report.pairwise) {
      ordered_json e;
      e["method_a"] = p.method_a;
      e["method_b"] = p.method_b;
      e["wins_a"] = p.wins_a;
      e["wins_b"] = p.wins_b;
      e["ties"] = p.ties;
      j["pairwise"].push_back(e);
    }
  }
  if (!report.rm_metrics.empty()) {
    j["rm_metrics"] = ordered_json::array();
    for (const RmMetricsRow& row : report.rm_metrics) {
      ordered_json e;
      e["scorer"] = row.scorer;
      e["mrr"] = row.metrics.mrr;
      e["recall@1"] = row.metrics.recall1;
      e["recall@2"] = row.metrics.recall2;
      e["recall@4"] = row.metrics.recall4;
      j["rm_metrics"].push_back(e);
    }
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write report: " + path);
  out << j.dump(2) << "\n";
}

bool all_runs_ok(const ComparisonReport& report) {
  for (const MethodReport& mr : report.methods) {
    for (const RunResult& r : mr.runs) {
      if (!r.ok) return false;
    }
  }
  return true;
}

ComparisonReport run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  Domain dom = make_domain(cfg);
  ComparisonReport report;

  switch (cfg.kind) {
    case ExperimentKind::online_vpo: {
      report.methods.push_back(run_method(
          cfg, dom, "online_vpo", "online_vpo",
          [&](uint64_t seed) { return online_trainer(cfg, dom, seed, cfg.vpo); }));
      break;
    }
    case ExperimentKind::offline_dpo: {
      report.methods.push_back(run_method(
          cfg, dom, "offline_dpo", "offline_dpo",
          [&](uint64_t seed) { return offline_trainer(cfg, dom, seed, cfg.vpo); }));
      break;
    }
    case ExperimentKind::refl: {
      report.methods.push_back(run_method(
          cfg, dom, "refl", "refl",
          [&](uint64_t seed) { return refl_trainer(cfg, dom, seed, cfg.vpo); }));
      break;
    }
    case ExperimentKind::pretrain: {
      MethodReport mr;
      mr.method = "pretrain";
      for (uint64_t seed : cfg.seeds) {
        RunResult res;
        res.seed = seed;
        fs::path dir = fs::path(cfg.out_dir) / "pretrain" / std::to_string(seed);
        try {
          fs::create_directories(dir);
          data::Dataset ds = data::make_dataset(dom.specs, cfg.n_per_class,
                                                cfg.frames, cfg.dims, cfg.data_noise,
                                                mix_seed(seed, stream::kData));
          diffusion::Denoiser den = diffusion::make_denoiser(
              cfg.frames, cfg.dims, cfg.num_classes, cfg.hidden, cfg.t_embed_width,
              mix_seed(seed, stream::kInit));
          std::vector<double> losses =
              train::pretrain(den, ds, dom.sched, cfg.pretrain_epochs,
                              cfg.pretrain_lr, mix_seed(seed, stream::kPretrain),
                              cfg.vpo.batch_size);
          fs::path curve = dir / "pretrain_curve.csv";
          std::ofstream out(curve);
          out << "epoch,loss\n";
          for (std::size_t e = 0; e < losses.size(); ++e) {
            out << e << "," << textio::fmt(losses[e]) << "\n";
          }
          nn::save_checkpoint(den.net, (dir / "policy.ckpt").string());
          res.curve_file = curve.string();
          res.final_eval = train::held_out_eval(den, dom.rm, dom.prompts,
                                                cfg.eval_samples,
                                                mix_seed(seed, stream::kEval),
                                                dom.sched, cfg.vpo.sampler_steps);
          res.ok = true;
        } catch (const std::exception& e) {
          res.ok = false;
          res.error = e.what();
        }
        mr.runs.push_back(res);
      }
      report.methods.push_back(mr);
      break;
    }
    case ExperimentKind::rm_eval: {
      MethodReport mr = run_rm_eval(cfg, dom, &report.rm_metrics);
      report.methods.push_back(mr);
      break;
    }
    case ExperimentKind::sweep: {
      std::vector<int> ns = cfg.sweep_n.empty() ? std::vector<int>{cfg.vpo.n_candidates}
                                                : cfg.sweep_n;
      std::vector<int> ks = cfg.sweep_k.empty() ? std::vector<int>{cfg.vpo.k_interval}
                                                : cfg.sweep_k;
      for (int n : ns) {
        for (int k : ks) {
          train::VpoConfig vpo = cfg.vpo;
          vpo.n_candidates = n;
          vpo.k_interval = k;
          std::string method = cfg.trainer + "_n" + std::to_string(n) + "_k" +
                               std::to_string(k);
          std::string method_dir = "sweep/" + method;
          std::function<TrainerFn(uint64_t)> make_trainer;
          if (cfg.trainer == "online_vpo") {
            make_trainer = [&, vpo](uint64_t seed) {
              return online_trainer(cfg, dom, seed, vpo);
            };
          } else if (cfg.trainer == "offline_dpo") {
            make_trainer = [&, vpo](uint64_t seed) {
              return offline_trainer(cfg, dom, seed, vpo);
            };
          } else if (cfg.trainer == "refl") {
            make_trainer = [&, vpo](uint64_t seed) {
              return refl_trainer(cfg, dom, seed, vpo);
            };
          } else {
            throw ConfigError("unknown trainer for sweep: " + cfg.trainer);
          }
          report.methods.push_back(run_method(cfg, dom, method, method_dir, make_trainer));
        }
      }
      break;
    }
  }

  write_summary(cfg, kind_name(cfg.kind), report);
  return report;
}

}  // namespace vpo::harness
