#include "vpo/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "vpo/errors.hpp"
#include "vpo/textio.hpp"

namespace vpo::train {

namespace {

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// sigma(-h), computed without overflow.
double sigmoid_neg(double h) {
  if (h >= 0.0) {
    double e = std::exp(-h);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(h));
}

double sum_sq_error(std::span<const double> pred, std::span<const double> target) {
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double d = target[i] - pred[i];
    acc += d * d;
  }
  return acc;
}

std::array<double, 4> mean_raw(const std::vector<rewards::RewardVector>& rvs) {
  std::array<double, 4> mean{};
  for (const auto& rv : rvs) {
    const auto raw = rv.raw();
    for (int i = 0; i < 4; ++i) mean[static_cast<std::size_t>(i)] += raw[static_cast<std::size_t>(i)];
  }
  for (auto& m : mean) m /= static_cast<double>(rvs.size());
  return mean;
}

void check_pair_shape(const diffusion::Denoiser& policy, const PreferencePair& pair) {
  if (pair.winner.frames != policy.frames || pair.winner.dims != policy.dims ||
      pair.loser.frames != policy.frames || pair.loser.dims != policy.dims) {
    throw ShapeError("preference pair shape does not match the policy");
  }
}

struct EvalPoints {
  const EvalSpec& spec;
  int total_steps;

  bool due(int step) const {
    if (!spec.enabled) return false;
    if (step == 0) return true;
    if (spec.interval > 0 && step % spec.interval == 0) return true;
    return step == total_steps;
  }
};

}  // namespace

void validate(const VpoConfig& cfg) {
  if (cfg.n_candidates < 2) throw ConfigError("n_candidates must be >= 2");
  if (cfg.k_interval < 1) throw ConfigError("k_interval must be >= 1");
  if (!(cfg.beta > 0.0)) throw ConfigError("beta must be > 0");
  if (cfg.steps < 1) throw ConfigError("steps must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.sampler_steps < 1) throw ConfigError("sampler_steps must be >= 1");
  if (!(cfg.lr > 0.0)) throw ConfigError("lr must be > 0");
}

void save_curve_csv(const TrainRunMetrics& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out << "step,loss,visual_quality,temporal_consistency,dynamic_degree,"
         "alignment,gap,ref_update\n";
  for (const StepRecord& r : m.steps) {
    out << r.step << "," << textio::fmt(r.loss);
    for (double v : r.cand_mean) out << "," << textio::fmt(v);
    out << "," << textio::fmt(r.gap) << "," << (r.ref_update ? 1 : 0) << "\n";
  }
}

void save_evals_csv(const TrainRunMetrics& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out << "step";
  const char* names[4] = {"visual_quality", "temporal_consistency",
                          "dynamic_degree", "alignment"};
  for (const char* n : names) out << "," << n << "_mean," << n << "_std";
  out << "\n";
  for (const EvalRecord& e : m.evals) {
    out << e.step;
    for (int i = 0; i < 4; ++i) {
      out << "," << textio::fmt(e.mean[static_cast<std::size_t>(i)]) << ","
          << textio::fmt(e.stddev[static_cast<std::size_t>(i)]);
    }
    out << "\n";
  }
}

std::vector<double> pretrain(diffusion::Denoiser& den, const data::Dataset& ds,
                             const diffusion::NoiseSchedule& sched, int epochs,
                             double lr, uint64_t seed, int batch_size) {
  if (ds.items.empty()) throw ConfigError("pretraining needs a nonempty dataset");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  const int n = static_cast<int>(ds.items.size());
  const int fv = den.frame_values();
  const int timesteps = sched.timesteps();

  nn::AdamConfig acfg;
  acfg.lr = lr;
  nn::AdamState adam = nn::make_adam(den.net, acfg);
  nn::GradientTape tape = nn::make_tape(den.net);
  Rng master(seed);

  std::vector<double> epoch_losses;
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  std::vector<double> noise(static_cast<std::size_t>(fv));
  std::vector<double> upstream(static_cast<std::size_t>(fv));
  nn::ForwardTrace trace;

  for (int e = 0; e < epochs; ++e) {
    Rng er = master.substream(stream::kPretrain, static_cast<uint64_t>(e));
    for (int i = n - 1; i > 0; --i) {
      int j = er.uniform_int(i + 1);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    double epoch_loss = 0.0;
    for (int start = 0; start < n; start += batch_size) {
      int count = std::min(batch_size, n - start);
      for (int k = 0; k < count; ++k) {
        const diffusion::Trajectory& x0 = ds.items[static_cast<std::size_t>(order[static_cast<std::size_t>(start + k)])];
        int t = er.uniform_int(timesteps);
        for (double& v : noise) v = er.normal();
        diffusion::Trajectory x_t = diffusion::forward_diffuse(x0, t, noise, sched);
        std::vector<double> eps_hat =
            diffusion::predict_noise(den, x_t.values, t, x0.condition, &trace);
        double mse = 0.0;
        for (int i = 0; i < fv; ++i) {
          double d = eps_hat[static_cast<std::size_t>(i)] - noise[static_cast<std::size_t>(i)];
          mse += d * d;
          upstream[static_cast<std::size_t>(i)] = 2.0 * d / (fv * count);
        }
        mse /= fv;
        if (!std::isfinite(mse)) throw NumericError("pretraining loss diverged");
        epoch_loss += mse;
        nn::backward(den.net, trace, upstream, tape);
      }
      nn::adam_step(den.net, tape, adam);
    }
    epoch_losses.push_back(epoch_loss / n);
  }
  return epoch_losses;
}

std::pair<double, double> dpo_h_and_loss(const DpoTerms& t, double beta) {
  double h = -(beta / 2.0) *
             ((t.policy_winner - t.ref_winner) - (t.policy_loser - t.ref_loser));
  return {h, softplus(-h)};
}

double dpo_loss(const diffusion::Denoiser& policy,
                const diffusion::Denoiser& reference, const PreferencePair& pair,
                double beta, const diffusion::NoiseSchedule& sched, Rng& rng,
                nn::GradientTape& tape) {
  check_pair_shape(policy, pair);
  check_pair_shape(reference, pair);
  const int fv = policy.frame_values();
  const int c = pair.condition;

  // Shared timestep and shared fresh noise across both trajectories and both
  // models; this is what makes equal models give h = 0 exactly.
  int t = rng.uniform_int(sched.timesteps());
  std::vector<double> noise(static_cast<std::size_t>(fv));
  for (double& v : noise) v = rng.normal();

  diffusion::Trajectory xw = diffusion::forward_diffuse(pair.winner, t, noise, sched);
  diffusion::Trajectory xl = diffusion::forward_diffuse(pair.loser, t, noise, sched);

  nn::ForwardTrace trace_w, trace_l;
  std::vector<double> eps_pw = diffusion::predict_noise(policy, xw.values, t, c, &trace_w);
  std::vector<double> eps_pl = diffusion::predict_noise(policy, xl.values, t, c, &trace_l);
  std::vector<double> eps_rw = diffusion::predict_noise(reference, xw.values, t, c);
  std::vector<double> eps_rl = diffusion::predict_noise(reference, xl.values, t, c);

  DpoTerms terms;
  terms.policy_winner = sum_sq_error(eps_pw, noise);
  terms.ref_winner = sum_sq_error(eps_rw, noise);
  terms.policy_loser = sum_sq_error(eps_pl, noise);
  terms.ref_loser = sum_sq_error(eps_rl, noise);

  auto [h, loss] = dpo_h_and_loss(terms, beta);
  if (!std::isfinite(h)) {
    throw NumericError("non-finite preference logit at t=" + std::to_string(t));
  }

  // d loss / d mse_policy_winner = sigma(-h) * beta/2, loser has the opposite
  // sign; d mse / d eps_hat = 2 (eps_hat - eps).
  double sig = sigmoid_neg(h);
  std::vector<double> upstream(static_cast<std::size_t>(fv));
  for (int i = 0; i < fv; ++i) {
    upstream[static_cast<std::size_t>(i)] =
        sig * beta * (eps_pw[static_cast<std::size_t>(i)] - noise[static_cast<std::size_t>(i)]);
  }
  nn::backward(policy.net, trace_w, upstream, tape);
  for (int i = 0; i < fv; ++i) {
    upstream[static_cast<std::size_t>(i)] =
        -sig * beta * (eps_pl[static_cast<std::size_t>(i)] - noise[static_cast<std::size_t>(i)]);
  }
  nn::backward(policy.net, trace_l, upstream, tape);
  return loss;
}

double refl_step(diffusion::Denoiser& policy, nn::AdamState& opt,
                 const RewardGradFn& reward, int condition,
                 const diffusion::NoiseSchedule& sched,
                 std::pair<int, int> t_range, int sampler_steps, Rng& rng,
                 diffusion::Trajectory* x0_out) {
  if (t_range.first < 0 || t_range.second > sched.timesteps() ||
      t_range.first >= t_range.second) {
    throw ConfigError("t_range must be a nonempty subrange of [0, T)");
  }
  std::vector<int> ts = diffusion::strided_timesteps(sched.timesteps(), sampler_steps);
  std::vector<int> eligible;
  for (int t : ts) {
    if (t >= t_range.first && t < t_range.second) eligible.push_back(t);
  }
  if (eligible.empty()) {
    throw ConfigError("no sampler timestep falls inside t_range");
  }
  int t = eligible[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(eligible.size())))];

  std::vector<double> x_t =
      diffusion::sample_to(policy, condition, sched, sampler_steps, t, rng);

  double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
  if (ab < 1e-12) throw NumericError("alpha_bar below 1e-12 in refl_step");
  double sq_ab = std::sqrt(ab);
  double sq_1mab = std::sqrt(1.0 - ab);

  nn::ForwardTrace trace;
  std::vector<double> eps_hat =
      diffusion::predict_noise(policy, x_t, t, condition, &trace);
  std::vector<double> x0(x_t.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    x0[i] = (x_t[i] - sq_1mab * eps_hat[i]) / sq_ab;
  }

  auto [r, dr] = reward(x0, policy.frames, policy.dims, condition);
  double loss = -r;
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite reward in refl_step at t=" + std::to_string(t));
  }

  // loss = -r(x0_hat), d x0_hat / d eps_hat = -sqrt(1-ab)/sqrt(ab); the
  // gradient stops at x_t.
  double coef = sq_1mab / sq_ab;
  std::vector<double> upstream(dr.size());
  for (std::size_t i = 0; i < dr.size(); ++i) upstream[i] = dr[i] * coef;

  nn::GradientTape tape = nn::make_tape(policy.net);
  nn::backward(policy.net, trace, upstream, tape);
  nn::adam_step(policy.net, tape, opt);

  if (x0_out) {
    *x0_out = diffusion::make_trajectory(policy.frames, policy.dims, condition);
    x0_out->values = std::move(x0);
  }
  return loss;
}

std::vector<diffusion::Trajectory> generate_candidates(
    const diffusion::Denoiser& policy, int condition,
    const diffusion::NoiseSchedule& sched, int n, int sampler_steps,
    const Rng& base) {
  if (n < 2) throw ConfigError("need at least 2 candidates");
  std::vector<diffusion::Trajectory> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng sub = base.substream(static_cast<uint64_t>(i));
    out.push_back(diffusion::sample(policy, condition, sched, sampler_steps, sub));
  }
  return out;
}

SelectResult select_pair(std::span<const double> scores) {
  if (scores.size() < 2) throw ShapeError("select_pair needs >= 2 scores");
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("non-finite candidate score");
  }
  SelectResult r;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[static_cast<std::size_t>(r.winner)]) r.winner = static_cast<int>(i);
    if (scores[i] < scores[static_cast<std::size_t>(r.loser)]) r.loser = static_cast<int>(i);
  }
  if (scores[static_cast<std::size_t>(r.winner)] == scores[static_cast<std::size_t>(r.loser)]) {
    r.skip = true;
  }
  return r;
}

SelectResult select_pair(const std::vector<diffusion::Trajectory>& candidates,
                         std::span<const double> scores) {
  if (candidates.size() != scores.size()) {
    throw ShapeError("candidates/scores length mismatch");
  }
  return select_pair(scores);
}

namespace {

TrainRunMetrics run_online(diffusion::Denoiser& policy,
                           const rewards::RewardModel& rm,
                           const CandidateScorer& scorer,
                           const std::vector<int>& prompts, const VpoConfig& cfg,
                           const diffusion::NoiseSchedule& sched,
                           const EvalSpec& eval, const StepCallback& on_step) {
  validate(cfg);
  if (prompts.empty()) throw ConfigError("prompt list is empty");

  diffusion::Denoiser reference = policy;  // deep value copy
  nn::AdamConfig acfg;
  acfg.lr = cfg.lr;
  nn::AdamState adam = nn::make_adam(policy.net, acfg);
  nn::GradientTape tape = nn::make_tape(policy.net);
  Rng master(cfg.seed);

  TrainRunMetrics metrics;
  EvalPoints points{eval, cfg.steps};
  auto record_eval = [&](int step) {
    EvalRecord e = held_out_eval(policy, rm, prompts, eval.samples,
                                 mix_seed(eval.seed, static_cast<uint64_t>(step)),
                                 sched, cfg.sampler_steps);
    e.step = step;
    metrics.evals.push_back(e);
  };
  if (points.due(0)) record_eval(0);

  int consecutive_skips = 0;
  for (int s = 1; s <= cfg.steps; ++s) {
    int c = prompts[static_cast<std::size_t>((s - 1) % static_cast<int>(prompts.size()))];
    Rng cand_rng = master.substream(stream::kCandidates, static_cast<uint64_t>(s));
    std::vector<diffusion::Trajectory> cands = generate_candidates(
        policy, c, sched, cfg.n_candidates, cfg.sampler_steps, cand_rng);

    std::vector<rewards::RewardVector> rvs;
    rvs.reserve(cands.size());
    for (const auto& y : cands) rvs.push_back(scorer(y, c));
    if (cfg.dimension == rewards::Dimension::global) {
      rewards::normalize_global(rvs);
    }
    std::vector<double> sel;
    sel.reserve(rvs.size());
    for (const auto& rv : rvs) sel.push_back(rewards::select_score(rv, cfg.dimension));

    StepRecord rec;
    rec.step = s;
    rec.cand_mean = mean_raw(rvs);

    SelectResult pick = select_pair(cands, sel);
    if (pick.skip) {
      rec.skipped = true;
      consecutive_skips += 1;
      if (consecutive_skips >= 50) {
        throw DegeneratePolicyError(
            "all candidate sets degenerate for 50 consecutive steps at step " +
            std::to_string(s));
      }
    } else {
      consecutive_skips = 0;
      PreferencePair pair;
      pair.condition = c;
      pair.winner = cands[static_cast<std::size_t>(pick.winner)];
      pair.loser = cands[static_cast<std::size_t>(pick.loser)];
      pair.source = PreferencePair::Source::online;
      pair.source_index = s;
      pair.winner_scores = rvs[static_cast<std::size_t>(pick.winner)];
      pair.loser_scores = rvs[static_cast<std::size_t>(pick.loser)];
      pair.winner_sel = sel[static_cast<std::size_t>(pick.winner)];
      pair.loser_sel = sel[static_cast<std::size_t>(pick.loser)];
      rec.gap = pair.winner_sel - pair.loser_sel;

      Rng dpo_rng = master.substream(stream::kDpo, static_cast<uint64_t>(s));
      rec.loss = dpo_loss(policy, reference, pair, cfg.beta, sched, dpo_rng, tape);
      nn::adam_step(policy.net, tape, adam);
    }

    if (s % cfg.k_interval == 0) {
      reference = policy;
      rec.ref_update = true;
      metrics.ref_update_steps.push_back(s);
    }
    metrics.steps.push_back(rec);
    if (on_step) on_step(rec);
    if (points.due(s)) record_eval(s);
  }
  return metrics;
}

}  // namespace

TrainRunMetrics train_online_vpo(diffusion::Denoiser& policy,
                                 const rewards::RewardModel& rm,
                                 const std::vector<int>& prompts,
                                 const VpoConfig& cfg,
                                 const diffusion::NoiseSchedule& sched,
                                 const EvalSpec& eval, const StepCallback& on_step) {
  CandidateScorer scorer = [&rm](const diffusion::Trajectory& y, int c) {
    return rewards::score(rm, y, c);
  };
  return run_online(policy, rm, scorer, prompts, cfg, sched, eval, on_step);
}

TrainRunMetrics train_online_vpo(diffusion::Denoiser& policy,
                                 const rewards::RewardModel& rm,
                                 const CandidateScorer& scorer,
                                 const std::vector<int>& prompts,
                                 const VpoConfig& cfg,
                                 const diffusion::NoiseSchedule& sched,
                                 const EvalSpec& eval, const StepCallback& on_step) {
  return run_online(policy, rm, scorer, prompts, cfg, sched, eval, on_step);
}

std::vector<PreferencePair> build_offline_dataset(
    const diffusion::Denoiser& frozen_policy, const rewards::RewardModel& rm,
    const std::vector<int>& prompts, int pairs, const VpoConfig& cfg,
    const diffusion::NoiseSchedule& sched) {
  validate(cfg);
  if (prompts.empty()) throw ConfigError("prompt list is empty");
  if (pairs < 1) throw ConfigError("pairs must be >= 1");

  Rng master(cfg.seed);
  std::vector<PreferencePair> out;
  out.reserve(static_cast<std::size_t>(pairs));
  long attempt = 0;
  int consecutive_skips = 0;
  while (static_cast<int>(out.size()) < pairs) {
    attempt += 1;
    int c = prompts[static_cast<std::size_t>((attempt - 1) % static_cast<long>(prompts.size()))];
    Rng cand_rng = master.substream(stream::kCandidates, static_cast<uint64_t>(attempt));
    std::vector<diffusion::Trajectory> cands = generate_candidates(
        frozen_policy, c, sched, cfg.n_candidates, cfg.sampler_steps, cand_rng);

    std::vector<rewards::RewardVector> rvs;
    rvs.reserve(cands.size());
    for (const auto& y : cands) rvs.push_back(rewards::score(rm, y, c));
    if (cfg.dimension == rewards::Dimension::global) rewards::normalize_global(rvs);
    std::vector<double> sel;
    for (const auto& rv : rvs) sel.push_back(rewards::select_score(rv, cfg.dimension));

    SelectResult pick = select_pair(cands, sel);
    if (pick.skip) {
      consecutive_skips += 1;
      if (consecutive_skips >= 50) {
        throw StateError("candidate scoring degenerate while building the offline dataset");
      }
      continue;
    }
    consecutive_skips = 0;
    PreferencePair pair;
    pair.condition = c;
    pair.winner = cands[static_cast<std::size_t>(pick.winner)];
    pair.loser = cands[static_cast<std::size_t>(pick.loser)];
    pair.source = PreferencePair::Source::offline;
    pair.source_index = static_cast<long>(out.size());
    pair.winner_scores = rvs[static_cast<std::size_t>(pick.winner)];
    pair.loser_scores = rvs[static_cast<std::size_t>(pick.loser)];
    pair.winner_sel = sel[static_cast<std::size_t>(pick.winner)];
    pair.loser_sel = sel[static_cast<std::size_t>(pick.loser)];
    out.push_back(std::move(pair));
  }
  return out;
}

TrainRunMetrics train_offline_dpo(diffusion::Denoiser& policy,
                                  const std::vector<PreferencePair>& dataset,
                                  const rewards::RewardModel& rm,
                                  const VpoConfig& cfg,
                                  const diffusion::NoiseSchedule& sched,
                                  const EvalSpec& eval, const StepCallback& on_step) {
  validate(cfg);
  if (dataset.empty()) throw ConfigError("offline dataset is empty");

  diffusion::Denoiser reference = policy;
  nn::AdamConfig acfg;
  acfg.lr = cfg.lr;
  nn::AdamState adam = nn::make_adam(policy.net, acfg);
  nn::GradientTape tape = nn::make_tape(policy.net);
  Rng master(cfg.seed);

  TrainRunMetrics metrics;
  EvalPoints points{eval, cfg.steps};
  std::vector<int> prompts;
  for (const auto& p : dataset) prompts.push_back(p.condition);
  std::sort(prompts.begin(), prompts.end());
  prompts.erase(std::unique(prompts.begin(), prompts.end()), prompts.end());

  auto record_eval = [&](int step) {
    EvalRecord e = held_out_eval(policy, rm, prompts, eval.samples,
                                 mix_seed(eval.seed, static_cast<uint64_t>(step)),
                                 sched, cfg.sampler_steps);
    e.step = step;
    metrics.evals.push_back(e);
  };
  if (points.due(0)) record_eval(0);

  for (int s = 1; s <= cfg.steps; ++s) {
    const PreferencePair& pair =
        dataset[static_cast<std::size_t>((s - 1) % static_cast<int>(dataset.size()))];
    StepRecord rec;
    rec.step = s;
    const auto w = pair.winner_scores.raw();
    const auto l = pair.loser_scores.raw();
    for (int i = 0; i < 4; ++i) {
      rec.cand_mean[static_cast<std::size_t>(i)] =
          0.5 * (w[static_cast<std::size_t>(i)] + l[static_cast<std::size_t>(i)]);
    }
    rec.gap = pair.winner_sel - pair.loser_sel;

    Rng dpo_rng = master.substream(stream::kDpo, static_cast<uint64_t>(s));
    rec.loss = dpo_loss(policy, reference, pair, cfg.beta, sched, dpo_rng, tape);
    nn::adam_step(policy.net, tape, adam);

    metrics.steps.push_back(rec);
    if (on_step) on_step(rec);
    if (points.due(s)) record_eval(s);
  }
  return metrics;
}

TrainRunMetrics train_refl(diffusion::Denoiser& policy,
                           const rewards::RewardModel& rm,
                           const std::vector<int>& prompts, const VpoConfig& cfg,
                           const diffusion::NoiseSchedule& sched,
                           double t_range_frac, const EvalSpec& eval,
                           const StepCallback& on_step) {
  validate(cfg);
  if (prompts.empty()) throw ConfigError("prompt list is empty");
  if (!(t_range_frac > 0.0 && t_range_frac <= 1.0)) {
    throw ConfigError("t_range_frac must lie in (0, 1]");
  }
  int hi = std::max(1, static_cast<int>(std::ceil(t_range_frac * sched.timesteps())));
  std::pair<int, int> t_range{0, hi};

  nn::AdamConfig acfg;
  acfg.lr = cfg.lr;
  nn::AdamState adam = nn::make_adam(policy.net, acfg);
  Rng master(cfg.seed);

  RewardGradFn reward = [&rm, &cfg](std::span<const double> values, int frames,
                                    int dims, int condition) {
    return rewards::score_with_grad(rm, values, frames, dims, condition,
                                    cfg.dimension);
  };

  TrainRunMetrics metrics;
  EvalPoints points{eval, cfg.steps};
  auto record_eval = [&](int step) {
    EvalRecord e = held_out_eval(policy, rm, prompts, eval.samples,
                                 mix_seed(eval.seed, static_cast<uint64_t>(step)),
                                 sched, cfg.sampler_steps);
    e.step = step;
    metrics.evals.push_back(e);
  };
  if (points.due(0)) record_eval(0);

  for (int s = 1; s <= cfg.steps; ++s) {
    int c = prompts[static_cast<std::size_t>((s - 1) % static_cast<int>(prompts.size()))];
    Rng rng = master.substream(stream::kRefl, static_cast<uint64_t>(s));
    StepRecord rec;
    rec.step = s;
    diffusion::Trajectory x0;
    rec.loss = refl_step(policy, adam, reward, c, sched, t_range,
                         cfg.sampler_steps, rng, &x0);
    rec.cand_mean = rewards::score(rm, x0, c).raw();
    metrics.steps.push_back(rec);
    if (on_step) on_step(rec);
    if (points.due(s)) record_eval(s);
  }
  return metrics;
}

EvalRecord held_out_eval(const SampleFn& sampler, const rewards::RewardModel& rm,
                         const std::vector<int>& prompts, int samples_per_prompt,
                         uint64_t seed) {
  if (prompts.empty()) throw ConfigError("prompt list is empty");
  if (samples_per_prompt < 1) throw ConfigError("need >= 1 sample per prompt");
  EvalRecord out;
  for (std::size_t pi = 0; pi < prompts.size(); ++pi) {
    int c = prompts[pi];
    std::array<double, 4> mean{};
    std::array<double, 4> sq{};
    for (int i = 0; i < samples_per_prompt; ++i) {
      Rng rng(mix_seed(seed, static_cast<uint64_t>(pi), static_cast<uint64_t>(i)));
      diffusion::Trajectory y = sampler(c, rng);
      const auto raw = rewards::score(rm, y, c).raw();
      for (int k = 0; k < 4; ++k) {
        mean[static_cast<std::size_t>(k)] += raw[static_cast<std::size_t>(k)];
        sq[static_cast<std::size_t>(k)] += raw[static_cast<std::size_t>(k)] * raw[static_cast<std::size_t>(k)];
      }
    }
    for (int k = 0; k < 4; ++k) {
      double m = mean[static_cast<std::size_t>(k)] / samples_per_prompt;
      double var = sq[static_cast<std::size_t>(k)] / samples_per_prompt - m * m;
      out.mean[static_cast<std::size_t>(k)] += m;
      out.stddev[static_cast<std::size_t>(k)] += std::sqrt(std::max(0.0, var));
    }
  }
  for (int k = 0; k < 4; ++k) {
    out.mean[static_cast<std::size_t>(k)] /= static_cast<double>(prompts.size());
    out.stddev[static_cast<std::size_t>(k)] /= static_cast<double>(prompts.size());
  }
  return out;
}

EvalRecord held_out_eval(const diffusion::Denoiser& policy,
                         const rewards::RewardModel& rm,
                         const std::vector<int>& prompts, int samples_per_prompt,
                         uint64_t seed, const diffusion::NoiseSchedule& sched,
                         int sampler_steps) {
  SampleFn fn = [&policy, &sched, sampler_steps](int c, Rng& rng) {
    return diffusion::sample(policy, c, sched, sampler_steps, rng);
  };
  return held_out_eval(fn, rm, prompts, samples_per_prompt, seed);
}

}  // namespace vpo::train
