#include "vpo/rewards.hpp"

#include <algorithm>
#include <cmath>

#include "vpo/errors.hpp"

namespace vpo::rewards {

namespace {

constexpr double kNormEps = 1e-8;  // softening for the dynamic-degree norm

void check_shape(const diffusion::Trajectory& y) {
  if (y.frames < 3) throw ShapeError("scoring needs at least 3 frames");
  if (y.dims < 1) throw ShapeError("scoring needs at least 1 dim");
}

const diffusion::Trajectory& template_for(const RewardModel& rm, int condition,
                                          const diffusion::Trajectory& y) {
  if (condition < 0 || condition >= static_cast<int>(rm.templates.size())) {
    throw std::out_of_range("condition " + std::to_string(condition) +
                            " has no template");
  }
  const diffusion::Trajectory& t = rm.templates[static_cast<std::size_t>(condition)];
  if (t.frames != y.frames || t.dims != y.dims) {
    throw ShapeError("trajectory shape does not match the class template");
  }
  return t;
}

double temporal_consistency_value(const diffusion::Trajectory& y) {
  double acc = 0.0;
  for (int f = 1; f + 1 < y.frames; ++f) {
    for (int d = 0; d < y.dims; ++d) {
      double w = y.at(f + 1, d) - 2.0 * y.at(f, d) + y.at(f - 1, d);
      acc += w * w;
    }
  }
  return -acc / (y.frames - 2);
}

double dynamic_degree_value(const diffusion::Trajectory& y) {
  double acc = 0.0;
  for (int f = 0; f + 1 < y.frames; ++f) {
    double s = kNormEps * kNormEps;
    for (int d = 0; d < y.dims; ++d) {
      double delta = y.at(f + 1, d) - y.at(f, d);
      s += delta * delta;
    }
    acc += std::sqrt(s);
  }
  return acc / (y.frames - 1);
}

double visual_quality_value(const diffusion::Trajectory& y,
                            const diffusion::Trajectory& tmpl) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.values.size(); ++i) {
    double diff = y.values[i] - tmpl.values[i];
    acc += diff * diff;
  }
  return -acc / y.frames;
}

double alignment_value(const diffusion::Trajectory& y,
                       const diffusion::Trajectory& tmpl) {
  const std::size_t n = y.values.size();
  double mu_y = 0.0, mu_t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mu_y += y.values[i];
    mu_t += tmpl.values[i];
  }
  mu_y /= static_cast<double>(n);
  mu_t /= static_cast<double>(n);
  double s = 0.0, p2 = 0.0, q2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double a = y.values[i] - mu_y;
    double b = tmpl.values[i] - mu_t;
    s += a * b;
    p2 += a * a;
    q2 += b * b;
  }
  if (p2 < 1e-24 || q2 < 1e-24) return 0.0;
  return s / (std::sqrt(p2) * std::sqrt(q2));
}

}  // namespace

const char* dimension_name(Dimension d) {
  switch (d) {
    case Dimension::visual_quality:
      return "visual_quality";
    case Dimension::temporal_consistency:
      return "temporal_consistency";
    case Dimension::dynamic_degree:
      return "dynamic_degree";
    case Dimension::alignment:
      return "alignment";
    case Dimension::global:
      return "global";
  }
  return "global";
}

Dimension parse_dimension(const std::string& name) {
  if (name == "visual_quality") return Dimension::visual_quality;
  if (name == "temporal_consistency") return Dimension::temporal_consistency;
  if (name == "dynamic_degree") return Dimension::dynamic_degree;
  if (name == "alignment") return Dimension::alignment;
  if (name == "global") return Dimension::global;
  throw ConfigError("unknown reward dimension: " + name);
}

double RewardVector::dim(Dimension d) const {
  switch (d) {
    case Dimension::visual_quality:
      return visual_quality;
    case Dimension::temporal_consistency:
      return temporal_consistency;
    case Dimension::dynamic_degree:
      return dynamic_degree;
    case Dimension::alignment:
      return alignment;
    case Dimension::global:
      return global;
  }
  return global;
}

RewardModel make_reward_model(const std::vector<data::ClassSpec>& specs,
                              int frames, int dims, Dimension dimension) {
  RewardModel rm;
  rm.dimension = dimension;
  rm.templates.reserve(specs.size());
  for (const auto& spec : specs) {
    rm.templates.push_back(data::class_template(spec, frames, dims));
  }
  return rm;
}

RewardVector score(const RewardModel& rm, const diffusion::Trajectory& y,
                   int condition) {
  check_shape(y);
  const diffusion::Trajectory& tmpl = template_for(rm, condition, y);
  RewardVector rv;
  rv.temporal_consistency = temporal_consistency_value(y);
  rv.dynamic_degree = dynamic_degree_value(y);
  rv.visual_quality = visual_quality_value(y, tmpl);
  rv.alignment = alignment_value(y, tmpl);
  double wsum = 0.0, acc = 0.0;
  const auto raw = rv.raw();
  for (int i = 0; i < 4; ++i) {
    acc += rm.weights[static_cast<std::size_t>(i)] * raw[static_cast<std::size_t>(i)];
    wsum += rm.weights[static_cast<std::size_t>(i)];
  }
  rv.global = acc / wsum;
  return rv;
}

double select_score(const RewardVector& rv, Dimension d) { return rv.dim(d); }

std::pair<double, std::vector<double>> score_with_grad(
    const RewardModel& rm, std::span<const double> values, int frames, int dims,
    int condition, Dimension d) {
  if (frames < 3 || dims < 1 ||
      values.size() != static_cast<std::size_t>(frames) * dims) {
    throw ShapeError("bad value buffer shape for score_with_grad");
  }
  diffusion::Trajectory y = diffusion::make_trajectory(frames, dims, condition);
  y.values.assign(values.begin(), values.end());

  std::vector<double> grad(values.size(), 0.0);
  auto idx = [dims](int f, int dd) {
    return static_cast<std::size_t>(f) * dims + dd;
  };

  switch (d) {
    case Dimension::temporal_consistency: {
      double scale = 1.0 / (frames - 2);
      for (int f = 1; f + 1 < frames; ++f) {
        for (int dd = 0; dd < dims; ++dd) {
          double w = y.at(f + 1, dd) - 2.0 * y.at(f, dd) + y.at(f - 1, dd);
          grad[idx(f + 1, dd)] += -2.0 * w * scale;
          grad[idx(f, dd)] += 4.0 * w * scale;
          grad[idx(f - 1, dd)] += -2.0 * w * scale;
        }
      }
      return {temporal_consistency_value(y), std::move(grad)};
    }
    case Dimension::dynamic_degree: {
      double scale = 1.0 / (frames - 1);
      for (int f = 0; f + 1 < frames; ++f) {
        double s = kNormEps * kNormEps;
        for (int dd = 0; dd < dims; ++dd) {
          double delta = y.at(f + 1, dd) - y.at(f, dd);
          s += delta * delta;
        }
        double r = std::sqrt(s);
        for (int dd = 0; dd < dims; ++dd) {
          double delta = y.at(f + 1, dd) - y.at(f, dd);
          grad[idx(f + 1, dd)] += scale * delta / r;
          grad[idx(f, dd)] -= scale * delta / r;
        }
      }
      return {dynamic_degree_value(y), std::move(grad)};
    }
    case Dimension::visual_quality: {
      const diffusion::Trajectory& tmpl = template_for(rm, condition, y);
      double scale = 2.0 / frames;
      for (std::size_t i = 0; i < grad.size(); ++i) {
        grad[i] = -scale * (y.values[i] - tmpl.values[i]);
      }
      return {visual_quality_value(y, tmpl), std::move(grad)};
    }
    case Dimension::alignment: {
      const diffusion::Trajectory& tmpl = template_for(rm, condition, y);
      const std::size_t n = y.values.size();
      double mu_y = 0.0, mu_t = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        mu_y += y.values[i];
        mu_t += tmpl.values[i];
      }
      mu_y /= static_cast<double>(n);
      mu_t /= static_cast<double>(n);
      std::vector<double> a(n), b(n);
      double s = 0.0, p2 = 0.0, q2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        a[i] = y.values[i] - mu_y;
        b[i] = tmpl.values[i] - mu_t;
        s += a[i] * b[i];
        p2 += a[i] * a[i];
        q2 += b[i] * b[i];
      }
      if (p2 < 1e-24 || q2 < 1e-24) return {0.0, std::move(grad)};
      double p = std::sqrt(p2), q = std::sqrt(q2);
      double v = s / (p * q);
      // d v / d a_i, then project out the mean (centering is linear).
      double mean_da = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        grad[i] = b[i] / (p * q) - s * a[i] / (p2 * p * q);
        mean_da += grad[i];
      }
      mean_da /= static_cast<double>(n);
      for (double& g : grad) g -= mean_da;
      return {v, std::move(grad)};
    }
    case Dimension::global: {
      double wsum = 0.0;
      for (double w : rm.weights) wsum += w;
      double value = 0.0;
      const Dimension dims4[4] = {Dimension::visual_quality,
                                  Dimension::temporal_consistency,
                                  Dimension::dynamic_degree, Dimension::alignment};
      for (int i = 0; i < 4; ++i) {
        auto [v, g] = score_with_grad(rm, values, frames, dims, condition, dims4[i]);
        double w = rm.weights[static_cast<std::size_t>(i)] / wsum;
        value += w * v;
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += w * g[k];
      }
      return {value, std::move(grad)};
    }
  }
  throw ConfigError("unhandled dimension in score_with_grad");
}

void normalize_global(std::span<RewardVector> set) {
  if (set.size() < 2) {
    for (auto& rv : set) rv.global = 0.0;
    return;
  }
  const double n = static_cast<double>(set.size());
  std::array<double, 4> mu{};
  std::array<double, 4> sd{};
  for (const auto& rv : set) {
    const auto raw = rv.raw();
    for (int i = 0; i < 4; ++i) mu[static_cast<std::size_t>(i)] += raw[static_cast<std::size_t>(i)];
  }
  for (auto& m : mu) m /= n;
  for (const auto& rv : set) {
    const auto raw = rv.raw();
    for (int i = 0; i < 4; ++i) {
      double d = raw[static_cast<std::size_t>(i)] - mu[static_cast<std::size_t>(i)];
      sd[static_cast<std::size_t>(i)] += d * d;
    }
  }
  for (auto& s : sd) s = std::sqrt(s / n);
  for (auto& rv : set) {
    const auto raw = rv.raw();
    double acc = 0.0;
    for (int i = 0; i < 4; ++i) {
      double z = sd[static_cast<std::size_t>(i)] > 1e-12
                     ? (raw[static_cast<std::size_t>(i)] - mu[static_cast<std::size_t>(i)]) /
                           sd[static_cast<std::size_t>(i)]
                     : 0.0;
      acc += z;
    }
    rv.global = acc / 4.0;
  }
}

int rank_of_best(const RankingRecord& rec) {
  if (rec.scores.size() < 2) throw ConfigError("ranking needs >= 2 candidates");
  if (rec.best_index < 0 ||
      rec.best_index >= static_cast<int>(rec.scores.size())) {
    throw ConfigError("best_index outside the candidate set");
  }
  for (double s : rec.scores) {
    if (!std::isfinite(s)) throw NumericError("non-finite ranking score");
  }
  double best_score = rec.scores[static_cast<std::size_t>(rec.best_index)];
  int rank = 1;
  for (int j = 0; j < static_cast<int>(rec.scores.size()); ++j) {
    double s = rec.scores[static_cast<std::size_t>(j)];
    if (s > best_score) rank += 1;
    if (s == best_score && j < rec.best_index) rank += 1;
  }
  return rank;
}

double mrr(const std::vector<RankingRecord>& records) {
  if (records.empty()) throw ConfigError("mrr over empty record list");
  double acc = 0.0;
  for (const auto& rec : records) acc += 1.0 / rank_of_best(rec);
  return acc / static_cast<double>(records.size());
}

double recall_at_k(const std::vector<RankingRecord>& records, int k) {
  if (records.empty()) throw ConfigError("recall over empty record list");
  int hits = 0;
  for (const auto& rec : records) {
    if (k < 1 || k > static_cast<int>(rec.scores.size())) {
      throw ConfigError("k outside [1, N]");
    }
    if (rank_of_best(rec) <= k) hits += 1;
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

int oracle_best_index(const CandidateSet& set, const diffusion::Trajectory& tmpl) {
  if (set.candidates.size() < 2) throw ConfigError("candidate set too small");
  int best = 0;
  double best_d = 0.0;
  for (std::size_t i = 0; i < set.candidates.size(); ++i) {
    const auto& y = set.candidates[i];
    if (y.values.size() != tmpl.values.size()) {
      throw ShapeError("candidate/template shape mismatch");
    }
    double d = 0.0;
    for (std::size_t k = 0; k < y.values.size(); ++k) {
      double diff = y.values[k] - tmpl.values[k];
      d += diff * diff;
    }
    if (i == 0 || d < best_d) {
      best = static_cast<int>(i);
      best_d = d;
    }
  }
  return best;
}

MetricBundle evaluate_reward_model(const Scorer& scorer,
                                   const std::vector<CandidateSet>& sets,
                                   const std::vector<int>& oracle_best) {
  if (sets.empty()) throw ConfigError("no candidate sets");
  if (sets.size() != oracle_best.size()) {
    throw ShapeError("oracle_best size does not match sets");
  }
  std::vector<RankingRecord> records;
  records.reserve(sets.size());
  for (std::size_t q = 0; q < sets.size(); ++q) {
    const CandidateSet& set = sets[q];
    if (set.candidates.size() < 4) {
      throw ConfigError("candidate sets need >= 4 candidates");
    }
    RankingRecord rec;
    rec.best_index = oracle_best[q];
    rec.scores.reserve(set.candidates.size());
    for (const auto& y : set.candidates) {
      rec.scores.push_back(scorer(y, set.condition));
    }
    records.push_back(std::move(rec));
  }
  MetricBundle mb;
  mb.mrr = mrr(records);
  mb.recall1 = recall_at_k(records, 1);
  mb.recall2 = recall_at_k(records, 2);
  mb.recall4 = recall_at_k(records, 4);
  return mb;
}

MetricBundle evaluate_reward_model(const RewardModel& rm,
                                   const std::vector<CandidateSet>& sets,
                                   const std::vector<int>& oracle_best) {
  if (rm.dimension != Dimension::global) {
    Scorer s = [&rm](const diffusion::Trajectory& y, int c) {
      return select_score(score(rm, y, c), rm.dimension);
    };
    return evaluate_reward_model(s, sets, oracle_best);
  }
  // Global scores are z-scored within each candidate set, so the per-set
  // vectors have to be built before ranking.
  if (sets.empty()) throw ConfigError("no candidate sets");
  if (sets.size() != oracle_best.size()) {
    throw ShapeError("oracle_best size does not match sets");
  }
  std::vector<RankingRecord> records;
  records.reserve(sets.size());
  for (std::size_t q = 0; q < sets.size(); ++q) {
    const CandidateSet& set = sets[q];
    if (set.candidates.size() < 4) {
      throw ConfigError("candidate sets need >= 4 candidates");
    }
    std::vector<RewardVector> rvs;
    rvs.reserve(set.candidates.size());
    for (const auto& y : set.candidates) rvs.push_back(score(rm, y, set.condition));
    normalize_global(rvs);
    RankingRecord rec;
    rec.best_index = oracle_best[q];
    for (const auto& rv : rvs) rec.scores.push_back(rv.global);
    records.push_back(std::move(rec));
  }
  MetricBundle mb;
  mb.mrr = mrr(records);
  mb.recall1 = recall_at_k(records, 1);
  mb.recall2 = recall_at_k(records, 2);
  mb.recall4 = recall_at_k(records, 4);
  return mb;
}

double per_frame_manifold_score(const diffusion::Trajectory& y,
                                const diffusion::Trajectory& tmpl) {
  check_shape(y);
  if (y.dims != tmpl.dims) throw ShapeError("dim mismatch");
  double acc = 0.0;
  for (int f = 0; f < y.frames; ++f) {
    double best = 0.0;
    for (int g = 0; g < tmpl.frames; ++g) {
      double d = 0.0;
      for (int dd = 0; dd < y.dims; ++dd) {
        double diff = y.at(f, dd) - tmpl.at(g, dd);
        d += diff * diff;
      }
      if (g == 0 || d < best) best = d;
    }
    acc += best;
  }
  return -acc / y.frames;
}

}  // namespace vpo::rewards
