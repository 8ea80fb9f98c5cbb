#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "test_util.hpp"
#include "vpo/errors.hpp"
#include "vpo/rewards.hpp"

using namespace vpo;
using rewards::Dimension;

namespace {

rewards::RewardModel default_rm(int frames = 16, int dims = 2, int classes = 4,
                                Dimension dim = Dimension::temporal_consistency) {
  auto specs = data::make_class_specs(classes, dims, 2024);
  return rewards::make_reward_model(specs, frames, dims, dim);
}

diffusion::Trajectory traj_from(const std::vector<std::vector<double>>& frames,
                                int condition = 0) {
  auto y = diffusion::make_trajectory(static_cast<int>(frames.size()),
                                      static_cast<int>(frames[0].size()), condition);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t d = 0; d < frames[f].size(); ++d) {
      y.at(static_cast<int>(f), static_cast<int>(d)) = frames[f][d];
    }
  }
  return y;
}

}  // namespace

TEST_CASE("score: constant trajectory maximizes consistency, zero motion") {
  auto rm = default_rm(5, 2);
  auto y = traj_from({{0.3, -0.2}, {0.3, -0.2}, {0.3, -0.2}, {0.3, -0.2}, {0.3, -0.2}});
  auto rv = rewards::score(rm, y, 0);
  CHECK(rv.temporal_consistency == 0.0);
  CHECK(rv.dynamic_degree == doctest::Approx(0.0).epsilon(0.0).scale(1e-7));
}

TEST_CASE("score: straight line has zero second difference and speed ||v||") {
  auto rm = default_rm(6, 2);
  std::vector<std::vector<double>> frames;
  double vx = 0.3, vy = -0.4;  // ||v|| = 0.5
  for (int f = 0; f < 6; ++f) frames.push_back({vx * f, vy * f});
  auto rv = rewards::score(rm, traj_from(frames), 0);
  CHECK(rv.temporal_consistency == doctest::Approx(0.0).epsilon(0.0).scale(1e-12));
  CHECK(rv.dynamic_degree == doctest::Approx(0.5).epsilon(1e-7));
}

TEST_CASE("score: 1-D alternating zigzag evaluates to -4") {
  auto specs = data::make_class_specs(2, 1, 5);
  auto rm = rewards::make_reward_model(specs, 6, 1, Dimension::temporal_consistency);
  auto y = traj_from({{0.0}, {1.0}, {0.0}, {1.0}, {0.0}, {1.0}});
  // every interior second difference is +-2, squared 4
  auto rv = rewards::score(rm, y, 0);
  CHECK(rv.temporal_consistency == doctest::Approx(-4.0).epsilon(1e-12));
}

TEST_CASE("score: the noiseless template scores alignment 1 and quality 0") {
  auto specs = data::make_class_specs(4, 2, 2024);
  auto rm = rewards::make_reward_model(specs, 16, 2, Dimension::alignment);
  for (int c = 0; c < 4; ++c) {
    auto tmpl = data::class_template(specs[static_cast<std::size_t>(c)], 16, 2);
    auto rv = rewards::score(rm, tmpl, c);
    CHECK(rv.alignment == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rv.visual_quality == doctest::Approx(0.0).epsilon(0.0).scale(1e-12));
  }
}

TEST_CASE("score: too few frames raises ShapeError") {
  auto rm = default_rm(16, 2);
  diffusion::Trajectory y;
  y.frames = 2;
  y.dims = 2;
  y.values = {0, 0, 0, 0};
  CHECK_THROWS_AS(rewards::score(rm, y, 0), ShapeError);
}

TEST_CASE("score: pure function of the values") {
  auto rm = default_rm();
  auto specs = data::make_class_specs(4, 2, 2024);
  auto y = data::sample_trajectory(specs[2], 16, 2, 0.1, 7);
  auto a = rewards::score(rm, y, 2);
  auto copy = y;
  copy.seed = 123456;  // provenance must not matter
  auto b = rewards::score(rm, copy, 2);
  CHECK(a.temporal_consistency == b.temporal_consistency);
  CHECK(a.visual_quality == b.visual_quality);
  CHECK(a.dynamic_degree == b.dynamic_degree);
  CHECK(a.alignment == b.alignment);
}

TEST_CASE("score properties on random trajectories") {
  auto rm = default_rm(10, 2);
  Rng rng(404);
  for (int trial = 0; trial < 50; ++trial) {
    auto y = diffusion::make_trajectory(10, 2, trial % 4);
    for (double& v : y.values) v = 3.0 * rng.normal();
    auto rv = rewards::score(rm, y, y.condition);
    CHECK(rv.temporal_consistency <= 0.0);
    CHECK(rv.dynamic_degree >= 0.0);
    CHECK(rv.alignment >= -1.0 - 1e-12);
    CHECK(rv.alignment <= 1.0 + 1e-12);
    CHECK(rv.visual_quality <= 0.0);
  }
}

TEST_CASE("score_with_grad: every dimension matches value-space finite differences") {
  auto rm = default_rm(8, 2);
  Rng rng(31337);
  std::vector<double> vals(16);
  for (double& v : vals) v = rng.normal();
  for (Dimension dim : {Dimension::visual_quality, Dimension::temporal_consistency,
                        Dimension::dynamic_degree, Dimension::alignment,
                        Dimension::global}) {
    auto [v0, grad] = rewards::score_with_grad(rm, vals, 8, 2, 1, dim);
    CHECK(std::isfinite(v0));
    for (std::size_t i = 0; i < vals.size(); ++i) {
      double h = 1e-6;
      double saved = vals[i];
      vals[i] = saved + h;
      double up = rewards::score_with_grad(rm, vals, 8, 2, 1, dim).first;
      vals[i] = saved - h;
      double down = rewards::score_with_grad(rm, vals, 8, 2, 1, dim).first;
      vals[i] = saved;
      double fd = (up - down) / (2.0 * h);
      CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
    }
  }
}

TEST_CASE("normalize_global: z-scored dimensions averaged by hand") {
  std::vector<rewards::RewardVector> set(2);
  set[0].visual_quality = -1.0;
  set[0].temporal_consistency = -2.0;
  set[0].dynamic_degree = 0.5;
  set[0].alignment = 0.8;
  set[1].visual_quality = -3.0;
  set[1].temporal_consistency = -1.0;
  set[1].dynamic_degree = 0.5;  // zero spread -> contributes 0
  set[1].alignment = 0.2;
  rewards::normalize_global(set);
  // per-dim z for two points is +-1 except the degenerate dim
  CHECK(set[0].global == doctest::Approx((1.0 - 1.0 + 0.0 + 1.0) / 4.0));
  CHECK(set[1].global == doctest::Approx((-1.0 + 1.0 + 0.0 - 1.0) / 4.0));
}

TEST_CASE("mrr: ground truth always first gives 1.0") {
  std::vector<rewards::RankingRecord> recs;
  for (int q = 0; q < 5; ++q) {
    recs.push_back({{9.0, 1.0, 2.0, 3.0}, 0});
  }
  CHECK(rewards::mrr(recs) == doctest::Approx(1.0));
}

TEST_CASE("mrr: ranks 2 and 4 average to 0.375") {
  std::vector<rewards::RankingRecord> recs;
  recs.push_back({{5.0, 4.0, 1.0, 0.0}, 1});        // rank 2
  recs.push_back({{5.0, 4.0, 3.0, 2.0}, 3});        // rank 4
  CHECK(rewards::mrr(recs) == doctest::Approx(0.375));
}

TEST_CASE("mrr: single query ranked last among 8 gives 0.125") {
  std::vector<rewards::RankingRecord> recs;
  rewards::RankingRecord r;
  r.scores = {8, 7, 6, 5, 4, 3, 2, 1};
  r.best_index = 7;
  recs.push_back(r);
  CHECK(rewards::mrr(recs) == doctest::Approx(0.125));
}

TEST_CASE("mrr: ties break toward the lower index") {
  std::vector<rewards::RankingRecord> recs;
  recs.push_back({{1.0, 1.0, 1.0}, 0});  // wins its ties -> rank 1
  CHECK(rewards::mrr(recs) == doctest::Approx(1.0));
  recs.clear();
  recs.push_back({{1.0, 1.0, 1.0}, 2});  // loses both ties -> rank 3
  CHECK(rewards::mrr(recs) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("mrr/recall: empty or out-of-range input rejected") {
  std::vector<rewards::RankingRecord> empty;
  CHECK_THROWS_AS(rewards::mrr(empty), ConfigError);
  CHECK_THROWS_AS(rewards::recall_at_k(empty, 1), ConfigError);
  std::vector<rewards::RankingRecord> recs = {{{1.0, 2.0}, 0}};
  CHECK_THROWS_AS(rewards::recall_at_k(recs, 0), ConfigError);
  CHECK_THROWS_AS(rewards::recall_at_k(recs, 3), ConfigError);
}

TEST_CASE("recall_at_k: everything is top-N, hand-counted top-2") {
  std::vector<rewards::RankingRecord> recs;
  recs.push_back({{5.0, 9.0, 1.0, 0.0}, 0});  // rank 2
  recs.push_back({{5.0, 9.0, 6.0, 0.0}, 0});  // rank 3
  CHECK(rewards::recall_at_k(recs, 4) == doctest::Approx(1.0));
  CHECK(rewards::recall_at_k(recs, 2) == doctest::Approx(0.5));
  std::vector<rewards::RankingRecord> top = {{{9.0, 1.0}, 0}};
  CHECK(rewards::recall_at_k(top, 1) == doctest::Approx(1.0));
}

TEST_CASE("mrr and recall agree exactly with the brute-force sort oracle") {
  Rng rng(515151);
  std::vector<rewards::RankingRecord> recs;
  double inv_rank_sum = 0.0;
  std::vector<int> hits(9, 0);
  for (int q = 0; q < 1000; ++q) {
    int n = 2 + rng.uniform_int(7);
    rewards::RankingRecord rec;
    for (int i = 0; i < n; ++i) {
      // small integer scores force frequent ties
      rec.scores.push_back(static_cast<double>(rng.uniform_int(5)));
    }
    rec.best_index = rng.uniform_int(n);
    int oracle = testutil::brute_force_rank(rec.scores, rec.best_index);
    CHECK(rewards::rank_of_best(rec) == oracle);
    inv_rank_sum += 1.0 / oracle;
    for (int k = 1; k <= 2; ++k) {
      if (oracle <= k) hits[static_cast<std::size_t>(k)] += 1;
    }
    recs.push_back(std::move(rec));
  }
  CHECK(rewards::mrr(recs) == doctest::Approx(inv_rank_sum / 1000.0).epsilon(1e-15));
  CHECK(rewards::recall_at_k(recs, 1) == doctest::Approx(hits[1] / 1000.0));
  CHECK(rewards::recall_at_k(recs, 2) == doctest::Approx(hits[2] / 1000.0));
}

TEST_CASE("evaluate_reward_model: the oracle scorer agrees with itself") {
  auto specs = data::make_class_specs(4, 2, 2024);
  auto rm = default_rm();
  Rng rng(626262);
  std::vector<rewards::CandidateSet> sets;
  std::vector<int> best;
  for (int q = 0; q < 40; ++q) {
    rewards::CandidateSet set;
    set.condition = q % 4;
    const auto& tmpl = rm.templates[static_cast<std::size_t>(set.condition)];
    for (int i = 0; i < 6; ++i) {
      auto y = tmpl;
      for (double& v : y.values) v += 0.2 * rng.normal();
      set.candidates.push_back(std::move(y));
    }
    best.push_back(rewards::oracle_best_index(set, tmpl));
    sets.push_back(std::move(set));
  }
  rewards::Scorer oracle = [&rm](const diffusion::Trajectory& y, int c) {
    const auto& tmpl = rm.templates[static_cast<std::size_t>(c)];
    double d = 0.0;
    for (std::size_t i = 0; i < y.values.size(); ++i) {
      double diff = y.values[i] - tmpl.values[i];
      d += diff * diff;
    }
    return -d;
  };
  auto mb = rewards::evaluate_reward_model(oracle, sets, best);
  CHECK(mb.mrr == doctest::Approx(1.0));
  CHECK(mb.recall1 == doctest::Approx(1.0));
  CHECK(mb.recall2 == doctest::Approx(1.0));
  CHECK(mb.recall4 == doctest::Approx(1.0));
}

TEST_CASE("evaluate_reward_model: random scorer lands at the permutation mean") {
  // brute-force expectation of 1/rank under a uniform permutation of 8
  double expected = 0.0;
  for (int r = 1; r <= 8; ++r) expected += 1.0 / r;
  expected /= 8.0;

  auto rm = default_rm(4, 1, 2);
  auto tmpl = rm.templates[0];
  Rng rng(737373);
  std::vector<rewards::CandidateSet> sets;
  std::vector<int> best;
  for (int q = 0; q < 2000; ++q) {
    rewards::CandidateSet set;
    set.condition = 0;
    for (int i = 0; i < 8; ++i) set.candidates.push_back(tmpl);
    best.push_back(q % 8);
    sets.push_back(std::move(set));
  }
  rewards::Scorer random_scorer = [&rng](const diffusion::Trajectory&, int) {
    return rng.uniform01();
  };
  auto mb = rewards::evaluate_reward_model(random_scorer, sets, best);
  CHECK(std::abs(mb.mrr - expected) <= 0.02);
}

TEST_CASE("evaluate_reward_model: smoothness-blind scorer loses to the "
          "temporal-consistency scorer on permuted-frame sets") {
  auto specs = data::make_class_specs(4, 2, 2024);
  auto rm = default_rm();
  Rng rng(848484);
  std::vector<rewards::CandidateSet> sets;
  std::vector<int> best;
  const int N = 8;
  for (int q = 0; q < 200; ++q) {
    int c = q % 4;
    const auto& tmpl = rm.templates[static_cast<std::size_t>(c)];
    rewards::CandidateSet set;
    set.condition = c;
    int gt_pos = rng.uniform_int(N);
    for (int i = 0; i < N; ++i) {
      auto y = tmpl;
      if (i != gt_pos) {
        // permute frames: same per-frame content, destroyed smoothness
        for (int f = y.frames - 1; f > 0; --f) {
          int g = rng.uniform_int(f + 1);
          for (int d = 0; d < y.dims; ++d) std::swap(y.at(f, d), y.at(g, d));
        }
      }
      for (double& v : y.values) v += 0.01 * rng.normal();
      set.candidates.push_back(std::move(y));
    }
    best.push_back(rewards::oracle_best_index(set, tmpl));
    sets.push_back(std::move(set));
  }
  rewards::RewardModel tc_rm = rm;
  tc_rm.dimension = Dimension::temporal_consistency;
  auto mb_tc = rewards::evaluate_reward_model(tc_rm, sets, best);

  rewards::Scorer frame_scorer = [&rm](const diffusion::Trajectory& y, int c) {
    return rewards::per_frame_manifold_score(
        y, rm.templates[static_cast<std::size_t>(c)]);
  };
  auto mb_frame = rewards::evaluate_reward_model(frame_scorer, sets, best);

  CHECK(mb_tc.mrr > mb_frame.mrr);
  CHECK(mb_tc.mrr - mb_frame.mrr > 0.3);  // decisive gap, not a coin flip
}

TEST_CASE("visual_quality decreases strictly with added noise (3 sigma)") {
  auto rm = default_rm();
  const auto& tmpl = rm.templates[1];
  Rng rng(959595);
  const int m = 400;
  std::vector<double> sigmas = {0.05, 0.1, 0.2};
  std::vector<double> means, ses;
  for (double s : sigmas) {
    double acc = 0.0, acc2 = 0.0;
    for (int i = 0; i < m; ++i) {
      auto y = tmpl;
      for (double& v : y.values) v += s * rng.normal();
      double vq = rewards::score(rm, y, 1).visual_quality;
      acc += vq;
      acc2 += vq * vq;
    }
    double mean = acc / m;
    double var = acc2 / m - mean * mean;
    means.push_back(mean);
    ses.push_back(std::sqrt(var / m));
  }
  for (std::size_t i = 0; i + 1 < means.size(); ++i) {
    CHECK(means[i] - means[i + 1] >
          3.0 * std::sqrt(ses[i] * ses[i] + ses[i + 1] * ses[i + 1]));
  }
}

TEST_CASE("ranking records import from the trajectory batch format") {
  auto rm = default_rm(8, 2);
  auto specs = data::make_class_specs(4, 2, 2024);
  Rng rng(1111);
  std::vector<diffusion::Trajectory> batch;
  for (int i = 0; i < 6; ++i) {
    auto y = data::sample_trajectory(specs[2], 8, 2, 0.1 + 0.05 * i, rng.next_u64());
    batch.push_back(std::move(y));
  }
  auto path = std::filesystem::temp_directory_path() / "vpo_rank_batch.txt";
  diffusion::save_trajectory_batch(batch, path.string());
  auto loaded = diffusion::load_trajectory_batch(path.string());
  std::filesystem::remove(path);

  rewards::CandidateSet set;
  set.condition = 2;
  set.candidates = loaded;
  int best = rewards::oracle_best_index(set, rm.templates[2]);
  rewards::RankingRecord rec;
  rec.best_index = best;
  for (const auto& y : set.candidates) {
    rec.scores.push_back(rewards::score(rm, y, 2).visual_quality);
  }
  CHECK(rewards::rank_of_best(rec) >= 1);
  CHECK(rewards::rank_of_best(rec) <= 6);
}
