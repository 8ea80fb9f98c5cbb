#pragma once

#include <array>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vpo/diffusion.hpp"
#include "vpo/toy_data.hpp"

namespace vpo::rewards {

enum class Dimension {
  visual_quality,
  temporal_consistency,
  dynamic_degree,
  alignment,
  global,
};

const char* dimension_name(Dimension d);
Dimension parse_dimension(const std::string& name);

// Per-dimension scores for one trajectory. The four dimension values are raw
// (unnormalized); `global` holds their weighted raw mean until
// normalize_global() replaces it with the within-candidate-set z-score mean.
struct RewardVector {
  double visual_quality = 0.0;
  double temporal_consistency = 0.0;
  double dynamic_degree = 0.0;
  double alignment = 0.0;
  double global = 0.0;

  double dim(Dimension d) const;
  std::array<double, 4> raw() const {
    return {visual_quality, temporal_consistency, dynamic_degree, alignment};
  }
};

// Deterministic, stateless scorer backed by the noiseless class templates.
//
//   temporal_consistency = -mean_f ||y_{f+1} - 2 y_f + y_{f-1}||^2
//   dynamic_degree       =  mean_f sqrt(||y_{f+1} - y_f||^2 + eps^2), eps=1e-8
//   visual_quality       = -mean_f ||y_f - template_f||^2
//   alignment            =  centered normalized cross-correlation with the
//                           class template, in [-1, 1]
struct RewardModel {
  Dimension dimension = Dimension::temporal_consistency;
  std::vector<diffusion::Trajectory> templates;  // one per class
  std::array<double, 4> weights = {1.0, 1.0, 1.0, 1.0};
};

RewardModel make_reward_model(const std::vector<data::ClassSpec>& specs,
                              int frames, int dims, Dimension dimension);

RewardVector score(const RewardModel& rm, const diffusion::Trajectory& y,
                   int condition);

double select_score(const RewardVector& rv, Dimension d);

// Value and gradient (w.r.t. the flattened frame values) of one dimension;
// for Dimension::global the weighted raw mean is used since there is no
// candidate set to normalize within.
std::pair<double, std::vector<double>> score_with_grad(
    const RewardModel& rm, std::span<const double> values, int frames, int dims,
    int condition, Dimension d);

// Z-scores the four raw dimensions within a candidate set and overwrites each
// entry's `global` with the mean of its z-scores.
void normalize_global(std::span<RewardVector> set);

// --- ranking metrics ---

struct RankingRecord {
  std::vector<double> scores;  // per candidate
  int best_index = 0;          // ground-truth preferred candidate
};

// 1-based rank of the ground-truth candidate under descending score order;
// ties are broken toward the lower index.
int rank_of_best(const RankingRecord& rec);

double mrr(const std::vector<RankingRecord>& records);
double recall_at_k(const std::vector<RankingRecord>& records, int k);

struct MetricBundle {
  double mrr = 0.0;
  double recall1 = 0.0;
  double recall2 = 0.0;
  double recall4 = 0.0;
};

struct CandidateSet {
  std::vector<diffusion::Trajectory> candidates;
  int condition = 0;
};

// Ground-truth stand-in for a human pick: the candidate closest to the
// noiseless class template (flattened L2, lowest index on ties).
int oracle_best_index(const CandidateSet& set, const diffusion::Trajectory& tmpl);

using Scorer = std::function<double(const diffusion::Trajectory&, int condition)>;

MetricBundle evaluate_reward_model(const Scorer& scorer,
                                   const std::vector<CandidateSet>& sets,
                                   const std::vector<int>& oracle_best);

// RewardModel overload; Dimension::global is z-scored within each set.
MetricBundle evaluate_reward_model(const RewardModel& rm,
                                   const std::vector<CandidateSet>& sets,
                                   const std::vector<int>& oracle_best);

// Order-free per-frame scorer (the image-style baseline): negative mean over
// frames of the squared distance to the *nearest* template frame. Blind to
// frame ordering by construction.
double per_frame_manifold_score(const diffusion::Trajectory& y,
                                const diffusion::Trajectory& tmpl);

}  // namespace vpo::rewards
