#pragma once

// Independent oracles used across the test suites. Everything here is kept
// deliberately separate from the library implementation paths it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "vpo/nn.hpp"

namespace testutil {

// Central finite difference d loss / d p at the current parameter values.
// `loss` must re-evaluate the full pipeline from the perturbed parameters.
inline double central_diff(double& p, const std::function<double()>& loss,
                           double h) {
  double saved = p;
  p = saved + h;
  double up = loss();
  p = saved - h;
  double down = loss();
  p = saved;
  return (up - down) / (2.0 * h);
}

struct GradCheckResult {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  bool ok = true;
  int bad_count = 0;
};

// Compares every analytic gradient entry in `tape` against central finite
// differences of `loss` over the parameters of `net`.
inline GradCheckResult check_gradients(vpo::nn::DenseNet& net,
                                       const vpo::nn::GradientTape& tape,
                                       const std::function<double()>& loss,
                                       double rel_tol = 1e-4,
                                       double abs_tol = 1e-7) {
  GradCheckResult res;
  auto visit = [&](double& p, double analytic) {
    double h = 1e-6 * std::max(1.0, std::abs(p));
    double fd = central_diff(p, loss, h);
    double abs_err = std::abs(fd - analytic);
    double denom = std::max(std::abs(fd), std::abs(analytic));
    double rel_err = denom > 0.0 ? abs_err / denom : 0.0;
    res.max_abs_err = std::max(res.max_abs_err, abs_err);
    if (abs_err > abs_tol) {
      res.max_rel_err = std::max(res.max_rel_err, rel_err);
      if (rel_err > rel_tol) {
        res.ok = false;
        res.bad_count += 1;
      }
    }
  };
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    for (std::size_t i = 0; i < net.layers[l].w.size(); ++i) {
      visit(net.layers[l].w[i], tape.layers[l].dw[i]);
    }
    for (std::size_t i = 0; i < net.layers[l].b.size(); ++i) {
      visit(net.layers[l].b[i], tape.layers[l].db[i]);
    }
  }
  return res;
}

// Scalar Adam recurrence, evolved independently of the library optimizer.
struct ScalarAdam {
  double m = 0.0;
  double v = 0.0;
  long t = 0;

  double update(double g, const vpo::nn::AdamConfig& c) {
    t += 1;
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    double mhat = m / (1.0 - std::pow(c.beta1, static_cast<double>(t)));
    double vhat = v / (1.0 - std::pow(c.beta2, static_cast<double>(t)));
    return -c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
};

// Brute-force rank by a full stable sort on (-score, index).
inline int brute_force_rank(const std::vector<double>& scores, int best) {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)]) {
      return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    }
    return a < b;
  });
  for (std::size_t pos = 0; pos < idx.size(); ++pos) {
    if (idx[pos] == best) return static_cast<int>(pos) + 1;
  }
  return -1;
}

}  // namespace testutil
