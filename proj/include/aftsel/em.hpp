#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "aftsel/augment.hpp"
#include "aftsel/km.hpp"
#include "aftsel/loss.hpp"
#include "aftsel/solver.hpp"
#include "aftsel/types.hpp"
#include "aftsel/weighted_median.hpp"

namespace aftsel {

// ||theta^(m) - theta^(k)||_inf < 1e-5 for some earlier k stops the EM; the
// iterate sequence can oscillate, and any member of a tight cycle will do.
inline constexpr double kEmTolerance = 1e-5;

struct EmOptions {
  int max_iterations = 200;
  int history_window = 50;
  SolverOptions solver;
};

struct FitResult {
  Theta theta;
  bool converged = false;
  int iterations = 0;
  std::vector<Theta> history;            // theta^(1..m); history[0] is iteration 1
  std::optional<int> matched_iteration;  // k with ||theta^(m) - theta^(k)|| < tol
  LossSpec loss;
  PenaltySpec penalty;
  int total_sweeps = 0;
};

// Scans k = m-1 down to m-W, then k = 0 (the init also counts as a partner).
// Returns the matched k, or nullopt.
inline std::optional<int> find_oscillation_match(const std::vector<Theta>& history,
                                                 const Theta& init, const Theta& current,
                                                 int m, int window, double tol = kEmTolerance) {
  const int lo = std::max(1, m - window);
  for (int k = m - 1; k >= lo; --k) {
    if (current.sup_distance(history[static_cast<std::size_t>(k - 1)]) < tol) return k;
  }
  if (current.sup_distance(init) < tol) return 0;
  return std::nullopt;
}

inline Theta default_init(const SurvivalDataset& data, const LossSpec& loss) {
  data.validate();
  std::vector<double> yu;
  for (Index i = 0; i < data.n(); ++i)
    if (data.delta[i] == 1) yu.push_back(data.y[i]);
  if (yu.empty()) throw std::invalid_argument("default_init: no uncensored observations");
  Theta theta = Theta::zero(data.p());
  if (loss.kind == LossKind::Squared) {
    double s = 0.0;
    for (double v : yu) s += v;
    theta.alpha = s / static_cast<double>(yu.size());
  } else {
    std::vector<double> w(yu.size(), 1.0);
    theta.alpha = weighted_median(yu, w);
  }
  return theta;
}

// Algorithm B: alternate augmentation (E-step) and the penalized solver
// matching the loss (M-step), warm-started at theta^(m-1).
inline FitResult em_fit(const SurvivalDataset& data, const LossSpec& loss,
                        const PenaltySpec& penalty, const Theta& init,
                        const EmOptions& opts = {}) {
  data.validate();
  if (!init.finite() || init.p() != data.p())
    throw std::invalid_argument("em_fit: invalid init");
  if (penalty.kind == PenaltyKind::SparseGroupLasso && !data.has_groups() && penalty.lambda1 > 0)
    throw std::invalid_argument("em_fit: SGL penalty needs group labels");
  if (opts.max_iterations < 1 || opts.history_window < 1)
    throw std::invalid_argument("em_fit: bad options");

  FitResult res;
  res.loss = loss;
  res.penalty = penalty;
  Theta prev = init;
  for (int m = 1; m <= opts.max_iterations; ++m) {
    const AugmentedDataset aug = augment(data, prev);
    SolverOptions so = opts.solver;
    if (loss.kind == LossKind::Tukey) so.tukey_init_huber = (m == 1) && opts.solver.tukey_init_huber;
    SolveResult step;
    try {
      step = solve_penalized(aug, loss, penalty, data.groups, prev, so);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("em_fit: M-step failed at iteration " + std::to_string(m) +
                               ": " + e.what());
    }
    res.history.push_back(step.theta);
    res.total_sweeps += step.sweeps;
    res.iterations = m;
    const auto match = find_oscillation_match(res.history, init, step.theta, m, opts.history_window);
    if (match) {
      res.converged = true;
      res.matched_iteration = match;
      res.theta = step.theta;
      return res;
    }
    prev = step.theta;
  }
  res.theta = prev;
  return res;
}

// Algorithm A. Imputes censored responses by their Kaplan-Meier tail
// expectation, then updates theta by least squares on the centered design.
inline FitResult buckley_james(const SurvivalDataset& data, const Theta& init,
                               const EmOptions& opts = {}) {
  data.validate();
  const Index n = data.n(), p = data.p();
  if (!(n > p + 1)) throw std::invalid_argument("buckley_james: needs n > p + 1");
  if (!init.finite() || init.p() != p) throw std::invalid_argument("buckley_james: invalid init");

  Vector xbar = Vector::Zero(p);
  for (Index i = 0; i < n; ++i) xbar += data.x.row(i).transpose();
  xbar /= static_cast<double>(n);
  Matrix xc = data.x.rowwise() - xbar.transpose();
  Matrix G;
  if (p > 0) {
    G = xc.transpose() * xc;
    Eigen::SelfAdjointEigenSolver<Matrix> es(G);
    const double emax = es.eigenvalues().maxCoeff();
    if (!(emax > 0) || es.eigenvalues().minCoeff() <= 1e-12 * emax)
      throw std::runtime_error(
          "buckley_james: centered Gram matrix is rank-deficient; use a penalized fit");
  }

  FitResult res;
  res.loss = LossSpec::squared();
  res.penalty = PenaltySpec::lasso(0.0);
  Theta prev = init;
  Vector imputed(n);
  for (int m = 1; m <= opts.max_iterations; ++m) {
    const KMResidualDistribution kmd = residual_distribution(data, prev);
    for (Index r = 0; r < n; ++r) {
      const Index row = kmd.order[r];
      if (kmd.delta_eff[r]) {
        imputed[row] = data.y[row];
      } else {
        double e_tail = 0.0;
        for (const auto& [u, w] : tail_weights(kmd, r)) e_tail += w * kmd.e[u];
        imputed[row] = e_tail + prev.predict(data.x.row(row));
      }
    }
    Theta next = Theta::zero(p);
    if (p > 0) next.beta = Eigen::LDLT<Matrix>(G).solve(xc.transpose() * imputed);
    next.alpha = imputed.mean() - xbar.dot(next.beta);

    res.history.push_back(next);
    res.iterations = m;
    const auto match = find_oscillation_match(res.history, init, next, m, opts.history_window);
    if (match) {
      res.converged = true;
      res.matched_iteration = match;
      res.theta = next;
      return res;
    }
    prev = next;
  }
  res.theta = prev;
  return res;
}

// Intercept-only fast path. With p = 0 the residual ordering, the KM weights
// and the tail weights do not depend on alpha (residuals shift by a
// constant), so the whole EM collapses to one M-step on a fixed aggregated
// sample: uncensored rank u carries weight 1 + m_u * sum_{censored i<u} 1/S_i.
inline double location_fit(const Vector& y, const IntVector& delta, const LossSpec& loss,
                           const SolverOptions& opts = {}) {
  SurvivalDataset d;
  d.y = y;
  d.delta = delta;
  d.x = Matrix::Zero(y.size(), 0);
  const KMResidualDistribution kmd = residual_distribution(d, Theta::zero(0));
  const Index n = y.size();
  Vector suffix(n + 1);
  suffix[n] = 0.0;
  for (Index r = n - 1; r >= 0; --r) suffix[r] = suffix[r + 1] + kmd.m[r];

  std::vector<double> vals, wts;
  double inv_tail_acc = 0.0;
  for (Index r = 0; r < n; ++r) {
    if (kmd.delta_eff[r]) {
      vals.push_back(kmd.e[r]);  // equals y at the ordered row (theta = 0)
      wts.push_back(1.0 + kmd.m[r] * inv_tail_acc);
    } else {
      inv_tail_acc += 1.0 / suffix[r + 1];
    }
  }

  const Index K = static_cast<Index>(vals.size());
  double sw = 0.0, mean = 0.0;
  for (Index k = 0; k < K; ++k) {
    sw += wts[k];
    mean += wts[k] * vals[k];
  }
  mean /= sw;
  if (loss.kind == LossKind::Squared) return mean;
  if (loss.kind == LossKind::Absolute) return weighted_median(vals, wts);

  auto iterate = [&](const LossSpec& ls, double a0) {
    WeightedMedianWorkspace ws;
    std::vector<double> r(static_cast<std::size_t>(K));
    double a = a0;
    for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
      for (Index k = 0; k < K; ++k) r[static_cast<std::size_t>(k)] = vals[k] - a;
      double dd = opts.scale_update == ScaleUpdate::Frozen && opts.frozen_d > 0
                      ? opts.frozen_d
                      : wmad_scale(r.data(), wts.data(), r.size(), ws).d;
      double acc = 0.0;
      for (Index k = 0; k < K; ++k) acc += wts[k] * loss_derivative(ls, r[k] / dd);
      const double step = dd * acc / (2.0 * sw);
      a += step;
      if (std::abs(step) < opts.coord_tol) break;
    }
    return a;
  };
  WeightedMedianWorkspace ws0;
  const double start = weighted_median(vals, wts);
  if (loss.kind == LossKind::Huber) return iterate(loss, start);
  return iterate(loss, iterate(LossSpec::huber(), start));
}

}  // namespace aftsel
