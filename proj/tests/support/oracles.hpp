// Independent brute-force oracles used only by the test suites. Each one
// recomputes a quantity through a different route than the library:
//  - product-limit KM weights via risk-set counting
//  - the LAD-lasso linear program (artificial-variable form) via a dense
//    two-phase simplex
//  - penalized objectives via (accelerated) proximal gradient descent
//  - per-coordinate updates via grid search
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "aftsel/aftsel.hpp"

namespace oracle {

using aftsel::AugmentedDataset;
using aftsel::Index;
using aftsel::LossSpec;
using aftsel::Matrix;
using aftsel::Theta;
using aftsel::Vector;

// --------------------------------------------------------------------------
// Kaplan-Meier via risk sets: S(t) = prod_{i: e_i <= t, d_i = 1} (1 - 1/#R(e_i))
// with R(t) = {j : e_j >= t}; the weight on an event is the drop in S there.
// Assumes distinct residuals (generic position).
inline std::vector<double> brute_km_weights(const std::vector<double>& e,
                                            const std::vector<int>& delta_eff) {
  const std::size_t n = e.size();
  std::vector<double> m(n, 0.0);
  double surv = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!delta_eff[i]) continue;
    std::size_t risk = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (e[j] >= e[i]) ++risk;
    const double next = surv * (1.0 - 1.0 / static_cast<double>(risk));
    m[i] = surv - next;
    surv = next;
  }
  return m;
}

// --------------------------------------------------------------------------
// brute-force weighted median: evaluate sum w|v-u| at every data value
inline double brute_weighted_median(const std::vector<double>& v, const std::vector<double>& w) {
  double best_u = v.front(), best_obj = std::numeric_limits<double>::infinity();
  std::vector<double> cand = v;
  std::sort(cand.begin(), cand.end());
  for (double u : cand) {
    double obj = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) obj += w[k] * std::abs(v[k] - u);
    if (obj < best_obj - 1e-15 || (std::abs(obj - best_obj) <= 1e-15 && u < best_u)) {
      best_obj = obj;
      best_u = u;
    }
  }
  return best_u;
}

// --------------------------------------------------------------------------
// dense two-phase simplex for min c'x s.t. A x <= b, x >= 0 (test scale only)
class SimplexLP {
 public:
  // returns the optimal objective; fills x with the optimizer
  static double solve(const Matrix& A, const Vector& b, const Vector& c, Vector& x) {
    const Index m = A.rows(), n = A.cols();
    // equality form: for b_i >= 0 add slack +1; for b_i < 0 negate the row
    // (slack becomes -1) and add an artificial +1
    std::vector<Index> art_rows;
    for (Index i = 0; i < m; ++i)
      if (b[i] < 0) art_rows.push_back(i);
    const Index n_art = static_cast<Index>(art_rows.size());
    const Index total = n + m + n_art;

    Matrix T = Matrix::Zero(m, total + 1);
    std::vector<Index> basis(static_cast<std::size_t>(m));
    Index art_col = n + m;
    for (Index i = 0; i < m; ++i) {
      const double sign = b[i] < 0 ? -1.0 : 1.0;
      for (Index j = 0; j < n; ++j) T(i, j) = sign * A(i, j);
      T(i, n + i) = sign;  // slack
      T(i, total) = sign * b[i];
      if (b[i] < 0) {
        T(i, art_col) = 1.0;
        basis[static_cast<std::size_t>(i)] = art_col;
        ++art_col;
      } else {
        basis[static_cast<std::size_t>(i)] = n + i;
      }
    }

    auto run_phase = [&](const Vector& cost, Index ncols) {
      while (true) {
        // reduced costs z_j = c_j - c_B' B^-1 A_j on the current tableau
        Vector cb(m);
        for (Index i = 0; i < m; ++i) cb[i] = cost[basis[static_cast<std::size_t>(i)]];
        Index enter = -1;
        for (Index j = 0; j < ncols; ++j) {
          double red = cost[j];
          for (Index i = 0; i < m; ++i) red -= cb[i] * T(i, j);
          if (red < -1e-9) {
            enter = j;  // Bland: first improving column
            break;
          }
        }
        if (enter < 0) return;
        Index leave = -1;
        double best_ratio = std::numeric_limits<double>::infinity();
        for (Index i = 0; i < m; ++i) {
          if (T(i, enter) > 1e-11) {
            const double ratio = T(i, total) / T(i, enter);
            if (ratio < best_ratio - 1e-12 ||
                (ratio < best_ratio + 1e-12 && (leave < 0 || basis[static_cast<std::size_t>(i)] <
                                                                 basis[static_cast<std::size_t>(leave)]))) {
              best_ratio = ratio;
              leave = i;
            }
          }
        }
        if (leave < 0) throw std::runtime_error("simplex: unbounded");
        const double piv = T(leave, enter);
        T.row(leave) /= piv;
        for (Index i = 0; i < m; ++i)
          if (i != leave && T(i, enter) != 0.0) T.row(i) -= T(i, enter) * T.row(leave);
        basis[static_cast<std::size_t>(leave)] = enter;
      }
    };

    if (n_art > 0) {
      Vector phase1 = Vector::Zero(total);
      for (Index j = n + m; j < total; ++j) phase1[j] = 1.0;
      run_phase(phase1, total);
      double infeas = 0.0;
      for (Index i = 0; i < m; ++i)
        if (basis[static_cast<std::size_t>(i)] >= n + m) infeas += T(i, total);
      if (infeas > 1e-7) throw std::runtime_error("simplex: infeasible");
      // drive any degenerate artificial out of the basis
      for (Index i = 0; i < m; ++i) {
        if (basis[static_cast<std::size_t>(i)] < n + m) continue;
        Index enter = -1;
        for (Index j = 0; j < n + m; ++j)
          if (std::abs(T(i, j)) > 1e-9) {
            enter = j;
            break;
          }
        if (enter < 0) continue;  // redundant row
        const double piv = T(i, enter);
        T.row(i) /= piv;
        for (Index k = 0; k < m; ++k)
          if (k != i && T(k, enter) != 0.0) T.row(k) -= T(k, enter) * T.row(i);
        basis[static_cast<std::size_t>(i)] = enter;
      }
    }

    Vector phase2 = Vector::Zero(total);
    for (Index j = 0; j < n; ++j) phase2[j] = c[j];
    run_phase(phase2, n + m);  // artificials stay out (cost columns excluded)

    x = Vector::Zero(n);
    for (Index i = 0; i < m; ++i)
      if (basis[static_cast<std::size_t>(i)] < n) x[basis[static_cast<std::size_t>(i)]] = T(i, total);
    double obj = 0.0;
    for (Index j = 0; j < n; ++j) obj += c[j] * x[j];
    return obj;
  }
};

// LAD-lasso LP in the artificial-variable form over the extended design
// (Y#, X#): rows 1..K are the weighted data, rows K+1..K+p are (0, lambda e_j)
// without an intercept. Variables: alpha+-, beta+-, v.
inline double lad_lasso_lp(const AugmentedDataset& aug, double lambda, Theta* theta_out = nullptr) {
  const Index K = aug.size(), p = aug.p();
  const Index nv = K + p;
  const Index nx = 2 + 2 * p + nv;
  const Index rows = 2 * nv;
  Matrix A = Matrix::Zero(rows, nx);
  Vector b(rows), c = Vector::Zero(nx);
  auto vcol = [&](Index i) { return 2 + 2 * p + i; };
  for (Index k = 0; k < K; ++k) {
    // y_k - (a+ - a-) - x'(b+ - b-) <= v_k  and  >= -v_k
    A(2 * k, 0) = -1.0;
    A(2 * k, 1) = 1.0;
    A(2 * k + 1, 0) = 1.0;
    A(2 * k + 1, 1) = -1.0;
    for (Index j = 0; j < p; ++j) {
      A(2 * k, 2 + j) = -aug.xv(k, j);
      A(2 * k, 2 + p + j) = aug.xv(k, j);
      A(2 * k + 1, 2 + j) = aug.xv(k, j);
      A(2 * k + 1, 2 + p + j) = -aug.xv(k, j);
    }
    A(2 * k, vcol(k)) = -1.0;
    A(2 * k + 1, vcol(k)) = -1.0;
    b[2 * k] = -aug.y_new[k];
    b[2 * k + 1] = aug.y_new[k];
    c[vcol(k)] = aug.w_new[k];
  }
  for (Index j = 0; j < p; ++j) {
    const Index r = 2 * (K + j);
    // -v <= 0 - lambda * beta_j <= v   (no intercept in the penalty rows)
    A(r, 2 + j) = -lambda;
    A(r, 2 + p + j) = lambda;
    A(r + 1, 2 + j) = lambda;
    A(r + 1, 2 + p + j) = -lambda;
    A(r, vcol(K + j)) = -1.0;
    A(r + 1, vcol(K + j)) = -1.0;
    b[r] = 0.0;
    b[r + 1] = 0.0;
    c[vcol(K + j)] = 1.0;
  }
  Vector x;
  const double obj = SimplexLP::solve(A, b, c, x);
  if (theta_out) {
    theta_out->alpha = x[0] - x[1];
    theta_out->beta.resize(p);
    for (Index j = 0; j < p; ++j) theta_out->beta[j] = x[2 + j] - x[2 + p + j];
  }
  return obj;
}

// --------------------------------------------------------------------------
// proximal gradient oracles. The smooth part sum_k w phi(r_k/d) has gradient
// Lipschitz constant 2/d^2 * lambda_max(Z'WZ) since sup phi'' <= 2.

inline double design_spectral_bound(const AugmentedDataset& aug) {
  const Index K = aug.size(), p = aug.p();
  Matrix G = Matrix::Zero(p + 1, p + 1);
  Vector z(p + 1);
  for (Index k = 0; k < K; ++k) {
    z[0] = 1.0;
    for (Index j = 0; j < p; ++j) z[j + 1] = aug.xv(k, j);
    G.selfadjointView<Eigen::Lower>().rankUpdate(z, aug.w_new[k]);
  }
  G = G.selfadjointView<Eigen::Lower>();
  Eigen::SelfAdjointEigenSolver<Matrix> es(G);
  return es.eigenvalues().maxCoeff();
}

struct ProxPenalty {
  bool sgl = false;
  double lambda = 0.0;             // lasso
  double lambda1 = 0.0, lambda2 = 0.0;  // SGL
  std::vector<int> groups;
};

inline void apply_prox(Vector& beta, const ProxPenalty& pen, double step, double d) {
  using aftsel::soft_threshold;
  if (!pen.sgl) {
    for (Index j = 0; j < beta.size(); ++j)
      beta[j] = soft_threshold(beta[j], step * pen.lambda / d);
    return;
  }
  const aftsel::GroupIndex gi = aftsel::build_group_index(pen.groups);
  for (Index g = 0; g < gi.count(); ++g) {
    auto seg = beta.segment(gi.start[g], gi.size[g]);
    for (Index j = 0; j < seg.size(); ++j)
      seg[j] = soft_threshold(seg[j], step * pen.lambda2 / d);
    const double nrm = seg.norm();
    const double gamma = step * pen.lambda1 * std::sqrt(static_cast<double>(gi.size[g])) / d;
    if (nrm <= gamma) {
      seg.setZero();
    } else {
      seg *= (nrm - gamma) / nrm;
    }
  }
}

inline double prox_objective(const AugmentedDataset& aug, const Theta& th, const LossSpec& loss,
                             const ProxPenalty& pen, double d) {
  aftsel::PenaltySpec ps = pen.sgl ? aftsel::PenaltySpec::sgl(pen.lambda1, pen.lambda2)
                                   : aftsel::PenaltySpec::lasso(pen.lambda);
  return aftsel::objective_value(aug, th, loss, ps, pen.groups, d);
}

// FISTA for the convex losses; plain descent steps when accelerate = false
// (used for the nonconvex Tukey multi-start oracle).
inline Theta prox_gradient(const AugmentedDataset& aug, const LossSpec& loss, const ProxPenalty& pen,
                           double d, Theta start, int iters, bool accelerate = true) {
  const Index K = aug.size(), p = aug.p();
  const double dd = loss.scaled() ? d : 1.0;
  const double L = 2.0 * design_spectral_bound(aug) / (dd * dd) + 1e-12;
  const double step = 1.0 / L;
  Theta th = start, prev = start;
  double t_acc = 1.0;
  Vector grad_b(p);
  for (int it = 0; it < iters; ++it) {
    Theta y = th;
    if (accelerate && it > 0) {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_acc * t_acc));
      const double mom = (t_acc - 1.0) / t_next;
      y.alpha = th.alpha + mom * (th.alpha - prev.alpha);
      y.beta = th.beta + mom * (th.beta - prev.beta);
      t_acc = t_next;
    }
    grad_b.setZero();
    double grad_a = 0.0;
    for (Index k = 0; k < K; ++k) {
      double r = aug.y_new[k] - y.alpha;
      for (Index j = 0; j < p; ++j) r -= aug.xv(k, j) * y.beta[j];
      const double g = aug.w_new[k] * aftsel::loss_derivative(loss, r / dd) / dd;
      grad_a -= g;
      for (Index j = 0; j < p; ++j) grad_b[j] -= g * aug.xv(k, j);
    }
    prev = th;
    th.alpha = y.alpha - step * grad_a;
    th.beta = y.beta - step * grad_b;
    apply_prox(th.beta, pen, step, dd);
  }
  return th;
}

// --------------------------------------------------------------------------
// grid argmin of the majorizing quadratic for one coordinate:
//   sum w [phi(r/d) + phi'(r/d) x (bt - b)/d + (x (bt - b)/d)^2] + lambda |b|/d
inline double grid_argmin_majorizer(const AugmentedDataset& aug, Index j, const LossSpec& loss,
                                    double lambda, const Theta& at, double d, double lo = -10.0,
                                    double hi = 10.0, double step = 1e-4) {
  const Index K = aug.size();
  std::vector<double> r(static_cast<std::size_t>(K));
  for (Index k = 0; k < K; ++k) {
    double v = aug.y_new[k] - at.alpha;
    for (Index jj = 0; jj < aug.p(); ++jj) v -= aug.xv(k, jj) * at.beta[jj];
    r[static_cast<std::size_t>(k)] = v;
  }
  double best_b = 0.0, best_obj = std::numeric_limits<double>::infinity();
  const long steps = static_cast<long>((hi - lo) / step + 0.5);
  for (long s = 0; s <= steps; ++s) {
    const double b = lo + static_cast<double>(s) * step;
    double obj = lambda * std::abs(b) / d;
    for (Index k = 0; k < K; ++k) {
      const double rk = r[static_cast<std::size_t>(k)];
      const double u = aug.xv(k, j) * (at.beta[j] - b) / d;
      obj += aug.w_new[k] *
             (aftsel::loss_value(loss, rk / d) + aftsel::loss_derivative(loss, rk / d) * u + u * u);
    }
    if (obj < best_obj) {
      best_obj = obj;
      best_b = b;
    }
  }
  return best_b;
}

// --------------------------------------------------------------------------
// random test instances

inline AugmentedDataset random_augmented(aftsel::Rng& rng, Index K, Index p, bool sparse_signal = true) {
  AugmentedDataset aug;
  aug.x_src.resize(K, p);
  aug.y_new.resize(K);
  aug.w_new.resize(K);
  aug.x_ref.resize(static_cast<std::size_t>(K));
  aug.source.resize(static_cast<std::size_t>(K));
  Vector beta(p);
  for (Index j = 0; j < p; ++j) beta[j] = sparse_signal && j % 2 ? 0.0 : rng.uniform(-2.0, 2.0);
  for (Index k = 0; k < K; ++k) {
    for (Index j = 0; j < p; ++j) aug.x_src(k, j) = rng.normal();
    aug.y_new[k] = 0.5 + aug.x_src.row(k).dot(beta) + rng.normal();
    aug.w_new[k] = rng.uniform(0.2, 1.0);
    aug.x_ref[static_cast<std::size_t>(k)] = k;
    aug.source[static_cast<std::size_t>(k)] = {k, 1};
  }
  return aug;
}

inline aftsel::SurvivalDataset random_censored_dataset(aftsel::Rng& rng, Index n, Index p,
                                                       double censor_shift = 0.7) {
  aftsel::SurvivalDataset d;
  d.y.resize(n);
  d.delta.resize(n);
  d.x.resize(n, p);
  Vector beta(p);
  for (Index j = 0; j < p; ++j) beta[j] = rng.uniform(-1.5, 1.5);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) d.x(i, j) = rng.normal();
    const double t = 0.5 + d.x.row(i).dot(beta) + rng.normal();
    const double c = censor_shift + rng.normal() * 1.5;
    d.y[i] = std::min(t, c);
    d.delta[i] = t <= c ? 1 : 0;
  }
  bool any_event = false;
  for (Index i = 0; i < n; ++i) any_event |= d.delta[i] == 1;
  if (!any_event) d.delta[0] = 1;
  return d;
}

}  // namespace oracle
