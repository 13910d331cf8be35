#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "aftsel/augment.hpp"
#include "aftsel/loss.hpp"
#include "aftsel/types.hpp"
#include "aftsel/weighted_median.hpp"

namespace aftsel {

enum class PenaltyKind { Lasso, SparseGroupLasso };

struct PenaltySpec {
  PenaltyKind kind = PenaltyKind::Lasso;
  double lambda = 0.0;    // lasso
  double lambda1 = 0.0;   // SGL group penalty
  double lambda2 = 0.0;   // SGL within-group L1

  static PenaltySpec lasso(double l) {
    if (l < 0) throw std::invalid_argument("lambda must be >= 0");
    PenaltySpec s;
    s.lambda = l;
    return s;
  }
  static PenaltySpec sgl(double l1, double l2) {
    if (l1 < 0 || l2 < 0) throw std::invalid_argument("lambda1/lambda2 must be >= 0");
    PenaltySpec s;
    s.kind = PenaltyKind::SparseGroupLasso;
    s.lambda1 = l1;
    s.lambda2 = l2;
    return s;
  }
};

enum class ScaleUpdate { PerCoordinate, PerSweep, Frozen };

struct SolverOptions {
  int max_sweeps = 1000;
  double coord_tol = 1e-7;
  ScaleUpdate scale_update = ScaleUpdate::PerCoordinate;
  // Frozen mode: use this scale when > 0, otherwise freeze at the scale of
  // the warm-start residuals.
  double frozen_d = 0.0;
  // Tukey solves start from the Huber solution at the same penalty.
  bool tukey_init_huber = true;
  // test hook, called after every accepted coordinate/intercept update
  std::function<void(const Theta&)> on_update;
};

struct SolveResult {
  Theta theta;
  int sweeps = 0;
  bool converged = false;
};

// Penalized objective at a fixed scale d (d is ignored for the unscaled
// losses). For Huber/Tukey this is sum_k w_k phi(r_k/d) + penalty/d.
inline double objective_value(const AugmentedDataset& aug, const Theta& theta,
                              const LossSpec& loss, const PenaltySpec& penalty,
                              const std::vector<int>& groups = {}, double d = 1.0) {
  const double dd = loss.scaled() ? d : 1.0;
  double acc = 0.0;
  for (Index k = 0; k < aug.size(); ++k) {
    double r = aug.y_new[k] - theta.alpha;
    for (Index j = 0; j < aug.p(); ++j) r -= aug.xv(k, j) * theta.beta[j];
    acc += aug.w_new[k] * loss_value(loss, r / dd);
  }
  if (penalty.kind == PenaltyKind::Lasso) {
    acc += penalty.lambda * theta.beta.cwiseAbs().sum() / dd;
  } else {
    const GroupIndex gi = build_group_index(groups);
    for (Index g = 0; g < gi.count(); ++g) {
      const auto seg = theta.beta.segment(gi.start[g], gi.size[g]);
      acc += penalty.lambda1 * std::sqrt(static_cast<double>(gi.size[g])) * seg.norm() / dd;
      acc += penalty.lambda2 * seg.cwiseAbs().sum() / dd;
    }
  }
  return acc;
}

namespace detail {

struct CoordCore {
  const AugmentedDataset& aug;
  const LossSpec& loss;
  const SolverOptions& opts;
  Index K, p;
  Vector r;      // residuals under the current iterate
  Vector sxx;    // sum_k w_k x_kj^2 per column
  double sw = 0.0;
  double alpha;
  Vector beta;
  double frozen_scale = 1.0;
  double sweep_scale = 1.0;
  WeightedMedianWorkspace ws;

  CoordCore(const AugmentedDataset& a, const LossSpec& l, const Theta& warm, const SolverOptions& o)
      : aug(a), loss(l), opts(o), K(a.size()), p(a.p()), alpha(warm.alpha), beta(warm.beta) {
    if (beta.size() != p) throw std::invalid_argument("solver: warm start has wrong dimension");
    if (!warm.finite()) throw std::invalid_argument("solver: non-finite warm start");
    if (K == 0) throw std::invalid_argument("solver: empty augmented dataset");
    r.resize(K);
    for (Index k = 0; k < K; ++k) {
      double v = aug.y_new[k] - alpha;
      for (Index j = 0; j < p; ++j) v -= aug.xv(k, j) * beta[j];
      r[k] = v;
    }
    sxx = Vector::Zero(p);
    for (Index k = 0; k < K; ++k) {
      sw += aug.w_new[k];
      for (Index j = 0; j < p; ++j) sxx[j] += aug.w_new[k] * aug.xv(k, j) * aug.xv(k, j);
    }
    if (loss.scaled()) {
      frozen_scale = opts.frozen_d > 0 ? opts.frozen_d
                                       : wmad_scale(r.data(), aug.w_new.data(), static_cast<std::size_t>(K), ws).d;
    }
  }

  double scale_now() {
    if (!loss.scaled()) return 1.0;
    switch (opts.scale_update) {
      case ScaleUpdate::Frozen: return frozen_scale;
      case ScaleUpdate::PerSweep: return sweep_scale;
      case ScaleUpdate::PerCoordinate:
        return wmad_scale(r.data(), aug.w_new.data(), static_cast<std::size_t>(K), ws).d;
    }
    return 1.0;
  }

  void begin_sweep() {
    if (loss.scaled() && opts.scale_update == ScaleUpdate::PerSweep)
      sweep_scale = wmad_scale(r.data(), aug.w_new.data(), static_cast<std::size_t>(K), ws).d;
  }

  double grad_sum(Index j, double d) const {
    double acc = 0.0;
    for (Index k = 0; k < K; ++k)
      acc += aug.w_new[k] * loss_derivative(loss, r[k] / d) * aug.xv(k, j);
    return acc;
  }

  void apply_beta(Index j, double bnew) {
    const double diff = bnew - beta[j];
    if (diff != 0.0) {
      for (Index k = 0; k < K; ++k) r[k] -= aug.xv(k, j) * diff;
      beta[j] = bnew;
    }
    notify();
  }

  // alpha <- alpha + d * sum w phi'(r/d) / (2 sum w)
  double update_intercept() {
    const double d = scale_now();
    double acc = 0.0;
    for (Index k = 0; k < K; ++k) acc += aug.w_new[k] * loss_derivative(loss, r[k] / d);
    const double step = d * acc / (2.0 * sw);
    alpha += step;
    for (Index k = 0; k < K; ++k) r[k] -= step;
    notify();
    return std::abs(step);
  }

  void notify() const {
    if (opts.on_update) opts.on_update(Theta(alpha, beta));
  }

  void check_finite(int sweep) const {
    if (!std::isfinite(alpha) || !beta.allFinite())
      throw std::runtime_error("solver: non-finite iterate at sweep " + std::to_string(sweep));
  }

  Theta theta() const { return Theta(alpha, beta); }
};

// Cyclic MM coordinate descent with the lasso penalty (Squared/Huber/Tukey).
inline SolveResult mm_lasso_core(const AugmentedDataset& aug, double lambda, const LossSpec& loss,
                                 const Theta& warm, const SolverOptions& opts) {
  CoordCore c(aug, loss, warm, opts);
  SolveResult out;
  for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
    c.begin_sweep();
    double max_change = 0.0;
    for (Index j = 0; j < c.p; ++j) {
      if (c.sxx[j] <= 0.0) {
        max_change = std::max(max_change, std::abs(c.beta[j]));
        c.apply_beta(j, 0.0);
        continue;
      }
      const double d = c.scale_now();
      const double a = 2.0 * c.sxx[j] / (d * d);
      const double z = a * c.beta[j] + c.grad_sum(j, d) / d;
      const double bnew = soft_threshold(z, lambda / d) / a;
      max_change = std::max(max_change, std::abs(bnew - c.beta[j]));
      c.apply_beta(j, bnew);
    }
    max_change = std::max(max_change, c.update_intercept());
    c.check_finite(sweep);
    out.sweeps = sweep;
    if (max_change < opts.coord_tol) {
      out.converged = true;
      break;
    }
  }
  out.theta = c.theta();
  return out;
}

// Algorithm D: group-zero test then within-group soft-threshold updates.
inline SolveResult mm_sgl_core(const AugmentedDataset& aug, double lambda1, double lambda2,
                               const LossSpec& loss, const GroupIndex& gi, const Theta& warm,
                               const SolverOptions& opts) {
  CoordCore c(aug, loss, warm, opts);
  SolveResult out;
  Vector z(aug.p()), gcontrib(aug.size());
  for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
    c.begin_sweep();
    double max_change = 0.0;
    for (Index g = 0; g < gi.count(); ++g) {
      const Index j0 = gi.start[g], pg = gi.size[g];
      const double root_pg = std::sqrt(static_cast<double>(pg));
      double d = c.scale_now();

      // Z_gj = 2 sum_k w (x_g'beta_g) x_j / d^2 + sum_k w phi'(r/d) x_j / d:
      // the gradient at beta_g = 0 of the group-frozen quadratic surrogate
      for (Index k = 0; k < c.K; ++k) {
        double acc = 0.0;
        for (Index j = 0; j < pg; ++j) acc += aug.xv(k, j0 + j) * c.beta[j0 + j];
        gcontrib[k] = acc;
      }
      double test_norm2 = 0.0;
      for (Index j = 0; j < pg; ++j) {
        double zj = 0.0;
        for (Index k = 0; k < c.K; ++k) {
          const double x = aug.xv(k, j0 + j);
          zj += aug.w_new[k] * (2.0 * gcontrib[k] * x / (d * d) +
                                loss_derivative(loss, c.r[k] / d) * x / d);
        }
        z[j] = zj;
        const double s = soft_threshold(zj, lambda2 / d);
        test_norm2 += s * s;
      }
      if (std::sqrt(test_norm2) <= lambda1 * root_pg / d) {
        for (Index j = 0; j < pg; ++j) {
          max_change = std::max(max_change, std::abs(c.beta[j0 + j]));
          c.apply_beta(j0 + j, 0.0);
        }
        continue;
      }
      for (Index j = 0; j < pg; ++j) {
        const Index jj = j0 + j;
        if (c.sxx[jj] <= 0.0) {
          max_change = std::max(max_change, std::abs(c.beta[jj]));
          c.apply_beta(jj, 0.0);
          continue;
        }
        d = c.scale_now();
        const double group_norm = std::max(c.beta.segment(j0, pg).norm(), 1e-12);
        const double a = 2.0 * c.sxx[jj] / (d * d);
        const double den = a + lambda1 * root_pg / (d * group_norm);
        const double znum = a * c.beta[jj] + c.grad_sum(jj, d) / d;
        const double bnew = soft_threshold(znum, lambda2 / d) / den;
        max_change = std::max(max_change, std::abs(bnew - c.beta[jj]));
        c.apply_beta(jj, bnew);
      }
    }
    max_change = std::max(max_change, c.update_intercept());
    c.check_finite(sweep);
    out.sweeps = sweep;
    if (max_change < opts.coord_tol) {
      out.converged = true;
      break;
    }
  }
  out.theta = c.theta();
  return out;
}

// LAD coordinate step: each subproblem is a weighted median over the
// breakpoints beta_j + r_k/x_kj with weights w_k|x_kj|; the L1 penalty enters
// as one extra breakpoint of weight lambda at zero, matching the extended
// design (0, lambda e_j) of the LP formulation.
inline SolveResult wlad_lasso_core(const AugmentedDataset& aug, double lambda, const Theta& warm,
                                   const SolverOptions& opts) {
  const LossSpec loss = LossSpec::absolute();
  CoordCore c(aug, loss, warm, opts);
  SolveResult out;
  std::vector<double> vals, wts;
  vals.reserve(c.K + 1);
  wts.reserve(c.K + 1);
  for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (Index j = 0; j < c.p; ++j) {
      vals.clear();
      wts.clear();
      for (Index k = 0; k < c.K; ++k) {
        const double x = aug.xv(k, j);
        if (x == 0.0) continue;
        vals.push_back(c.beta[j] + c.r[k] / x);
        wts.push_back(aug.w_new[k] * std::abs(x));
      }
      double bnew;
      if (vals.empty()) {
        bnew = 0.0;
      } else {
        if (lambda > 0.0) {
          vals.push_back(0.0);
          wts.push_back(lambda);
        }
        bnew = weighted_median(vals.data(), wts.data(), vals.size(), c.ws);
      }
      max_change = std::max(max_change, std::abs(bnew - c.beta[j]));
      c.apply_beta(j, bnew);
    }
    {
      vals.clear();
      wts.clear();
      for (Index k = 0; k < c.K; ++k) {
        vals.push_back(c.alpha + c.r[k]);
        wts.push_back(aug.w_new[k]);
      }
      const double anew = weighted_median(vals.data(), wts.data(), vals.size(), c.ws);
      const double step = anew - c.alpha;
      max_change = std::max(max_change, std::abs(step));
      if (step != 0.0) {
        c.alpha = anew;
        for (Index k = 0; k < c.K; ++k) c.r[k] -= step;
      }
      c.notify();
    }
    c.check_finite(sweep);
    out.sweeps = sweep;
    if (max_change < opts.coord_tol) {
      out.converged = true;
      break;
    }
  }
  out.theta = c.theta();
  return out;
}

// Exact weighted least squares through the centered normal equations.
inline Theta weighted_least_squares(const AugmentedDataset& aug) {
  const Index K = aug.size(), p = aug.p();
  double sw = 0.0, ybar = 0.0;
  Vector xbar = Vector::Zero(p);
  for (Index k = 0; k < K; ++k) {
    sw += aug.w_new[k];
    ybar += aug.w_new[k] * aug.y_new[k];
    for (Index j = 0; j < p; ++j) xbar[j] += aug.w_new[k] * aug.xv(k, j);
  }
  ybar /= sw;
  xbar /= sw;
  Theta theta = Theta::zero(p);
  if (p > 0) {
    Matrix G = Matrix::Zero(p, p);
    Vector b = Vector::Zero(p);
    Vector xc(p);
    for (Index k = 0; k < K; ++k) {
      for (Index j = 0; j < p; ++j) xc[j] = aug.xv(k, j) - xbar[j];
      G.selfadjointView<Eigen::Lower>().rankUpdate(xc, aug.w_new[k]);
      b += aug.w_new[k] * (aug.y_new[k] - ybar) * xc;
    }
    G = G.selfadjointView<Eigen::Lower>();
    Eigen::SelfAdjointEigenSolver<Matrix> es(G);
    const double emax = es.eigenvalues().maxCoeff();
    const double emin = es.eigenvalues().minCoeff();
    if (!(emax > 0) || emin <= 1e-12 * emax)
      throw std::runtime_error(
          "weighted least squares: centered Gram matrix is rank-deficient; "
          "consider a penalized fit (lambda > 0)");
    theta.beta = Eigen::LDLT<Matrix>(G).solve(b);
  }
  theta.alpha = ybar - xbar.dot(theta.beta);
  return theta;
}

}  // namespace detail

inline SolveResult solve_wls_lasso(const AugmentedDataset& aug, double lambda, const Theta& warm,
                                   const SolverOptions& opts = {}) {
  if (lambda < 0) throw std::invalid_argument("lambda must be >= 0");
  if (lambda == 0.0) {
    SolveResult out;
    out.theta = detail::weighted_least_squares(aug);
    out.sweeps = 1;
    out.converged = true;
    if (opts.on_update) opts.on_update(out.theta);
    return out;
  }
  return detail::mm_lasso_core(aug, lambda, LossSpec::squared(), warm, opts);
}

namespace detail {

// ADMM splitting of min sum_k w_k|y_k - a - x_k'b| + lambda |b|_1:
//   z = y - Z theta (residual block), b = beta (penalty block),
// theta-update a fixed LDLT solve, z/b soft-threshold proxes. rho is tied to
// the response scale so the iteration commutes with y -> c y.
inline Theta lad_admm(const AugmentedDataset& aug, double lambda, const Theta& warm, double rho,
                      int max_iters, double tol) {
  const Index K = aug.size(), p = aug.p();
  Matrix Z(K, p + 1);
  for (Index k = 0; k < K; ++k) {
    Z(k, 0) = 1.0;
    for (Index j = 0; j < p; ++j) Z(k, j + 1) = aug.xv(k, j);
  }
  Matrix G = Z.transpose() * Z;
  for (Index j = 1; j <= p; ++j) G(j, j) += 1.0;
  const Eigen::LDLT<Matrix> ldlt(G);

  Vector theta(p + 1);
  theta[0] = warm.alpha;
  theta.tail(p) = warm.beta;
  Vector z = aug.y_new - Z * theta;
  Vector b = warm.beta;
  Vector a1 = Vector::Zero(K), a2 = Vector::Zero(p);
  Vector rhs(p + 1), zt(K), z_old(K), b_old(p);
  const double relax = 1.7;
  for (int it = 0; it < max_iters; ++it) {
    rhs.noalias() = Z.transpose() * (aug.y_new - z - a1);
    rhs.tail(p) += b - a2;
    theta = ldlt.solve(rhs);
    zt.noalias() = Z * theta;
    z_old = z;
    b_old = b;
    for (Index k = 0; k < K; ++k) {
      // over-relaxed mix of Z theta with the previous residual block
      const double h = relax * zt[k] + (1.0 - relax) * (aug.y_new[k] - z[k]);
      z[k] = soft_threshold(aug.y_new[k] - h - a1[k], aug.w_new[k] / rho);
      a1[k] += h + z[k] - aug.y_new[k];
    }
    for (Index j = 0; j < p; ++j) {
      const double h = relax * theta[j + 1] + (1.0 - relax) * b[j];
      b[j] = soft_threshold(h + a2[j], lambda / rho);
      a2[j] += h - b[j];
    }
    if (it % 10 == 9) {
      double pr = (zt + z - aug.y_new).cwiseAbs().maxCoeff();
      if (p > 0) pr = std::max(pr, (theta.tail(p) - b).cwiseAbs().maxCoeff());
      double du = rho * (z - z_old).cwiseAbs().maxCoeff();
      if (p > 0) du = std::max(du, rho * (b - b_old).cwiseAbs().maxCoeff());
      if (pr < tol && du < tol) break;
      // residual balancing keeps the two convergence rates comparable
      if (pr > 10.0 * du) {
        rho *= 2.0;
        a1 *= 0.5;
        a2 *= 0.5;
      } else if (du > 10.0 * pr) {
        rho *= 0.5;
        a1 *= 2.0;
        a2 *= 2.0;
      }
    }
  }
  Theta out;
  out.alpha = theta[0];
  out.beta = b;  // the thresholded block carries exact zeros
  return out;
}

}  // namespace detail

// Cyclic weighted-median descent alone stalls at coordinate-wise-optimal
// vertices of the polyhedral LAD objective (measured against the LP oracle on
// random instances). The production path runs a few median sweeps, hands the
// iterate to ADMM for the joint moves a coordinate method cannot make, and
// finishes with the weighted-median sweeps, which snap onto the exact vertex
// and leave exact zeros.
inline SolveResult solve_wlad_lasso(const AugmentedDataset& aug, double lambda, const Theta& warm,
                                    const SolverOptions& opts = {}) {
  if (lambda < 0) throw std::invalid_argument("lambda must be >= 0");
  SolveResult pre = detail::wlad_lasso_core(aug, lambda, warm, opts);
  if (aug.p() == 0) return pre;  // intercept-only medians are already exact

  double sw = 0.0, dev = 0.0;
  {
    WeightedMedianWorkspace ws;
    const double med = weighted_median(aug.y_new.data(), aug.w_new.data(),
                                       static_cast<std::size_t>(aug.size()), ws);
    for (Index k = 0; k < aug.size(); ++k) {
      sw += aug.w_new[k];
      dev += aug.w_new[k] * std::abs(aug.y_new[k] - med);
    }
  }
  const double scale0 = std::max(dev / sw, 1e-12);
  const double admm_tol = std::clamp(opts.coord_tol * 0.1, 1e-12, 1e-8) * std::max(scale0, 1.0);
  const int admm_iters = opts.coord_tol <= 1e-10 ? 20000 : 4000;
  const Theta mid = detail::lad_admm(aug, lambda, pre.theta, 1.0 / scale0, admm_iters, admm_tol);
  SolveResult out = detail::wlad_lasso_core(aug, lambda, mid, opts);
  out.sweeps += pre.sweeps;
  return out;
}

inline SolveResult solve_mm_lasso(const AugmentedDataset& aug, double lambda, const LossSpec& loss,
                                  const Theta& warm, const SolverOptions& opts = {}) {
  if (lambda < 0) throw std::invalid_argument("lambda must be >= 0");
  if (loss.kind != LossKind::Huber && loss.kind != LossKind::Tukey)
    throw std::invalid_argument("solve_mm_lasso expects Huber or Tukey loss");
  if (loss.kind == LossKind::Tukey && opts.tukey_init_huber) {
    SolverOptions pre = opts;
    pre.tukey_init_huber = false;
    pre.on_update = nullptr;
    SolveResult hub = detail::mm_lasso_core(aug, lambda, LossSpec::huber(), warm, pre);
    SolveResult out = detail::mm_lasso_core(aug, lambda, loss, hub.theta, opts);
    out.sweeps += hub.sweeps;
    return out;
  }
  return detail::mm_lasso_core(aug, lambda, loss, warm, opts);
}

inline SolveResult solve_mm_sgl(const AugmentedDataset& aug, double lambda1, double lambda2,
                                const LossSpec& loss, const std::vector<int>& groups,
                                const Theta& warm, const SolverOptions& opts = {}) {
  if (lambda1 < 0 || lambda2 < 0) throw std::invalid_argument("lambda1/lambda2 must be >= 0");
  if (loss.kind == LossKind::Absolute)
    throw std::invalid_argument("absolute loss with SGL is not supported");
  if (lambda1 == 0.0) {
    // exact reduction to the lasso solvers at lambda = lambda2
    if (loss.kind == LossKind::Squared) return solve_wls_lasso(aug, lambda2, warm, opts);
    return solve_mm_lasso(aug, lambda2, loss, warm, opts);
  }
  const GroupIndex gi = build_group_index(groups);
  if (gi.count() == 0 || static_cast<Index>(groups.size()) != aug.p())
    throw std::invalid_argument("solve_mm_sgl: group labels must cover every feature");
  if (loss.kind == LossKind::Tukey && opts.tukey_init_huber) {
    SolverOptions pre = opts;
    pre.tukey_init_huber = false;
    pre.on_update = nullptr;
    SolveResult hub = detail::mm_sgl_core(aug, lambda1, lambda2, LossSpec::huber(), gi, warm, pre);
    SolveResult out = detail::mm_sgl_core(aug, lambda1, lambda2, loss, gi, hub.theta, opts);
    out.sweeps += hub.sweeps;
    return out;
  }
  return detail::mm_sgl_core(aug, lambda1, lambda2, loss, gi, warm, opts);
}

// M-step dispatch shared by the EM engine and the tuning path.
inline SolveResult solve_penalized(const AugmentedDataset& aug, const LossSpec& loss,
                                   const PenaltySpec& penalty, const std::vector<int>& groups,
                                   const Theta& warm, const SolverOptions& opts = {}) {
  if (penalty.kind == PenaltyKind::SparseGroupLasso)
    return solve_mm_sgl(aug, penalty.lambda1, penalty.lambda2, loss, groups, warm, opts);
  switch (loss.kind) {
    case LossKind::Squared: return solve_wls_lasso(aug, penalty.lambda, warm, opts);
    case LossKind::Absolute: return solve_wlad_lasso(aug, penalty.lambda, warm, opts);
    default: return solve_mm_lasso(aug, penalty.lambda, loss, warm, opts);
  }
}

}  // namespace aftsel
