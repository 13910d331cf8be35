#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "aftsel/augment.hpp"
#include "aftsel/em.hpp"
#include "aftsel/km.hpp"
#include "aftsel/loss.hpp"
#include "aftsel/solver.hpp"
#include "aftsel/types.hpp"
#include "aftsel/weighted_median.hpp"

namespace aftsel {

enum class Tuning { VE1, VE2 };
enum class Ve2Reference { Evaluation, Training };

struct TuneOptions {
  int grid_size = 50;
  double lambda_min_ratio = 1e-3;
  EmOptions em;
  bool standardize = true;
  Ve2Reference ve2_ref = Ve2Reference::Evaluation;
  double sgl_mix = 0.5;  // lambda1 = mix * s, lambda2 = (1 - mix) * s
};

// ---------------------------------------------------------------------------
// validation errors

inline double ve1(const SurvivalDataset& val, const Theta& theta, const LossSpec& loss) {
  val.validate();
  double acc = 0.0;
  Index m = 0;
  for (Index i = 0; i < val.n(); ++i) {
    if (val.delta[i] != 1) continue;
    acc += loss_value(loss, val.y[i] - theta.predict(val.x.row(i)));
    ++m;
  }
  if (m == 0) throw std::invalid_argument("ve1 needs at least one uncensored validation row");
  return acc / static_cast<double>(m);
}

// VE2 on the evaluation set's own residual distribution under theta. With
// theta_eval = theta_ref the censored-row expectation reduces to the
// KM-weighted mean of the tail residual losses, so suffix sums give O(n).
// Rows are classified by the effective indicator: the override row has no
// tail and contributes its own loss, consistent with augment().
inline double ve2(const SurvivalDataset& val, const Theta& theta, const LossSpec& loss) {
  const KMResidualDistribution kmd = residual_distribution(val, theta);
  const Index n = kmd.n();
  double suffix_mass = 0.0, suffix_loss = 0.0, acc = 0.0;
  for (Index r = n - 1; r >= 0; --r) {
    if (kmd.delta_eff[r]) {
      acc += loss_value(loss, kmd.e[r]);
      suffix_loss += kmd.m[r] * loss_value(loss, kmd.e[r]);
      suffix_mass += kmd.m[r];
    } else {
      acc += suffix_loss / suffix_mass;  // override guarantees suffix_mass > 0
    }
  }
  return acc / static_cast<double>(n);
}

// Training-reference variant: censored rows integrate over the reference
// residual distribution restricted to residuals strictly above their own.
inline double ve2_with_reference(const SurvivalDataset& val, const Theta& theta,
                                 const LossSpec& loss, const KMResidualDistribution& ref) {
  val.validate();
  const Index nref = ref.n();
  double acc = 0.0;
  double largest_unc = 0.0;
  for (Index r = nref - 1; r >= 0; --r)
    if (ref.delta_eff[r]) {
      largest_unc = ref.e[r];
      break;
    }
  for (Index i = 0; i < val.n(); ++i) {
    const double resid = val.y[i] - theta.predict(val.x.row(i));
    if (val.delta[i] == 1) {
      acc += loss_value(loss, resid);
      continue;
    }
    double mass = 0.0, lsum = 0.0;
    for (Index r = nref - 1; r >= 0 && ref.e[r] > resid; --r) {
      if (!ref.delta_eff[r]) continue;
      mass += ref.m[r];
      lsum += ref.m[r] * loss_value(loss, ref.e[r]);
    }
    acc += mass > 0 ? lsum / mass : loss_value(loss, largest_unc);
  }
  return acc / static_cast<double>(val.n());
}

// ---------------------------------------------------------------------------
// lambda grid

namespace detail {

// multiplicative safety on lambda_max so knife-edge floating-point wobble
// between the grid construction and the solver cannot un-zero a coordinate
inline constexpr double kLambdaMaxMargin = 1e-10;

// Coordinate thresholds that keep beta = 0 in the first M-step: the soft
// threshold leaves beta_j at zero iff lambda >= |sum_k w phi'(r_k/d) x_kj|
// (robust losses; d cancels) or |2 sum w r x_j| (squared). For the absolute
// loss the weighted-median zero-stay condition is discontinuous at exact-zero
// residuals (the intercept median pins one), so their mass counts against us:
// lambda >= |sum_{r != 0} w sgn(r) x_j| + sum_{r = 0} w |x_j|.
inline double zero_beta_threshold(const AugmentedDataset& aug, const LossSpec& loss, double alpha) {
  double best = 0.0;
  double d = 1.0;
  if (loss.scaled()) {
    std::vector<double> r(static_cast<std::size_t>(aug.size()));
    for (Index k = 0; k < aug.size(); ++k) r[static_cast<std::size_t>(k)] = aug.y_new[k] - alpha;
    WeightedMedianWorkspace ws;
    d = wmad_scale(r.data(), aug.w_new.data(), r.size(), ws).d;
  }
  for (Index j = 0; j < aug.p(); ++j) {
    double acc = 0.0, zero_mass = 0.0;
    for (Index k = 0; k < aug.size(); ++k) {
      const double r = aug.y_new[k] - alpha;
      if (loss.kind == LossKind::Absolute && r == 0.0)
        zero_mass += aug.w_new[k] * std::abs(aug.xv(k, j));
      else
        acc += aug.w_new[k] * loss_derivative(loss, r / d) * aug.xv(k, j);
    }
    best = std::max(best, std::abs(acc) + zero_mass);
  }
  return best;
}

// Intercept-only location estimate on the augmented responses, recording the
// visited alpha values so nonconvex losses can take a trajectory max.
inline std::vector<double> intercept_only_path(const AugmentedDataset& aug, const LossSpec& loss,
                                               double alpha0, const SolverOptions& opts = {}) {
  const Index K = aug.size();
  std::vector<double> path{alpha0};
  double sw = 0.0;
  for (Index k = 0; k < K; ++k) sw += aug.w_new[k];
  if (loss.kind == LossKind::Squared) {
    double m = 0.0;
    for (Index k = 0; k < K; ++k) m += aug.w_new[k] * aug.y_new[k];
    path.push_back(m / sw);
    return path;
  }
  if (loss.kind == LossKind::Absolute) {
    WeightedMedianWorkspace ws;
    path.push_back(weighted_median(aug.y_new.data(), aug.w_new.data(), static_cast<std::size_t>(K), ws));
    return path;
  }
  WeightedMedianWorkspace ws;
  std::vector<double> r(static_cast<std::size_t>(K));
  double a = alpha0;
  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    for (Index k = 0; k < K; ++k) r[static_cast<std::size_t>(k)] = aug.y_new[k] - a;
    const double d = wmad_scale(r.data(), aug.w_new.data(), r.size(), ws).d;
    double acc = 0.0;
    for (Index k = 0; k < K; ++k) acc += aug.w_new[k] * loss_derivative(loss, r[k] / d);
    const double step = d * acc / (2.0 * sw);
    a += step;
    path.push_back(a);
    if (std::abs(step) < opts.coord_tol) break;
  }
  return path;
}

}  // namespace detail

// The zero-beta start: the intercept-only location estimate on the first
// augmented dataset, together with the smallest lambda that keeps beta = 0
// in the first M-step from there. At beta = 0 the E-step does not depend on
// alpha, so the condition is stationary across EM iterations; fits at
// lambda >= lambda_max started from (alpha0, 0) keep an empty support.
// Convex losses only need the threshold at the converged intercept; Tukey
// takes the max over the intercept trajectory.
struct LambdaAnchor {
  double lambda_max = 0.0;
  double alpha0 = 0.0;
};

inline LambdaAnchor lasso_lambda_anchor(const SurvivalDataset& data, const LossSpec& loss,
                                        const SolverOptions& sopts = {}) {
  const Theta init = default_init(data, loss);
  const AugmentedDataset aug = augment(data, init);
  const auto path = detail::intercept_only_path(aug, loss, init.alpha, sopts);
  LambdaAnchor anchor;
  anchor.alpha0 = path.back();
  if (loss.kind == LossKind::Tukey) {
    for (double a : path)
      anchor.lambda_max = std::max(anchor.lambda_max, detail::zero_beta_threshold(aug, loss, a));
  } else {
    anchor.lambda_max = detail::zero_beta_threshold(aug, loss, anchor.alpha0);
  }
  anchor.lambda_max *= 1.0 + detail::kLambdaMaxMargin;
  return anchor;
}

inline double lasso_lambda_max(const SurvivalDataset& data, const LossSpec& loss,
                               const SolverOptions& sopts = {}) {
  return lasso_lambda_anchor(data, loss, sopts).lambda_max;
}

// SGL analogue on the penalty scale s with (lambda1, lambda2) =
// (mix*s, (1-mix)*s): per group, bisect the Algorithm D zero test
// ||S(Z_g, lambda2/d)|| <= lambda1 sqrt(p_g)/d at the zero-beta start.
inline LambdaAnchor sgl_scale_anchor(const SurvivalDataset& data, const LossSpec& loss, double mix,
                                     const SolverOptions& sopts = {}) {
  if (!data.has_groups()) throw std::invalid_argument("sgl_scale_max: group labels required");
  if (!(mix >= 0.0 && mix <= 1.0)) throw std::invalid_argument("sgl_scale_max: mix in [0,1]");
  const Theta init = default_init(data, loss);
  const AugmentedDataset aug = augment(data, init);
  const auto path = detail::intercept_only_path(aug, loss, init.alpha, sopts);
  const double alpha = path.back();

  double d = 1.0;
  if (loss.scaled()) {
    std::vector<double> r(static_cast<std::size_t>(aug.size()));
    for (Index k = 0; k < aug.size(); ++k) r[static_cast<std::size_t>(k)] = aug.y_new[k] - alpha;
    WeightedMedianWorkspace ws;
    d = wmad_scale(r.data(), aug.w_new.data(), r.size(), ws).d;
  }
  Vector z(data.p());
  for (Index j = 0; j < data.p(); ++j) {
    double acc = 0.0;
    for (Index k = 0; k < aug.size(); ++k)
      acc += aug.w_new[k] * loss_derivative(loss, (aug.y_new[k] - alpha) / d) * aug.xv(k, j) / d;
    z[j] = acc;
  }
  const GroupIndex gi = build_group_index(data.groups);
  double s_max = 0.0;
  for (Index g = 0; g < gi.count(); ++g) {
    const auto seg = z.segment(gi.start[g], gi.size[g]);
    const double root_pg = std::sqrt(static_cast<double>(gi.size[g]));
    auto zeroed = [&](double s) {
      double acc = 0.0;
      for (Index j = 0; j < gi.size[g]; ++j) {
        const double v = soft_threshold(seg[j], (1.0 - mix) * s / d);
        acc += v * v;
      }
      return std::sqrt(acc) <= mix * s * root_pg / d;
    };
    double hi = std::max(1e-12, d * seg.cwiseAbs().maxCoeff() * 4.0 / std::max(1e-12, std::max(mix, 1.0 - mix)));
    while (!zeroed(hi)) hi *= 2.0;
    double lo = 0.0;
    for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      (zeroed(mid) ? hi : lo) = mid;
    }
    s_max = std::max(s_max, hi);
  }
  LambdaAnchor anchor;
  anchor.alpha0 = alpha;
  anchor.lambda_max = s_max * (1.0 + detail::kLambdaMaxMargin);
  return anchor;
}

inline double sgl_scale_max(const SurvivalDataset& data, const LossSpec& loss, double mix,
                            const SolverOptions& sopts = {}) {
  return sgl_scale_anchor(data, loss, mix, sopts).lambda_max;
}

inline std::vector<double> lambda_grid_from_max(double lmax, int grid_size, double min_ratio) {
  if (!(lmax > 0)) throw std::invalid_argument("lambda grid: degenerate design (lambda_max = 0)");
  if (grid_size < 1) throw std::invalid_argument("lambda grid: size must be >= 1");
  if (grid_size == 1) return {lmax};
  std::vector<double> grid(static_cast<std::size_t>(grid_size));
  for (int i = 0; i < grid_size; ++i)
    grid[static_cast<std::size_t>(i)] =
        lmax * std::pow(min_ratio, static_cast<double>(i) / static_cast<double>(grid_size - 1));
  return grid;
}

inline LambdaAnchor lambda_anchor(const SurvivalDataset& data, const LossSpec& loss,
                                  PenaltyKind kind, const TuneOptions& opts = {}) {
  return kind == PenaltyKind::Lasso ? lasso_lambda_anchor(data, loss, opts.em.solver)
                                    : sgl_scale_anchor(data, loss, opts.sgl_mix, opts.em.solver);
}

inline std::vector<double> lambda_grid(const SurvivalDataset& data, const LossSpec& loss,
                                       PenaltyKind kind, const TuneOptions& opts = {}) {
  return lambda_grid_from_max(lambda_anchor(data, loss, kind, opts).lambda_max, opts.grid_size,
                              opts.lambda_min_ratio);
}

// ---------------------------------------------------------------------------
// standardization (train moments; coefficients returned on the input scale)

struct Standardizer {
  Vector mean, sd;

  static Standardizer fit(const SurvivalDataset& data) {
    Standardizer s;
    const Index n = data.n(), p = data.p();
    s.mean = data.x.colwise().mean();
    s.sd.resize(p);
    for (Index j = 0; j < p; ++j) {
      const double var = (data.x.col(j).array() - s.mean[j]).square().sum() / static_cast<double>(n);
      s.sd[j] = var > 0 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  SurvivalDataset apply(const SurvivalDataset& data) const {
    SurvivalDataset out = data;
    for (Index j = 0; j < data.p(); ++j)
      out.x.col(j) = (data.x.col(j).array() - mean[j]) / sd[j];
    return out;
  }

  Theta to_original(const Theta& std_theta) const {
    Theta out = std_theta;
    for (Index j = 0; j < out.p(); ++j) out.beta[j] = std_theta.beta[j] / sd[j];
    out.alpha = std_theta.alpha - mean.dot(out.beta);
    return out;
  }

  Theta to_standardized(const Theta& orig) const {
    Theta out = orig;
    for (Index j = 0; j < out.p(); ++j) out.beta[j] = orig.beta[j] * sd[j];
    out.alpha = orig.alpha + mean.dot(orig.beta);
    return out;
  }
};

// ---------------------------------------------------------------------------
// refit and the tuning path

inline std::vector<Index> support_of(const Theta& theta) {
  std::vector<Index> s;
  for (Index j = 0; j < theta.p(); ++j)
    if (theta.beta[j] != 0.0) s.push_back(j);
  return s;
}

inline Theta refit(const SurvivalDataset& train, const std::vector<Index>& support,
                   const LossSpec& loss, const EmOptions& opts = {}) {
  const SurvivalDataset sub = train.restricted_to(support);
  const FitResult fr = em_fit(sub, loss, PenaltySpec::lasso(0.0), default_init(sub, loss), opts);
  Theta out = Theta::zero(train.p());
  out.alpha = fr.theta.alpha;
  for (std::size_t j = 0; j < support.size(); ++j) out.beta[support[j]] = fr.theta.beta[static_cast<Index>(j)];
  return out;
}

struct PathPoint {
  double lambda = 0.0;  // lasso lambda, or the SGL scale s
  Theta theta;          // non-refit estimate, input scale
  bool converged = false;
  int iterations = 0;
};

struct LambdaPath {
  PenaltyKind kind = PenaltyKind::Lasso;
  double sgl_mix = 0.5;
  std::vector<PathPoint> points;  // descending lambda
};

inline PenaltySpec penalty_at(const LambdaPath& path, double lambda) {
  if (path.kind == PenaltyKind::Lasso) return PenaltySpec::lasso(lambda);
  return PenaltySpec::sgl(path.sgl_mix * lambda, (1.0 - path.sgl_mix) * lambda);
}

inline LambdaPath fit_lambda_path(const SurvivalDataset& train, const LossSpec& loss,
                                  PenaltyKind kind, const TuneOptions& opts = {},
                                  const std::vector<double>* grid_override = nullptr) {
  train.validate();
  const Standardizer stz = Standardizer::fit(train);
  const SurvivalDataset fit_data = opts.standardize ? stz.apply(train) : train;
  const LambdaAnchor anchor = lambda_anchor(fit_data, loss, kind, opts);
  const std::vector<double> grid =
      grid_override ? *grid_override
                    : lambda_grid_from_max(anchor.lambda_max, opts.grid_size, opts.lambda_min_ratio);

  LambdaPath path;
  path.kind = kind;
  path.sgl_mix = opts.sgl_mix;
  // the first grid point is the anchor's lambda_max: starting at its own
  // zero-beta location keeps the support exactly empty there
  Theta warm(anchor.alpha0, Vector::Zero(fit_data.p()));
  for (double lam : grid) {
    const PenaltySpec pen = penalty_at(path, lam);
    const FitResult fr = em_fit(fit_data, loss, pen, warm, opts.em);
    warm = fr.theta;
    PathPoint pt;
    pt.lambda = lam;
    pt.theta = opts.standardize ? stz.to_original(fr.theta) : fr.theta;
    pt.converged = fr.converged;
    pt.iterations = fr.iterations;
    path.points.push_back(std::move(pt));
  }
  return path;
}

struct TuneResult {
  std::vector<double> lambdas;
  std::vector<double> ve;
  std::vector<char> converged;
  int selected_index = -1;
  double selected_lambda = 0.0;
  Theta theta_nonrefit;
  Theta theta_refit;
  std::vector<Index> support;
};

using RefitCache = std::map<std::vector<Index>, Theta>;

inline Theta refit_cached(const SurvivalDataset& train, const std::vector<Index>& support,
                          const LossSpec& loss, const EmOptions& opts, RefitCache& cache) {
  auto it = cache.find(support);
  if (it != cache.end()) return it->second;
  Theta th = refit(train, support, loss, opts);
  cache.emplace(support, th);
  return th;
}

inline double validation_error(const SurvivalDataset& val, const Theta& theta, const LossSpec& loss,
                               Tuning tuning, Ve2Reference ref, const SurvivalDataset* train) {
  if (tuning == Tuning::VE1) return ve1(val, theta, loss);
  if (ref == Ve2Reference::Training) {
    if (!train) throw std::invalid_argument("VE2 training reference needs the training set");
    return ve2_with_reference(val, theta, loss, residual_distribution(*train, theta));
  }
  return ve2(val, theta, loss);
}

inline TuneResult select_from_path(const LambdaPath& path, const SurvivalDataset& train,
                                   const SurvivalDataset& val, const LossSpec& loss, bool use_refit,
                                   Tuning tuning, const TuneOptions& opts, RefitCache& cache) {
  TuneResult out;
  std::string diag;
  for (const PathPoint& pt : path.points) {
    out.lambdas.push_back(pt.lambda);
    out.converged.push_back(pt.converged ? 1 : 0);
    double v = std::numeric_limits<double>::quiet_NaN();
    if (pt.converged) {
      const Theta eval_theta = use_refit
                                   ? refit_cached(train, support_of(pt.theta), loss, opts.em, cache)
                                   : pt.theta;
      v = validation_error(val, eval_theta, loss, tuning, opts.ve2_ref, &train);
    } else {
      diag += "lambda=" + std::to_string(pt.lambda) + " hit max_iterations; ";
    }
    out.ve.push_back(v);
  }
  // descending grid + strict inequality breaks VE ties toward larger lambda
  int best = -1;
  for (std::size_t i = 0; i < out.ve.size(); ++i) {
    if (!out.converged[i]) continue;
    if (best < 0 || out.ve[i] < out.ve[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  if (best < 0)
    throw std::runtime_error("tune: no lambda on the grid converged. " + diag);
  out.selected_index = best;
  out.selected_lambda = out.lambdas[static_cast<std::size_t>(best)];
  out.theta_nonrefit = path.points[static_cast<std::size_t>(best)].theta;
  out.support = support_of(out.theta_nonrefit);
  out.theta_refit = refit_cached(train, out.support, loss, opts.em, cache);
  return out;
}

inline TuneResult tune(const SurvivalDataset& train, const SurvivalDataset& val,
                       const LossSpec& loss, PenaltyKind kind, bool use_refit, Tuning tuning,
                       const TuneOptions& opts = {}) {
  const LambdaPath path = fit_lambda_path(train, loss, kind, opts);
  RefitCache cache;
  return select_from_path(path, train, val, loss, use_refit, tuning, opts, cache);
}

// ---------------------------------------------------------------------------
// Somers' D screening

// Concordance over censoring-usable pairs: a pair is usable iff the smaller
// observed time is an event; feature ties count zero in the numerator.
inline double somers_d(const Eigen::Ref<const Vector>& feature, const Eigen::Ref<const Vector>& y,
                       const Eigen::Ref<const IntVector>& delta) {
  const Index n = y.size();
  if (feature.size() != n || delta.size() != n)
    throw std::invalid_argument("somers_d: length mismatch");
  long long usable = 0, net = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      Index lo, hi;
      if (y[i] < y[j]) {
        lo = i;
        hi = j;
      } else if (y[j] < y[i]) {
        lo = j;
        hi = i;
      } else {
        continue;
      }
      if (delta[lo] != 1) continue;
      ++usable;
      if (feature[lo] < feature[hi]) ++net;
      else if (feature[lo] > feature[hi]) --net;
    }
  }
  if (usable == 0) throw std::invalid_argument("somers_d: no usable pairs");
  return static_cast<double>(net) / static_cast<double>(usable);
}

struct ScreenResult {
  Vector scores;
  std::vector<Index> kept;    // descending |D|, ties by feature index
  std::vector<Index> failed;  // features whose score errored (set to 0)
};

inline Index default_screen_count(Index n) {
  return static_cast<Index>(std::floor(static_cast<double>(n) / std::log(static_cast<double>(n))));
}

inline ScreenResult screen(const SurvivalDataset& data, std::optional<Index> dn = std::nullopt) {
  data.validate();
  if (data.p() < 1) throw std::invalid_argument("screen: needs at least one feature");
  const Index d = std::min<Index>(dn.value_or(default_screen_count(data.n())), data.p());
  ScreenResult out;
  out.scores.resize(data.p());
  for (Index j = 0; j < data.p(); ++j) {
    try {
      out.scores[j] = somers_d(data.x.col(j), data.y, data.delta);
    } catch (const std::invalid_argument&) {
      out.scores[j] = 0.0;
      out.failed.push_back(j);
    }
  }
  std::vector<Index> idx(static_cast<std::size_t>(data.p()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::sort(idx.begin(), idx.end(), [&](Index a, Index b) {
    const double da = std::abs(out.scores[a]), db = std::abs(out.scores[b]);
    if (da != db) return da > db;
    return a < b;
  });
  out.kept.assign(idx.begin(), idx.begin() + d);
  return out;
}

}  // namespace aftsel
