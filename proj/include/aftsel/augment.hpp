#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "aftsel/km.hpp"
#include "aftsel/loss.hpp"
#include "aftsel/types.hpp"

namespace aftsel {

// Weighted pseudo-observations encoding the E-step. Effectively-uncensored
// rows map to themselves with weight 1; a censored row i expands into one
// pseudo-row per uncensored residual rank above it,
//   y = e_u + alpha + x_i'beta,  w = m_u / sum_{v>i} m_v,
// keeping the source row's covariates. x_src is a copy of the source
// covariate matrix; pseudo-rows address it through x_ref.
struct AugmentedDataset {
  Vector y_new;
  std::vector<Index> x_ref;
  Vector w_new;
  std::vector<std::pair<Index, int>> source;  // (original row, within-row counter v)
  Matrix x_src;

  Index size() const { return y_new.size(); }
  Index p() const { return x_src.cols(); }
  double xv(Index k, Index j) const { return x_src(x_ref[k], j); }
};

inline AugmentedDataset augment(const SurvivalDataset& data, const Theta& theta) {
  const KMResidualDistribution kmd = residual_distribution(data, theta);
  const Index n = data.n();

  // suffix sums of m give the tail normalizers in O(n)
  Vector tail_mass(n + 1);
  tail_mass[n] = 0.0;
  for (Index r = n - 1; r >= 0; --r) tail_mass[r] = tail_mass[r + 1] + kmd.m[r];

  Index K = 0;
  std::vector<Index> c(n, 0);
  Index events_above = 0;
  for (Index r = n - 1; r >= 0; --r) {
    c[r] = kmd.delta_eff[r] ? 1 : events_above;
    if (kmd.delta_eff[r]) ++events_above;
    K += c[r];
  }

  AugmentedDataset aug;
  aug.x_src = data.x;
  aug.y_new.resize(K);
  aug.w_new.resize(K);
  aug.x_ref.resize(K);
  aug.source.resize(K);

  Index k = 0;
  for (Index r = 0; r < n; ++r) {
    const Index row = kmd.order[r];
    if (kmd.delta_eff[r]) {
      aug.y_new[k] = data.y[row];
      aug.w_new[k] = 1.0;
      aug.x_ref[k] = row;
      aug.source[k] = {row, 1};
      ++k;
      continue;
    }
    const double eta = theta.predict(data.x.row(row));
    const Index begin = k;
    double s = 0.0;
    int v = 0;
    for (Index u = r + 1; u < n; ++u) {
      if (!kmd.delta_eff[u]) continue;
      aug.y_new[k] = kmd.e[u] + eta;
      aug.w_new[k] = kmd.m[u];
      aug.x_ref[k] = row;
      aug.source[k] = {row, ++v};
      s += kmd.m[u];
      ++k;
    }
    if (v == 0 || !(s > 0)) throw std::logic_error("augment: censored row with empty tail");
    detail::normalize_to_one(aug.w_new.data() + begin, static_cast<std::size_t>(k - begin));
  }
  return aug;
}

// E{L(T, theta_eval) | ...} for the effectively-censored rank under the
// reference residual distribution: sum_{u>rank} w_u * L(e_u + eta_ref - eta_eval).
// eta_* is the row's linear predictor under the respective parameters.
inline double expected_censored_loss(const KMResidualDistribution& kmd, Index rank,
                                     double eta_ref, double eta_eval, const LossSpec& loss) {
  const auto tail = tail_weights(kmd, rank);
  double acc = 0.0;
  for (const auto& [u, w] : tail) acc += w * loss_value(loss, kmd.e[u] + eta_ref - eta_eval);
  return acc;
}

inline double expected_censored_loss(const KMResidualDistribution& kmd, Index rank,
                                     const Eigen::Ref<const Vector>& x_row,
                                     const Theta& theta_ref, const Theta& theta_eval,
                                     const LossSpec& loss) {
  return expected_censored_loss(kmd, rank, theta_ref.predict(x_row), theta_eval.predict(x_row), loss);
}

}  // namespace aftsel
