#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "aftsel/types.hpp"

namespace aftsel {

// Residuals e_i = y_i - alpha - x_i'beta sorted ascending, with the
// Kaplan-Meier weights m_i of the residual distribution estimator.
// delta_eff is the reordered event indicator after the Buckley-James
// override: the largest residual is always treated as an event.
struct KMResidualDistribution {
  std::vector<Index> order;         // rank -> original row
  Vector e;                         // ascending residuals
  std::vector<std::uint8_t> delta_eff;
  Vector m;                         // KM point masses, 0 on censored ranks

  Index n() const { return e.size(); }
};

// Sort residuals ascending; ties put uncensored before censored, then keep
// original index order. The override touches delta_eff only, never the data.
inline KMResidualDistribution order_residuals(const SurvivalDataset& data, const Theta& theta) {
  data.validate();
  if (!theta.finite() || theta.p() != data.p())
    throw std::invalid_argument("order_residuals: theta invalid for dataset");
  const Index n = data.n();
  Vector resid(n);
  for (Index i = 0; i < n; ++i) {
    resid[i] = data.y[i] - theta.predict(data.x.row(i));
    if (!std::isfinite(resid[i])) throw std::invalid_argument("order_residuals: non-finite residual");
  }
  KMResidualDistribution kmd;
  kmd.order.resize(n);
  std::iota(kmd.order.begin(), kmd.order.end(), Index{0});
  std::sort(kmd.order.begin(), kmd.order.end(), [&](Index a, Index b) {
    if (resid[a] != resid[b]) return resid[a] < resid[b];
    if (data.delta[a] != data.delta[b]) return data.delta[a] > data.delta[b];
    return a < b;
  });
  kmd.e.resize(n);
  kmd.delta_eff.resize(n);
  for (Index r = 0; r < n; ++r) {
    kmd.e[r] = resid[kmd.order[r]];
    kmd.delta_eff[r] = static_cast<std::uint8_t>(data.delta[kmd.order[r]]);
  }
  kmd.delta_eff[n - 1] = 1;
  return kmd;
}

// m_1 = delta_1/n,  m_i = delta_i/(n-i+1) * prod_{j<i} ((n-j)/(n-j+1))^delta_j
inline KMResidualDistribution km_weights(KMResidualDistribution kmd) {
  const Index n = kmd.n();
  kmd.m.resize(n);
  double prod = 1.0;
  for (Index r = 0; r < n; ++r) {
    const double i = static_cast<double>(r + 1);
    const double nn = static_cast<double>(n);
    kmd.m[r] = kmd.delta_eff[r] ? prod / (nn - i + 1.0) : 0.0;
    if (kmd.delta_eff[r]) prod *= (nn - i) / (nn - i + 1.0);
  }
  return kmd;
}

inline KMResidualDistribution residual_distribution(const SurvivalDataset& data, const Theta& theta) {
  return km_weights(order_residuals(data, theta));
}

namespace detail {

// Rescale so the natural-order sum is exactly 1: divide the first n-1
// entries, then define the last as 1 minus their running sum. The final
// addition partial + (1 - partial) then rounds to exactly 1.
inline void normalize_to_one(double* w, std::size_t n) {
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += w[k];
  double partial = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    w[k] /= s;
    partial += w[k];
  }
  const double last = 1.0 - partial;
  if (last > 0.0) {
    w[n - 1] = last;
  } else {
    w[n - 1] /= s;  // pathological mass distribution; stay within one ulp
  }
}

}  // namespace detail

// w_ij = m_j / sum_{u>i} m_u over uncensored ranks j > i, renormalized to
// sum to one exactly. Precondition: rank i is effectively censored.
inline std::vector<std::pair<Index, double>> tail_weights(const KMResidualDistribution& kmd, Index rank) {
  if (rank < 0 || rank >= kmd.n()) throw std::invalid_argument("tail_weights: rank out of range");
  if (kmd.delta_eff[rank]) throw std::invalid_argument("tail_weights: rank is uncensored");
  if (kmd.m.size() != kmd.n()) throw std::invalid_argument("tail_weights: KM weights not computed");
  std::vector<std::pair<Index, double>> out;
  double s = 0.0;
  for (Index u = rank + 1; u < kmd.n(); ++u) {
    if (kmd.delta_eff[u]) {
      out.emplace_back(u, kmd.m[u]);
      s += kmd.m[u];
    }
  }
  if (out.empty() || !(s > 0))
    throw std::logic_error("tail_weights: empty tail despite largest-residual override");
  std::vector<double> w(out.size());
  for (std::size_t q = 0; q < out.size(); ++q) w[q] = out[q].second;
  detail::normalize_to_one(w.data(), w.size());
  for (std::size_t q = 0; q < out.size(); ++q) out[q].second = w[q];
  return out;
}

}  // namespace aftsel
