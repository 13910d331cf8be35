#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

namespace aftsel {

namespace detail {

// Smallest value v with cumulative weight(<= v) >= target, found by 3-way
// quickselect on (value, weight) pairs. Average O(n); the tie rule is exact
// (equal values pool their weight regardless of input order).
inline double weighted_threshold_select(std::vector<std::pair<double, double>>& a, double target) {
  std::size_t lo = 0, hi = a.size();
  while (true) {
    if (hi - lo == 1) return a[lo].first;
    // median-of-three pivot, deterministic
    const double x = a[lo].first, y = a[lo + (hi - lo) / 2].first, z = a[hi - 1].first;
    const double pivot = std::max(std::min(x, y), std::min(std::max(x, y), z));
    std::size_t lt = lo, i = lo, gt = hi;
    while (i < gt) {
      if (a[i].first < pivot) {
        std::swap(a[i], a[lt]);
        ++lt;
        ++i;
      } else if (a[i].first > pivot) {
        --gt;
        std::swap(a[i], a[gt]);
      } else {
        ++i;
      }
    }
    double w_less = 0.0, w_eq = 0.0;
    for (std::size_t k = lo; k < lt; ++k) w_less += a[k].second;
    for (std::size_t k = lt; k < gt; ++k) w_eq += a[k].second;
    if (w_less >= target) {
      hi = lt;
    } else if (w_less + w_eq >= target) {
      return pivot;
    } else {
      target -= w_less + w_eq;
      lo = gt;
    }
  }
}

}  // namespace detail

class WeightedMedianWorkspace {
 public:
  std::vector<std::pair<double, double>>& buffer(std::size_t n) {
    buf_.clear();
    buf_.reserve(n);
    return buf_;
  }

 private:
  std::vector<std::pair<double, double>> buf_;
};

// argmin_u sum_k w_k |v_k - u|; when the minimizer is an interval, its left
// endpoint (always a data value) is returned.
inline double weighted_median(const double* values, const double* weights, std::size_t n,
                              WeightedMedianWorkspace& ws) {
  if (n == 0) throw std::invalid_argument("weighted_median: empty input");
  double total = 0.0;
  auto& buf = ws.buffer(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (!(weights[k] > 0) || !std::isfinite(weights[k]))
      throw std::invalid_argument("weighted_median: weights must be positive");
    if (!std::isfinite(values[k])) throw std::invalid_argument("weighted_median: non-finite value");
    buf.emplace_back(values[k], weights[k]);
    total += weights[k];
  }
  return detail::weighted_threshold_select(buf, 0.5 * total);
}

inline double weighted_median(const std::vector<double>& values, const std::vector<double>& weights) {
  if (values.size() != weights.size())
    throw std::invalid_argument("weighted_median: length mismatch");
  WeightedMedianWorkspace ws;
  return weighted_median(values.data(), weights.data(), values.size(), ws);
}

struct ScaleEstimate {
  double d = 1.0;
};

inline constexpr double kWmadNormalizer = 0.6745;

// Normalized weighted median absolute deviation:
//   d = WMedian(|r - WMedian(r, w)|, w) / 0.6745,
// floored so downstream divisions by d stay finite on degenerate inputs.
inline ScaleEstimate wmad_scale(const double* r, const double* w, std::size_t n,
                                WeightedMedianWorkspace& ws) {
  const double center = weighted_median(r, w, n, ws);
  auto& buf = ws.buffer(n);
  double w_total = 0.0, abs_mean = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    buf.emplace_back(std::abs(r[k] - center), w[k]);
    w_total += w[k];
    abs_mean += w[k] * std::abs(r[k]);
  }
  abs_mean /= w_total;
  const double mad = detail::weighted_threshold_select(buf, 0.5 * w_total);
  const double floor = 1e-8 * (1.0 + abs_mean);
  return {std::max(mad / kWmadNormalizer, floor)};
}

inline ScaleEstimate wmad_scale(const std::vector<double>& r, const std::vector<double>& w) {
  if (r.size() != w.size()) throw std::invalid_argument("wmad_scale: length mismatch");
  WeightedMedianWorkspace ws;
  return wmad_scale(r.data(), w.data(), r.size(), ws);
}

}  // namespace aftsel
