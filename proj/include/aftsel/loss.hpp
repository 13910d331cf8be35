#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace aftsel {

enum class LossKind { Squared, Absolute, Huber, Tukey };

inline constexpr double kDefaultHuberH = 1.345;
inline constexpr double kDefaultTukeyT = 4.685;

struct LossSpec {
  LossKind kind = LossKind::Squared;
  double h = kDefaultHuberH;  // Huber robustness parameter
  double t = kDefaultTukeyT;  // Tukey robustness parameter

  static LossSpec squared() { return {LossKind::Squared}; }
  static LossSpec absolute() { return {LossKind::Absolute}; }
  static LossSpec huber(double hh = kDefaultHuberH) {
    if (!(hh > 0)) throw std::invalid_argument("Huber h must be positive");
    LossSpec s{LossKind::Huber};
    s.h = hh;
    return s;
  }
  static LossSpec tukey(double tt = kDefaultTukeyT) {
    if (!(tt > 0)) throw std::invalid_argument("Tukey t must be positive");
    LossSpec s{LossKind::Tukey};
    s.t = tt;
    return s;
  }

  // the robust losses divide residuals by a concomitant scale
  bool scaled() const { return kind == LossKind::Huber || kind == LossKind::Tukey; }

  std::string name() const {
    switch (kind) {
      case LossKind::Squared: return "squared";
      case LossKind::Absolute: return "absolute";
      case LossKind::Huber: return "huber";
      case LossKind::Tukey: return "tukey";
    }
    return "?";
  }
};

// Squared: x^2.  Absolute: |x|.
// Huber(h): x^2 inside [-h,h], h(2|x|-h) outside.
// Tukey(t): (t^2/6)[1 - (1-(x/t)^2)^3] inside [-t,t], constant t^2/6 outside.
inline double loss_value(const LossSpec& spec, double x) {
  switch (spec.kind) {
    case LossKind::Squared: return x * x;
    case LossKind::Absolute: return std::abs(x);
    case LossKind::Huber: {
      const double a = std::abs(x);
      return a <= spec.h ? x * x : spec.h * (2.0 * a - spec.h);
    }
    case LossKind::Tukey: {
      const double a = std::abs(x);
      if (a > spec.t) return spec.t * spec.t / 6.0;
      const double u = 1.0 - (x / spec.t) * (x / spec.t);
      return spec.t * spec.t / 6.0 * (1.0 - u * u * u);
    }
  }
  return 0.0;
}

inline double loss_derivative(const LossSpec& spec, double x) {
  switch (spec.kind) {
    case LossKind::Squared: return 2.0 * x;
    case LossKind::Absolute: return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
    case LossKind::Huber: {
      if (std::abs(x) <= spec.h) return 2.0 * x;
      return x > 0 ? 2.0 * spec.h : -2.0 * spec.h;
    }
    case LossKind::Tukey: {
      if (std::abs(x) > spec.t) return 0.0;
      const double u = 1.0 - (x / spec.t) * (x / spec.t);
      return x * u * u;
    }
  }
  return 0.0;
}

// S(z, gamma) = sgn(z) (|z| - gamma)_+
inline double soft_threshold(double z, double gamma) {
  if (gamma < 0) throw std::invalid_argument("soft_threshold: negative gamma");
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

}  // namespace aftsel
