#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace aftsel {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IntVector = Eigen::VectorXi;
using Index = Eigen::Index;

// Intercept plus regression coefficients, both in log-time units.
struct Theta {
  double alpha = 0.0;
  Vector beta;

  Theta() = default;
  Theta(double a, Vector b) : alpha(a), beta(std::move(b)) {}
  static Theta zero(Index p) { return Theta(0.0, Vector::Zero(p)); }

  Index p() const { return beta.size(); }

  double predict(const Eigen::Ref<const Vector>& x_row) const {
    return alpha + x_row.dot(beta);
  }

  bool finite() const {
    if (!std::isfinite(alpha)) return false;
    return beta.allFinite();
  }

  // sup-norm distance over (alpha, beta), used by the EM stopping rule
  double sup_distance(const Theta& other) const {
    double d = std::abs(alpha - other.alpha);
    if (beta.size() != other.beta.size())
      throw std::invalid_argument("Theta::sup_distance: dimension mismatch");
    if (beta.size() > 0) d = std::max(d, (beta - other.beta).cwiseAbs().maxCoeff());
    return d;
  }
};

// Contiguous group blocks derived from per-feature labels.
struct GroupIndex {
  std::vector<Index> start;
  std::vector<Index> size;

  Index count() const { return static_cast<Index>(start.size()); }
};

inline GroupIndex build_group_index(const std::vector<int>& labels) {
  GroupIndex gi;
  if (labels.empty()) return gi;
  Index begin = 0;
  for (Index j = 1; j <= static_cast<Index>(labels.size()); ++j) {
    if (j == static_cast<Index>(labels.size()) || labels[j] != labels[begin]) {
      gi.start.push_back(begin);
      gi.size.push_back(j - begin);
      begin = j;
    }
  }
  // a label reappearing after its block ended means the partition is not contiguous
  for (std::size_t a = 0; a < gi.start.size(); ++a)
    for (std::size_t b = a + 1; b < gi.start.size(); ++b)
      if (labels[gi.start[a]] == labels[gi.start[b]])
        throw std::invalid_argument("groups must be contiguous by label");
  return gi;
}

// Observed right-censored sample: y_i = min(T_i, C_i) on the log scale,
// delta_i = 1{T_i <= C_i}, covariate rows x. t_true carries the latent
// log-times in simulations so test metrics can score against them.
struct SurvivalDataset {
  Vector y;
  IntVector delta;
  Matrix x;
  std::vector<int> groups;  // empty = ungrouped
  Vector t_true;            // size 0 = absent

  Index n() const { return y.size(); }
  Index p() const { return x.cols(); }
  bool has_groups() const { return !groups.empty(); }

  void validate() const {
    const Index nn = y.size();
    if (nn < 2) throw std::invalid_argument("dataset needs n >= 2");
    if (delta.size() != nn || x.rows() != nn)
      throw std::invalid_argument("y, delta, x row counts disagree");
    if (!y.allFinite()) throw std::invalid_argument("non-finite observed time");
    for (Index i = 0; i < nn; ++i)
      if (delta[i] != 0 && delta[i] != 1)
        throw std::invalid_argument("status must be 0 or 1");
    if (!x.allFinite()) throw std::invalid_argument("non-finite covariate");
    if (!groups.empty()) {
      if (static_cast<Index>(groups.size()) != x.cols())
        throw std::invalid_argument("group labels must cover every feature");
      build_group_index(groups);
    }
    if (t_true.size() != 0 && t_true.size() != nn)
      throw std::invalid_argument("t_true length mismatch");
  }

  SurvivalDataset restricted_to(const std::vector<Index>& support) const {
    SurvivalDataset out;
    out.y = y;
    out.delta = delta;
    out.t_true = t_true;
    out.x.resize(x.rows(), static_cast<Index>(support.size()));
    for (std::size_t j = 0; j < support.size(); ++j) out.x.col(static_cast<Index>(j)) = x.col(support[j]);
    return out;
  }
};

}  // namespace aftsel
