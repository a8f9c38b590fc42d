#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace bohl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Norm { euclidean, maximum };

inline const char* to_string(Norm n) {
  return n == Norm::euclidean ? "euclidean" : "max";
}

// Signed value in log representation: sgn * exp(lg).  sgn == 0 encodes zero.
struct SLog {
  double lg = -std::numeric_limits<double>::infinity();
  int sgn = 0;

  static SLog from(double x) {
    if (x == 0.0) return {};
    return {std::log(std::abs(x)), x > 0.0 ? 1 : -1};
  }
  static SLog make(double lg, int sgn) {
    if (sgn == 0) return {};
    return {lg, sgn > 0 ? 1 : -1};
  }
  double value() const { return sgn == 0 ? 0.0 : sgn * std::exp(lg); }
};

inline SLog slog_mul(SLog a, SLog b) {
  if (a.sgn == 0 || b.sgn == 0) return {};
  return {a.lg + b.lg, a.sgn * b.sgn};
}

inline SLog slog_add(SLog a, SLog b) {
  if (a.sgn == 0) return b;
  if (b.sgn == 0) return a;
  const SLog& big = a.lg >= b.lg ? a : b;
  const SLog& small = a.lg >= b.lg ? b : a;
  double d = small.lg - big.lg;  // <= 0
  if (a.sgn == b.sgn) return {big.lg + std::log1p(std::exp(d)), a.sgn};
  double m = -std::expm1(d);  // 1 - e^d in [0,1]
  if (m == 0.0) return {};    // exact cancellation
  return {big.lg + std::log(m), big.sgn};
}

// Solution state as unit direction + log magnitude; survives horizons where
// the norm spans thousands of e-folds.
struct LogVector {
  Vector direction;      // unit in Euclidean norm
  double log_mag = 0.0;  // ln ||x||_2

  double norm_log(Norm n = Norm::euclidean) const {
    if (n == Norm::euclidean) return log_mag;
    return log_mag + std::log(direction.lpNorm<Eigen::Infinity>());
  }

  // Materialized coordinates; refuses when exp would leave double range.
  Vector materialize() const {
    if (std::abs(log_mag) > 700.0)
      throw std::domain_error("log magnitude too large to materialize");
    return std::exp(log_mag) * direction;
  }
};

inline LogVector normalized_log_vector(const Vector& v, double extra_log = 0.0) {
  double n = v.norm();
  if (!(n > 0.0) || !std::isfinite(n))
    throw std::runtime_error("cannot normalize zero or non-finite vector");
  return {v / n, extra_log + std::log(n)};
}

// Assemble a LogVector from per-component signed-log values.
inline LogVector log_vector_from_components(const std::vector<SLog>& comps) {
  double mx = -std::numeric_limits<double>::infinity();
  for (const auto& c : comps)
    if (c.sgn != 0) mx = std::max(mx, c.lg);
  if (!std::isfinite(mx)) throw std::runtime_error("all components vanish");
  Vector dir(static_cast<Eigen::Index>(comps.size()));
  for (std::size_t i = 0; i < comps.size(); ++i)
    dir[static_cast<Eigen::Index>(i)] =
        comps[i].sgn == 0 ? 0.0 : comps[i].sgn * std::exp(comps[i].lg - mx);
  return normalized_log_vector(dir, mx);
}

}  // namespace bohl
