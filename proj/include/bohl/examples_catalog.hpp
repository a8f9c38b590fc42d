#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bohl/linear_system.hpp"

namespace bohl {

// Parameters for the built-in example catalog.  Unknown keys are rejected by
// build_example so config typos surface early.
struct ExampleSpec {
  std::string name;
  std::map<std::string, double> params;
  SequenceKind sequence = SequenceKind::paper51;
  std::size_t horizon_segments = 0;  // 0 -> per-example default
};

inline std::vector<std::string> example_names() {
  return {"prop52",   "eps_perturbed", "diag_pm1",  "remark26", "remark59",
          "sec6",     "product3d",     "scalar_const", "diag_const"};
}

namespace detail {

inline double param_or(const ExampleSpec& s, const std::string& key, double fallback) {
  auto it = s.params.find(key);
  return it == s.params.end() ? fallback : it->second;
}

inline SwitchingSequence alternation_sequence(SequenceKind kind, std::size_t horizon) {
  if (kind != SequenceKind::paper51 && kind != SequenceKind::mild51)
    throw std::invalid_argument("this example requires the paper51 or mild51 sequence");
  return SwitchingSequence::make(kind, horizon);
}

inline SwitchingSequence boundaries_to_sequence(SequenceKind kind, const std::vector<DD>& bnds) {
  std::vector<double> gaps;
  gaps.reserve(bnds.size() - 1);
  for (std::size_t i = 1; i < bnds.size(); ++i)
    gaps.push_back(dd_sub(bnds[i], bnds[i - 1]).value());
  SwitchingSequence seq(kind, std::move(gaps));
  return seq;
}

}  // namespace detail

// Alternating two-phase planar system A1 = [[-1, d],[0,-1]], A2 = [[-1,0],[0,0]]
// on a sequence with diverging gaps.
inline LinearSystem make_prop52(double delta, SequenceKind kind, std::size_t horizon) {
  auto seq = detail::alternation_sequence(kind, horizon);
  Matrix a1(2, 2), a2(2, 2);
  a1 << -1.0, delta, 0.0, -1.0;
  a2 << -1.0, 0.0, 0.0, 0.0;
  PiecewisePhases pw{{a1, a2}, [](std::size_t s) { return s % 2; }};
  double bound = std::max(a1.operatorNorm(), a2.operatorNorm());
  return LinearSystem("prop52", 2, std::move(seq), std::move(pw), bound,
                      StructureTags{false, true, true});
}

// Same switching pattern with the second diagonal entry lifted by eps.
inline LinearSystem make_eps_perturbed(double eps, double delta, SequenceKind kind,
                                       std::size_t horizon) {
  auto seq = detail::alternation_sequence(kind, horizon);
  Matrix a1(2, 2), a2(2, 2);
  a1 << -1.0, delta, 0.0, -1.0 + eps;
  a2 << -1.0, 0.0, 0.0, eps;
  PiecewisePhases pw{{a1, a2}, [](std::size_t s) { return s % 2; }};
  double bound = std::max(a1.operatorNorm(), a2.operatorNorm());
  return LinearSystem("eps_perturbed", 2, std::move(seq), std::move(pw), bound,
                      StructureTags{false, true, true});
}

enum class DiagArrangement { balanced, int_nonneg, int_nonpos };

// diag(0, a(t)) with a alternating +1 / -1; the three arrangements control
// the sign of the running integral of a.
inline LinearSystem make_diag_pm1(DiagArrangement arr, std::size_t horizon) {
  std::vector<double> gaps(horizon);
  for (std::size_t k = 0; k < horizon; ++k) {
    switch (arr) {
      case DiagArrangement::balanced:
        gaps[k] = double(k + 1) * double(k + 1);
        break;
      case DiagArrangement::int_nonneg:
        // +1 segments get the larger gap of each pair, keeping the integral >= 0.
        gaps[k] = k % 2 == 0 ? double(k + 2) * double(k + 2) : double(k) * double(k);
        break;
      case DiagArrangement::int_nonpos:
        // +1 gaps grow slowly, -1 gaps quadratically: integral <= 0 past T_2.
        gaps[k] = k % 2 == 0 ? double(k / 2 + 1) : double(k / 2 + 2) * double(k / 2 + 2);
        break;
    }
  }
  SwitchingSequence seq(SequenceKind::custom, std::move(gaps));
  Matrix up = Matrix::Zero(2, 2), down = Matrix::Zero(2, 2);
  up(1, 1) = 1.0;
  down(1, 1) = -1.0;
  PiecewisePhases pw{{up, down}, [](std::size_t s) { return s % 2; }};
  return LinearSystem("diag_pm1", 2, std::move(seq), std::move(pw), 1.0,
                      StructureTags{true, true, true});
}

// Scalar rule a(t) = n on [2n, 2n+1], -(2n+1) on [2n+1, 2n+2]: unbounded
// coefficients with unit-length runs.
inline LinearSystem make_remark26(std::size_t horizon_segments) {
  std::vector<double> gaps(horizon_segments, 1.0);
  SwitchingSequence seq(SequenceKind::custom, std::move(gaps));
  ScalarPiecewise sc{[](std::size_t s) {
    return s % 2 == 0 ? double(s / 2) : -double(s);
  }};
  return LinearSystem("remark26", 1, std::move(seq), std::move(sc), std::nullopt,
                      StructureTags{true, true, false});
}

// Unbounded triangular A(t) = [[0, 2e^t],[0,1]] with the explicit normalized
// solution map (a, b) -> (a + b(e^{2t}-1), b e^t).
inline LinearSystem make_remark59(std::size_t horizon_segments) {
  auto seq = SwitchingSequence::make(SequenceKind::dyadic, horizon_segments);
  GeneralCallable gc;
  gc.coeff = [](double t) {
    Matrix m(2, 2);
    m << 0.0, 2.0 * std::exp(t), 0.0, 1.0;
    return m;
  };
  gc.exact = [](const Vector& xi, double t) {
    // b(e^{2t}-1) in log form: log|b| + 2t + log(1 - e^{-2t}).
    SLog a = SLog::from(xi[0]);
    SLog b = SLog::from(xi[1]);
    SLog growth =
        t > 0.0 ? SLog::make(2.0 * t + std::log1p(-std::exp(-2.0 * t)), 1) : SLog{};
    std::vector<SLog> comps(2);
    comps[0] = slog_add(a, slog_mul(b, growth));
    comps[1] = b.sgn == 0 ? SLog{} : SLog::make(b.lg + t, b.sgn);
    if (comps[0].sgn == 0 && comps[1].sgn == 0) throw std::runtime_error("zero state");
    return log_vector_from_components(comps);
  };
  return LinearSystem("remark59", 2, std::move(seq), std::move(gc), std::nullopt,
                      StructureTags{false, true, false});
}

// Switched slow-fast triangular system on power-of-two boundaries
// {0, 1, 2, 4, ...}: A1 = [[-a, d],[0,-b]] on even segments, A2 = [[-a, d],[0,g]]
// on odd ones.
inline LinearSystem make_sec6(double alpha, double beta, double gamma, double delta,
                              std::size_t horizon_segments) {
  std::ostringstream bad;
  if (!(alpha > 0.0 && beta > 0.0 && gamma > 0.0 && delta > 0.0))
    bad << "alpha, beta, gamma, delta must all be positive";
  else if (!(beta > 2.0 * gamma + 3.0 * alpha))
    bad << "beta > 2*gamma + 3*alpha fails (" << beta << " <= " << 2.0 * gamma + 3.0 * alpha << ")";
  else if (!(gamma > 2.0 * alpha))
    bad << "gamma > 2*alpha fails (" << gamma << " <= " << 2.0 * alpha << ")";
  else if (!(delta >= 1.0))
    bad << "delta >= 1 fails (" << delta << " < 1)";
  if (!bad.str().empty()) throw std::invalid_argument("sec6: " + bad.str());

  std::vector<double> gaps(horizon_segments);
  gaps[0] = 1.0;
  for (std::size_t k = 1; k < horizon_segments; ++k) gaps[k] = std::ldexp(1.0, int(k) - 1);
  SwitchingSequence seq(SequenceKind::custom, std::move(gaps));
  Matrix a1(2, 2), a2(2, 2);
  a1 << -alpha, delta, 0.0, -beta;
  a2 << -alpha, delta, 0.0, gamma;
  PiecewisePhases pw{{a1, a2}, [](std::size_t s) { return s % 2; }};
  double bound = std::max(a1.operatorNorm(), a2.operatorNorm());
  return LinearSystem("sec6", 2, std::move(seq), std::move(pw), bound,
                      StructureTags{false, true, true});
}

// Scalar +-r alternation on dyadic runs (both phases see diverging run lengths).
inline LinearSystem make_scalar_alternating(double r, std::size_t horizon_segments,
                                            const std::string& name = "scalar_pm") {
  auto seq = SwitchingSequence::make(SequenceKind::dyadic, horizon_segments);
  ScalarPiecewise sc{[r](std::size_t s) { return s % 2 == 0 ? r : -r; }};
  return LinearSystem(name, 1, std::move(seq), std::move(sc), std::abs(r),
                      StructureTags{true, true, true});
}

inline LinearSystem make_scalar_const(double rate, std::size_t horizon_segments) {
  auto seq = SwitchingSequence::make(SequenceKind::dyadic, horizon_segments);
  ScalarPiecewise sc{[rate](std::size_t) { return rate; }};
  return LinearSystem("scalar_const", 1, std::move(seq), std::move(sc), std::abs(rate),
                      StructureTags{true, true, true});
}

inline LinearSystem make_diag_const(std::vector<double> rates, std::size_t horizon_segments) {
  auto seq = SwitchingSequence::make(SequenceKind::dyadic, horizon_segments);
  Matrix m = Matrix::Zero(Eigen::Index(rates.size()), Eigen::Index(rates.size()));
  double bound = 0.0;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    m(Eigen::Index(i), Eigen::Index(i)) = rates[i];
    bound = std::max(bound, std::abs(rates[i]));
  }
  PiecewisePhases pw{{m}, [](std::size_t) { return std::size_t(0); }};
  return LinearSystem("diag_const", int(rates.size()), std::move(seq), std::move(pw), bound,
                      StructureTags{true, true, true});
}

// Direct sum of a scalar +-1/2 alternation and the prop52 plane; the merged
// switching grid carries both block structures.
inline LinearSystem make_product3d(double delta, std::size_t prop52_horizon) {
  auto plane = std::make_shared<const LinearSystem>(
      make_prop52(delta, SequenceKind::paper51, prop52_horizon));
  double h = plane->horizon();
  std::size_t dyadic_segments = 1;
  while (std::ldexp(1.0, int(dyadic_segments)) < h && dyadic_segments < 1022) ++dyadic_segments;
  auto line = std::make_shared<const LinearSystem>(
      make_scalar_alternating(0.5, dyadic_segments, "scalar_pm_half"));

  // Merge boundary clocks of both blocks, capped at the shorter horizon.
  std::vector<DD> bnds;
  for (std::size_t k = 0; k <= plane->sequence().segment_count(); ++k)
    bnds.push_back(plane->sequence().time_dd(k));
  for (std::size_t k = 0; k <= line->sequence().segment_count(); ++k) {
    DD t = line->sequence().time_dd(k);
    if (t.value() <= h) bnds.push_back(t);
  }
  std::sort(bnds.begin(), bnds.end(), [](const DD& a, const DD& b) { return a.value() < b.value(); });
  std::vector<DD> dedup;
  for (const auto& t : bnds)
    if (dedup.empty() || dd_sub(t, dedup.back()).value() > 1e-12 * std::max(1.0, t.value()))
      dedup.push_back(t);
  auto seq = detail::boundaries_to_sequence(SequenceKind::custom, dedup);

  BlockDiagonal bd{{line, plane}};
  double bound = std::max(0.5, *plane->bound());
  return LinearSystem("product3d", 3, std::move(seq), std::move(bd), bound,
                      StructureTags{false, true, true});
}

inline LinearSystem build_example(const ExampleSpec& spec) {
  auto horizon = [&](std::size_t dflt) {
    return spec.horizon_segments > 0 ? spec.horizon_segments : dflt;
  };
  if (spec.name == "prop52")
    return make_prop52(detail::param_or(spec, "delta", 1.0), spec.sequence, horizon(14));
  if (spec.name == "eps_perturbed")
    return make_eps_perturbed(detail::param_or(spec, "eps", 0.2),
                              detail::param_or(spec, "delta", 1.0), spec.sequence, horizon(14));
  if (spec.name == "diag_pm1") {
    int arr = int(detail::param_or(spec, "arrangement", 0.0));
    if (arr < 0 || arr > 2) throw std::invalid_argument("diag_pm1: arrangement must be 0, 1 or 2");
    return make_diag_pm1(DiagArrangement(arr), horizon(40));
  }
  if (spec.name == "remark26") return make_remark26(horizon(400));
  if (spec.name == "remark59") return make_remark59(horizon(11));
  if (spec.name == "sec6")
    return make_sec6(detail::param_or(spec, "alpha", 1.0), detail::param_or(spec, "beta", 9.0),
                     detail::param_or(spec, "gamma", 2.5), detail::param_or(spec, "delta", 1.0),
                     horizon(13));
  if (spec.name == "product3d")
    return make_product3d(detail::param_or(spec, "delta", 1.0), horizon(14));
  if (spec.name == "scalar_const")
    return make_scalar_const(detail::param_or(spec, "rate", -1.0), horizon(10));
  if (spec.name == "diag_const") {
    std::vector<double> rates;
    for (int i = 1; i <= 8; ++i) {
      auto it = spec.params.find("rate" + std::to_string(i));
      if (it == spec.params.end()) break;
      rates.push_back(it->second);
    }
    if (rates.empty()) rates = {-1.0, 1.0};
    return make_diag_const(std::move(rates), horizon(10));
  }
  throw std::invalid_argument("unknown example name: " + spec.name);
}

}  // namespace bohl
