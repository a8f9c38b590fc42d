#pragma once

#include <algorithm>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bohl/propagation.hpp"
#include "bohl/rk.hpp"

namespace bohl {

// x' = A(t)x + f(t,x) with a declared envelope ||f(t,x)|| <= L ||x||^q on the
// ball of radius delta_r.
class NonlinearSystem {
 public:
  NonlinearSystem(LinearSystem linear, std::function<Vector(double, const Vector&)> f, double L,
                  double q, double delta_r, std::uint64_t seed = 7)
      : linear_(std::move(linear)), f_(std::move(f)), L_(L), q_(q), delta_r_(delta_r) {
    if (!(q_ > 1.0)) throw std::invalid_argument("perturbation exponent must exceed 1");
    if (!(L_ > 0.0) || !(delta_r_ > 0.0))
      throw std::invalid_argument("perturbation constants must be positive");
    validate(seed);
  }

  const LinearSystem& linear() const { return linear_; }
  Vector perturbation(double t, const Vector& x) const { return f_(t, x); }
  double scale() const { return L_; }
  double exponent() const { return q_; }
  double radius() const { return delta_r_; }

 private:
  void validate(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ut(0.0, std::min(linear_.horizon(), 1e4));
    std::normal_distribution<double> gauss;
    int d = linear_.dimension();
    for (int i = 0; i < 1000; ++i) {
      double t = ut(rng);
      Vector x(d);
      for (int j = 0; j < d; ++j) x[j] = gauss(rng);
      x *= delta_r_ * std::pow(std::uniform_real_distribution<double>(0.0, 1.0)(rng), 1.0 / d) /
           x.norm();
      if (f_(t, Vector::Zero(d)).norm() != 0.0)
        throw std::invalid_argument("perturbation must vanish at the origin");
      double fn = f_(t, x).norm();
      if (fn > L_ * std::pow(x.norm(), q_) * (1.0 + 1e-9))
        throw std::invalid_argument("perturbation violates its declared envelope at t=" +
                                    std::to_string(t));
    }
  }

  LinearSystem linear_;
  std::function<Vector(double, const Vector&)> f_;
  double L_, q_, delta_r_;
};

struct Trajectory {
  std::vector<double> t;
  std::vector<Vector> x;
  bool blew_up = false;
  double blowup_time = 0.0;
  double blowup_norm = 0.0;
};

struct SimulateOptions {
  double blowup_threshold = 1e6;
  double rel_tol = 1e-9;
  double abs_tol = 1e-14;
  std::size_t max_points = 200000;
};

namespace detail {

inline void require_steppable(const LinearSystem& sys) {
  if ((sys.is_piecewise() || sys.is_scalar()) && sys.sequence().kind() == SequenceKind::paper51)
    throw std::invalid_argument(
        "step-wise integration cannot cross paper51 segment lengths; use mild51 or dyadic");
}

}  // namespace detail

// Adaptive trajectory of the perturbed system; stops early with a blow-up
// marker whose crossing time is bisected to relative accuracy 1e-6.
inline Trajectory simulate(const NonlinearSystem& nsys, const Vector& x0, double horizon,
                           SimulateOptions opts = {}) {
  const LinearSystem& lin = nsys.linear();
  detail::require_steppable(lin);
  if (horizon > lin.horizon() * (1.0 + 1e-12))
    throw std::invalid_argument("horizon exceeds the switching grid");
  int d = lin.dimension();
  if (x0.size() != d) throw std::invalid_argument("initial value has wrong dimension");

  auto rhs = [&](double t, const Vector& y) -> Vector {
    return lin.coefficient(t) * y + nsys.perturbation(t, y);
  };
  RkOptions ropts;
  ropts.rel_tol = opts.rel_tol;
  ropts.abs_tol = opts.abs_tol;

  Trajectory traj;
  traj.t.push_back(0.0);
  traj.x.push_back(x0);
  Vector y = x0;
  double t = 0.0;
  std::size_t record_stride = 1, since_record = 0;

  const auto& seq = lin.sequence();
  std::size_t nseg = seq.segment_count();
  bool done = false;
  for (std::size_t k = 0; k < nseg && !done; ++k) {
    double seg_end = std::min(seq.time(k + 1), horizon);
    if (seg_end <= t) continue;
    double prev_t = t;
    Vector prev_x = y;
    try {
      rk45_integrate(rhs, t, seg_end, y, ropts, [&](double tt, Vector& yy) {
        if (!yy.allFinite() || yy.norm() > opts.blowup_threshold) {
          // bisect the crossing inside [prev_t, tt]
          double a = prev_t, b = tt;
          Vector xa = prev_x;
          for (int it = 0; it < 60 && (b - a) > 1e-6 * std::max(1.0, std::abs(b)); ++it) {
            double mid = 0.5 * (a + b);
            Vector xm = xa;
            rk45_integrate(rhs, a, mid, xm, ropts);
            if (xm.allFinite() && xm.norm() <= opts.blowup_threshold) {
              a = mid;
              xa = xm;
            } else {
              b = mid;
            }
          }
          traj.blew_up = true;
          traj.blowup_time = b;
          traj.blowup_norm = xa.norm();
          traj.t.push_back(a);
          traj.x.push_back(xa);
          return false;
        }
        prev_t = tt;
        prev_x = yy;
        if (++since_record >= record_stride) {
          since_record = 0;
          traj.t.push_back(tt);
          traj.x.push_back(yy);
          if (traj.t.size() > opts.max_points) {
            // thin the record, keeping endpoints
            std::vector<double> t2;
            std::vector<Vector> x2;
            for (std::size_t i = 0; i < traj.t.size(); i += 2) {
              t2.push_back(traj.t[i]);
              x2.push_back(traj.x[i]);
            }
            traj.t = std::move(t2);
            traj.x = std::move(x2);
            record_stride *= 2;
          }
        }
        return true;
      });
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(std::string(e.what()) + "; last state norm " +
                               std::to_string(prev_x.norm()) + " at t=" + std::to_string(prev_t));
    }
    if (traj.blew_up) done = true;
    t = seg_end;
    if (!done && (traj.t.empty() || traj.t.back() != t)) {
      traj.t.push_back(t);
      traj.x.push_back(y);
    }
    if (t >= horizon) done = true;
  }
  return traj;
}

struct StabilityVerdict {
  enum class Kind { exp_stable_evidence, unstable_evidence, indeterminate };
  Kind kind = Kind::indeterminate;
  double K = 0.0;
  double alpha = 0.0;
  double delta_tilde = 0.0;
  double escape_time = 0.0;
  double escape_norm = 0.0;
  Vector witness_initial;
  double horizon_used = 0.0;
  std::string notes;
};

inline const char* to_string(StabilityVerdict::Kind k) {
  switch (k) {
    case StabilityVerdict::Kind::exp_stable_evidence: return "exp_stable_evidence";
    case StabilityVerdict::Kind::unstable_evidence: return "unstable_evidence";
    case StabilityVerdict::Kind::indeterminate: return "indeterminate";
  }
  return "?";
}

namespace detail {

// Upper concave hull of (t, e) and the decay line e <= ln K - alpha t fitted
// through its latter part.
struct EnvelopeFit {
  double alpha = 0.0;
  double ln_k = 0.0;
  bool monotone_after_transient = true;
};

inline EnvelopeFit fit_decay_envelope(const std::vector<double>& ts,
                                      const std::vector<double>& es) {
  std::vector<std::pair<double, double>> hull;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    std::pair<double, double> p{ts[i], es[i]};
    while (hull.size() >= 2) {
      auto& a = hull[hull.size() - 2];
      auto& b = hull[hull.size() - 1];
      if ((b.second - a.second) * (p.first - a.first) <= (p.second - a.second) * (b.first - a.first))
        hull.pop_back();
      else
        break;
    }
    hull.push_back(p);
  }
  EnvelopeFit fit;
  double h = ts.back();
  std::size_t lo = 0;
  for (std::size_t i = 0; i + 1 < hull.size(); ++i)
    if (hull[i].first <= 0.5 * h) lo = i;
  double dt = hull.back().first - hull[lo].first;
  fit.alpha = dt > 0.0 ? -(hull.back().second - hull[lo].second) / dt : 0.0;
  fit.ln_k = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ts.size(); ++i)
    fit.ln_k = std::max(fit.ln_k, es[i] + fit.alpha * ts[i]);
  for (std::size_t i = lo + 1; i + 1 < hull.size(); ++i)
    if (hull[i + 1].second > hull[i].second + 1e-9) fit.monotone_after_transient = false;
  return fit;
}

}  // namespace detail

struct ProbeOptions {
  double horizon = 500.0;
  int directions_per_radius = 8;
  double growth_factor = 10.0;   // final norm beyond this multiple flags escape
  double alpha_floor = 0.02;     // smaller fitted decay is inconclusive
  SimulateOptions sim;
  std::uint64_t seed = 3;
};

// Ring of unit directions used by the probe (seeded independently of the
// spectral sweep).
inline std::vector<Vector> direction_sample_ring(int d, int n, std::uint64_t seed) {
  std::vector<Vector> dirs;
  if (d == 2) {
    for (int i = 0; i < n; ++i) {
      double th = 2.0 * M_PI * double(i) / double(n);
      Vector v(2);
      v << std::cos(th), std::sin(th);
      dirs.push_back(v);
    }
    return dirs;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  for (int i = 0; i < n; ++i) {
    Vector v(d);
    for (int j = 0; j < d; ++j) v[j] = gauss(rng);
    dirs.push_back(v.normalized());
  }
  return dirs;
}

// Simulates rings of initial values and renders a stability verdict with the
// fitted envelope constants.
inline StabilityVerdict stability_probe(const NonlinearSystem& nsys,
                                        const std::vector<double>& radii, ProbeOptions opts = {}) {
  if (radii.size() < 3) throw std::invalid_argument("need at least 3 probe radii");
  for (std::size_t i = 1; i < radii.size(); ++i)
    if (radii[i] >= radii[i - 1]) throw std::invalid_argument("radii must decrease");
  int d = nsys.linear().dimension();

  StabilityVerdict v;
  v.horizon_used = opts.horizon;
  double worst_alpha = std::numeric_limits<double>::infinity();
  double worst_lnk = -std::numeric_limits<double>::infinity();
  bool all_monotone = true;

  std::vector<Vector> dirs = direction_sample_ring(d, opts.directions_per_radius, opts.seed);
  for (double r : radii) {
    for (const auto& u : dirs) {
      Vector x0 = r * u;
      Trajectory traj = simulate(nsys, x0, opts.horizon, opts.sim);
      double n0 = x0.norm();
      double nf = traj.x.back().norm();
      if (traj.blew_up || nf > opts.growth_factor * n0) {
        v.kind = StabilityVerdict::Kind::unstable_evidence;
        v.escape_time = traj.blew_up ? traj.blowup_time : traj.t.back();
        v.escape_norm = traj.blew_up ? traj.blowup_norm : nf;
        v.witness_initial = x0;
        v.notes = traj.blew_up ? "norm crossed the blow-up threshold" : "norm grew past the escape factor";
        return v;
      }
      std::vector<double> es(traj.t.size());
      for (std::size_t i = 0; i < traj.t.size(); ++i) es[i] = std::log(traj.x[i].norm() / n0);
      auto fit = detail::fit_decay_envelope(traj.t, es);
      worst_alpha = std::min(worst_alpha, fit.alpha);
      worst_lnk = std::max(worst_lnk, fit.ln_k);
      all_monotone = all_monotone && fit.monotone_after_transient;
    }
  }
  if (worst_alpha >= opts.alpha_floor) {
    v.kind = StabilityVerdict::Kind::exp_stable_evidence;
    v.alpha = worst_alpha;
    v.K = std::exp(std::max(0.0, worst_lnk));
    v.delta_tilde = radii.front();
    v.notes = all_monotone ? "all probe envelopes decayed monotonically after the transient"
                           : "probe envelopes decayed; transient bumps present";
  } else {
    v.kind = StabilityVerdict::Kind::indeterminate;
    v.notes = "no escape, but fitted decay below the floor; a longer horizon is needed";
  }
  return v;
}

struct BoundCheckReport {
  bool pass = true;
  double tightest_gap = std::numeric_limits<double>::infinity();
  std::vector<std::string> lines;
};

// Exact check of |y(t)| <= e^{-(beta-2gamma)t/3}|y(0)| for the slow-fast
// switched plane system: the second component decouples, so the left side is
// a pure per-segment rate integral.
inline BoundCheckReport lemma63_bound_check(const LinearSystem& sys, double y0,
                                            const std::vector<TimePoint>& samples) {
  if (!sys.is_piecewise() || sys.dimension() != 2)
    throw std::invalid_argument("bound check expects the piecewise plane system");
  double beta = -sys.phase_matrix(0)(1, 1);
  double gamma = sys.phase_matrix(1)(1, 1);
  double decay = (beta - 2.0 * gamma) / 3.0;
  if (!(decay > 0.0)) throw std::invalid_argument("phase rates do not give a decaying envelope");

  BoundCheckReport rep;
  if (y0 == 0.0) {
    rep.lines.push_back("zero start: second component identically zero, bound holds");
    return rep;
  }
  const auto& seq = sys.sequence();
  std::vector<DD> prefix{dd_from(0.0)};
  for (std::size_t k = 0; k < seq.segment_count(); ++k)
    prefix.push_back(dd_add(prefix.back(), sys.phase_matrix(k)(1, 1) * seq.gap(k)));
  for (const auto& tp : samples) {
    double off = std::clamp(offset_in_segment(seq, tp), 0.0, seq.gap(tp.segment));
    double lhs = dd_add(prefix[tp.segment], sys.phase_matrix(tp.segment)(1, 1) * off).value();
    double rhs = -decay * tp.clock_value();
    double gap = rhs - lhs;  // >= 0 when the bound holds
    rep.tightest_gap = std::min(rep.tightest_gap, gap);
    if (lhs > rhs + 1e-9 * (1.0 + std::abs(rhs))) {
      rep.pass = false;
      std::ostringstream os;
      os << "bound violated at t=" << tp.clock_value() << ": ln|y/y0| = " << lhs << " > " << rhs;
      rep.lines.push_back(os.str());
    }
  }
  std::ostringstream os;
  os << "tightest log-slack " << rep.tightest_gap << " over " << samples.size() << " samples";
  rep.lines.push_back(os.str());
  return rep;
}

// Verifies the quadratic-feedback lower bound y(2^{2k+1}) >=
// (e^{(gamma-2alpha) 4^k} - 1)/(2 alpha + gamma) x0^2 for k = 1..k_max, plus
// positivity of both components along the way.
struct LowerBoundReport {
  bool pass = true;
  bool positive = true;
  std::vector<double> times;
  std::vector<double> simulated;
  std::vector<double> bounds;
  std::vector<std::string> lines;
};

inline LowerBoundReport prop65_lower_bound_check(const NonlinearSystem& nsys, double x0, double y0,
                                                 int k_max, SimulateOptions opts = {}) {
  if (!(x0 > 0.0) || !(y0 > 0.0))
    throw std::invalid_argument("the positivity argument needs strictly positive initial data");
  const LinearSystem& lin = nsys.linear();
  double alpha = -lin.phase_matrix(0)(0, 0);
  double gamma = lin.phase_matrix(1)(1, 1);
  double horizon = std::ldexp(1.0, 2 * k_max + 1);
  Vector init(2);
  init << x0, y0;
  opts.blowup_threshold = std::max(opts.blowup_threshold, 1e12);
  Trajectory traj = simulate(nsys, init, horizon, opts);

  LowerBoundReport rep;
  for (std::size_t i = 0; i < traj.t.size(); ++i) {
    if (traj.x[i][0] <= 0.0 || traj.x[i][1] <= 0.0) {
      rep.positive = false;
      rep.pass = false;
      rep.lines.push_back("component positivity lost at t=" + std::to_string(traj.t[i]));
      break;
    }
  }
  for (int k = 1; k <= k_max; ++k) {
    double tk = std::ldexp(1.0, 2 * k + 1);
    double bound = (std::exp((gamma - 2.0 * alpha) * std::ldexp(1.0, 2 * k)) - 1.0) /
                   (2.0 * alpha + gamma) * x0 * x0;
    // locate the recorded sample at t = 2^{2k+1} (segment ends are recorded)
    auto it = std::lower_bound(traj.t.begin(), traj.t.end(), tk - 1e-9 * tk);
    if (it == traj.t.end()) {
      rep.pass = false;
      rep.lines.push_back("trajectory ended before t=" + std::to_string(tk));
      break;
    }
    double y = traj.x[std::size_t(it - traj.t.begin())][1];
    rep.times.push_back(tk);
    rep.simulated.push_back(y);
    rep.bounds.push_back(bound);
    std::ostringstream os;
    os << "t=" << tk << ": y=" << y << " vs lower bound " << bound;
    if (y < bound * (1.0 - 1e-6)) {
      rep.pass = false;
      os << "  VIOLATED";
    }
    rep.lines.push_back(os.str());
  }
  return rep;
}

}  // namespace bohl
