#pragma once

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <vector>

#include "bohl/propagation.hpp"

namespace bohl {

// Finite surrogate of "window length -> infinity": a ladder of window lengths
// with anchor start points spread over [0, horizon - L].
struct WindowGrid {
  std::vector<double> lengths;  // increasing
  int anchors_per_length = 8;
};

struct WindowGridOptions {
  double min_length = 10.0;
  int anchors_per_length = 8;
};

// Geometric ladder capped at horizon/2; when the switching grid has a longest
// run shorter than that, the cap tightens to the longest run so the extremal
// pure-phase windows stay representable at the top rungs.
inline WindowGrid make_default_grid(const LinearSystem& sys, WindowGridOptions opts = {}) {
  double h = sys.horizon();
  double cap = h / 2.0;
  if (sys.is_piecewise() || sys.is_scalar() || sys.is_block()) {
    double mg = sys.sequence().max_gap();
    if (mg >= 4.0 * opts.min_length) cap = std::min(cap, mg);
  }
  WindowGrid g;
  g.anchors_per_length = opts.anchors_per_length;
  for (double len = opts.min_length; len <= cap; len *= 2.0) g.lengths.push_back(len);
  if (g.lengths.size() < 3)
    throw std::invalid_argument("horizon too short: fewer than 3 usable window lengths");
  return g;
}

// Anchor instants for windows of length len: both ends of the admissible
// range, boundary-aligned starts (favoring segments long enough to hold the
// whole window), and uniform plus geometric fill.
inline std::vector<TimePoint> window_anchors(const SwitchingSequence& seq, double len,
                                             int per_length) {
  double h = seq.horizon();
  double smax = h - len;
  if (smax < 0.0) return {};
  std::vector<TimePoint> out;
  std::vector<double> clocks{0.0, smax};

  std::vector<std::size_t> by_gap(seq.segment_count());
  std::iota(by_gap.begin(), by_gap.end(), std::size_t(0));
  std::sort(by_gap.begin(), by_gap.end(),
            [&](std::size_t a, std::size_t b) { return seq.gap(a) > seq.gap(b); });
  int taken = 0;
  for (std::size_t k : by_gap) {
    if (taken >= per_length) break;
    if (seq.gap(k) < len) break;
    if (seq.time(k) <= smax) {
      out.push_back(switching_time(seq, k));
      ++taken;
    }
  }
  std::size_t usable = 0;
  while (usable < seq.segment_count() && seq.time(usable + 1) <= smax) ++usable;
  for (int i = 0; i <= per_length; ++i) {
    std::size_t idx = usable == 0 ? 0 : (usable * std::size_t(i)) / std::size_t(per_length);
    out.push_back(switching_time(seq, idx));
  }
  for (int i = 1; i < per_length; ++i) {
    clocks.push_back(smax * double(i) / double(per_length));
    clocks.push_back(smax * std::pow(0.5, i));
  }
  for (double c : clocks) out.push_back(timepoint_at_clock(seq, std::clamp(c, 0.0, smax)));

  std::sort(out.begin(), out.end(),
            [](const TimePoint& a, const TimePoint& b) { return a.clock_value() < b.clock_value(); });
  out.erase(std::unique(out.begin(), out.end(),
                        [](const TimePoint& a, const TimePoint& b) {
                          return std::abs(a.clock_value() - b.clock_value()) <=
                                 1e-12 * (1.0 + std::abs(a.clock_value()));
                        }),
            out.end());
  return out;
}

// Growth-rate extrema per window length, plus the drift across the largest
// three lengths.
struct GrowthStats {
  struct Row {
    double length;
    double min_rate;
    double max_rate;
  };
  std::vector<Row> rows;
  double trend_min = 0.0;
  double trend_max = 0.0;
};

inline void write_growth_csv(std::ostream& os, const GrowthStats& stats) {
  os << "length,min_rate,max_rate\n";
  char buf[160];
  for (const auto& r : stats.rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", r.length, r.min_rate, r.max_rate);
    os << buf;
  }
}

struct BohlIntervalEstimate {
  double lower = 0.0;
  double upper = 0.0;
  double margin = 0.0;
  bool converged = false;
  GrowthStats stats;
};

struct RateSweepOptions {
  Norm norm = Norm::euclidean;
  double margin_target = 0.02;
};

// (1/(t-s)) ln(||X(t)xi|| / ||X(s)xi||) for one window.
template <class Cache>
double window_rate(Cache& cache, const SwitchingSequence& seq, const TimePoint& s,
                   const TimePoint& t, Norm norm = Norm::euclidean) {
  double dt = duration(seq, s, t);
  if (!(dt > 0.0)) throw std::invalid_argument("window must have positive length");
  return cache.ratio_len(s, dt, norm) / dt;
}

template <class Cache>
double window_rate_len(Cache& cache, const TimePoint& s, double len, Norm norm = Norm::euclidean) {
  if (!(len > 0.0)) throw std::invalid_argument("window must have positive length");
  return cache.ratio_len(s, len, norm) / len;
}

// Estimates the per-solution spectral interval [lower Bohl exponent, upper
// Bohl exponent].  The report keeps the whole ladder; the estimate itself uses
// the extrema of the largest three lengths, whose spread drives the margin and
// the convergence flag.
template <class Cache>
BohlIntervalEstimate bohl_interval_sweep(Cache& cache, const SwitchingSequence& seq,
                                         const WindowGrid& grid, RateSweepOptions opts = {}) {
  if (grid.lengths.size() < 3)
    throw std::invalid_argument("horizon too short: fewer than 3 usable window lengths");

  std::vector<std::vector<TimePoint>> anchors(grid.lengths.size());
  std::vector<TimePoint> pts;
  for (std::size_t li = 0; li < grid.lengths.size(); ++li) {
    anchors[li] = window_anchors(seq, grid.lengths[li], grid.anchors_per_length);
    for (const auto& s : anchors[li]) {
      pts.push_back(s);
      pts.push_back(timepoint_advance(seq, s, grid.lengths[li]));
    }
  }
  if constexpr (requires { cache.needs_prepare(); }) {
    if (cache.needs_prepare()) cache.prepare(pts);
  }

  BohlIntervalEstimate est;
  for (std::size_t li = 0; li < grid.lengths.size(); ++li) {
    double mn = std::numeric_limits<double>::infinity(), mx = -mn;
    for (const auto& s : anchors[li]) {
      double r = window_rate_len(cache, s, grid.lengths[li], opts.norm);
      mn = std::min(mn, r);
      mx = std::max(mx, r);
    }
    est.stats.rows.push_back({grid.lengths[li], mn, mx});
  }

  // Extrapolate the extrema of the largest three lengths linearly in 1/L
  // (finite-anchor transients decay like 1/L); never extrapolate further than
  // the observed range of those three values.
  std::size_t m = est.stats.rows.size();
  auto fit3 = [&](bool upper_side) {
    double xs[3], ys[3];
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& r = est.stats.rows[m - 3 + i];
      xs[i] = 1.0 / r.length;
      ys[i] = upper_side ? r.max_rate : r.min_rate;
    }
    double sx = xs[0] + xs[1] + xs[2], sy = ys[0] + ys[1] + ys[2];
    double sxx = xs[0] * xs[0] + xs[1] * xs[1] + xs[2] * xs[2];
    double sxy = xs[0] * ys[0] + xs[1] * ys[1] + xs[2] * ys[2];
    double det = 3.0 * sxx - sx * sx;
    double slope = det != 0.0 ? (3.0 * sxy - sx * sy) / det : 0.0;
    double c = (sy - slope * sx) / 3.0;
    double resid = 0.0;
    for (int i = 0; i < 3; ++i) resid = std::max(resid, std::abs(c + slope * xs[i] - ys[i]));
    double vmin = std::min({ys[0], ys[1], ys[2]}), vmax = std::max({ys[0], ys[1], ys[2]});
    double range = vmax - vmin;
    c = std::clamp(c, vmin - range, vmax + range);
    return std::pair<double, double>(c, resid);
  };
  auto [up, up_resid] = fit3(true);
  auto [lo, lo_resid] = fit3(false);
  if (lo > up) std::swap(lo, up);
  // candidate (value, uncertainty) per endpoint; run groups may supersede
  std::vector<std::pair<double, double>> up_cands{{up, 4.0 * up_resid}};
  std::vector<std::pair<double, double>> lo_cands{{lo, 4.0 * lo_resid}};

  // Extremes realized on whole switching runs whose lengths keep growing:
  // single spells may stay shorter than the ladder's top rungs, so whole-run
  // rates are grouped by phase (coupling transients shift them by O(1/len))
  // and extrapolated in 1/len.  A group counts when it has three late runs of
  // distinct lengths reaching the ladder's base.
  {
    std::size_t n = seq.segment_count();
    std::size_t first = n / 2;
    std::size_t stride = (n - first) <= 120 ? 1 : (n - first) / 120;
    std::map<long, std::vector<std::pair<double, double>>> groups;  // key -> (len, rate)
    for (std::size_t a = first; a < n; a += stride) {
      double len = seq.gap(a);
      double rate = window_rate_len(cache, switching_time(seq, a), len, opts.norm);
      long key = long(a % 2);
      if constexpr (requires { cache.system(); }) {
        if (cache.system().is_piecewise())
          key = long(std::get<PiecewisePhases>(cache.system().body()).phase_of(a));
        else if (cache.system().is_scalar())
          key = std::lround(cache.system().scalar_rate(a) * 1024.0);
      }
      groups[key].emplace_back(len, rate);
    }
    for (auto& [key, g] : groups) {
      std::sort(g.begin(), g.end());
      g.erase(std::unique(g.begin(), g.end(),
                          [](const auto& a, const auto& b) { return a.first == b.first; }),
              g.end());
      if (g.size() < 3 || g.back().first < grid.lengths.front()) continue;
      // least-squares fit rate = c + slope/len over the group's longest runs
      std::size_t take = std::min<std::size_t>(g.size(), 6);
      double sx = 0, sy = 0, sxx = 0, sxy = 0;
      for (std::size_t i = g.size() - take; i < g.size(); ++i) {
        double x = 1.0 / g[i].first, y = g[i].second;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
      }
      double nn = double(take);
      double det = nn * sxx - sx * sx;
      double slope = det != 0.0 ? (nn * sxy - sx * sy) / det : 0.0;
      double c = (sy - slope * sx) / nn;
      double resid = 0.0, vmin = 1e300, vmax = -1e300;
      for (std::size_t i = g.size() - take; i < g.size(); ++i) {
        resid = std::max(resid, std::abs(c + slope / g[i].first - g[i].second));
        vmin = std::min(vmin, g[i].second);
        vmax = std::max(vmax, g[i].second);
      }
      c = std::clamp(c, vmin - 2.0 * (vmax - vmin), vmax + 2.0 * (vmax - vmin));
      up_cands.emplace_back(c, 4.0 * resid);
      lo_cands.emplace_back(c, 4.0 * resid);
    }
  }

  double up_unc = up_cands.front().second, lo_unc = lo_cands.front().second;
  est.upper = up_cands.front().first;
  est.lower = lo_cands.front().first;
  for (const auto& [v, unc] : up_cands)
    if (v > est.upper) {
      est.upper = v;
      up_unc = unc;
    }
  for (const auto& [v, unc] : lo_cands)
    if (v < est.lower) {
      est.lower = v;
      lo_unc = unc;
    }
  double spread = std::max(up_unc, lo_unc);
  est.margin = spread + 0.002;
  est.converged = spread < opts.margin_target;
  est.stats.trend_max = est.stats.rows[m - 1].max_rate - est.stats.rows[m - 3].max_rate;
  est.stats.trend_min = est.stats.rows[m - 1].min_rate - est.stats.rows[m - 3].min_rate;
  return est;
}

inline BohlIntervalEstimate bohl_interval(const LinearSystem& sys, const Vector& xi,
                                          const WindowGrid& grid, RateSweepOptions opts = {}) {
  TrajectoryCache cache(sys, xi);
  return bohl_interval_sweep(cache, sys.sequence(), grid, opts);
}

// liminf/limsup surrogate of (1/t) ln ||X(t)xi|| over a geometric time sample.
inline std::pair<double, double> lyapunov_exponents(const LinearSystem& sys, const Vector& xi,
                                                    double horizon = 0.0, int n_samples = 48) {
  double h = horizon > 0.0 ? horizon : sys.horizon();
  if (sys.sequence().segment_count() < 10 && h < 100.0)
    throw std::invalid_argument("lyapunov estimation needs >= 10 segments or horizon >= 100");
  TrajectoryCache cache(sys, xi);
  double t0 = std::max(1.0, h * 1e-8);
  std::vector<TimePoint> pts;
  for (int i = 0; i < n_samples; ++i) {
    double t = t0 * std::pow(h / t0, double(i) / double(n_samples - 1));
    pts.push_back(timepoint_at_clock(sys.sequence(), t));
  }
  if (cache.needs_prepare()) cache.prepare(pts);
  int tail = std::max(5, n_samples / 4);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int i = n_samples - tail; i < n_samples; ++i) {
    double v = cache.at(pts[std::size_t(i)]).log_mag / pts[std::size_t(i)].clock_value();
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return {lo, hi};
}

// Pairwise ordering certificate: ln K + alpha (t-s) below every sampled
// separation ln(ratio_xi / ratio_eta).
struct SeparationCertificate {
  double K;
  double alpha;
};

struct SeparationOptions {
  double alpha_min = 0.01;
  double min_length = 1.0;
  int anchors_per_length = 8;
  Norm norm = Norm::euclidean;
};

template <class CacheA, class CacheB>
std::optional<SeparationCertificate> integral_separation_sweep(CacheA& cx, CacheB& ce,
                                                               const SwitchingSequence& seq,
                                                               SeparationOptions opts = {}) {
  double h = seq.horizon();
  std::vector<std::pair<double, double>> pts;  // (length, separation)
  auto add_window = [&](const TimePoint& s, double len) {
    if (!(len > 0.0)) return;
    double d = cx.ratio_len(s, len, opts.norm) - ce.ratio_len(s, len, opts.norm);
    pts.emplace_back(len, d);
  };
  for (double len = opts.min_length; len <= h / 2.0; len *= 2.0)
    for (const auto& s : window_anchors(seq, len, opts.anchors_per_length)) add_window(s, len);
  // boundary-aligned runs
  std::size_t n = seq.segment_count();
  std::size_t stride = n <= 24 ? 1 : n / 24;
  for (std::size_t a = 0; a <= n; a += stride)
    for (std::size_t b = a + 1; b <= n; b += stride) {
      TimePoint sa = switching_time(seq, a);
      add_window(sa, duration(seq, sa, switching_time(seq, b)));
    }
  if (pts.size() < 4) return std::nullopt;

  // min separation per length bucket, then the lower convex envelope
  std::sort(pts.begin(), pts.end());
  std::vector<std::pair<double, double>> mins;
  for (const auto& p : pts) {
    if (!mins.empty() && p.first <= mins.back().first * (1.0 + 1e-12))
      mins.back().second = std::min(mins.back().second, p.second);
    else
      mins.push_back(p);
  }
  if (mins.size() < 2) return std::nullopt;
  std::vector<std::pair<double, double>> hull;
  for (const auto& p : mins) {
    while (hull.size() >= 2) {
      auto& a = hull[hull.size() - 2];
      auto& b = hull[hull.size() - 1];
      if ((b.second - a.second) * (p.first - a.first) >=
          (p.second - a.second) * (b.first - a.first))
        hull.pop_back();
      else
        break;
    }
    hull.push_back(p);
  }
  if (hull.size() < 2) return std::nullopt;
  const auto& a = hull[hull.size() - 2];
  const auto& b = hull[hull.size() - 1];
  double alpha = (b.second - a.second) / (b.first - a.first);
  double ln_k = a.second - alpha * a.first;
  if (!(alpha > opts.alpha_min)) return std::nullopt;
  for (const auto& p : pts)
    if (p.second < ln_k + alpha * p.first - 1e-9 * (1.0 + std::abs(p.second)))
      return std::nullopt;
  return SeparationCertificate{std::exp(ln_k), alpha};
}

inline std::optional<SeparationCertificate> integral_separation_check(
    const LinearSystem& sys, const Vector& xi, const Vector& eta, SeparationOptions opts = {}) {
  if (std::abs(xi.normalized().dot(eta.normalized())) > 1.0 - 1e-12)
    throw std::invalid_argument("integral separation needs independent solutions");
  TrajectoryCache cx(sys, xi), ce(sys, eta);
  if (cx.needs_prepare() || ce.needs_prepare()) {
    std::vector<TimePoint> pts;
    double h = sys.horizon();
    for (double len = opts.min_length; len <= h / 2.0; len *= 2.0)
      for (const auto& s : window_anchors(sys.sequence(), len, opts.anchors_per_length)) {
        pts.push_back(s);
        pts.push_back(timepoint_advance(sys.sequence(), s, len));
      }
    for (std::size_t k = 0; k <= sys.sequence().segment_count(); ++k)
      pts.push_back(switching_time(sys.sequence(), k));
    cx.prepare(pts);
    ce.prepare(pts);
  }
  return integral_separation_sweep(cx, ce, sys.sequence(), opts);
}

// Solution a*X(t)xi + b*X(t)eta formed in log space; the two summands may
// differ by hundreds of e-folds without overflow.
class CombinationCache {
 public:
  CombinationCache(const LinearSystem& sys, const Vector& xi, const Vector& eta, double a,
                   double b)
      : cx_(sys, xi), ce_(sys, eta) {
    if (a == 0.0 || b == 0.0)
      throw std::invalid_argument("combination coefficients must both be nonzero");
    Vector z = a * xi + b * eta;
    if (z.norm() <= 1e-14 * (std::abs(a) * xi.norm() + std::abs(b) * eta.norm()))
      throw std::invalid_argument("combination vanishes");
    wa_ = std::log(std::abs(a)) + std::log(xi.norm());
    wb_ = std::log(std::abs(b)) + std::log(eta.norm());
    sa_ = a > 0.0 ? 1.0 : -1.0;
    sb_ = b > 0.0 ? 1.0 : -1.0;
  }

  bool needs_prepare() const { return cx_.needs_prepare() || ce_.needs_prepare(); }
  void prepare(const std::vector<TimePoint>& pts) {
    cx_.prepare(pts);
    ce_.prepare(pts);
  }

  LogVector at(const TimePoint& tp) const {
    LogVector x = cx_.at(tp), e = ce_.at(tp);
    double ax = wa_ + x.log_mag, ae = wb_ + e.log_mag;
    double m = std::max(ax, ae);
    Vector v = sa_ * std::exp(ax - m) * x.direction + sb_ * std::exp(ae - m) * e.direction;
    return normalized_log_vector(v, m);
  }

  double ratio_len(const TimePoint& s, double len, Norm norm = Norm::euclidean) const {
    const auto& seq = cx_.system().sequence();
    TimePoint t = timepoint_advance(seq, s, len);
    LogVector xs = cx_.at(s), es = ce_.at(s);
    double ax = wa_ + xs.log_mag, ae = wb_ + es.log_mag;
    double m = std::max(ax, ae);
    double dx = cx_.ratio_len(s, len, Norm::euclidean);
    double de = ce_.ratio_len(s, len, Norm::euclidean);
    Vector zs = sa_ * std::exp(ax - m) * xs.direction + sb_ * std::exp(ae - m) * es.direction;
    Vector zt = sa_ * std::exp(ax - m + dx) * cx_.at(t).direction +
                sb_ * std::exp(ae - m + de) * ce_.at(t).direction;
    double ns = norm == Norm::maximum ? zs.lpNorm<Eigen::Infinity>() : zs.norm();
    double nt = norm == Norm::maximum ? zt.lpNorm<Eigen::Infinity>() : zt.norm();
    if (!(ns > 0.0) || !(nt > 0.0))
      throw std::runtime_error("combination cancelled below representable range");
    return std::log(nt) - std::log(ns);
  }

  double ratio_log(const TimePoint& s, const TimePoint& t, Norm norm = Norm::euclidean) const {
    return ratio_len(s, duration(cx_.system().sequence(), s, t), norm);
  }

 private:
  TrajectoryCache cx_, ce_;
  double wa_, wb_, sa_, sb_;
};

inline BohlIntervalEstimate combination_spectrum(const LinearSystem& sys, const Vector& xi,
                                                 const Vector& eta, double a, double b,
                                                 const WindowGrid& grid,
                                                 RateSweepOptions opts = {}) {
  CombinationCache cache(sys, xi, eta, a, b);
  return bohl_interval_sweep(cache, sys.sequence(), grid, opts);
}

}  // namespace bohl
