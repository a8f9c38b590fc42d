#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bohl/dichotomy.hpp"
#include "bohl/exponents.hpp"

namespace bohl {

struct SpectralInterval {
  double lo = 0.0;
  double hi = 0.0;
  double lo_margin = 0.0;
  double hi_margin = 0.0;
};

struct SpectrumEstimate {
  std::vector<SpectralInterval> intervals;  // ordered, pairwise disjoint
  bool minus_inf = false;
  bool plus_inf = false;
  std::string method;  // bohl_sweep | ss_diagonal | ss_dichotomy
  bool converged = true;
  std::vector<std::string> notes;
};

// Sorts and merges overlapping or near-touching intervals; optionally caps the
// component count (spectra of d-dimensional systems have at most d).
inline std::vector<SpectralInterval> merge_spectral_intervals(std::vector<SpectralInterval> iv,
                                                              double tol, int max_count,
                                                              std::vector<std::string>* notes) {
  if (iv.empty()) return iv;
  std::sort(iv.begin(), iv.end(),
            [](const SpectralInterval& a, const SpectralInterval& b) { return a.lo < b.lo; });
  std::vector<SpectralInterval> out;
  for (const auto& cur : iv) {
    if (!out.empty() && cur.lo <= out.back().hi + tol) {
      auto& b = out.back();
      double prev_hi = b.hi;
      if (cur.lo < b.lo) b.lo = cur.lo;
      if (cur.hi > b.hi) b.hi = cur.hi;
      b.lo_margin = std::max(b.lo_margin, cur.lo_margin);
      b.hi_margin = std::max(b.hi_margin, cur.hi_margin);
      if (notes && cur.lo > prev_hi + 1e-9) {
        std::string msg = "gap narrower than merge tolerance was absorbed near " +
                          std::to_string(cur.lo);
        if (std::find(notes->begin(), notes->end(), msg) == notes->end()) notes->push_back(msg);
      }
    } else {
      out.push_back(cur);
    }
  }
  while (max_count > 0 && int(out.size()) > max_count) {
    std::size_t best = 1;
    double best_gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < out.size(); ++i) {
      double gap = out[i].lo - out[i - 1].hi;
      if (gap < best_gap) {
        best_gap = gap;
        best = i;
      }
    }
    out[best - 1].hi = out[best].hi;
    out[best - 1].hi_margin = out[best].hi_margin;
    out.erase(out.begin() + long(best));
    if (notes)
      notes->push_back("interval count exceeded the dimension; merged the narrowest gap");
  }
  return out;
}

// Nested subspace bases with the spectral intervals each one realizes.
struct Filtration {
  std::vector<Matrix> bases;                        // d x r_i, orthonormal, nested
  std::vector<std::vector<int>> interval_assignment;  // indices into the interval list
};

struct BohlSweepOptions {
  Norm norm = Norm::euclidean;
  std::uint64_t seed = 0;
  double merge_tol_base = 0.02;
  std::vector<Vector> extra_directions;
};

struct DirectionEstimate {
  Vector direction;
  BohlIntervalEstimate est;
  int interval = -1;  // merged interval index
};

struct BohlSpectrumResult {
  SpectrumEstimate estimate;
  Filtration filtration;
  std::vector<DirectionEstimate> directions;
  double max_margin = 0.0;
  int worst_direction = -1;
};

namespace detail {

inline Matrix orthonormal_basis(const std::vector<Vector>& vs, int d, double threshold = 1e-6) {
  if (vs.empty()) return Matrix::Zero(d, 0);
  Matrix m(d, Eigen::Index(vs.size()));
  for (std::size_t j = 0; j < vs.size(); ++j) m.col(Eigen::Index(j)) = vs[j];
  Eigen::ColPivHouseholderQR<Matrix> qr(m);
  qr.setThreshold(threshold);
  Eigen::Index r = qr.rank();
  Matrix q = qr.householderQ() * Matrix::Identity(d, r);
  return q;
}

// Golden-section refinement of the planar direction minimizing the upper
// window-rate estimate.
inline double refine_min_upper_angle(const LinearSystem& sys, const WindowGrid& grid,
                                     RateSweepOptions opts, double theta0, double half_width) {
  auto value = [&](double th) {
    Vector v(2);
    v << std::cos(th), std::sin(th);
    return bohl_interval(sys, v, grid, opts).upper;
  };
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = theta0 - half_width, b = theta0 + half_width;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = value(c), fd = value(d);
  for (int it = 0; it < 28; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = value(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = value(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace detail

// Sweeps unit directions, merges the per-solution intervals, and extracts the
// nested subspaces realizing each leftmost union of intervals.
inline BohlSpectrumResult bohl_spectrum(const LinearSystem& sys, int n_directions,
                                        const WindowGrid& grid, BohlSweepOptions opts = {}) {
  int d = sys.dimension();
  if (d > 8) throw std::invalid_argument("direction sweep limited to dimension <= 8");
  if (n_directions < 8 * d)
    throw std::invalid_argument("need at least 8*dimension sweep directions");

  std::vector<Vector> dirs = direction_sample(d, n_directions, opts.seed);
  for (const auto& v : opts.extra_directions) dirs.push_back(v.normalized());

  BohlSpectrumResult res;
  RateSweepOptions ropts{opts.norm, 0.02};
  for (const auto& v : dirs) {
    DirectionEstimate de;
    de.direction = v;
    de.est = bohl_interval(sys, v, grid, ropts);
    if (de.est.margin > res.max_margin) {
      res.max_margin = de.est.margin;
      res.worst_direction = int(res.directions.size());
    }
    res.directions.push_back(std::move(de));
  }

  double merge_tol = opts.merge_tol_base;
  std::vector<SpectralInterval> raw;
  for (const auto& de : res.directions) {
    raw.push_back({de.est.lower, de.est.upper, de.est.margin, de.est.margin});
    merge_tol = std::max(merge_tol, opts.merge_tol_base + 2.0 * de.est.margin);
  }
  res.estimate.method = "bohl_sweep";
  res.estimate.intervals = merge_spectral_intervals(raw, merge_tol, d, &res.estimate.notes);
  res.estimate.converged = true;
  for (const auto& de : res.directions)
    if (!de.est.converged) {
      res.estimate.converged = false;
      std::ostringstream os;
      os << "direction (" << de.direction.transpose() << ") did not converge (margin "
         << de.est.margin << ")";
      res.estimate.notes.push_back(os.str());
    }

  // interval membership per direction
  for (auto& de : res.directions) {
    for (std::size_t i = 0; i < res.estimate.intervals.size(); ++i) {
      const auto& iv = res.estimate.intervals[i];
      double slack = de.est.margin + merge_tol;
      if (de.est.lower >= iv.lo - slack && de.est.upper <= iv.hi + slack) {
        de.interval = int(i);
        break;
      }
    }
    if (de.interval < 0) {
      // spans several merged intervals: belongs to the span up to the last one touched
      for (std::size_t i = 0; i < res.estimate.intervals.size(); ++i)
        if (de.est.upper <= res.estimate.intervals[i].hi + de.est.margin + merge_tol)
          de.interval = int(i);
      if (de.interval < 0) de.interval = int(res.estimate.intervals.size()) - 1;
    }
  }

  std::size_t k = res.estimate.intervals.size();
  // refine the planar minimizer when a strictly smaller first subspace exists
  std::optional<Vector> refined_min;
  if (d == 2 && k >= 2) {
    double best_theta = 0.0, best_upper = std::numeric_limits<double>::infinity();
    for (const auto& de : res.directions) {
      if (de.est.upper < best_upper) {
        best_upper = de.est.upper;
        best_theta = std::atan2(de.direction[1], de.direction[0]);
      }
    }
    double th = detail::refine_min_upper_angle(sys, grid, ropts, best_theta,
                                               M_PI / double(n_directions));
    Vector v(2);
    v << std::cos(th), std::sin(th);
    refined_min = v;
  }

  for (std::size_t i = 0; i < k; ++i) {
    std::vector<Vector> group;
    for (const auto& de : res.directions)
      if (de.interval <= int(i)) group.push_back(de.direction);
    if (i == 0 && refined_min) group.push_back(*refined_min);
    Matrix basis = detail::orthonormal_basis(group, d);
    if (i == 0 && refined_min && basis.cols() > 1) basis = *refined_min;  // sampling noise guard
    if (i + 1 == k) basis = Matrix::Identity(d, d);
    res.filtration.bases.push_back(basis);
    std::vector<int> assign;
    for (std::size_t j = 0; j <= i; ++j) assign.push_back(int(j));
    res.filtration.interval_assignment.push_back(assign);
  }
  for (std::size_t i = 1; i < res.filtration.bases.size(); ++i)
    if (res.filtration.bases[i].cols() <= res.filtration.bases[i - 1].cols())
      res.estimate.notes.push_back("filtration dimensions did not increase strictly at step " +
                                   std::to_string(i));
  return res;
}

// ---------------------------------------------------------------------------
// Triangular route: the spectrum of the diagonal part, from exact windowed
// means of each diagonal entry.

namespace detail {

struct ScalarTrack {
  const SwitchingSequence* seq;
  std::vector<double> rates;  // per segment
};

inline void collect_tracks(const LinearSystem& sys, std::vector<ScalarTrack>& out) {
  if (sys.is_scalar()) {
    ScalarTrack t;
    t.seq = &sys.sequence();
    for (std::size_t k = 0; k < sys.sequence().segment_count(); ++k)
      t.rates.push_back(sys.scalar_rate(k));
    out.push_back(std::move(t));
    return;
  }
  if (sys.is_piecewise()) {
    for (int i = 0; i < sys.dimension(); ++i) {
      ScalarTrack t;
      t.seq = &sys.sequence();
      for (std::size_t k = 0; k < sys.sequence().segment_count(); ++k)
        t.rates.push_back(sys.phase_matrix(k)(i, i));
      out.push_back(std::move(t));
    }
    return;
  }
  if (sys.is_block()) {
    for (const auto& b : std::get<BlockDiagonal>(sys.body()).blocks) collect_tracks(*b, out);
    return;
  }
  throw std::invalid_argument("diagonal route needs piecewise-described coefficients");
}

// Windowed mean liminf/limsup of one piecewise-constant rate track.  Anchors
// live in the late half of the switching grid; the reported value is the first
// plateau of the running extremum as the minimum window length grows, which is
// the finite-horizon stand-in for the limit.
inline SpectralInterval track_interval(const ScalarTrack& t, std::vector<std::string>* notes) {
  const auto& seq = *t.seq;
  std::size_t n = t.rates.size();

  std::size_t first = n / 2;
  std::vector<std::pair<double, double>> windows;  // (length, mean)
  std::size_t stride = (n - first) <= 160 ? 1 : (n - first) / 160;
  for (std::size_t a = first; a <= n; a += stride) {
    CompensatedSum len_acc, int_acc;
    std::size_t next = a;
    for (std::size_t b = a + 1; b <= n; ++b) {
      len_acc.add(seq.gap(b - 1));
      int_acc.add(t.rates[b - 1] * seq.gap(b - 1));
      if (b == next + stride || b == n) {
        next = b;
        double len = len_acc.value();
        if (len > 0.0) windows.emplace_back(len, int_acc.value() / len);
      }
    }
  }

  double h = seq.horizon();
  std::vector<double> rungs;
  for (double lam = 1.0; lam <= h / 2.0; lam *= 2.0) rungs.push_back(lam);
  auto extremum_at = [&](double lam, bool upper) {
    double best = upper ? -std::numeric_limits<double>::infinity()
                        : std::numeric_limits<double>::infinity();
    for (const auto& [len, mean] : windows)
      if (len >= lam) best = upper ? std::max(best, mean) : std::min(best, mean);
    for (std::size_t k = first; k < n; ++k)
      if (seq.gap(k) >= lam)
        best = upper ? std::max(best, t.rates[k]) : std::min(best, t.rates[k]);
    return best;
  };

  auto plateau = [&](bool upper, double& value, double& margin, bool& ok) {
    std::vector<double> vals;
    for (double lam : rungs) vals.push_back(extremum_at(lam, upper));
    ok = false;
    for (std::size_t i = 0; i + 2 < vals.size(); ++i) {
      double mx = std::max({vals[i], vals[i + 1], vals[i + 2]});
      double mn = std::min({vals[i], vals[i + 1], vals[i + 2]});
      if (std::isfinite(mx) && mx - mn <= 0.02) {
        value = 0.5 * (mx + mn);
        margin = (mx - mn) + 0.01;
        ok = true;
        return;
      }
    }
    value = vals.empty() ? 0.0 : vals.front();
    margin = 0.1;
  };

  SpectralInterval iv;
  bool ok_hi = false, ok_lo = false;
  plateau(true, iv.hi, iv.hi_margin, ok_hi);
  plateau(false, iv.lo, iv.lo_margin, ok_lo);
  if ((!ok_hi || !ok_lo) && notes)
    notes->push_back("diagonal track extremum did not stabilize over the rung ladder");
  return iv;
}

}  // namespace detail

// Spectrum of the diagonal part of a bounded upper-triangular system.
inline SpectrumEstimate sacker_sell_diagonal(const LinearSystem& sys) {
  if (!sys.tags().upper_triangular)
    throw std::invalid_argument(sys.name() +
                                ": diagonal route requires the upper_triangular structure tag");
  if (!sys.tags().bounded)
    throw std::invalid_argument(sys.name() + ": diagonal route requires the bounded structure tag");
  std::vector<detail::ScalarTrack> tracks;
  detail::collect_tracks(sys, tracks);
  SpectrumEstimate est;
  est.method = "ss_diagonal";
  std::vector<SpectralInterval> raw;
  double merge_tol = 0.02;
  for (const auto& t : tracks) {
    SpectralInterval iv = detail::track_interval(t, &est.notes);
    merge_tol = std::max(merge_tol, 0.02 + std::max(iv.lo_margin, iv.hi_margin));
    raw.push_back(iv);
  }
  est.intervals = merge_spectral_intervals(raw, merge_tol, sys.dimension(), &est.notes);
  est.converged = est.notes.empty();
  return est;
}

// ---------------------------------------------------------------------------
// General route: growth rates where no exponential dichotomy is found.

struct SSGeneralResult {
  SpectrumEstimate estimate;
  // pseudo-stable bases at admitting rates bracketing the intervals
  std::vector<std::pair<double, Matrix>> gap_bases;
};

struct SSGeneralOptions {
  double gamma_lo = -50.0;
  double gamma_hi = 50.0;
  double resolution = 0.01;
  int coarse_points = 21;
  DichotomyOptions dichotomy;
};

inline SSGeneralResult sacker_sell_general(const LinearSystem& sys, SSGeneralOptions opts = {}) {
  DichotomyContext ctx(sys, opts.dichotomy);
  std::map<double, bool> verdicts;  // gamma -> admits
  auto admits = [&](double g) {
    auto it = verdicts.lower_bound(g - 1e-12);
    if (it != verdicts.end() && std::abs(it->first - g) <= 1e-12) return it->second;
    bool a = ctx.test(g).admits;
    verdicts.emplace(g, a);
    return a;
  };

  std::vector<double> seeds;
  for (int i = 0; i < opts.coarse_points; ++i)
    seeds.push_back(opts.gamma_lo +
                    (opts.gamma_hi - opts.gamma_lo) * double(i) / double(opts.coarse_points - 1));
  for (double s : ctx.rate_seeds())
    if (s > opts.gamma_lo && s < opts.gamma_hi) seeds.push_back(s);
  std::sort(seeds.begin(), seeds.end());

  SSGeneralResult res;
  res.estimate.method = "ss_dichotomy";
  std::vector<SpectralInterval> raw;
  for (double s : seeds) {
    if (admits(s)) continue;
    // grow a failing interval outward to the admit boundary on both sides
    auto grow = [&](int dir) {
      double inside = s, step = std::max(opts.resolution, 0.02);
      double outside = s;
      bool found_admit = false;
      while (true) {
        outside = inside + dir * step;
        if (outside <= opts.gamma_lo || outside >= opts.gamma_hi) {
          outside = std::clamp(outside, opts.gamma_lo, opts.gamma_hi);
          if (!admits(outside)) return outside;  // still failing at the extreme
          found_admit = true;
          break;
        }
        if (admits(outside)) {
          found_admit = true;
          break;
        }
        inside = outside;
        step *= 2.0;
      }
      (void)found_admit;
      while (std::abs(outside - inside) > opts.resolution) {
        double mid = 0.5 * (outside + inside);
        if (admits(mid))
          outside = mid;
        else
          inside = mid;
      }
      return inside;
    };
    double lo = grow(-1), hi = grow(+1);
    raw.push_back({lo, hi, opts.resolution + 0.005, opts.resolution + 0.005});
  }
  res.estimate.intervals =
      merge_spectral_intervals(raw, 2.0 * opts.resolution, sys.dimension(), &res.estimate.notes);
  if (!res.estimate.intervals.empty()) {
    if (res.estimate.intervals.front().lo <= opts.gamma_lo + opts.resolution)
      res.estimate.minus_inf = true;
    if (res.estimate.intervals.back().hi >= opts.gamma_hi - opts.resolution)
      res.estimate.plus_inf = true;
  }
  // pseudo-stable bases in the spectral gaps (and outside the extremes)
  std::vector<double> probes;
  for (std::size_t i = 0; i + 1 < res.estimate.intervals.size(); ++i)
    probes.push_back(0.5 *
                     (res.estimate.intervals[i].hi + res.estimate.intervals[i + 1].lo));
  if (!res.estimate.intervals.empty() && !res.estimate.plus_inf)
    probes.push_back(res.estimate.intervals.back().hi + 1.0);
  for (double g : probes) {
    auto v = ctx.test(g);
    if (v.admits && v.cert) res.gap_bases.emplace_back(g, v.cert->pseudo_stable);
  }
  return res;
}

// ---------------------------------------------------------------------------

struct SubsetReport {
  bool pass = true;
  std::vector<std::string> lines;
};

// Containment of one spectrum estimate in another (after tol inflation), plus
// the filtration-refinement check when both subspace chains are available.
inline SubsetReport subset_check(const SpectrumEstimate& bohl, const SpectrumEstimate& ss,
                                 double tol, const Filtration* bohl_filt = nullptr,
                                 const std::vector<std::pair<double, Matrix>>* ss_bases = nullptr) {
  SubsetReport rep;
  for (const auto& b : bohl.intervals) {
    bool contained = false;
    for (const auto& s : ss.intervals) {
      if (b.lo >= s.lo - s.lo_margin - tol && b.hi <= s.hi + s.hi_margin + tol) {
        contained = true;
        break;
      }
    }
    std::ostringstream os;
    os << "interval [" << b.lo << ", " << b.hi << "] "
       << (contained ? "contained in" : "NOT contained in") << " the reference spectrum";
    rep.lines.push_back(os.str());
    if (!contained) rep.pass = false;
  }
  if (bohl_filt && ss_bases) {
    for (const auto& [gamma, w] : *ss_bases) {
      bool matched = false;
      double best_angle = 1.0;
      for (const auto& sb : bohl_filt->bases) {
        if (sb.cols() != w.cols()) continue;
        // largest principal angle via singular values of W^T S
        Eigen::JacobiSVD<Matrix> svd(w.transpose() * sb);
        double smin = svd.singularValues().minCoeff();
        double angle = std::acos(std::clamp(smin, 0.0, 1.0));
        best_angle = std::min(best_angle, angle);
        if (angle < 1e-3) {
          matched = true;
          break;
        }
      }
      std::ostringstream os;
      os << "pseudo-stable space at rate " << gamma << " (dim " << w.cols() << ") "
         << (matched ? "matches" : "has no match in") << " the solution filtration";
      if (!matched) os << " (best principal angle " << best_angle << ")";
      rep.lines.push_back(os.str());
      if (!matched) rep.pass = false;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Kinematic similarity transforms.

struct SimilaritySpec {
  std::function<Matrix(double)> S;
  std::function<Matrix(double)> S_inv;
  std::function<Matrix(double)> S_dot;
  double bound_S = 1.0;
  double bound_S_inv = 1.0;
};

inline SimilaritySpec constant_similarity(const Matrix& s) {
  Matrix si = s.inverse();
  SimilaritySpec spec;
  spec.S = [s](double) { return s; };
  spec.S_inv = [si](double) { return si; };
  spec.S_dot = [n = s.rows()](double) { return Matrix::Zero(n, n); };
  spec.bound_S = s.operatorNorm() * (1.0 + 1e-12);
  spec.bound_S_inv = si.operatorNorm() * (1.0 + 1e-12);
  return spec;
}

// Planar rotation by sin(t).
inline SimilaritySpec rotation_by_sin() {
  auto rot = [](double a) {
    Matrix r(2, 2);
    r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
    return r;
  };
  SimilaritySpec spec;
  spec.S = [rot](double t) { return rot(std::sin(t)); };
  spec.S_inv = [rot](double t) { return rot(-std::sin(t)); };
  spec.S_dot = [](double t) {
    double a = std::sin(t), da = std::cos(t);
    Matrix r(2, 2);
    r << -std::sin(a) * da, -std::cos(a) * da, std::cos(a) * da, -std::sin(a) * da;
    return r;
  };
  spec.bound_S = 1.0 + 1e-12;
  spec.bound_S_inv = 1.0 + 1e-12;
  return spec;
}

// y = S(t)^{-1} x transforms coefficients to B = S^{-1}(A S - S').  Solutions
// of the transformed system are evaluated through the original propagation,
// so the huge-clock switching grids stay usable.
inline LinearSystem kinematic_transform(const LinearSystem& sys, const SimilaritySpec& spec) {
  int d = sys.dimension();
  double h = std::min(sys.horizon(), 1000.0);
  for (int i = 0; i <= 64; ++i) {
    double t = h * double(i) / 64.0;
    Matrix s = spec.S(t), si = spec.S_inv(t);
    if (s.operatorNorm() > spec.bound_S * (1.0 + 1e-9))
      throw std::invalid_argument("similarity bound violated at t=" + std::to_string(t));
    if (si.operatorNorm() > spec.bound_S_inv * (1.0 + 1e-9))
      throw std::invalid_argument("inverse similarity bound violated at t=" + std::to_string(t));
    if ((s * si - Matrix::Identity(d, d)).norm() > 1e-8)
      throw std::invalid_argument("similarity inverse inconsistent at t=" + std::to_string(t));
  }

  auto inner = std::make_shared<const LinearSystem>(sys);
  auto S = spec.S, S_inv = spec.S_inv, S_dot = spec.S_dot;
  GeneralCallable gc;
  gc.coeff = [inner, S, S_inv, S_dot](double t) -> Matrix {
    return S_inv(t) * (inner->coefficient(t) * S(t) - S_dot(t));
  };
  gc.exact = [inner, S, S_inv](const Vector& xi, double t) {
    Vector eta = S(0.0) * xi;
    double en = eta.norm();
    TrajectoryCache cache(*inner, eta);
    if (cache.needs_prepare()) cache.prepare({timepoint_at_clock(inner->sequence(), t)});
    LogVector lv = cache.at(timepoint_at_clock(inner->sequence(), t));
    return normalized_log_vector(S_inv(t) * lv.direction, lv.log_mag + std::log(en));
  };
  gc.exact_ratio = [inner, S, S_inv](const Vector& xi, const TimePoint& s, double len, Norm norm) {
    Vector eta = S(0.0) * xi;
    TrajectoryCache cache(*inner, eta);
    TimePoint t = timepoint_advance(inner->sequence(), s, len);
    if (cache.needs_prepare()) cache.prepare({s, t});
    double delta = cache.ratio_len(s, len, Norm::euclidean);
    Vector us = S_inv(s.clock_value()) * cache.at(s).direction;
    Vector ut = S_inv(t.clock_value()) * cache.at(t).direction;
    double ns = norm == Norm::maximum ? us.lpNorm<Eigen::Infinity>() : us.norm();
    double nt = norm == Norm::maximum ? ut.lpNorm<Eigen::Infinity>() : ut.norm();
    return delta + std::log(nt) - std::log(ns);
  };

  std::optional<double> bound;
  if (sys.bound()) {
    double sd_max = 0.0;
    for (int i = 0; i <= 64; ++i)
      sd_max = std::max(sd_max, spec.S_dot(h * double(i) / 64.0).operatorNorm());
    bound = spec.bound_S_inv * (*sys.bound() * spec.bound_S + sd_max) * (1.0 + 1e-9);
  }
  StructureTags tags;
  tags.bounded = bound.has_value();
  return LinearSystem(sys.name() + "_similar", d, sys.sequence(), std::move(gc), bound, tags);
}

// ---------------------------------------------------------------------------

// A direction inside the complement subspace realizing one reference spectral
// interval; its windowed rates must land in the interval within tol.
inline Vector interval_witness(const LinearSystem& sys, const SSGeneralResult& ss,
                               std::size_t interval_index, const WindowGrid& grid, double tol,
                               RateSweepOptions opts = {}) {
  const auto& ivs = ss.estimate.intervals;
  if (interval_index >= ivs.size()) throw std::invalid_argument("no such spectral interval");
  int d = sys.dimension();

  auto basis_right_of = [&](double x) -> Matrix {
    Matrix best = Matrix::Identity(d, d);
    double best_g = std::numeric_limits<double>::infinity();
    for (const auto& [g, w] : ss.gap_bases)
      if (g > x && g < best_g) {
        best_g = g;
        best = w;
      }
    return best;
  };
  Matrix wi = basis_right_of(ivs[interval_index].hi);
  Matrix wprev = interval_index == 0 ? Matrix::Zero(d, 0) : basis_right_of(ivs[interval_index - 1].hi);

  // complement of W_{i-1} inside W_i
  Matrix proj = wi;
  if (wprev.cols() > 0) proj = wi - wprev * (wprev.transpose() * wi);
  Eigen::ColPivHouseholderQR<Matrix> qr(proj);
  qr.setThreshold(1e-8);
  Eigen::Index r = qr.rank();
  if (r == 0) throw std::runtime_error("complement subspace collapsed; no witness candidates");
  Matrix v = qr.householderQ() * Matrix::Identity(d, r);

  std::vector<Vector> candidates;
  for (Eigen::Index j = 0; j < v.cols(); ++j) candidates.push_back(v.col(j));
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> gauss;
  for (int extra = 0; extra < 4 && v.cols() > 1; ++extra) {
    Vector c = Vector::Zero(d);
    for (Eigen::Index j = 0; j < v.cols(); ++j) c += gauss(rng) * v.col(j);
    if (c.norm() > 1e-9) candidates.push_back(c.normalized());
  }
  for (const auto& c : candidates) {
    auto est = bohl_interval(sys, c, grid, opts);
    if (est.lower >= ivs[interval_index].lo - tol - est.margin &&
        est.upper <= ivs[interval_index].hi + tol + est.margin)
      return c;
  }
  throw std::runtime_error("no witness direction found within tolerance for interval " +
                           std::to_string(interval_index));
}

}  // namespace bohl
