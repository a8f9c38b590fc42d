#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <ostream>
#include <variant>
#include <vector>

#include "bohl/linear_system.hpp"
#include "bohl/log_vector.hpp"
#include "bohl/matrix_exp.hpp"
#include "bohl/rk.hpp"
#include "bohl/switching.hpp"

namespace bohl {

namespace detail {

// (1 - e^{-z})/z, accurate near z = 0.
inline double psi1(double z) {
  if (std::abs(z) < 1e-8) return 1.0 - 0.5 * z;
  return -std::expm1(-z) / z;
}

}  // namespace detail

// Constant upper-triangular plane phase [[a, c],[0, b]].  The common scalar
// factor e^{max(a,b) dt} lives in log space only, so segment lengths of order
// e^576 propagate without overflow.
struct ClosedTriangular2x2 {
  double a, b, c;
};

// Constant diagonal rates, any dimension.
struct DiagonalRates {
  std::vector<double> rates;
};

// Fallback for general constant matrices: scaling-and-squaring exponential
// with renormalized squaring steps.
struct MatrixExponentialForm {
  Matrix coeff;
};

struct SegmentPropagator {
  std::variant<ClosedTriangular2x2, DiagonalRates, MatrixExponentialForm> form;
};

inline SegmentPropagator make_segment_propagator(const Matrix& a) {
  if (a.rows() == 2 && a(1, 0) == 0.0)
    return {ClosedTriangular2x2{a(0, 0), a(1, 1), a(0, 1)}};
  bool diag = true;
  for (Eigen::Index i = 0; i < a.rows() && diag; ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      if (i != j && a(i, j) != 0.0) {
        diag = false;
        break;
      }
  if (diag) {
    DiagonalRates d;
    for (Eigen::Index i = 0; i < a.rows(); ++i) d.rates.push_back(a(i, i));
    return {d};
  }
  return {MatrixExponentialForm{a}};
}

// Materialized e^{A dt} for the triangular plane phase; caller keeps dt small
// enough for plain doubles.  Used for cross-validation against expm.
inline Matrix closed_triangular_matrix(double a, double b, double c, double dt) {
  double m = std::max(a, b);
  double z = std::abs(a - b) * dt;
  Matrix r(2, 2);
  r << std::exp(a * dt), c * dt * detail::psi1(z) * std::exp(m * dt), 0.0, std::exp(b * dt);
  return r;
}

namespace detail {

inline LogVector apply_closed2x2(const ClosedTriangular2x2& p, const LogVector& st, double dt) {
  if (dt == 0.0) return st;
  double u0 = st.direction[0], u1 = st.direction[1];
  if (u1 == 0.0) {
    LogVector out = st;
    out.log_mag += p.a * dt;
    return out;
  }
  if (u0 == 0.0 && p.c == 0.0) {
    LogVector out = st;
    out.log_mag += p.b * dt;
    return out;
  }
  double m = std::max(p.a, p.b);
  double z = std::abs(p.a - p.b) * dt;
  double ea = std::exp((p.a - m) * dt);
  double eb = std::exp((p.b - m) * dt);
  double w = p.c * dt * psi1(z);
  Vector v(2);
  v << ea * u0 + w * u1, eb * u1;
  if (!v.allFinite()) throw std::runtime_error("non-finite state in closed-form segment propagation");
  return normalized_log_vector(v, st.log_mag + m * dt);
}

inline LogVector apply_diagonal(const DiagonalRates& p, const LogVector& st, double dt) {
  if (dt == 0.0) return st;
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < st.direction.size(); ++i)
    if (st.direction[i] != 0.0) m = std::max(m, p.rates[std::size_t(i)]);
  Vector v = st.direction;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (v[i] != 0.0) v[i] *= std::exp((p.rates[std::size_t(i)] - m) * dt);
  if (!v.allFinite()) throw std::runtime_error("non-finite state in diagonal segment propagation");
  return normalized_log_vector(v, st.log_mag + m * dt);
}

inline LogVector apply_matexp(const MatrixExponentialForm& p, const LogVector& st, double dt) {
  if (dt == 0.0) return st;
  ScaledMatrix sm = expm_log_scaled(p.coeff, dt);
  Vector v = sm.m * st.direction;
  if (!v.allFinite() || v.norm() == 0.0)
    throw std::runtime_error("matrix-exponential segment propagation lost the state");
  return normalized_log_vector(v, st.log_mag + sm.log_scale);
}

}  // namespace detail

// Advance a log-space state by dt under a constant-coefficient segment.
inline LogVector apply_propagator(const SegmentPropagator& p, const LogVector& state, double dt) {
  if (dt < 0.0) throw std::invalid_argument("negative propagation step");
  return std::visit(
      [&](const auto& form) {
        using T = std::decay_t<decltype(form)>;
        if constexpr (std::is_same_v<T, ClosedTriangular2x2>)
          return detail::apply_closed2x2(form, state, dt);
        else if constexpr (std::is_same_v<T, DiagonalRates>)
          return detail::apply_diagonal(form, state, dt);
        else
          return detail::apply_matexp(form, state, dt);
      },
      p.form);
}

// Per-solution propagation cache: boundary snapshots once, then any window
// ratio is accumulated relative to its own start so that short windows at
// clock ~1e62 keep full log precision.
class TrajectoryCache {
 public:
  TrajectoryCache(const LinearSystem& sys, const Vector& xi) : sys_(&sys) {
    if (xi.size() != sys.dimension()) throw std::invalid_argument("initial value has wrong dimension");
    double n = xi.norm();
    if (!(n > 0.0)) throw std::invalid_argument("initial value must be nonzero");
    xi_ = xi / n;
    if (sys.is_piecewise()) {
      init_piecewise();
    } else if (sys.is_scalar()) {
      init_scalar();
    } else if (sys.is_block()) {
      init_block();
    } else {
      const auto& gc = std::get<GeneralCallable>(sys.body());
      if (!gc.exact) needs_prepare_ = true;
    }
  }

  const LinearSystem& system() const { return *sys_; }
  const Vector& initial_direction() const { return xi_; }
  bool needs_prepare() const { return needs_prepare_; }

  // Integrates a numeric general system through all requested instants.
  void prepare(std::vector<TimePoint> pts) {
    if (!needs_prepare_) return;
    std::vector<double> clocks;
    clocks.reserve(pts.size());
    for (const auto& p : pts) clocks.push_back(p.clock_value());
    for (std::size_t k = 0; k <= sys_->sequence().segment_count(); ++k)
      clocks.push_back(sys_->sequence().time(k));
    std::sort(clocks.begin(), clocks.end());
    clocks.erase(std::unique(clocks.begin(), clocks.end(),
                             [](double a, double b) { return std::abs(a - b) <= 1e-12 * (1.0 + std::abs(a)); }),
                 clocks.end());
    integrate_numeric(clocks);
  }

  LogVector at(const TimePoint& tp) const {
    const auto& seq = sys_->sequence();
    if (sys_->is_piecewise()) {
      LogVector st = snapshots_[tp.segment];
      double off = std::clamp(offset_in_segment(seq, tp), 0.0, seq.gap(tp.segment));
      return advance_in_segment(st, tp.segment, off);
    }
    if (sys_->is_scalar()) {
      double off = std::clamp(offset_in_segment(seq, tp), 0.0, seq.gap(tp.segment));
      DD lg = dd_add(scalar_prefix_[tp.segment], sys_->scalar_rate(tp.segment) * off);
      LogVector lv;
      lv.direction = xi_;
      lv.log_mag = lg.value();
      return lv;
    }
    if (sys_->is_block()) return block_at(tp);
    const auto& gc = std::get<GeneralCallable>(sys_->body());
    if (gc.exact) return gc.exact(xi_, tp.clock_value());
    return numeric_at(tp.clock_value());
  }

  // ln ||X(s+len)xi|| - ln ||X(s)xi||, accumulated from s by walking the
  // segments with explicit partial lengths.  Every partial stays at the scale
  // of the window itself (never differenced against absolute clocks of order
  // 1e62), which keeps short windows exact anywhere on the half-line.
  double ratio_len(const TimePoint& s, double len, Norm norm = Norm::euclidean) const {
    if (len == 0.0) return 0.0;
    if (len < 0.0) throw std::invalid_argument("window end precedes start");
    const auto& seq = sys_->sequence();
    if (sys_->is_scalar()) {
      CompensatedSum acc;
      walk(s, len, [&](std::size_t k, double dt) { acc.add(sys_->scalar_rate(k) * dt); });
      return acc.value();
    }
    if (sys_->is_piecewise()) {
      LogVector st;
      st.direction = at(s).direction;
      st.log_mag = 0.0;
      double start_inf =
          norm == Norm::maximum ? std::log(st.direction.lpNorm<Eigen::Infinity>()) : 0.0;
      walk(s, len, [&](std::size_t k, double dt) { st = advance_in_segment(st, k, dt); });
      if (norm == Norm::maximum)
        return st.log_mag + std::log(st.direction.lpNorm<Eigen::Infinity>()) - start_inf;
      return st.log_mag;
    }
    if (sys_->is_block()) return block_ratio_len(s, len, norm);
    const auto& gc = std::get<GeneralCallable>(sys_->body());
    if (gc.exact_ratio) return gc.exact_ratio(xi_, s, len, norm);
    LogVector a = at(s), b = at(timepoint_advance(seq, s, len));
    return b.norm_log(norm) - a.norm_log(norm);
  }

  double ratio_log(const TimePoint& s, const TimePoint& t, Norm norm = Norm::euclidean) const {
    return ratio_len(s, duration(sys_->sequence(), s, t), norm);
  }

 private:
  void init_piecewise() {
    const auto& pw = std::get<PiecewisePhases>(sys_->body());
    phase_props_.reserve(pw.phases.size());
    for (const auto& m : pw.phases) phase_props_.push_back(make_segment_propagator(m));
    const auto& seq = sys_->sequence();
    snapshots_.reserve(seq.segment_count() + 1);
    LogVector st;
    st.direction = xi_;
    st.log_mag = 0.0;
    snapshots_.push_back(st);
    for (std::size_t k = 0; k < seq.segment_count(); ++k) {
      st = advance_full_segment(st, k);
      snapshots_.push_back(st);
    }
  }

  void init_scalar() {
    const auto& seq = sys_->sequence();
    scalar_prefix_.reserve(seq.segment_count() + 1);
    DD acc{};
    scalar_prefix_.push_back(acc);
    for (std::size_t k = 0; k < seq.segment_count(); ++k) {
      acc = dd_add(acc, sys_->scalar_rate(k) * seq.gap(k));
      scalar_prefix_.push_back(acc);
    }
  }

  struct BlockPart {
    std::shared_ptr<TrajectoryCache> cache;
    double weight_log = 0.0;
    Eigen::Index offset = 0;
    Eigen::Index dim = 0;
    std::vector<TimePoint> boundary_tp;
  };

  void init_block() {
    const auto& bd = std::get<BlockDiagonal>(sys_->body());
    Eigen::Index start = 0;
    for (const auto& blk : bd.blocks) {
      Eigen::Index n = blk->dimension();
      Vector sub = xi_.segment(start, n);
      double nn = sub.norm();
      BlockPart part;
      part.weight_log = nn > 0.0 ? std::log(nn) : -std::numeric_limits<double>::infinity();
      part.offset = start;
      part.dim = n;
      if (nn > 0.0) part.cache = std::make_shared<TrajectoryCache>(*blk, Vector(sub / nn));
      parts_.push_back(std::move(part));
      start += n;
    }
    // map composite boundaries into each block's own grid
    const auto& seq = sys_->sequence();
    for (auto& part : parts_) {
      if (!part.cache) continue;
      part.boundary_tp.reserve(seq.segment_count() + 1);
      const auto& cseq = part.cache->system().sequence();
      for (std::size_t j = 0; j <= seq.segment_count(); ++j)
        part.boundary_tp.push_back(timepoint_at_clock_dd(cseq, seq.time_dd(j)));
    }
  }

  LogVector advance_full_segment(const LogVector& st, std::size_t k) const {
    return advance_in_segment(st, k, sys_->sequence().gap(k));
  }

  // Visit (segment, dt) pieces covering [s, s+len]; the final segment absorbs
  // fp slop beyond the horizon.
  template <class F>
  void walk(const TimePoint& s, double len, F&& piece) const {
    const auto& seq = sys_->sequence();
    std::size_t k = s.segment;
    double off = s.offset;
    double left = len;
    while (left > 0.0) {
      double rem = seq.gap(k) - off;
      if (left <= rem || k + 1 >= seq.segment_count()) {
        piece(k, left);
        return;
      }
      piece(k, rem);
      left -= rem;
      ++k;
      off = 0.0;
    }
  }

  LogVector advance_in_segment(const LogVector& st, std::size_t k, double dt) const {
    const auto& pw = std::get<PiecewisePhases>(sys_->body());
    try {
      return apply_propagator(phase_props_[pw.phase_of(k)], st, dt);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(std::string(e.what()) + " (segment " + std::to_string(k) +
                               ", dt=" + std::to_string(dt) + ")");
    }
  }

  TimePoint block_timepoint(const BlockPart& part, const TimePoint& tp) const {
    TimePoint base = part.boundary_tp[tp.segment];
    const auto& cseq = part.cache->system().sequence();
    TimePoint out;
    out.segment = base.segment;
    out.offset = std::min(base.offset + tp.offset, cseq.gap(base.segment));
    out.clock = dd_add(base.clock, tp.offset);
    return out;
  }

  LogVector block_at(const TimePoint& tp) const {
    std::vector<double> abs_log(parts_.size(), -std::numeric_limits<double>::infinity());
    std::vector<LogVector> states(parts_.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < parts_.size(); ++i) {
      if (!parts_[i].cache) continue;
      states[i] = parts_[i].cache->at(block_timepoint(parts_[i], tp));
      abs_log[i] = parts_[i].weight_log + states[i].log_mag;
      mx = std::max(mx, abs_log[i]);
    }
    Vector dir = Vector::Zero(sys_->dimension());
    for (std::size_t i = 0; i < parts_.size(); ++i) {
      if (!parts_[i].cache) continue;
      double w = std::exp(abs_log[i] - mx);
      dir.segment(parts_[i].offset, parts_[i].dim) = w * states[i].direction;
    }
    return normalized_log_vector(dir, mx);
  }

  double block_ratio_len(const TimePoint& s, double len, Norm norm) const {
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> w_s(parts_.size(), -std::numeric_limits<double>::infinity());
    std::vector<double> delta(parts_.size(), 0.0);
    std::vector<double> inf_s(parts_.size(), 0.0);
    for (std::size_t i = 0; i < parts_.size(); ++i) {
      const auto& part = parts_[i];
      if (!part.cache) continue;
      TimePoint cs = block_timepoint(part, s);
      LogVector ls = part.cache->at(cs);
      w_s[i] = part.weight_log + ls.log_mag;
      delta[i] = part.cache->ratio_len(cs, len, norm);
      if (norm == Norm::maximum) inf_s[i] = std::log(ls.direction.lpNorm<Eigen::Infinity>());
      mx = std::max(mx, w_s[i]);
    }
    if (norm == Norm::maximum) {
      // per-block sup-norm logs shift by the block's own max-norm ratio
      double ms = -std::numeric_limits<double>::infinity(), mt = ms;
      for (std::size_t i = 0; i < parts_.size(); ++i) {
        if (!parts_[i].cache) continue;
        ms = std::max(ms, w_s[i] - mx + inf_s[i]);
        mt = std::max(mt, w_s[i] - mx + inf_s[i] + delta[i]);
      }
      return mt - ms;
    }
    double mt = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < parts_.size(); ++i)
      if (parts_[i].cache) mt = std::max(mt, w_s[i] + delta[i]);
    double es = 0.0, et = 0.0;
    for (std::size_t i = 0; i < parts_.size(); ++i) {
      if (!parts_[i].cache) continue;
      es += std::exp(2.0 * (w_s[i] - mx));
      et += std::exp(2.0 * (w_s[i] + delta[i] - mt));
    }
    return (mt - mx) + 0.5 * (std::log(et) - std::log(es));
  }

  void integrate_numeric(const std::vector<double>& clocks) {
    const auto& gc = std::get<GeneralCallable>(sys_->body());
    int d = sys_->dimension();
    RkOptions opts;
    opts.rel_tol = 1e-9;
    opts.abs_tol = 1e-12;
    if (sys_->bound() && *sys_->bound() > 0.0) opts.max_step = 1.0 / (10.0 * *sys_->bound());
    auto ode = [&gc, d](double t, const Vector& y) {
      Vector u = y.head(d);
      Vector au = gc.coeff(t) * u;
      double r = u.dot(au) / u.squaredNorm();
      Vector dy(d + 1);
      dy.head(d) = au - r * u;
      dy[d] = r;
      return dy;
    };
    Vector y(d + 1);
    y.head(d) = xi_;
    y[d] = 0.0;
    double t = 0.0;
    store_numeric(0.0, y);
    for (double tc : clocks) {
      if (tc <= t) continue;
      rk45_integrate(ode, t, tc, y, opts, [d](double, Vector& yy) {
        double n = yy.head(d).norm();
        yy[d] += std::log(n);
        yy.head(d) /= n;
        return true;
      });
      double n = y.head(d).norm();
      y[d] += std::log(n);
      y.head(d) /= n;
      t = tc;
      store_numeric(tc, y);
    }
  }

  void store_numeric(double t, const Vector& y) {
    LogVector lv;
    lv.direction = y.head(sys_->dimension());
    lv.log_mag = y[sys_->dimension()];
    numeric_samples_.emplace(t, std::move(lv));
  }

  LogVector numeric_at(double clock) const {
    auto it = numeric_samples_.lower_bound(clock - 1e-12 * (1.0 + std::abs(clock)));
    if (it == numeric_samples_.end() ||
        std::abs(it->first - clock) > 1e-9 * (1.0 + std::abs(clock)))
      throw std::logic_error("time was not prepared on the numeric trajectory");
    return it->second;
  }

  const LinearSystem* sys_;
  Vector xi_;
  bool needs_prepare_ = false;
  std::vector<SegmentPropagator> phase_props_;
  std::vector<LogVector> snapshots_;
  std::vector<DD> scalar_prefix_;
  std::vector<BlockPart> parts_;
  std::map<double, LogVector> numeric_samples_;
};

// X(t) xi / ||xi|| in log space.
inline LogVector evolve(const LinearSystem& sys, const Vector& xi, const TimePoint& t) {
  TrajectoryCache cache(sys, xi);
  if (cache.needs_prepare()) cache.prepare({t});
  return cache.at(t);
}

inline LogVector evolve(const LinearSystem& sys, const Vector& xi, double clock) {
  return evolve(sys, xi, timepoint_at_clock(sys.sequence(), clock));
}

inline double log_norm_ratio(const LinearSystem& sys, const Vector& xi, const TimePoint& s,
                             const TimePoint& t, Norm norm = Norm::euclidean) {
  if (duration(sys.sequence(), s, t) < 0.0) throw std::invalid_argument("window end precedes start");
  TrajectoryCache cache(sys, xi);
  if (cache.needs_prepare()) cache.prepare({s, t});
  return cache.ratio_log(s, t, norm);
}

inline double log_norm_ratio(const LinearSystem& sys, const Vector& xi, double s, double t,
                             Norm norm = Norm::euclidean) {
  return log_norm_ratio(sys, xi, timepoint_at_clock(sys.sequence(), s),
                        timepoint_at_clock(sys.sequence(), t), norm);
}

// CSV rows (clock, log_mag, direction components) at the given instants.
inline void write_trajectory_csv(std::ostream& os, TrajectoryCache& cache,
                                 const std::vector<TimePoint>& pts) {
  if (cache.needs_prepare()) cache.prepare(pts);
  os << "clock,log_mag";
  for (int i = 0; i < cache.system().dimension(); ++i) os << ",dir" << i;
  os << "\n";
  char buf[64];
  for (const auto& tp : pts) {
    LogVector lv = cache.at(tp);
    std::snprintf(buf, sizeof buf, "%.17g", tp.clock_value());
    os << buf;
    std::snprintf(buf, sizeof buf, "%.17g", lv.log_mag);
    os << "," << buf;
    for (Eigen::Index i = 0; i < lv.direction.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", lv.direction[i]);
      os << "," << buf;
    }
    os << "\n";
  }
}

}  // namespace bohl
