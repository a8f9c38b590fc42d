#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "bohl/compensated.hpp"

namespace bohl {

enum class SequenceKind { paper51, mild51, dyadic, custom };

inline const char* to_string(SequenceKind k) {
  switch (k) {
    case SequenceKind::paper51: return "paper51";
    case SequenceKind::mild51: return "mild51";
    case SequenceKind::dyadic: return "dyadic";
    case SequenceKind::custom: return "custom";
  }
  return "?";
}

// Strictly increasing switching times T_0 = 0 < T_1 < ... < T_n, stored as
// per-segment gaps plus double-double prefix sums of the gaps.  Gap sizes in
// the built-in families span from O(1) to e^576, so all absolute-time
// bookkeeping goes through the compensated prefix table.
class SwitchingSequence {
 public:
  SwitchingSequence(SequenceKind kind, std::vector<double> gaps)
      : kind_(kind), gaps_(std::move(gaps)) {
    prefix_.reserve(gaps_.size() + 1);
    prefix_.push_back(dd_from(0.0));
    for (std::size_t k = 0; k < gaps_.size(); ++k) {
      if (!(gaps_[k] > 0.0) || !std::isfinite(gaps_[k]))
        throw std::invalid_argument("switching gap " + std::to_string(k) +
                                    " must be positive and finite");
      prefix_.push_back(dd_add(prefix_.back(), gaps_[k]));
    }
    if (gaps_.empty()) throw std::invalid_argument("switching sequence needs at least one segment");
  }

  static SwitchingSequence make(SequenceKind kind, std::size_t horizon_segments) {
    std::vector<double> gaps;
    gaps.reserve(horizon_segments);
    switch (kind) {
      case SequenceKind::paper51: {
        // T_{k+1} = T_k + e^{k^2} for even k, T_k + k for odd k.
        if (horizon_segments > 26)
          throw std::invalid_argument("paper51 horizon capped at 26 segments (e^{26^2} nears double overflow)");
        for (std::size_t k = 0; k < horizon_segments; ++k)
          gaps.push_back(k % 2 == 0 ? std::exp(double(k) * double(k)) : double(k));
        break;
      }
      case SequenceKind::mild51: {
        // Long segments (k+1)^2 at even index, short 1+ln(k+1) at odd index,
        // so e^{short gap}/previous long gap -> 0 while all gaps diverge.
        for (std::size_t k = 0; k < horizon_segments; ++k)
          gaps.push_back(k % 2 == 0 ? double(k + 1) * double(k + 1)
                                    : 1.0 + std::log(double(k + 1)));
        break;
      }
      case SequenceKind::dyadic: {
        // T_0 = 0 and T_k = 2^k for k >= 1, computed directly.
        if (horizon_segments > 1022)
          throw std::invalid_argument("dyadic horizon capped at 1022 segments");
        double prev = 0.0;
        for (std::size_t k = 1; k <= horizon_segments; ++k) {
          double tk = std::ldexp(1.0, int(k));
          gaps.push_back(tk - prev);
          prev = tk;
        }
        break;
      }
      case SequenceKind::custom:
        throw std::invalid_argument("custom sequences take an explicit gap list");
    }
    SwitchingSequence seq(kind, std::move(gaps));
    if (kind == SequenceKind::dyadic) {
      // Re-pin the prefix table to exact powers of two.
      for (std::size_t k = 1; k < seq.prefix_.size(); ++k)
        seq.prefix_[k] = dd_from(std::ldexp(1.0, int(k)));
    }
    return seq;
  }

  SequenceKind kind() const { return kind_; }
  std::size_t segment_count() const { return gaps_.size(); }
  double gap(std::size_t k) const {
    if (k >= gaps_.size()) throw std::out_of_range("segment index beyond horizon");
    return gaps_[k];
  }
  double max_gap() const {
    double m = 0.0;
    for (double g : gaps_) m = std::max(m, g);
    return m;
  }

  // T_k as a compensated clock value.
  DD time_dd(std::size_t k) const {
    if (k >= prefix_.size())
      throw std::out_of_range("switching index " + std::to_string(k) + " beyond horizon");
    return prefix_[k];
  }
  double time(std::size_t k) const { return time_dd(k).value(); }
  double horizon() const { return prefix_.back().value(); }

  // Index of the segment owning clock time t, with boundary instants
  // attributed to the segment ending there (left attribution); t=0 maps to
  // segment 0.
  std::size_t segment_of(double t) const {
    if (t <= 0.0) return 0;
    std::size_t lo = 0, hi = prefix_.size() - 1;
    // find largest k with T_k < t
    while (lo < hi) {
      std::size_t mid = (lo + hi + 1) / 2;
      if (prefix_[mid].value() < t)
        lo = mid;
      else
        hi = mid - 1;
    }
    return std::min(lo, gaps_.size() - 1);
  }

  // Diagnostic ratio e^{T_{2k+2}-T_{2k+1}} / (T_{2k+1}-T_{2k}); the admissible
  // families drive it to zero.
  double alternation_ratio(std::size_t k) const {
    double short_gap = gap(2 * k + 1);
    double long_gap = gap(2 * k);
    return std::exp(short_gap) / long_gap;
  }

 private:
  SequenceKind kind_;
  std::vector<double> gaps_;
  std::vector<DD> prefix_;
};

// Overflow-safe instant: segment index + offset inside the segment + the
// compensated absolute clock.  Window arithmetic between instants is done
// segment-relatively so that short windows at clock ~1e62 keep full precision.
struct TimePoint {
  std::size_t segment = 0;
  double offset = 0.0;
  DD clock{};

  double clock_value() const { return clock.value(); }
};

inline TimePoint make_timepoint(const SwitchingSequence& seq, std::size_t segment, double offset) {
  if (segment >= seq.segment_count())
    throw std::out_of_range("segment index beyond horizon");
  double len = seq.gap(segment);
  if (offset < 0.0 || offset > len)
    throw std::invalid_argument("offset outside segment");
  TimePoint tp;
  tp.segment = segment;
  tp.offset = offset;
  tp.clock = dd_add(seq.time_dd(segment), offset);
  return tp;
}

inline TimePoint timepoint_at_clock_dd(const SwitchingSequence& seq, DD t) {
  double tv = t.value();
  if (tv < 0.0) throw std::invalid_argument("negative time");
  if (tv > seq.horizon() * (1.0 + 1e-12))
    throw std::out_of_range("time beyond horizon");
  std::size_t k = seq.segment_of(tv);
  double off = dd_sub(t, seq.time_dd(k)).value();
  off = std::clamp(off, 0.0, seq.gap(k));
  TimePoint tp;
  tp.segment = k;
  tp.offset = off;
  tp.clock = t;
  return tp;
}

inline TimePoint timepoint_at_clock(const SwitchingSequence& seq, double t) {
  return timepoint_at_clock_dd(seq, dd_from(t));
}

// tp + dt as a TimePoint (dt may cross segment boundaries).
inline TimePoint timepoint_advance(const SwitchingSequence& seq, const TimePoint& tp, double dt) {
  return timepoint_at_clock_dd(seq, dd_add(tp.clock, dt));
}

inline TimePoint switching_time(const SwitchingSequence& seq, std::size_t k) {
  if (k > seq.segment_count())
    throw std::out_of_range("switching index beyond horizon");
  if (k == seq.segment_count()) {
    TimePoint tp;
    tp.segment = k - 1;
    tp.offset = seq.gap(k - 1);
    tp.clock = seq.time_dd(k);
    return tp;
  }
  return make_timepoint(seq, k, 0.0);
}

// t - s, segment-relative: sums are taken at the scale of the answer, never
// against absolute clocks of order 1e62.  Within one segment, the compensated
// clock residual resolves advances smaller than one ulp of the offset.
inline double duration(const SwitchingSequence& seq, const TimePoint& s, const TimePoint& t) {
  if (t.segment == s.segment) {
    double d = t.offset - s.offset;
    if (d == 0.0) {
      double via_clock = dd_sub(t.clock, s.clock).value();
      if (via_clock != 0.0) return via_clock;
    }
    return d;
  }
  if (t.segment < s.segment) return -duration(seq, t, s);
  CompensatedSum acc;
  acc.add(seq.gap(s.segment) - s.offset);
  for (std::size_t k = s.segment + 1; k < t.segment; ++k) acc.add(seq.gap(k));
  acc.add(t.offset);
  return acc.value();
}

// Exact time left in the segment of tp, and exact time past its start.
inline double remaining_in_segment(const SwitchingSequence& seq, const TimePoint& tp) {
  return dd_sub(seq.time_dd(tp.segment + 1), tp.clock).value();
}

inline double offset_in_segment(const SwitchingSequence& seq, const TimePoint& tp) {
  return dd_sub(tp.clock, seq.time_dd(tp.segment)).value();
}

}  // namespace bohl
