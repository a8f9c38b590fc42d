#pragma once

#include <cmath>

namespace bohl {

// Double-double value: hi + lo with |lo| <= ulp(hi)/2. Enough head-room to
// keep unit-scale detail alive next to segment lengths of order 1e62.
struct DD {
  double hi = 0.0;
  double lo = 0.0;

  double value() const { return hi + lo; }
};

namespace detail {

// Knuth two-sum: a + b = s + e exactly.
inline DD two_sum(double a, double b) {
  double s = a + b;
  double bv = s - a;
  double e = (a - (s - bv)) + (b - bv);
  return {s, e};
}

}  // namespace detail

inline DD dd_add(DD a, double b) {
  DD s = detail::two_sum(a.hi, b);
  s.lo += a.lo;
  DD r = detail::two_sum(s.hi, s.lo);
  return r;
}

inline DD dd_add(DD a, DD b) {
  DD s = detail::two_sum(a.hi, b.hi);
  s.lo += a.lo + b.lo;
  return detail::two_sum(s.hi, s.lo);
}

inline DD dd_sub(DD a, DD b) { return dd_add(a, DD{-b.hi, -b.lo}); }

inline DD dd_from(double x) { return {x, 0.0}; }

// Neumaier running sum, for accumulating many terms of mixed magnitude.
class CompensatedSum {
 public:
  void add(double x) {
    double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }

  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace bohl
