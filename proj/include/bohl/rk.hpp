#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "bohl/log_vector.hpp"

namespace bohl {

struct RkOptions {
  double rel_tol = 1e-9;
  double abs_tol = 1e-12;
  double max_step = std::numeric_limits<double>::infinity();
  double min_step_factor = 1e-14;  // step underflow threshold relative to span
};

struct RkStepRecord {
  double t;
  Vector y;
};

// Dormand-Prince 5(4) embedded pair with a standard PI-free step controller.
// Integrates y' = f(t, y) over [t0, t1]; `observe` sees every accepted step
// and may mutate y (used for direction renormalization) or stop early by
// returning false.
inline void rk45_integrate(const std::function<Vector(double, const Vector&)>& f, double t0,
                           double t1, Vector& y, const RkOptions& opts,
                           const std::function<bool(double, Vector&)>& observe = {}) {
  static const double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static const double a21 = 1.0 / 5;
  static const double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static const double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static const double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                      a54 = -212.0 / 729;
  static const double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                      a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static const double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                      b6 = 11.0 / 84;
  static const double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                      e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

  if (t1 <= t0) return;
  double span = t1 - t0;
  double t = t0;
  double h = std::min({opts.max_step, span, 0.1});
  Vector k1 = f(t, y);
  int rejects_in_row = 0;

  while (t < t1) {
    h = std::min(h, t1 - t);
    if (h < opts.min_step_factor * span)
      throw std::runtime_error("step size underflow at t=" + std::to_string(t));

    Vector k2 = f(t + c2 * h, y + h * (a21 * k1));
    Vector k3 = f(t + c3 * h, y + h * (a31 * k1 + a32 * k2));
    Vector k4 = f(t + c4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3));
    Vector k5 = f(t + c5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    Vector k6 = f(t + h, y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    Vector y5 = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    Vector k7 = f(t + h, y5);
    Vector err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    double scale = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      double tol = opts.abs_tol + opts.rel_tol * std::max(std::abs(y[i]), std::abs(y5[i]));
      scale = std::max(scale, std::abs(err[i]) / tol);
    }
    if (!std::isfinite(scale)) scale = 1e10;

    if (scale <= 1.0) {
      t += h;
      y = y5;
      rejects_in_row = 0;
      if (observe) {
        if (!observe(t, y)) return;
        // observe may rescale y, so refresh the cached derivative
        k1 = f(t, y);
      } else {
        k1 = k7;  // FSAL
      }
    } else {
      ++rejects_in_row;
      if (rejects_in_row > 60) throw std::runtime_error("integrator stalled at t=" + std::to_string(t));
    }
    double fac = 0.9 * std::pow(std::max(scale, 1e-10), -0.2);
    h *= std::clamp(fac, 0.2, 5.0);
    h = std::min(h, opts.max_step);
  }
}

}  // namespace bohl
