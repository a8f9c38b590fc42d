#pragma once

#include <cmath>
#include <stdexcept>

#include "bohl/log_vector.hpp"

namespace bohl {

namespace detail {

// Pade(13,13) core, valid for ||A||_1 <= 5.37.
inline Matrix expm_pade13(const Matrix& a) {
  static const double b[14] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                               1187353796428800.0,  129060195264000.0,   10559470521600.0,
                               670442572800.0,      33522128640.0,       1323241920.0,
                               40840800.0,          960960.0,            16380.0,
                               182.0,               1.0};
  const Eigen::Index n = a.rows();
  Matrix id = Matrix::Identity(n, n);
  Matrix a2 = a * a;
  Matrix a4 = a2 * a2;
  Matrix a6 = a2 * a4;
  Matrix u = a * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 +
                  b[3] * a2 + b[1] * id);
  Matrix v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 +
             b[0] * id;
  return (v - u).partialPivLu().solve(v + u);
}

}  // namespace detail

// e^A by scaling and squaring.  Valid while no entry of e^A leaves double
// range; use expm_log_scaled for wide-range segments.
inline Matrix expm(const Matrix& a) {
  const double theta13 = 5.371920351148152;
  double nrm = a.cwiseAbs().colwise().sum().maxCoeff();  // 1-norm
  int s = 0;
  if (nrm > theta13) s = int(std::ceil(std::log2(nrm / theta13)));
  Matrix r = detail::expm_pade13(a / std::ldexp(1.0, s));
  for (int i = 0; i < s; ++i) r = (r * r).eval();
  return r;
}

// e^{A dt} = e^{log_scale} * M with ||M||_F = 1.  Squaring steps renormalize,
// so decay/growth factors beyond double range stay representable.
struct ScaledMatrix {
  Matrix m;
  double log_scale;
};

inline ScaledMatrix expm_log_scaled(const Matrix& a, double dt) {
  const double theta13 = 5.371920351148152;
  Matrix b = a * dt;
  double nrm = b.cwiseAbs().colwise().sum().maxCoeff();
  int s = 0;
  if (nrm > theta13) s = int(std::ceil(std::log2(nrm / theta13)));
  Matrix r = detail::expm_pade13(b / std::ldexp(1.0, s));
  double f = r.norm();
  if (!(f > 0.0) || !std::isfinite(f)) throw std::runtime_error("matrix exponential failed");
  r /= f;
  double log_scale = std::log(f);
  for (int i = 0; i < s; ++i) {
    Matrix p = r * r;
    double g = p.norm();
    if (!(g > 0.0) || !std::isfinite(g)) throw std::runtime_error("matrix exponential squaring failed");
    r = p / g;
    log_scale = 2.0 * log_scale + std::log(g);
  }
  return {r, log_scale};
}

}  // namespace bohl
