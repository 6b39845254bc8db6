#pragma once

// SO(3) primitives. Everything that sits on a differentiated path is templated
// over the scalar type; helpers used only by solvers and diagnostics are double.

#include <algorithm>
#include <cmath>
#include <numbers>

#include "physord/errors.hpp"
#include "physord/linalg.hpp"

namespace physord::lie {

inline constexpr double kSmallAngle = 1e-8;

template <class T>
Mat3<T> hat(const Vec3<T>& v) {
  Mat3<T> m;
  m(0, 1) = -v[2];
  m(0, 2) = v[1];
  m(1, 0) = v[2];
  m(1, 2) = -v[0];
  m(2, 0) = -v[1];
  m(2, 1) = v[0];
  return m;
}

// vee of the skew part (M - M^T) / 2; no precondition check.
template <class T>
Vec3<T> vee_skew(const Mat3<T>& m) {
  return {0.5 * (m(2, 1) - m(1, 2)), 0.5 * (m(0, 2) - m(2, 0)), 0.5 * (m(1, 0) - m(0, 1))};
}

inline double skew_defect(const Mat3d& m) { return frobenius_norm(m + transpose(m)); }

inline Vec3d vee(const Mat3d& m) {
  const double defect = skew_defect(m);
  if (!(defect <= 1e-8)) {
    throw NotSkew("||M + M^T||_F = " + std::to_string(defect) + " exceeds 1e-8");
  }
  return vee_skew(m);
}

// Rodrigues formula; 2nd-order Taylor expansion below the small-angle threshold.
template <class T>
Mat3<T> exp_so3(const Vec3<T>& phi) {
  using std::sin;
  using std::sqrt;
  const Mat3<T> k = hat(phi);
  const Mat3<T> k2 = k * k;
  const T theta2 = dot(phi, phi);
  if (value(theta2) < kSmallAngle * kSmallAngle) {
    return Mat3<T>::identity() + k + 0.5 * k2;
  }
  const T theta = sqrt(theta2);
  const T half = sin(0.5 * theta);
  const T a = sin(theta) / theta;
  const T b = 2.0 * half * half / theta2;
  return Mat3<T>::identity() + a * k + b * k2;
}

inline double rotation_angle(const Mat3d& r) {
  const Vec3d s = vee_skew(r);
  return std::atan2(norm(s), 0.5 * (trace(r) - 1.0));
}

// Principal logarithm, angle in [0, pi].
inline Vec3d log_so3(const Mat3d& r) {
  const Vec3d s = vee_skew(r);  // sin(theta) * axis
  const double sin_theta = norm(s);
  const double cos_theta = 0.5 * (trace(r) - 1.0);
  const double theta = std::atan2(sin_theta, cos_theta);
  if (theta < kSmallAngle) {
    return s;
  }
  if (std::numbers::pi - theta < 1e-4) {
    // Near pi the antisymmetric part vanishes; read the axis off the symmetric
    // part (R + R^T)/2 - cos(theta) I = (1 - cos(theta)) a a^T.
    Mat3d b = 0.5 * (r + transpose(r));
    for (int i = 0; i < 3; ++i) b(i, i) -= cos_theta;
    int col = 0;
    for (int i = 1; i < 3; ++i) {
      if (b(i, i) > b(col, col)) col = i;
    }
    Vec3d axis{b(0, col), b(1, col), b(2, col)};
    axis = (1.0 / norm(axis)) * axis;
    if (dot(axis, s) < 0.0) axis = -axis;
    return theta * axis;
  }
  return (theta / sin_theta) * s;
}

inline double geodesic_angle(const Mat3d& ra, const Mat3d& rb) {
  const double c = 0.5 * (trace(transpose(ra) * rb) - 1.0);
  return std::acos(std::clamp(c, -1.0, 1.0));
}

// Squared geodesic angle with a gradient that stays finite at zero angle.
// Near the identity the series theta^2 = 2u + u^2/3 (u = 1 - cos theta) is used;
// near pi the value is returned without gradient.
template <class T>
T squared_geodesic_angle(const Mat3<T>& ra, const Mat3<T>& rb) {
  using std::acos;
  const Mat3<T> rel = transpose(ra) * rb;
  const T c = 0.5 * (trace(rel) - 1.0);
  const double cv = value(c);
  if (cv > 1.0 - 1e-7) {
    const T u = 1.0 - c;
    const T out = 2.0 * u + u * u / 3.0;
    return value(out) < 0.0 ? T(0.0) : out;
  }
  if (cv < -1.0 + 1e-7) {
    const double theta = std::acos(std::max(cv, -1.0));
    return T(theta * theta);
  }
  const T theta = acos(c);
  return theta * theta;
}

inline double orthogonality_error(const Mat3d& r) {
  return frobenius_norm(transpose(r) * r - Mat3d::identity());
}

inline bool is_rotation(const Mat3d& r, double tol = 1e-9) {
  if (!all_finite(r)) return false;
  return orthogonality_error(r) <= tol && std::abs(det(r) - 1.0) <= tol;
}

// Polar factor by iterated averaging M <- (M + M^-T) / 2. Always performs at
// least one iteration so the result carries the tangent-space projection of
// the input's derivative even when the input is already orthonormal.
template <class T>
Mat3<T> project_to_rotation(const Mat3<T>& m_in) {
  const Mat3d mv = value_of(m_in);
  const double scale = std::max(frobenius_norm(mv), 1e-300);
  const double d = det(mv);
  if (!std::isfinite(d) || d <= 1e-12 * scale * scale * scale) {
    throw Degenerate("matrix is singular or reflective, det = " + std::to_string(d));
  }
  Mat3<T> m = m_in;
  for (int it = 0; it < 100; ++it) {
    const Mat3<T> next = 0.5 * (m + transpose(inverse(m)));
    const double change = frobenius_norm(value_of(next) - value_of(m));
    m = next;
    if (change <= 1e-12) break;
  }
  return m;
}

// Right Jacobian of exp: exp(phi + d) ~= exp(phi) exp(Jr(phi) d).
inline Mat3d right_jacobian(const Vec3d& phi) {
  const Mat3d k = hat(phi);
  const Mat3d k2 = k * k;
  const double theta2 = dot(phi, phi);
  if (theta2 < 1e-10) {
    return Mat3d::identity() - 0.5 * k + (1.0 / 6.0) * k2;
  }
  const double theta = std::sqrt(theta2);
  const double a = (1.0 - std::cos(theta)) / theta2;
  const double b = (theta - std::sin(theta)) / (theta2 * theta);
  return Mat3d::identity() - a * k + b * k2;
}

inline Mat3d rot_x(double a) { return exp_so3(Vec3d{a, 0.0, 0.0}); }
inline Mat3d rot_y(double a) { return exp_so3(Vec3d{0.0, a, 0.0}); }
inline Mat3d rot_z(double a) { return exp_so3(Vec3d{0.0, 0.0, a}); }

}  // namespace physord::lie
