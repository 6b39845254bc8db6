#pragma once

// Fixed-size 3-vectors and row-major 3x3 matrices over a scalar type that is
// either double or ad::Var.

#include <array>
#include <cmath>
#include <cstddef>
#include <type_traits>

#include "physord/autodiff.hpp"

namespace physord {

inline double value(double x) { return x; }
using ad::value;

template <class T>
struct Vec3 {
  std::array<T, 3> c{};

  Vec3() = default;
  Vec3(T x, T y, T z) : c{x, y, z} {}

  T& operator[](std::size_t i) { return c[i]; }
  const T& operator[](std::size_t i) const { return c[i]; }
};

template <class T>
struct Mat3 {
  std::array<T, 9> a{};

  T& operator()(std::size_t r, std::size_t k) { return a[3 * r + k]; }
  const T& operator()(std::size_t r, std::size_t k) const { return a[3 * r + k]; }

  static Mat3 identity() {
    Mat3 m;
    m(0, 0) = T(1.0);
    m(1, 1) = T(1.0);
    m(2, 2) = T(1.0);
    return m;
  }
  static Mat3 diag(T x, T y, T z) {
    Mat3 m;
    m(0, 0) = x;
    m(1, 1) = y;
    m(2, 2) = z;
    return m;
  }
};

using Vec3d = Vec3<double>;
using Mat3d = Mat3<double>;

template <class T>
using Scalar = std::type_identity_t<T>;

// Promotes a double-valued vector/matrix into T (constants on the tape).
template <class T>
Vec3<T> lift(const Vec3d& v) {
  return {T(v[0]), T(v[1]), T(v[2])};
}
template <class T>
Mat3<T> lift(const Mat3d& m) {
  Mat3<T> r;
  for (std::size_t i = 0; i < 9; ++i) r.a[i] = T(m.a[i]);
  return r;
}
template <class T>
Vec3d value_of(const Vec3<T>& v) {
  return {value(v[0]), value(v[1]), value(v[2])};
}
template <class T>
Mat3d value_of(const Mat3<T>& m) {
  Mat3d r;
  for (std::size_t i = 0; i < 9; ++i) r.a[i] = value(m.a[i]);
  return r;
}

template <class T>
Vec3<T> operator+(const Vec3<T>& u, const Vec3<T>& v) {
  return {u[0] + v[0], u[1] + v[1], u[2] + v[2]};
}
template <class T>
Vec3<T> operator-(const Vec3<T>& u, const Vec3<T>& v) {
  return {u[0] - v[0], u[1] - v[1], u[2] - v[2]};
}
template <class T>
Vec3<T> operator-(const Vec3<T>& u) {
  return {-u[0], -u[1], -u[2]};
}
template <class T>
Vec3<T> operator*(const Scalar<T>& s, const Vec3<T>& v) {
  return {s * v[0], s * v[1], s * v[2]};
}
template <class T>
Vec3<T> operator*(const Vec3<T>& v, const Scalar<T>& s) {
  return s * v;
}
template <class T>
Vec3<T>& operator+=(Vec3<T>& u, const Vec3<T>& v) {
  return u = u + v;
}

template <class T>
T dot(const Vec3<T>& u, const Vec3<T>& v) {
  return u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
}
template <class T>
Vec3<T> cross(const Vec3<T>& u, const Vec3<T>& v) {
  return {u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
}
template <class T>
T squared_norm(const Vec3<T>& v) {
  return dot(v, v);
}
template <class T>
T norm(const Vec3<T>& v) {
  using std::sqrt;
  return sqrt(dot(v, v));
}

template <class T>
Mat3<T> operator+(const Mat3<T>& x, const Mat3<T>& y) {
  Mat3<T> r;
  for (std::size_t i = 0; i < 9; ++i) r.a[i] = x.a[i] + y.a[i];
  return r;
}
template <class T>
Mat3<T> operator-(const Mat3<T>& x, const Mat3<T>& y) {
  Mat3<T> r;
  for (std::size_t i = 0; i < 9; ++i) r.a[i] = x.a[i] - y.a[i];
  return r;
}
template <class T>
Mat3<T> operator*(const Scalar<T>& s, const Mat3<T>& x) {
  Mat3<T> r;
  for (std::size_t i = 0; i < 9; ++i) r.a[i] = s * x.a[i];
  return r;
}
template <class T>
Mat3<T> operator*(const Mat3<T>& x, const Mat3<T>& y) {
  Mat3<T> r;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      r(i, k) = x(i, 0) * y(0, k) + x(i, 1) * y(1, k) + x(i, 2) * y(2, k);
    }
  }
  return r;
}
template <class T>
Vec3<T> operator*(const Mat3<T>& x, const Vec3<T>& v) {
  return {x(0, 0) * v[0] + x(0, 1) * v[1] + x(0, 2) * v[2], x(1, 0) * v[0] + x(1, 1) * v[1] + x(1, 2) * v[2],
          x(2, 0) * v[0] + x(2, 1) * v[1] + x(2, 2) * v[2]};
}

// Mixed products with a constant double matrix (inertia, Newton Jacobian).
template <class T>
  requires(!std::is_same_v<T, double>)
Vec3<T> operator*(const Mat3d& x, const Vec3<T>& v) {
  return {x(0, 0) * v[0] + x(0, 1) * v[1] + x(0, 2) * v[2], x(1, 0) * v[0] + x(1, 1) * v[1] + x(1, 2) * v[2],
          x(2, 0) * v[0] + x(2, 1) * v[1] + x(2, 2) * v[2]};
}
template <class T>
  requires(!std::is_same_v<T, double>)
Mat3<T> operator*(const Mat3<T>& x, const Mat3d& y) {
  Mat3<T> r;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      r(i, k) = x(i, 0) * y(0, k) + x(i, 1) * y(1, k) + x(i, 2) * y(2, k);
    }
  }
  return r;
}
template <class T>
  requires(!std::is_same_v<T, double>)
Mat3<T> operator*(const Mat3d& x, const Mat3<T>& y) {
  Mat3<T> r;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 3; ++k) {
      r(i, k) = x(i, 0) * y(0, k) + x(i, 1) * y(1, k) + x(i, 2) * y(2, k);
    }
  }
  return r;
}

template <class T>
Mat3<T> transpose(const Mat3<T>& x) {
  Mat3<T> r;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 3; ++k) r(i, k) = x(k, i);
  }
  return r;
}
template <class T>
T trace(const Mat3<T>& x) {
  return x(0, 0) + x(1, 1) + x(2, 2);
}
template <class T>
T det(const Mat3<T>& x) {
  return x(0, 0) * (x(1, 1) * x(2, 2) - x(1, 2) * x(2, 1)) - x(0, 1) * (x(1, 0) * x(2, 2) - x(1, 2) * x(2, 0)) +
         x(0, 2) * (x(1, 0) * x(2, 1) - x(1, 1) * x(2, 0));
}
// Adjugate over determinant; caller guards singularity.
template <class T>
Mat3<T> inverse(const Mat3<T>& x) {
  Mat3<T> c;
  c(0, 0) = x(1, 1) * x(2, 2) - x(1, 2) * x(2, 1);
  c(0, 1) = x(0, 2) * x(2, 1) - x(0, 1) * x(2, 2);
  c(0, 2) = x(0, 1) * x(1, 2) - x(0, 2) * x(1, 1);
  c(1, 0) = x(1, 2) * x(2, 0) - x(1, 0) * x(2, 2);
  c(1, 1) = x(0, 0) * x(2, 2) - x(0, 2) * x(2, 0);
  c(1, 2) = x(0, 2) * x(1, 0) - x(0, 0) * x(1, 2);
  c(2, 0) = x(1, 0) * x(2, 1) - x(1, 1) * x(2, 0);
  c(2, 1) = x(0, 1) * x(2, 0) - x(0, 0) * x(2, 1);
  c(2, 2) = x(0, 0) * x(1, 1) - x(0, 1) * x(1, 0);
  const T d = x(0, 0) * c(0, 0) + x(0, 1) * c(1, 0) + x(0, 2) * c(2, 0);
  const T inv = T(1.0) / d;
  return inv * c;
}
template <class T>
T frobenius_norm(const Mat3<T>& x) {
  using std::sqrt;
  T s = x.a[0] * x.a[0];
  for (std::size_t i = 1; i < 9; ++i) s = s + x.a[i] * x.a[i];
  return sqrt(s);
}
template <class T>
Mat3<T> outer(const Vec3<T>& u, const Vec3<T>& v) {
  Mat3<T> r;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 3; ++k) r(i, k) = u[i] * v[k];
  }
  return r;
}

inline bool all_finite(const Vec3d& v) {
  return std::isfinite(v[0]) && std::isfinite(v[1]) && std::isfinite(v[2]);
}
inline bool all_finite(const Mat3d& m) {
  for (double x : m.a) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace physord
