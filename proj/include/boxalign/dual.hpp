#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace boxalign {

/// Forward-mode first-order scalar: a value plus a fixed-width vector of
/// partial derivatives, propagated per operation by the chain rule.
/// min/max/abs resolve ties toward the first argument (abs treats 0 as
/// non-negative), so repeated evaluation is bit-identical.
template <std::size_t N>
struct Dual {
  double value = 0.0;
  std::array<double, N> deriv{};

  constexpr Dual() = default;
  constexpr Dual(double v) : value(v) {}  // constant: zero partials

  static constexpr Dual variable(double v, std::size_t slot) {
    Dual d(v);
    d.deriv[slot] = 1.0;
    return d;
  }

  Dual operator-() const {
    Dual r(-value);
    for (std::size_t i = 0; i < N; ++i) r.deriv[i] = -deriv[i];
    return r;
  }

  Dual& operator+=(const Dual& o) {
    value += o.value;
    for (std::size_t i = 0; i < N; ++i) deriv[i] += o.deriv[i];
    return *this;
  }

  Dual& operator-=(const Dual& o) {
    value -= o.value;
    for (std::size_t i = 0; i < N; ++i) deriv[i] -= o.deriv[i];
    return *this;
  }

  Dual& operator*=(const Dual& o) {
    for (std::size_t i = 0; i < N; ++i) {
      deriv[i] = deriv[i] * o.value + value * o.deriv[i];
    }
    value *= o.value;
    return *this;
  }

  Dual& operator/=(const Dual& o) {
    // value uses plain division so dual evaluation reproduces the scalar
    // path bit-for-bit; extremum picks between the two paths stay consistent
    const double quotient = value / o.value;
    const double inv = 1.0 / o.value;
    for (std::size_t i = 0; i < N; ++i) {
      deriv[i] = (deriv[i] - quotient * o.deriv[i]) * inv;
    }
    value = quotient;
    return *this;
  }
};

template <std::size_t N>
Dual<N> operator+(Dual<N> a, const Dual<N>& b) { return a += b; }
template <std::size_t N>
Dual<N> operator-(Dual<N> a, const Dual<N>& b) { return a -= b; }
template <std::size_t N>
Dual<N> operator*(Dual<N> a, const Dual<N>& b) { return a *= b; }
template <std::size_t N>
Dual<N> operator/(Dual<N> a, const Dual<N>& b) { return a /= b; }

template <std::size_t N>
Dual<N> operator+(double a, Dual<N> b) { return Dual<N>(a) += b; }
template <std::size_t N>
Dual<N> operator-(double a, const Dual<N>& b) { return Dual<N>(a) -= b; }
template <std::size_t N>
Dual<N> operator*(double a, Dual<N> b) { return b *= Dual<N>(a); }
template <std::size_t N>
Dual<N> operator/(double a, const Dual<N>& b) { return Dual<N>(a) /= b; }

template <std::size_t N>
Dual<N> operator+(Dual<N> a, double b) { return a += Dual<N>(b); }
template <std::size_t N>
Dual<N> operator-(Dual<N> a, double b) { return a -= Dual<N>(b); }
template <std::size_t N>
Dual<N> operator*(Dual<N> a, double b) { return a *= Dual<N>(b); }
template <std::size_t N>
Dual<N> operator/(Dual<N> a, double b) { return a /= Dual<N>(b); }

template <std::size_t N>
Dual<N> sin(const Dual<N>& x) {
  Dual<N> r(std::sin(x.value));
  const double c = std::cos(x.value);
  for (std::size_t i = 0; i < N; ++i) r.deriv[i] = c * x.deriv[i];
  return r;
}

template <std::size_t N>
Dual<N> cos(const Dual<N>& x) {
  Dual<N> r(std::cos(x.value));
  const double s = -std::sin(x.value);
  for (std::size_t i = 0; i < N; ++i) r.deriv[i] = s * x.deriv[i];
  return r;
}

template <std::size_t N>
Dual<N> sqrt(const Dual<N>& x) {
  Dual<N> r(std::sqrt(x.value));
  const double g = 0.5 / r.value;
  for (std::size_t i = 0; i < N; ++i) r.deriv[i] = g * x.deriv[i];
  return r;
}

template <std::size_t N>
Dual<N> log(const Dual<N>& x) {
  Dual<N> r(std::log(x.value));
  const double g = 1.0 / x.value;
  for (std::size_t i = 0; i < N; ++i) r.deriv[i] = g * x.deriv[i];
  return r;
}

template <std::size_t N>
Dual<N> abs(const Dual<N>& x) {
  return x.value < 0.0 ? -x : x;
}

template <std::size_t N>
Dual<N> min(const Dual<N>& a, const Dual<N>& b) {
  return b.value < a.value ? b : a;
}

template <std::size_t N>
Dual<N> max(const Dual<N>& a, const Dual<N>& b) {
  return b.value > a.value ? b : a;
}

}  // namespace boxalign
