#include <cmath>
#include <cstring>

#include <doctest.h>

#include "boxalign/dual.hpp"
#include "boxalign/rng.hpp"

using namespace boxalign;
using D3 = Dual<3>;

TEST_CASE("dual arithmetic follows the chain rule") {
  const D3 x = D3::variable(2.0, 0);
  const D3 y = D3::variable(3.0, 1);

  const D3 sum = x + y;
  CHECK(sum.value == 5.0);
  CHECK(sum.deriv[0] == 1.0);
  CHECK(sum.deriv[1] == 1.0);

  const D3 prod = x * y;
  CHECK(prod.value == 6.0);
  CHECK(prod.deriv[0] == 3.0);  // d(xy)/dx = y
  CHECK(prod.deriv[1] == 2.0);

  const D3 quot = x / y;
  CHECK(quot.value == doctest::Approx(2.0 / 3.0));
  CHECK(quot.deriv[0] == doctest::Approx(1.0 / 3.0));
  CHECK(quot.deriv[1] == doctest::Approx(-2.0 / 9.0));

  const D3 mixed = 2.0 * x - y / 2.0 + 1.0;
  CHECK(mixed.value == doctest::Approx(3.5));
  CHECK(mixed.deriv[0] == 2.0);
  CHECK(mixed.deriv[1] == -0.5);

  const D3 s = sqrt(x);
  CHECK(s.value == doctest::Approx(std::sqrt(2.0)));
  CHECK(s.deriv[0] == doctest::Approx(0.5 / std::sqrt(2.0)));

  const D3 lg = log(x);
  CHECK(lg.value == doctest::Approx(std::log(2.0)));
  CHECK(lg.deriv[0] == doctest::Approx(0.5));
}

TEST_CASE("sin^2 + cos^2 has zero derivative") {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const D3 t = D3::variable(rng.uniform(-10.0, 10.0), 2);
    const D3 one = sin(t) * sin(t) + cos(t) * cos(t);
    CHECK(std::abs(one.value - 1.0) < 1e-12);
    CHECK(std::abs(one.deriv[2]) < 1e-12);
  }
}

TEST_CASE("abs kink convention and gradient") {
  const D3 neg = abs(D3::variable(-2.0, 0));
  CHECK(neg.value == 2.0);
  CHECK(neg.deriv[0] == -1.0);
  const D3 pos = abs(D3::variable(2.0, 0));
  CHECK(pos.deriv[0] == 1.0);
  const D3 zero = abs(D3::variable(0.0, 0));
  CHECK(zero.deriv[0] == 1.0);  // 0 treated as non-negative
}

TEST_CASE("min/max resolve ties toward the first argument, bit-identically") {
  const D3 a = D3::variable(1.0, 0);
  const D3 b = D3::variable(1.0, 1);  // same value, different gradient

  for (int rep = 0; rep < 8; ++rep) {
    const D3 lo = min(a, b);
    const D3 hi = max(a, b);
    CHECK(std::memcmp(lo.deriv.data(), a.deriv.data(), sizeof(lo.deriv)) == 0);
    CHECK(std::memcmp(hi.deriv.data(), a.deriv.data(), sizeof(hi.deriv)) == 0);
  }

  const D3 lower = D3::variable(0.5, 1);
  CHECK(min(a, lower).deriv[1] == 1.0);
  CHECK(max(a, lower).deriv[0] == 1.0);
}
