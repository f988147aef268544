#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstring>
#include <numbers>
#include <random>

#include "energyformer/error.hpp"
#include "energyformer/fope.hpp"
#include "oracle.hpp"

using namespace ef;
using oracle::random_tensor;
using cplx = std::complex<double>;

namespace {

fope::Config config(std::size_t d, std::size_t harmonics = 2, double base = 10000.0) {
  fope::Config c;
  c.head_dim = d;
  c.harmonics = harmonics;
  c.base = base;
  return c;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

// Direct evaluation of the phase sum with std::complex.
cplx phase_oracle(double w, double n, const std::vector<double>& a) {
  cplx z = std::polar(1.0, w * n);
  for (std::size_t r = 0; r < a.size(); ++r) z += a[r] * std::polar(1.0, static_cast<double>(r + 2) * w * n);
  return z;
}

}  // namespace

TEST_CASE("dominant frequencies follow the inverse-power ladder") {
  const auto w = fope::dominant_frequencies(8);
  REQUIRE(w.size() == 4);
  CHECK(w[0] == 1.0);
  CHECK(w[1] == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(w[3] == doctest::Approx(1e-3).epsilon(1e-14));
  for (std::size_t m = 1; m < w.size(); ++m) CHECK(w[m] < w[m - 1]);
  CHECK_THROWS_AS(fope::dominant_frequencies(7), ConfigError);
  CHECK_THROWS_AS(fope::dominant_frequencies(8, 1.0), ConfigError);
}

TEST_CASE("floor frequency for 16 tokens") {
  CHECK(fope::floor_frequency(16) == doctest::Approx(0.3927).epsilon(1e-4));
  // d = 4, base 100: frequencies 1 and 0.1; the second falls below the floor.
  Tensor coeffs({2, 2}, 0.7);
  const fope::PhaseField f = fope::build_phase(coeffs, config(4, 2, 100.0), iota(16), 16);
  for (std::size_t n = 0; n < 16; ++n) {
    CHECK(f.active[n * 2 + 1] == 0);
    CHECK(f.re[n * 2 + 1] == 1.0);
    CHECK(f.im[n * 2 + 1] == 0.0);
    CHECK(f.active[n * 2] == 1);
  }
}

TEST_CASE("zero coefficients reduce to rotary phases") {
  const auto cfg = config(8);
  const fope::PhaseField f = fope::build_phase(Tensor({4, 2}, 0.0), cfg, iota(10), 100000);
  const auto w = fope::dominant_frequencies(8);
  for (std::size_t n = 0; n < 10; ++n)
    for (std::size_t m = 0; m < 4; ++m) {
      CHECK(f.re[n * 4 + m] == doctest::Approx(std::cos(w[m] * n)).epsilon(1e-15));
      CHECK(f.im[n * 4 + m] == doctest::Approx(std::sin(w[m] * n)).epsilon(1e-15));
    }
}

TEST_CASE("phase matches a direct complex evaluation") {
  std::mt19937_64 rng(1);
  const Tensor coeffs = random_tensor({4, 2}, rng);
  const auto w = fope::dominant_frequencies(8);
  const fope::PhaseField f = fope::build_phase(coeffs, config(8), iota(30), 100000);
  for (std::size_t n = 0; n < 30; ++n)
    for (std::size_t m = 0; m < 4; ++m) {
      const cplx z = phase_oracle(w[m], static_cast<double>(n), {coeffs.at({m, 0}), coeffs.at({m, 1})});
      CHECK(std::abs(f.re[n * 4 + m] - z.real()) < 1e-13);
      CHECK(std::abs(f.im[n * 4 + m] - z.imag()) < 1e-13);
    }
  // n = 0: 1 + sum of coefficients.
  for (std::size_t m = 0; m < 4; ++m) CHECK(f.re[m] == doctest::Approx(1.0 + coeffs.at({m, 0}) + coeffs.at({m, 1})).epsilon(1e-15));
}

TEST_CASE("position zero with zero coefficients is the identity") {
  std::mt19937_64 rng(2);
  Tape t;
  Var coeffs = t.constant(Tensor({4, 2}, 0.0));
  const fope::PhaseVars ph = fope::build_phase(coeffs, config(8), {0, 0, 0}, 1);
  const Tensor q = random_tensor({3, 8}, rng);
  CHECK(fope::apply(t.constant(q), ph).value() == q);
}

TEST_CASE("quarter-turn rotation of a single pair") {
  Tape t;
  Var coeffs = t.constant(Tensor({1, 1}, 0.0));
  const fope::PhaseVars ph = fope::build_phase(coeffs, {std::numbers::pi / 2}, 1, {1}, 0.0);
  const Tensor y = fope::apply(t.constant(Tensor::matrix({{0.3, -1.2}})), ph).value();
  CHECK(std::abs(y[0] - 1.2) < 1e-15);
  CHECK(std::abs(y[1] - 0.3) < 1e-15);
}

TEST_CASE("all frequencies below the floor leave every token unchanged") {
  std::mt19937_64 rng(3);
  Tape t;
  Var coeffs = t.constant(random_tensor({4, 2}, rng));
  // A floor of 7 exceeds every frequency of the ladder (the largest is 1).
  const fope::PhaseVars ph = fope::build_phase(coeffs, fope::dominant_frequencies(8), 2, iota(6), 7.0);
  const Tensor q = random_tensor({6, 8}, rng);
  const Tensor y = fope::apply(t.constant(q), ph).value();
  CHECK(std::memcmp(y.data().data(), q.data().data(), q.size() * sizeof(double)) == 0);
}

TEST_CASE("sub-floor pairs are bit-identical, class row untouched") {
  std::mt19937_64 rng(4);
  Tape t;
  Var coeffs = t.constant(random_tensor({4, 2}, rng));
  const fope::PhaseVars ph = fope::sequence_phase(coeffs, config(8), 81);
  const Tensor q = random_tensor({2, 82, 8}, rng);
  const Tensor y = fope::apply(t.constant(q), ph).value();
  const auto w = fope::dominant_frequencies(8);
  const double floor = fope::floor_frequency(81);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t n = 0; n < 82; ++n)
      for (std::size_t m = 0; m < 4; ++m) {
        if (n != 0 && w[m] >= floor) continue;
        for (std::size_t c : {2 * m, 2 * m + 1}) {
          const double a = q.at({h, n, c}), b = y.at({h, n, c});
          CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
        }
      }
}

TEST_CASE("inner products depend only on relative position") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> pos(0, 200);
  const auto cfg = config(8);
  for (int pair = 0; pair < 20; ++pair) {
    const Tensor q = random_tensor({1, 8}, rng), k = random_tensor({1, 8}, rng);
    const std::size_t n1 = pos(rng), n2 = pos(rng), shift = pos(rng);
    auto dot = [&](std::size_t a, std::size_t b) {
      Tape t;
      Var coeffs = t.constant(Tensor({4, 2}, 0.0));
      const Tensor rq = fope::apply(t.constant(q), fope::build_phase(coeffs, cfg, {a}, 1000)).value();
      const Tensor rk = fope::apply(t.constant(k), fope::build_phase(coeffs, cfg, {b}, 1000)).value();
      double s = 0;
      for (std::size_t i = 0; i < 8; ++i) s += rq[i] * rk[i];
      return s;
    };
    CHECK(std::abs(dot(n1, n2) - dot(n1 + shift, n2 + shift)) < 1e-10);
  }
}

TEST_CASE("conjugate application is the transpose") {
  std::mt19937_64 rng(6);
  Tape t;
  Var coeffs = t.constant(random_tensor({4, 2}, rng));
  const fope::PhaseVars ph = fope::sequence_phase(coeffs, config(8), 9);
  const Tensor x = random_tensor({10, 8}, rng), y = random_tensor({10, 8}, rng);
  const Tensor ax = fope::apply(t.constant(x), ph).value();
  const Tensor aty = fope::apply(t.constant(y), ph, true).value();
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lhs += ax[i] * y[i];
    rhs += x[i] * aty[i];
  }
  CHECK(std::abs(lhs - rhs) < 1e-12);
}

TEST_CASE("coefficient gradients against finite differences") {
  std::mt19937_64 rng(7);
  const Tensor coeffs = random_tensor({4, 2}, rng, -0.5, 0.5);
  const Tensor q = random_tensor({3, 17, 8}, rng);
  for (bool conj : {false, true}) {
    auto f = [&](const std::vector<Var>& v) {
      return oracle::probe(fope::apply(v[1], fope::sequence_phase(v[0], config(8), 16), conj));
    };
    CHECK(oracle::gradient_error(f, {coeffs, q}) < 1e-5);
  }
}

TEST_CASE("odd head dimensions are a configuration error") {
  Tape t;
  fope::PhaseVars ph;
  CHECK_THROWS_AS(fope::apply(t.constant(Tensor({2, 3})), ph), ConfigError);
  ParameterSet ps;
  CHECK_THROWS_AS(fope::init_parameters(ps, "x.", config(5)), ConfigError);
}
