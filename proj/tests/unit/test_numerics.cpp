#include <cmath>
#include <limits>

#include "doctest.h"
#include "onpro/errors.hpp"
#include "onpro/numerics.hpp"
#include "test_support.hpp"

using namespace onpro;
using onpro::testing::random_tensor;
using onpro::testing::random_vector;
using onpro::testing::rel_err;

TEST_CASE("Tensor2 construction and shape errors") {
  Tensor2 t(2, 3, 1.5);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t(1, 2) == 1.5);
  CHECK_THROWS_AS(Tensor2(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor2::from_rows({{1, 2}, {3}}), ShapeError);
  Tensor2 a(2, 2, 1.0);
  CHECK_THROWS_AS(a += Tensor2(2, 3), ShapeError);
}

TEST_CASE("matrix products agree with each other") {
  Rng rng(1);
  const Tensor2 a = random_tensor(rng, 3, 4);
  const Tensor2 b = random_tensor(rng, 4, 5);
  const Tensor2 ab = matmul(a, b);
  CHECK(ab.rows() == 3);
  CHECK(ab.cols() == 5);
  double expect = 0.0;
  for (std::size_t k = 0; k < 4; ++k) expect += a(1, k) * b(k, 2);
  CHECK(ab(1, 2) == doctest::Approx(expect).epsilon(1e-14));

  // aᵀ·c via matmul_at_b equals matmul of the explicit transpose.
  const Tensor2 c = random_tensor(rng, 3, 2);
  Tensor2 at(4, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) at(j, i) = a(i, j);
  const Tensor2 x = matmul_at_b(a, c);
  const Tensor2 y = matmul(at, c);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.values()[i] == doctest::Approx(y.values()[i]));

  const Tensor2 z = matmul_a_bt(a, a);
  CHECK(z(0, 1) == doctest::Approx(dot(a.row(0), a.row(1))));
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("slice and stack rows") {
  const Tensor2 a = Tensor2::from_rows({{1, 2}, {3, 4}, {5, 6}});
  const Tensor2 s = slice_rows(a, 1, 2);
  CHECK(s == Tensor2::from_rows({{3, 4}, {5, 6}}));
  CHECK_THROWS_AS(slice_rows(a, 2, 2), ShapeError);
  const Tensor2 empty;
  const Tensor2 st = stack_rows({&a, &empty, &s});
  CHECK(st.rows() == 5);
  CHECK(st(4, 1) == 6);
  const Tensor2 wide(1, 3);
  CHECK_THROWS_AS(stack_rows({&a, &wide}), ShapeError);
}

TEST_CASE("l2_normalize examples") {
  const auto u = l2_normalize(std::vector<double>{3, 4});
  CHECK(u[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(u[1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK_THROWS_AS(l2_normalize(std::vector<double>{0, 0}), NormalizationError);
  const std::vector<double> unit{0.0, 1.0, 0.0};
  CHECK(l2_normalize(unit) == unit);
  CHECK_THROWS_AS(normalize_rows(Tensor2::from_rows({{1, 0}, {0, 0}})), NormalizationError);
}

TEST_CASE("property: l2_normalize gives unit, parallel, idempotent results") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + sample_index(rng, 12);
    const double scale = std::exp(sample_normal(rng, 0.0, 3.0));
    const auto v = random_vector(rng, n, scale);
    const auto u = l2_normalize(v);
    CHECK(std::abs(norm2(u) - 1.0) < 1e-12);
    CHECK(dot(u, v) == doctest::Approx(norm2(v)).epsilon(1e-12));
    const auto uu = l2_normalize(u);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(uu[i] - u[i]) < 1e-12);
  }
}

TEST_CASE("affine_relu_forward examples") {
  const Tensor2 eye = Tensor2::from_rows({{1, 0}, {0, 1}});
  const std::vector<double> zero(2, 0.0);
  CHECK(affine_relu_forward(eye, eye, zero).output == eye);

  Rng rng(3);
  const Tensor2 x = random_tensor(rng, 4, 2);
  const Tensor2 w0(2, 3, 0.0);
  const std::vector<double> neg(3, -1.0);
  const auto clamped = affine_relu_forward(x, w0, neg);
  for (double v : clamped.output.values()) CHECK(v == 0.0);

  const Tensor2 ones = Tensor2::from_rows({{1, 1}});
  const Tensor2 w = Tensor2::from_rows({{1, 0}, {0, -1}});
  CHECK(affine_relu_forward(ones, w, zero).output == Tensor2::from_rows({{1, 0}}));

  CHECK_THROWS_AS(affine_relu_forward(x, Tensor2(3, 3), zero), ShapeError);
  CHECK_THROWS_AS(affine_forward(x, eye, std::vector<double>(3)), ShapeError);
}

TEST_CASE("affine backward: optimum, dead units, cache errors") {
  // Single linear layer with squared loss at its optimum: zero gradient.
  const Tensor2 x = Tensor2::from_rows({{1, 2}, {3, -1}});
  const Tensor2 w = Tensor2::from_rows({{0.5}, {-0.25}});
  const std::vector<double> b{0.1};
  const auto fwd = affine_forward(x, w, b);
  Tensor2 gw(2, 1);
  std::vector<double> gb(1, 0.0);
  const Tensor2 residual(2, 1, 0.0);  // prediction equals target
  affine_backward(residual, fwd.cache, w, gw, gb);
  for (double g : gw.values()) CHECK(g == 0.0);
  CHECK(gb[0] == 0.0);

  // A unit whose pre-activation is negative passes no gradient.
  const Tensor2 w2 = Tensor2::from_rows({{1, -1}, {1, -1}});
  const auto relu =
      affine_relu_forward(Tensor2::from_rows({{1, 2}}), w2, std::vector<double>{0, 0});
  Tensor2 gw2(2, 2);
  std::vector<double> gb2(2, 0.0);
  const Tensor2 dx = affine_backward(Tensor2::from_rows({{1, 1}}), relu.cache, w2, gw2, gb2);
  CHECK(gw2(0, 1) == 0.0);
  CHECK(gw2(1, 1) == 0.0);
  CHECK(gb2[1] == 0.0);
  CHECK(dx(0, 0) == 1.0);  // only the live unit contributes

  AffineCache stale;
  CHECK_THROWS_AS(affine_backward(residual, stale, w, gw, gb), CacheError);
  CHECK_THROWS_AS(affine_backward(Tensor2(3, 1), fwd.cache, w, gw, gb), CacheError);
}

namespace {

// Nudges inputs so that no pre-activation sits within `margin` of zero.
Tensor2 away_from_kinks(Tensor2 x, const Tensor2& w, std::span<const double> b, double margin) {
  for (int pass = 0; pass < 50; ++pass) {
    const auto pre = affine_forward(x, w, b).output;
    bool ok = true;
    for (std::size_t r = 0; r < pre.rows(); ++r) {
      for (std::size_t c = 0; c < pre.cols(); ++c) {
        if (std::abs(pre(r, c)) < margin) {
          ok = false;
          x(r, 0) += 3.0 * margin;
        }
      }
    }
    if (ok) break;
  }
  return x;
}

}  // namespace

TEST_CASE("property: affine and normalization gradients match finite differences") {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 1 + sample_index(rng, 4);
    const std::size_t in = 1 + sample_index(rng, 5);
    const std::size_t out = 1 + sample_index(rng, 5);
    Tensor2 w = random_tensor(rng, in, out);
    std::vector<double> b = random_vector(rng, out);
    const Tensor2 x = away_from_kinks(random_tensor(rng, n, in), w, b, 1e-3);
    const Tensor2 target = random_tensor(rng, n, out);

    // loss = Σ target ⊙ normalize(relu(xW + b) + 1)
    auto loss = [&] {
      Tensor2 h = affine_relu_forward(x, w, b).output;
      for (double& v : h.values()) v += 1.0;
      const auto nr = normalize_rows(h);
      double s = 0.0;
      for (std::size_t i = 0; i < nr.unit.size(); ++i) s += target.values()[i] * nr.unit.values()[i];
      return s;
    };
    auto fwd = affine_relu_forward(x, w, b);
    Tensor2 h = fwd.output;
    for (double& v : h.values()) v += 1.0;
    const auto nr = normalize_rows(h);
    const Tensor2 gh = normalize_rows_backward(target, nr);
    Tensor2 gw(in, out);
    std::vector<double> gb(out, 0.0);
    affine_backward(gh, fwd.cache, w, gw, gb);

    const std::vector<std::span<double>> params{w.values(), b};
    const std::vector<std::span<const double>> grads{std::as_const(gw).values(), gb};
    CHECK(finite_diff_check(loss, params, grads, 1e-5) < 1e-4);
  }
}

TEST_CASE("l2_normalize_backward is the projected, scaled gradient") {
  const std::vector<double> v{3, 4};
  const auto u = l2_normalize(v);
  const std::vector<double> g{1, 0};
  const auto gv = l2_normalize_backward(g, u, 5.0);
  // (I − uuᵀ)g / 5 = ((1 − 0.36), −0.48) / 5
  CHECK(gv[0] == doctest::Approx(0.64 / 5.0).epsilon(1e-14));
  CHECK(gv[1] == doctest::Approx(-0.48 / 5.0).epsilon(1e-14));
  CHECK(std::abs(dot(gv, u)) < 1e-15);
}

TEST_CASE("adam_step examples") {
  SUBCASE("first step moves by about lr against the gradient") {
    AdamState s;
    s.weight_decay = 0.0;
    std::vector<double> p{2.0};
    const std::vector<double> g{1.0};
    adam_step(s, {p}, {g});
    CHECK(s.step == 1);
    CHECK(p[0] == doctest::Approx(2.0 - 5e-4).epsilon(1e-10));
  }
  SUBCASE("zero gradient and no decay leaves parameters") {
    AdamState s;
    s.weight_decay = 0.0;
    std::vector<double> p{1.0, -3.0};
    const std::vector<double> g{0.0, 0.0};
    for (int i = 0; i < 5; ++i) adam_step(s, {p}, {g});
    CHECK(p == std::vector<double>{1.0, -3.0});
  }
  SUBCASE("opposite gradients give opposite updates") {
    AdamState s;
    std::vector<double> p{0.0, 0.0};
    const std::vector<double> g{0.7, -0.7};
    adam_step(s, {p}, {g});
    CHECK(p[0] == -p[1]);
    CHECK(p[0] < 0.0);
  }
  SUBCASE("decoupled weight decay shrinks parameters without a gradient") {
    AdamState s;
    s.weight_decay = 0.1;
    std::vector<double> p{1.0};
    const std::vector<double> g{0.0};
    adam_step(s, {p}, {g});
    CHECK(p[0] == doctest::Approx(1.0 - 5e-4 * 0.1).epsilon(1e-14));
  }
  SUBCASE("non-finite gradient raises before any update") {
    AdamState s;
    std::vector<double> p{1.0, 2.0};
    std::vector<double> q{3.0};
    const std::vector<double> g{0.5, 0.5};
    const std::vector<double> bad{std::numeric_limits<double>::quiet_NaN()};
    CHECK_THROWS_AS(adam_step(s, {p, q}, {g, bad}), NumericError);
    CHECK(p == std::vector<double>{1.0, 2.0});
    CHECK(s.step == 0);
    const std::vector<double> inf{std::numeric_limits<double>::infinity()};
    CHECK_THROWS_AS(adam_step(s, {q}, {inf}), NumericError);
  }
  SUBCASE("mismatched blocks") {
    AdamState s;
    std::vector<double> p{1.0};
    const std::vector<double> g{1.0, 2.0};
    CHECK_THROWS_AS(adam_step(s, {p}, {g}), ShapeError);
  }
}

TEST_CASE("sgd_step examples") {
  std::vector<double> p{1.0, -2.0};
  const std::vector<double> g{0.5, 0.25};
  sgd_step({p}, {g}, 0.1, 0.0);
  CHECK(p[0] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(-2.025).epsilon(1e-15));

  std::vector<double> q{2.0};
  const std::vector<double> zero{0.0};
  sgd_step({q}, {zero}, 0.1, 0.5);
  CHECK(q[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0).epsilon(1e-15));

  const std::vector<double> bad{std::numeric_limits<double>::quiet_NaN(), 0.0};
  CHECK_THROWS_AS(sgd_step({p}, {bad}, 0.1, 0.0), NumericError);
  CHECK(p[0] == doctest::Approx(0.95).epsilon(1e-15));
  CHECK_THROWS_AS(sgd_step({q}, {g}, 0.1, 0.0), ShapeError);
  CHECK_THROWS_AS(sgd_step({q}, {zero}, 0.0, 0.0), NumericError);
}

TEST_CASE("property: adam with a constant gradient sign moves monotonically") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    AdamState s;
    s.weight_decay = 0.0;
    s.learning_rate = 1e-3 * (1.0 + sample_uniform01(rng));
    std::vector<double> p = random_vector(rng, 4);
    const double sign = trial % 2 == 0 ? 1.0 : -1.0;
    for (int step = 0; step < 30; ++step) {
      std::vector<double> g(4);
      for (double& x : g) x = sign * (0.1 + sample_uniform01(rng));
      const auto before = p;
      adam_step(s, {p}, {g});
      for (std::size_t i = 0; i < 4; ++i) CHECK(sign * (p[i] - before[i]) < 0.0);
      for (const auto& v : s.second_moment)
        for (double x : v) CHECK(x >= 0.0);
    }
  }
}

TEST_CASE("finite_diff_check examples") {
  std::vector<double> p{1.0, -2.0, 0.5};
  auto loss = [&] { return 0.5 * (p[0] * p[0] + 3.0 * p[1] * p[1]) + 2.0 * p[2]; };
  const std::vector<double> exact{p[0], 3.0 * p[1], 2.0};
  CHECK(finite_diff_check(loss, {p}, {exact}, 1e-5) < 1e-8);
  const std::vector<double> doubled{2.0 * p[0], 6.0 * p[1], 4.0};
  CHECK(finite_diff_check(loss, {p}, {doubled}, 1e-5) == doctest::Approx(0.5).epsilon(1e-6));
  // Parameters are restored after probing.
  CHECK(p == std::vector<double>{1.0, -2.0, 0.5});

  const auto report = finite_diff_report(loss, {p}, {doubled}, 1e-5);
  CHECK(report.worst_block == 0);
  CHECK(rel_err(report.analytic, 2.0 * report.numeric) < 1e-6);
}

TEST_CASE("random helpers") {
  Rng rng(42);
  double sum = 0.0;
  double sumsq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = sample_beta(rng, 1.0, 1.0);
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
    sum += x;
    sumsq += x * x;
  }
  // Beta(1, 1) is uniform: mean 1/2, variance 1/12.
  const double mean = sum / n;
  CHECK(std::abs(mean - 0.5) < 4.0 * std::sqrt(1.0 / 12.0 / n));
  CHECK(std::abs(sumsq / n - mean * mean - 1.0 / 12.0) < 2e-3);

  std::vector<int> hits(5, 0);
  for (int i = 0; i < 50000; ++i) ++hits[sample_index(rng, 5)];
  for (int h : hits) CHECK(std::abs(h - 10000) < 4.0 * std::sqrt(50000 * 0.2 * 0.8));

  Rng a(9), b(9);
  CHECK(sample_normal(a) == sample_normal(b));
}
