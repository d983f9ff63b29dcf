#include <doctest.h>

#include "f4f/diffcore.hpp"
#include "f4f/rng.hpp"
#include "test_util.hpp"

using namespace f4f;
using namespace f4f::testutil;

TEST_CASE("grad of p^2 at p = 3 is 6") {
  ParameterStore params;
  params.add("p", Matrix::Constant(1, 1, 3.0));
  GradientSet g = grad(params, [&](Tape& t) {
    return t.square(t.param(params, "p"));
  });
  CHECK(g.grads[0](0, 0) == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("grad of a constant loss is all zeros") {
  ParameterStore params;
  params.add("p", Matrix::Constant(2, 3, 1.5));
  GradientSet g = grad(params, [&](Tape& t) {
    (void)t.param(params, "p");
    return t.constant(Matrix::Constant(1, 1, 42.0));
  });
  CHECK(g.grads[0].isZero(0.0));
}

TEST_CASE("two-layer MLP gradient matches central finite differences") {
  RandomStream rs(11);
  ParameterStore params;
  params.add("w1", rs.uniform_matrix(8, 3, -0.7, 0.7));
  params.add("b1", rs.uniform_matrix(1, 8, -0.2, 0.2));
  params.add("w2", rs.uniform_matrix(1, 8, -0.7, 0.7));
  params.add("b2", rs.uniform_matrix(1, 1, -0.2, 0.2));
  const Matrix x = rs.normal_matrix(16, 3);

  auto build = [&](Tape& t) {
    Var h = t.tanh_(t.add_rowvec(t.matmul(t.constant(x), t.param(params, "w1")),
                                 t.param(params, "b1")));
    Var out = t.add_rowvec(t.matmul(h, t.param(params, "w2")), t.param(params, "b2"));
    return t.mean_all(t.square(out));
  };

  GradientSet ad = grad(params, build);
  GradientSet fd = fd_gradient(params, build, 1e-5);
  CHECK(max_rel_err(ad, fd) < 1e-4);
}

TEST_CASE("gradients are deterministic (bitwise)") {
  RandomStream rs(7);
  ParameterStore params;
  params.add("w", rs.uniform_matrix(6, 4, -1.0, 1.0));
  const Matrix x = rs.normal_matrix(10, 4);
  auto build = [&](Tape& t) {
    return t.mean_all(t.square(t.tanh_(t.matmul(t.constant(x), t.param(params, "w")))));
  };
  GradientSet a = grad(params, build);
  GradientSet b = grad(params, build);
  CHECK(bitwise_equal(a, b));
}

TEST_CASE("non-finite loss raises an error naming the offending op") {
  ParameterStore params;
  params.add("p", Matrix::Constant(1, 1, -2.0));
  CHECK_THROWS_WITH_AS(
      grad(params, [&](Tape& t) { return t.log_(t.param(params, "p")); }),
      doctest::Contains("log"), NumericalError);
}

// Every op in the closed vocabulary, finite-difference checked at random
// points (the rational-quadratic spline ops get their own suite as well).
TEST_CASE("vocabulary-wide gradient check at 100 random points") {
  const int kBins = 4;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    RandomStream rs(1000 + static_cast<std::uint64_t>(trial));
    ParameterStore params;
    params.add("w", rs.uniform_matrix(4, 3, -0.8, 0.8));
    params.add("b", rs.uniform_matrix(1, 4, -0.3, 0.3));
    params.add("raw", rs.uniform_matrix(2, 3 * kBins + 1, -0.8, 0.8));
    params.add("m", rs.uniform_matrix(2, 4, -0.5, 0.5));

    Matrix mask = Matrix::Zero(4, 3);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 3; ++j) mask(i, j) = ((i + j) % 2 == 0) ? 1.0 : 0.0;
    }
    const Matrix x = rs.normal_matrix(2, 3);
    const Matrix xs = rs.uniform_matrix(2, 1, -3.5, 3.5);

    auto build = [&](Tape& t) {
      Var w = t.param(params, "w");
      Var h = t.add_rowvec(t.matmul_masked(t.constant(x), w, &mask), t.param(params, "b"));
      Var a = t.tanh_(h);
      Var r = t.relu(t.add_scalar(h, 0.1));
      Var mix = t.add(t.mul(a, t.param(params, "m")), t.scale(t.sub(r, a), 0.5));
      Var sp = t.softplus(mix, 0.2, 0.05);
      Var safe = t.add_scalar(t.abs_(mix), 0.3);
      Var logs = t.log_(safe);
      Var es = t.exp_(t.scale(mix, 0.3));
      Var joined = t.concat_cols({t.square(sp), logs, es});
      Var perm = t.permute_cols(joined, {3, 0, 7, 1, 5, 2, 11, 4, 9, 6, 10, 8});
      Var gathered = t.gather_rows(t.concat_rows({perm, t.scale(perm, 0.25)}), {2, 0, 3, 1});
      Var base = t.mean_all(t.rowwise_sum(t.softmax_cols(gathered)));

      // Spline forward and inverse through the constrained parameterization.
      Var raw = t.param(params, "raw");
      Var widths = t.add_scalar(t.scale(t.softmax_cols(t.slice_cols(raw, 0, kBins)), 8.0 - kBins * 1e-3), 1e-3);
      Var heights = t.add_scalar(t.scale(t.softmax_cols(t.slice_cols(raw, kBins, kBins)), 8.0 - kBins * 1e-3), 1e-3);
      Var derivs = t.softplus(t.slice_cols(raw, 2 * kBins, kBins + 1), 0.5413248546129181, 1e-3);
      auto [y, ld] = t.rqs_forward(t.constant(xs), widths, heights, derivs, 4.0);
      auto [xr, ldi] = t.rqs_inverse(y, widths, heights, derivs, 4.0);
      Var spline_bits = t.add(t.sum_all(t.add(ld, ldi)), t.sum_all(t.add(y, xr)));
      return t.add(base, t.scale(spline_bits, 0.1));
    };

    GradientSet ad = grad(params, build);
    // h = 1e-6 keeps the difference quotient away from spline bin boundaries
    // (knot positions move with the parameters).
    GradientSet fd = fd_gradient(params, build, 1e-6);
    worst = std::max(worst, max_rel_err(ad, fd));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("clip_grad_norm") {
  auto make = [](double a, double b) {
    GradientSet g;
    Matrix m(1, 2);
    m << a, b;
    g.grads.push_back(m);
    return g;
  };

  SUBCASE("norm below threshold is unchanged") {
    GradientSet g = clip_grad_norm(make(3.0, 4.0), 10.0);
    CHECK(g.grads[0](0, 0) == 3.0);
    CHECK(g.grads[0](0, 1) == 4.0);
  }
  SUBCASE("norm exactly at threshold is unchanged") {
    GradientSet g = clip_grad_norm(make(3.0, 4.0), 5.0);
    CHECK(g.grads[0](0, 0) == 3.0);
    CHECK(g.grads[0](0, 1) == 4.0);
  }
  SUBCASE("norm above threshold scales to the threshold") {
    GradientSet g = clip_grad_norm(make(6.0, 8.0), 5.0);
    CHECK(g.grads[0](0, 0) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(g.grads[0](0, 1) == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(g.global_norm() <= 5.0 + 1e-12);
  }
  SUBCASE("non-positive max_norm is rejected") {
    CHECK_THROWS_AS(clip_grad_norm(make(1.0, 1.0), 0.0), std::invalid_argument);
  }
  SUBCASE("idempotence") {
    RandomStream rs(3);
    GradientSet g;
    g.grads.push_back(rs.normal_matrix(5, 7) * 10.0);
    g.grads.push_back(rs.normal_matrix(2, 2) * 10.0);
    GradientSet once = clip_grad_norm(g, 5.0);
    GradientSet twice = clip_grad_norm(once, 5.0);
    for (std::size_t p = 0; p < once.grads.size(); ++p) {
      CHECK(((twice.grads[p] - once.grads[p]).cwiseAbs().maxCoeff()) < 1e-14);
    }
  }
}

TEST_CASE("ParameterStore rejects duplicates and non-finite values") {
  ParameterStore s;
  s.add("a", Matrix::Zero(1, 1));
  CHECK_THROWS_AS(s.add("a", Matrix::Zero(1, 1)), std::invalid_argument);
  Matrix bad = Matrix::Constant(1, 1, std::nan(""));
  CHECK_THROWS_AS(s.add("b", bad), NumericalError);
}
