#include <doctest.h>

#include "f4f/penalty.hpp"
#include "f4f/rng.hpp"
#include "test_util.hpp"

using namespace f4f;

TEST_CASE("l1 penalty analytic cases") {
  Matrix x(1, 2), y(1, 2);
  x << 0, 0;
  y << 1, -2;
  CHECK(l1_penalty(x, x, 1.0) == 0.0);
  CHECK(l1_penalty(x, y, 0.0) == 0.0);
  CHECK(l1_penalty(x, y, 1.0) == doctest::Approx(3.0).epsilon(1e-15));
  Matrix z(2, 2);
  CHECK_THROWS_AS(l1_penalty(x, z, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(l1_penalty(x, y, -0.5), std::invalid_argument);
}

TEST_CASE("non-negativity, homogeneity in the weight, triangle inequality") {
  RandomStream rs(2);
  const Matrix a = rs.normal_matrix(64, 2);
  const Matrix b = rs.normal_matrix(64, 2);
  const Matrix c = rs.normal_matrix(64, 2);
  CHECK(l1_penalty(a, b, 1.0) >= 0.0);
  CHECK(l1_penalty(a, b, 2.5) == doctest::Approx(2.5 * l1_penalty(a, b, 1.0)).epsilon(1e-12));
  CHECK(l1_penalty(a, c, 1.0) <= l1_penalty(a, b, 1.0) + l1_penalty(b, c, 1.0) + 1e-12);
}

TEST_CASE("tape penalty matches the plain implementation and its gradient checks out") {
  RandomStream rs(4);
  const Matrix x = rs.normal_matrix(16, 2);
  ParameterStore params;
  params.add("y", rs.normal_matrix(16, 2));

  auto build = [&](Tape& t) {
    return l1_penalty_t(t, t.constant(x), t.param(params, "y"), 1.5);
  };
  Tape t(&params);
  CHECK(t.value(build(t))(0, 0) ==
        doctest::Approx(l1_penalty(x, params.value(0), 1.5)).epsilon(1e-14));

  GradientSet ad = grad(params, build);
  GradientSet fd = testutil::fd_gradient(params, build, 1e-6);
  CHECK(testutil::max_rel_err(ad, fd) < 1e-4);
}

TEST_CASE("subgradient is zero at ties") {
  RandomStream rs(6);
  const Matrix x = rs.normal_matrix(8, 2);
  ParameterStore params;
  params.add("y", x);
  GradientSet g = grad(params, [&](Tape& t) {
    return l1_penalty_t(t, t.constant(x), t.param(params, "y"), 1.0);
  });
  CHECK(g.grads[0].isZero(0.0));
}
