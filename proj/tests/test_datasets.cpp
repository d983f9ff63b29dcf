#include <doctest.h>

#include <cmath>

#include "f4f/datasets.hpp"
#include "f4f/rng.hpp"

using namespace f4f;

namespace {
const DatasetName kAll[] = {
    DatasetName::kCheckerboard, DatasetName::kFourCircles,  DatasetName::kRing,
    DatasetName::kConcentricRings, DatasetName::kSpirals,   DatasetName::kStar,
    DatasetName::kEightStar,
};
}

TEST_CASE("every generator's samples land inside the box and on its own support") {
  for (DatasetName name : kAll) {
    CAPTURE(dataset_name_str(name));
    const Matrix s = sample({name, 10000, 123});
    CHECK(s.cwiseAbs().maxCoeff() <= 4.0);
    int misses = 0;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      if (!support_membership(name, s(i, 0), s(i, 1), std::nullopt, 0.0, 1e-9)) ++misses;
    }
    CHECK(misses == 0);
  }
}

TEST_CASE("sampling is deterministic given the seed") {
  for (DatasetName name : kAll) {
    const Matrix a = sample({name, 200, 7});
    const Matrix b = sample({name, 200, 7});
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    const Matrix c = sample({name, 200, 8});
    CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);
  }
}

TEST_CASE("four_circles is symmetric about the origin") {
  const Matrix s = sample({DatasetName::kFourCircles, 100000, 11});
  CHECK(std::abs(s.col(0).mean()) < 0.05);
  CHECK(std::abs(s.col(1).mean()) < 0.05);
}

TEST_CASE("checkerboard membership follows the cell coloring") {
  CHECK(support_membership(DatasetName::kCheckerboard, 0.5, 0.5));
  // (0.5, 0.5) sits in cell (2, 2): even. One cell to the right is odd.
  CHECK(!support_membership(DatasetName::kCheckerboard, 2.5, 0.5));
  CHECK(support_membership(DatasetName::kCheckerboard, 2.5, 0.5, std::nullopt, 0.0, 0.6));
}

TEST_CASE("ring membership: on the ring yes, at the origin no") {
  CHECK(support_membership(DatasetName::kRing, 3.0, 0.0));
  CHECK(!support_membership(DatasetName::kRing, 0.0, 0.0));
  CHECK(!support_membership(DatasetName::kRing, 0.0, 0.0, std::nullopt, 0.0, 1.0));
}

TEST_CASE("unknown dataset names are rejected, known ones round-trip") {
  CHECK(!parse_dataset_name("pretzel").has_value());
  for (DatasetName name : kAll) {
    auto parsed = parse_dataset_name(dataset_name_str(name));
    REQUIRE(parsed.has_value());
    CHECK(*parsed == name);
  }
}

TEST_CASE("rotation equivariance is exact") {
  DatasetSpec base{DatasetName::kFourCircles, 500, 99};
  auto spec = ConditionalDatasetSpec::rotation(base);
  const Matrix rotated = sample_conditional(spec, 30.0);
  const Matrix manual = apply_condition(ConditionKind::kRotation, sample(base), 30.0);
  CHECK((rotated - manual).cwiseAbs().maxCoeff() == 0.0);

  SUBCASE("zero rotation returns the base draw") {
    const Matrix zero = sample_conditional(spec, 0.0);
    CHECK((zero - sample(base)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("rotated samples pass the rotated-support oracle") {
    for (Eigen::Index i = 0; i < rotated.rows(); ++i) {
      CHECK(support_membership(DatasetName::kFourCircles, rotated(i, 0), rotated(i, 1),
                               ConditionKind::kRotation, 30.0, 1e-9));
    }
  }
  SUBCASE("inverse rotation recovers base-support membership") {
    const Matrix at45 = sample_conditional(spec, 45.0);
    const Matrix back = apply_condition(ConditionKind::kRotation, at45, -45.0);
    for (Eigen::Index i = 0; i < back.rows(); ++i) {
      CHECK(support_membership(DatasetName::kFourCircles, back(i, 0), back(i, 1),
                               std::nullopt, 0.0, 1e-9));
    }
  }
}

TEST_CASE("radial scaling is exact") {
  DatasetSpec base{DatasetName::kRing, 500, 17};
  auto spec = ConditionalDatasetSpec::radial_scale(base);
  const Matrix scaled = sample_conditional(spec, 1.3);
  const Matrix raw = sample(base);
  for (Eigen::Index i = 0; i < scaled.rows(); ++i) {
    const double r0 = std::hypot(raw(i, 0), raw(i, 1));
    const double r1 = std::hypot(scaled(i, 0), scaled(i, 1));
    CHECK(r1 == doctest::Approx(1.3 * r0).epsilon(1e-15));
  }
  SUBCASE("unit scale returns the base draw") {
    CHECK((sample_conditional(spec, 1.0) - raw).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("scaled samples pass the scaled-support oracle") {
    for (Eigen::Index i = 0; i < scaled.rows(); ++i) {
      CHECK(support_membership(DatasetName::kRing, scaled(i, 0), scaled(i, 1),
                               ConditionKind::kRadialScale, 1.3, 1e-9));
    }
  }
}

TEST_CASE("conditions outside the range are rejected") {
  auto spec = ConditionalDatasetSpec::rotation({DatasetName::kFourCircles, 10, 1});
  CHECK_THROWS_AS(sample_conditional(spec, 60.0), std::invalid_argument);
  CHECK_THROWS_AS(sample_conditional(spec, -5.0), std::invalid_argument);
}

TEST_CASE("rotating the checkerboard is rejected (support leaves the box)") {
  DatasetSpec base{DatasetName::kCheckerboard, 10, 1};
  CHECK_THROWS_AS(ConditionalDatasetSpec::rotation(base), std::invalid_argument);
}

TEST_CASE("per-point conditional training draw") {
  auto spec = ConditionalDatasetSpec::rotation({DatasetName::kFourCircles, 0, 0});
  ConditionalSample cs = sample_conditional_training(spec, 2000, 5);
  REQUIRE(cs.points.rows() == 2000);
  REQUIRE(cs.conditions.rows() == 2000);
  for (int i = 0; i < 2000; ++i) {
    const double c = cs.conditions(i, 0);
    CHECK(c >= 0.0);
    CHECK(c <= 45.0);
    CHECK(support_membership(DatasetName::kFourCircles, cs.points(i, 0), cs.points(i, 1),
                             ConditionKind::kRotation, c, 1e-9));
  }
  ConditionalSample cs2 = sample_conditional_training(spec, 2000, 5);
  CHECK((cs.points - cs2.points).cwiseAbs().maxCoeff() == 0.0);
}
