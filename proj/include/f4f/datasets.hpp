#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "f4f/diffcore.hpp"

namespace f4f {

// The 2D toy families. All generators are seeded, produce samples inside
// [-4, 4]^2 and truncate their Gaussian noise at 3 sigma so that every sample
// lies exactly on the analytic support used by the membership oracle.
enum class DatasetName {
  kCheckerboard,
  kFourCircles,
  kRing,
  kConcentricRings,
  kSpirals,
  kStar,
  kEightStar,
};

std::optional<DatasetName> parse_dataset_name(const std::string& s);
std::string dataset_name_str(DatasetName name);

struct DatasetSpec {
  DatasetName name{DatasetName::kCheckerboard};
  int n{0};
  std::uint64_t seed{0};
};

// i.i.d. samples (n x 2) from the named distribution.
Matrix sample(const DatasetSpec& spec);

enum class ConditionKind { kRotation, kRadialScale };

std::optional<ConditionKind> parse_condition_kind(const std::string& s);
std::string condition_kind_str(ConditionKind kind);

// Conditional family: the base distribution rotated about the origin by c
// degrees, or with radii scaled by c. Defaults follow the studied ranges
// (rotation up to 45 degrees, radial scale in [0.5, 1.5]).
struct ConditionalDatasetSpec {
  DatasetSpec base;
  ConditionKind kind{ConditionKind::kRotation};
  double cmin{0.0};
  double cmax{45.0};

  static ConditionalDatasetSpec rotation(DatasetSpec base, double cmin = 0.0,
                                         double cmax = 45.0);
  static ConditionalDatasetSpec radial_scale(DatasetSpec base, double cmin = 0.5,
                                             double cmax = 1.5);
  void validate() const;
};

// Samples at a fixed condition value: exactly the base draw for the same
// seed, transformed. c must lie in [cmin, cmax].
Matrix sample_conditional(const ConditionalDatasetSpec& spec, double c);

// Training draw with one uniform condition per point.
struct ConditionalSample {
  Matrix points;      // n x 2
  Matrix conditions;  // n x 1
};
ConditionalSample sample_conditional_training(const ConditionalDatasetSpec& spec,
                                              int n, std::uint64_t seed);

// Applies the conditional transform to existing points.
Matrix apply_condition(ConditionKind kind, const Matrix& points, double c);

// Distance from a point to the analytic support of the (optionally
// transformed) distribution. The support includes the generator's truncated
// noise band, so samples are at distance 0 from it.
double support_distance(DatasetName name, double x0, double x1,
                        std::optional<ConditionKind> kind = std::nullopt,
                        double c = 0.0);

// True iff the point lies within `tolerance` of the support.
bool support_membership(DatasetName name, double x0, double x1,
                        std::optional<ConditionKind> kind = std::nullopt,
                        double c = 0.0, double tolerance = 0.0);

}  // namespace f4f
