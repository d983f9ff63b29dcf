#include "f4f/datasets.hpp"

#include <array>
#include <cmath>

#include "f4f/rng.hpp"

namespace f4f {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kBox = 4.0;
constexpr double kNoiseTrunc = 3.0;  // generator noise truncated at 3 sigma

struct RadialMixture {
  std::vector<std::array<double, 2>> centers;
  std::vector<double> radii;  // one radius per center when sizes match,
                              // otherwise all (center, radius) combinations
  double sigma;
};

RadialMixture radial_config(DatasetName name) {
  switch (name) {
    case DatasetName::kFourCircles:
      return {{{-1.5, -1.5}, {1.5, -1.5}, {-1.5, 1.5}, {1.5, 1.5}}, {1.5}, 0.1};
    case DatasetName::kRing:
      return {{{0.0, 0.0}}, {3.0}, 0.2};
    case DatasetName::kConcentricRings:
      return {{{0.0, 0.0}}, {1.5, 3.0}, 0.15};
    default:
      throw std::logic_error("not a radial dataset");
  }
}

struct StarConfig {
  int arms;
  double length{3.5};
  double sigma{0.1};
  double phase{kPi / 2.0};  // first arm points up
};

StarConfig star_config(DatasetName name) {
  StarConfig c;
  c.arms = name == DatasetName::kStar ? 5 : 8;
  return c;
}

// Archimedean spiral arm: radius 0.35 t at angle t (+ pi for the second arm),
// t in [1, 10], with isotropic noise truncated at 3 sigma in norm.
constexpr double kSpiralRate = 0.35;
constexpr double kSpiralT0 = 1.0;
constexpr double kSpiralT1 = 10.0;
constexpr double kSpiralSigma = 0.1;

void spiral_point(double t, int arm, double& x, double& y) {
  const double ang = t + (arm == 1 ? kPi : 0.0);
  x = kSpiralRate * t * std::cos(ang);
  y = kSpiralRate * t * std::sin(ang);
}

bool in_box(double x, double y) {
  return std::abs(x) <= kBox && std::abs(y) <= kBox;
}

bool even_cell(double x, double y) {
  const int ix = static_cast<int>(std::floor((x + kBox) / 2.0));
  const int iy = static_cast<int>(std::floor((y + kBox) / 2.0));
  return (ix + iy) % 2 == 0;
}

void sample_one(DatasetName name, RandomStream& rs, double& x, double& y) {
  switch (name) {
    case DatasetName::kCheckerboard: {
      do {
        x = rs.uniform(-kBox, kBox);
        y = rs.uniform(-kBox, kBox);
      } while (!even_cell(x, y));
      return;
    }
    case DatasetName::kFourCircles:
    case DatasetName::kRing:
    case DatasetName::kConcentricRings: {
      const RadialMixture cfg = radial_config(name);
      const int nc = static_cast<int>(cfg.centers.size());
      const int nr = static_cast<int>(cfg.radii.size());
      const int pick = rs.uniform_int(nc * nr);
      const auto& ctr = cfg.centers[static_cast<std::size_t>(pick % nc)];
      const double radius = cfg.radii[static_cast<std::size_t>(pick / nc)];
      const double theta = rs.uniform(0.0, 2.0 * kPi);
      const double r = radius + cfg.sigma * rs.truncated_normal(kNoiseTrunc);
      x = ctr[0] + r * std::cos(theta);
      y = ctr[1] + r * std::sin(theta);
      return;
    }
    case DatasetName::kSpirals: {
      const int arm = rs.uniform_int(2);
      const double t = rs.uniform(kSpiralT0, kSpiralT1);
      spiral_point(t, arm, x, y);
      double n0 = 0.0, n1 = 0.0;
      do {
        n0 = rs.normal();
        n1 = rs.normal();
      } while (n0 * n0 + n1 * n1 > kNoiseTrunc * kNoiseTrunc);
      x += kSpiralSigma * n0;
      y += kSpiralSigma * n1;
      return;
    }
    case DatasetName::kStar:
    case DatasetName::kEightStar: {
      const StarConfig cfg = star_config(name);
      const int arm = rs.uniform_int(cfg.arms);
      const double alpha = 2.0 * kPi * arm / cfg.arms + cfg.phase;
      const double along = rs.uniform(0.0, 1.0) * cfg.length;
      const double perp = cfg.sigma * rs.truncated_normal(kNoiseTrunc);
      x = along * std::cos(alpha) - perp * std::sin(alpha);
      y = along * std::sin(alpha) + perp * std::cos(alpha);
      return;
    }
  }
  throw std::invalid_argument("unknown dataset");
}

double segment_band_distance(double along, double perp, double length, double band) {
  const double d_along = std::max({0.0, -along, along - length});
  const double d_perp = std::max(0.0, std::abs(perp) - band);
  return std::hypot(d_along, d_perp);
}

double cell_distance(double x, double y, double cx0, double cy0) {
  // Distance to the 2x2 cell with lower corner (cx0, cy0).
  const double dx = std::max({cx0 - x, 0.0, x - (cx0 + 2.0)});
  const double dy = std::max({cy0 - y, 0.0, y - (cy0 + 2.0)});
  return std::hypot(dx, dy);
}

double spiral_curve_distance(double x, double y) {
  double best = 1e300;
  for (int arm = 0; arm < 2; ++arm) {
    // Coarse scan, then golden-section refinement on the best bracket. The
    // windings are ~2.2 apart so the coarse grid cannot miss the basin.
    const int steps = 512;
    int best_i = 0;
    double best_d = 1e300;
    for (int i = 0; i <= steps; ++i) {
      const double t = kSpiralT0 + (kSpiralT1 - kSpiralT0) * i / steps;
      double sx = 0.0, sy = 0.0;
      spiral_point(t, arm, sx, sy);
      const double d = std::hypot(x - sx, y - sy);
      if (d < best_d) {
        best_d = d;
        best_i = i;
      }
    }
    const double dt = (kSpiralT1 - kSpiralT0) / steps;
    double lo = std::max(kSpiralT0, kSpiralT0 + (best_i - 1) * dt);
    double hi = std::min(kSpiralT1, kSpiralT0 + (best_i + 1) * dt);
    auto dist_at = [&](double t) {
      double sx = 0.0, sy = 0.0;
      spiral_point(t, arm, sx, sy);
      return std::hypot(x - sx, y - sy);
    };
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = lo, b = hi;
    double c1 = b - gr * (b - a), c2 = a + gr * (b - a);
    double f1 = dist_at(c1), f2 = dist_at(c2);
    for (int it = 0; it < 80; ++it) {
      if (f1 < f2) {
        b = c2;
        c2 = c1;
        f2 = f1;
        c1 = b - gr * (b - a);
        f1 = dist_at(c1);
      } else {
        a = c1;
        c1 = c2;
        f1 = f2;
        c2 = a + gr * (b - a);
        f2 = dist_at(c2);
      }
    }
    best = std::min({best, f1, f2});
  }
  return best;
}

double base_support_distance(DatasetName name, double x, double y) {
  switch (name) {
    case DatasetName::kCheckerboard: {
      double best = 1e300;
      for (int ix = 0; ix < 4; ++ix) {
        for (int iy = 0; iy < 4; ++iy) {
          if ((ix + iy) % 2 != 0) continue;
          best = std::min(best, cell_distance(x, y, -kBox + 2.0 * ix, -kBox + 2.0 * iy));
        }
      }
      return best;
    }
    case DatasetName::kFourCircles:
    case DatasetName::kRing:
    case DatasetName::kConcentricRings: {
      const RadialMixture cfg = radial_config(name);
      double best = 1e300;
      for (const auto& ctr : cfg.centers) {
        const double r = std::hypot(x - ctr[0], y - ctr[1]);
        for (double radius : cfg.radii) {
          best = std::min(best, std::abs(r - radius));
        }
      }
      return std::max(0.0, best - kNoiseTrunc * cfg.sigma);
    }
    case DatasetName::kSpirals:
      return std::max(0.0, spiral_curve_distance(x, y) - kNoiseTrunc * kSpiralSigma);
    case DatasetName::kStar:
    case DatasetName::kEightStar: {
      const StarConfig cfg = star_config(name);
      double best = 1e300;
      for (int arm = 0; arm < cfg.arms; ++arm) {
        const double alpha = 2.0 * kPi * arm / cfg.arms + cfg.phase;
        const double ca = std::cos(alpha), sa = std::sin(alpha);
        const double along = x * ca + y * sa;
        const double perp = -x * sa + y * ca;
        best = std::min(best, segment_band_distance(along, perp, cfg.length,
                                                    kNoiseTrunc * cfg.sigma));
      }
      return best;
    }
  }
  throw std::invalid_argument("unknown dataset");
}

double support_radius(DatasetName name) {
  switch (name) {
    case DatasetName::kCheckerboard: return kBox * std::sqrt(2.0);
    case DatasetName::kFourCircles: return std::hypot(1.5, 1.5) + 1.5 + 0.3;
    case DatasetName::kRing: return 3.6;
    case DatasetName::kConcentricRings: return 3.45;
    case DatasetName::kSpirals: return kSpiralRate * kSpiralT1 + 0.3;
    case DatasetName::kStar:
    case DatasetName::kEightStar: return std::hypot(3.5, 0.3);
  }
  return 0.0;
}

}  // namespace

std::optional<DatasetName> parse_dataset_name(const std::string& s) {
  if (s == "checkerboard") return DatasetName::kCheckerboard;
  if (s == "four_circles") return DatasetName::kFourCircles;
  if (s == "ring") return DatasetName::kRing;
  if (s == "concentric_rings") return DatasetName::kConcentricRings;
  if (s == "spirals") return DatasetName::kSpirals;
  if (s == "star") return DatasetName::kStar;
  if (s == "eight_star") return DatasetName::kEightStar;
  return std::nullopt;
}

std::string dataset_name_str(DatasetName name) {
  switch (name) {
    case DatasetName::kCheckerboard: return "checkerboard";
    case DatasetName::kFourCircles: return "four_circles";
    case DatasetName::kRing: return "ring";
    case DatasetName::kConcentricRings: return "concentric_rings";
    case DatasetName::kSpirals: return "spirals";
    case DatasetName::kStar: return "star";
    case DatasetName::kEightStar: return "eight_star";
  }
  return "?";
}

std::optional<ConditionKind> parse_condition_kind(const std::string& s) {
  if (s == "rotation") return ConditionKind::kRotation;
  if (s == "radial_scale") return ConditionKind::kRadialScale;
  return std::nullopt;
}

std::string condition_kind_str(ConditionKind kind) {
  return kind == ConditionKind::kRotation ? "rotation" : "radial_scale";
}

Matrix sample(const DatasetSpec& spec) {
  if (spec.n <= 0) throw std::invalid_argument("sample: n must be positive");
  RandomStream rs(spec.seed);
  Matrix out(spec.n, 2);
  for (int i = 0; i < spec.n; ++i) {
    double x = 0.0, y = 0.0;
    do {
      sample_one(spec.name, rs, x, y);
    } while (!in_box(x, y));
    out(i, 0) = x;
    out(i, 1) = y;
  }
  return out;
}

ConditionalDatasetSpec ConditionalDatasetSpec::rotation(DatasetSpec base, double cmin,
                                                        double cmax) {
  ConditionalDatasetSpec s;
  s.base = base;
  s.kind = ConditionKind::kRotation;
  s.cmin = cmin;
  s.cmax = cmax;
  s.validate();
  return s;
}

ConditionalDatasetSpec ConditionalDatasetSpec::radial_scale(DatasetSpec base, double cmin,
                                                            double cmax) {
  ConditionalDatasetSpec s;
  s.base = base;
  s.kind = ConditionKind::kRadialScale;
  s.cmin = cmin;
  s.cmax = cmax;
  s.validate();
  return s;
}

void ConditionalDatasetSpec::validate() const {
  if (!(cmin < cmax)) throw std::invalid_argument("conditional spec: need cmin < cmax");
  if (kind == ConditionKind::kRotation && support_radius(base.name) > kBox) {
    throw std::invalid_argument("rotation of " + dataset_name_str(base.name) +
                                " leaves the [-4,4]^2 data box");
  }
  if (kind == ConditionKind::kRadialScale && cmin <= 0.0) {
    throw std::invalid_argument("radial_scale: conditions must be positive");
  }
}

Matrix apply_condition(ConditionKind kind, const Matrix& points, double c) {
  Matrix out(points.rows(), points.cols());
  if (kind == ConditionKind::kRotation) {
    const double rad = c * kPi / 180.0;
    const double ca = std::cos(rad), sa = std::sin(rad);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      out(i, 0) = ca * points(i, 0) - sa * points(i, 1);
      out(i, 1) = sa * points(i, 0) + ca * points(i, 1);
    }
  } else {
    out = points * c;
  }
  return out;
}

Matrix sample_conditional(const ConditionalDatasetSpec& spec, double c) {
  spec.validate();
  if (c < spec.cmin - 1e-12 || c > spec.cmax + 1e-12) {
    throw std::invalid_argument("sample_conditional: condition out of range");
  }
  return apply_condition(spec.kind, sample(spec.base), c);
}

ConditionalSample sample_conditional_training(const ConditionalDatasetSpec& spec,
                                              int n, std::uint64_t seed) {
  spec.validate();
  DatasetSpec base = spec.base;
  base.n = n;
  base.seed = derive_seed(seed, "cond.base");
  ConditionalSample out;
  out.points = sample(base);
  out.conditions.resize(n, 1);
  RandomStream cs(derive_seed(seed, "cond.values"));
  for (int i = 0; i < n; ++i) {
    const double c = cs.uniform(spec.cmin, spec.cmax);
    out.conditions(i, 0) = c;
    const Matrix p = apply_condition(spec.kind, out.points.row(i), c);
    out.points.row(i) = p;
  }
  return out;
}

double support_distance(DatasetName name, double x0, double x1,
                        std::optional<ConditionKind> kind, double c) {
  if (kind) {
    if (*kind == ConditionKind::kRotation) {
      const double rad = -c * kPi / 180.0;
      const double ca = std::cos(rad), sa = std::sin(rad);
      const double rx = ca * x0 - sa * x1;
      const double ry = sa * x0 + ca * x1;
      return base_support_distance(name, rx, ry);
    }
    if (!(c > 0.0)) throw std::invalid_argument("support_distance: radial scale must be positive");
    return c * base_support_distance(name, x0 / c, x1 / c);
  }
  return base_support_distance(name, x0, x1);
}

bool support_membership(DatasetName name, double x0, double x1,
                        std::optional<ConditionKind> kind, double c,
                        double tolerance) {
  return support_distance(name, x0, x1, kind, c) <= tolerance;
}

}  // namespace f4f
