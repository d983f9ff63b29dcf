#pragma once

#include <memory>
#include <optional>

#include "f4f/diffcore.hpp"
#include "f4f/transforms.hpp"

namespace f4f {

// Anything exposing log_prob(x, c) and sample(n, c, seed). Both the standard
// normal and a trained flow satisfy it, which is what lets a flow act as the
// base density of another flow.
class Density {
 public:
  virtual ~Density() = default;

  virtual int dim() const = 0;
  virtual bool conditional() const { return false; }

  // Log density as a (n x 1) tape node; cond is the raw condition matrix.
  virtual Var log_prob_t(Tape& t, Var x, std::optional<Var> cond) const = 0;

  // Convenience evaluation without gradients.
  Vector log_prob(const Matrix& x, const Matrix* cond = nullptr) const;

  // Deterministic given seed.
  virtual Matrix sample(int n, const Matrix* cond, std::uint64_t seed) const = 0;
};

// Analytic d-dimensional standard normal log density at z.
double normal_log_prob(const Vector& z);

class StandardNormal final : public Density {
 public:
  explicit StandardNormal(int dim);

  int dim() const override { return dim_; }
  Var log_prob_t(Tape& t, Var x, std::optional<Var> cond) const override;
  Matrix sample(int n, const Matrix* cond, std::uint64_t seed) const override;

 private:
  int dim_;
};

// A normalizing flow exposed as a density: log p(x | c) is the base log
// density at f^-1(x; c) plus the log-Jacobian of the inverse map, and
// sampling pushes base samples through the forward map.
class FlowDensity final : public Density {
 public:
  FlowDensity(CompositeTransform transform, std::shared_ptr<ParameterStore> store,
              std::shared_ptr<const Density> base);

  int dim() const override { return transform_.config().dim; }
  bool conditional() const override;
  Var log_prob_t(Tape& t, Var x, std::optional<Var> cond) const override;
  Matrix sample(int n, const Matrix* cond, std::uint64_t seed) const override;

  const CompositeTransform& transform() const { return transform_; }
  const Density& base() const { return *base_; }
  std::shared_ptr<const Density> base_ptr() const { return base_; }
  const std::shared_ptr<ParameterStore>& store() const { return store_; }

 private:
  CompositeTransform transform_;
  std::shared_ptr<ParameterStore> store_;
  std::shared_ptr<const Density> base_;
};

}  // namespace f4f
