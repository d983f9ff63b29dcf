#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "f4f/diffcore.hpp"
#include "f4f/rng.hpp"

namespace f4f {

// Per-dimension monotone rational-quadratic spline on [-B, B] with identity
// linear tails. Widths and heights must each sum to 2B; derivatives are the
// knot slopes (all strictly positive).
struct SplineParams {
  Vector bin_widths;        // K
  Vector bin_heights;       // K
  Vector knot_derivatives;  // K + 1
  double tail_bound{4.0};

  void validate() const;  // throws std::invalid_argument on malformed params
};

// Scalar spline evaluation; returns (y, logdet). Outside the tail bound the
// map is the identity with zero logdet.
std::pair<double, double> rqs_forward(double x, const SplineParams& p);
std::pair<double, double> rqs_inverse(double y, const SplineParams& p);

enum class Activation { kTanh, kRelu };

struct TransformConfig {
  int dim{2};
  int layers{4};
  int residual_blocks{2};
  int hidden{128};
  int bins{8};
  double tail_bound{4.0};
  int cond_dim{0};
  // The embedding applied to raw conditions before they enter the networks:
  // embedded = (c - cond_shift) / cond_scale.
  double cond_shift{0.0};
  double cond_scale{1.0};
  Activation activation{Activation::kTanh};
  double min_bin{1e-3};
  double min_derivative{1e-3};

  // "standard": 4 layers, 2 residual blocks. "bigger": 5 layers, 3 blocks.
  static TransformConfig preset(const std::string& name);
  int params_per_dim() const { return 3 * bins + 1; }
};

// One autoregressive spline layer: a masked network maps the strictly
// earlier dimensions (in this layer's autoregressive order) plus the
// condition to the unconstrained spline parameters of each dimension. The
// single-pass direction is `inverse` (the conditioner reads the data-side
// input); the forward direction fills dimensions sequentially.
class AutoregressiveLayer {
 public:
  // ar_rank[d] is the position of dimension d in this layer's ordering.
  AutoregressiveLayer(const TransformConfig& cfg, ParameterStore& store,
                      const std::string& prefix, RandomStream* init,
                      std::vector<int> ar_rank);

  std::pair<Var, Var> forward_t(Tape& t, Var x, std::optional<Var> embedded_cond) const;
  std::pair<Var, Var> inverse_t(Tape& t, Var y, std::optional<Var> embedded_cond) const;

  // Unconstrained network output for all dimensions, (n x dim*(3K+1)).
  Var conditioner_t(Tape& t, Var x, std::optional<Var> embedded_cond) const;

  // Maps one dimension's unconstrained block to constrained spline inputs.
  struct ConstrainedParams {
    Var widths, heights, derivs;
  };
  ConstrainedParams constrain_t(Tape& t, Var block) const;

 private:
  Var leaf(Tape& t, int idx) const;
  Var activate(Tape& t, Var v) const;

  TransformConfig cfg_;
  ParameterStore* store_;
  std::vector<int> ar_rank_;       // rank per dimension
  std::vector<int> dim_by_rank_;   // inverse of ar_rank_
  int idx_in_w_{-1}, idx_in_b_{-1}, idx_ctx_w_{-1};
  std::vector<std::array<int, 4>> block_idx_;  // W1, b1, W2, b2
  int idx_out_w_{-1}, idx_out_b_{-1}, idx_out_ctx_{-1};
  Matrix mask_in_, mask_hidden_, mask_out_;
};

// Stack of autoregressive layers with a fixed alternating autoregressive
// order (even layers use the natural dimension order, odd layers the
// reverse). forward = base -> data; inverse = data -> base.
class CompositeTransform {
 public:
  // Registers parameters under `prefix` if absent (requires init stream),
  // otherwise binds to the existing arrays.
  CompositeTransform(TransformConfig cfg, ParameterStore& store,
                     std::string prefix, RandomStream* init = nullptr);

  std::pair<Var, Var> forward_t(Tape& t, Var x, std::optional<Var> raw_cond) const;
  std::pair<Var, Var> inverse_t(Tape& t, Var y, std::optional<Var> raw_cond) const;

  // Convenience non-training evaluation (chunked internally).
  std::pair<Matrix, Vector> forward(const Matrix& x, const Matrix* cond = nullptr) const;
  std::pair<Matrix, Vector> inverse(const Matrix& y, const Matrix* cond = nullptr) const;

  // Applies the configured embedding to a raw condition matrix node.
  Var embed_cond_t(Tape& t, Var raw_cond) const;

  const TransformConfig& config() const { return cfg_; }
  const ParameterStore& store() const { return *store_; }
  ParameterStore& store() { return *store_; }
  const std::string& prefix() const { return prefix_; }

 private:
  TransformConfig cfg_;
  ParameterStore* store_;
  std::string prefix_;
  std::vector<AutoregressiveLayer> layers_;
};

}  // namespace f4f
