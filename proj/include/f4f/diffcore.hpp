#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace f4f {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Raised when a computation produces non-finite values (loss, gradients,
// divergent training). CLI maps it to exit code 2.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Named, ordered arrays of trainable 64-bit floats. Order and names are
// fixed by insertion, which in turn is fixed by the architecture config.
class ParameterStore {
 public:
  int add(std::string name, Matrix value);
  int index_of(std::string_view name) const;  // -1 if absent
  bool contains(std::string_view name) const { return index_of(name) >= 0; }

  Matrix& value(int idx) { return values_[static_cast<std::size_t>(idx)]; }
  const Matrix& value(int idx) const { return values_[static_cast<std::size_t>(idx)]; }
  const std::string& name(int idx) const { return names_[static_cast<std::size_t>(idx)]; }

  int count() const { return static_cast<int>(values_.size()); }
  long total_elements() const;
  bool all_finite() const;

  // 64-bit FNV-1a over names, shapes and raw values; used by the frozen-base
  // checks and determinism tests.
  std::uint64_t content_hash() const;

  std::uint64_t rng_seed{0};

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::unordered_map<std::string, int> lookup_;
};

// One gradient array per parameter array, shape-congruent.
struct GradientSet {
  std::vector<Matrix> grads;

  static GradientSet zeros_like(const ParameterStore& store);
  double global_norm() const;
  bool all_finite() const;
};

// If the global L2 norm exceeds max_norm, scales all arrays by
// max_norm / norm; otherwise returns g unchanged. max_norm must be positive.
GradientSet clip_grad_norm(GradientSet g, double max_norm);
// In-place variant; returns the pre-clip global norm.
double clip_grad_norm_inplace(GradientSet& g, double max_norm);

// Handle to a tape node.
struct Var {
  int id{-1};
};

// Per-row context saved by the spline ops for their backward pass.
struct RqsRowCtx {
  int bin{0};
  bool in_range{false};
  double x{0.0};  // primal input (forward) or recovered input (inverse)
  double deriv{1.0};  // dy/dx at x
  // Partials of y and of L = log(dy/dx) w.r.t. the active-bin quantities.
  double y_x{1.0}, y_w{0.0}, y_h{0.0}, y_xk{0.0}, y_dl{0.0}, y_dr{0.0};
  double l_x{0.0}, l_w{0.0}, l_h{0.0}, l_xk{0.0}, l_dl{0.0}, l_dr{0.0};
};

// Reverse-mode tape over matrix-valued expressions. Rows index the batch,
// columns index features; scalars are 1x1. Evaluation is eager and strictly
// sequential, so results are bitwise reproducible for identical inputs.
//
// The differentiable vocabulary is closed: affine maps (matmul / masked
// matmul / bias), tanh, relu, softplus, exp, log, softmax, square, abs,
// elementwise arithmetic, slicing/concatenation/permutation, sums and means,
// and the rational-quadratic spline transform in both directions.
class Tape {
 public:
  // Leaves of `trainable` receive gradients in backward(); leaves of any
  // other store are treated as frozen constants (no gradient work is spent
  // on them). Pass nullptr for evaluation-only tapes.
  explicit Tape(const ParameterStore* trainable = nullptr)
      : trainable_store_(trainable) {}

  // Leaves -----------------------------------------------------------------
  Var constant(Matrix v);
  Var param(const ParameterStore& store, int idx);
  Var param(const ParameterStore& store, std::string_view name);

  // Affine -----------------------------------------------------------------
  // y = x * W^T, with W laid out (out_features x in_features).
  Var matmul(Var x, Var w);
  // Same, with a fixed 0/1 mask applied to W. The mask must outlive the tape.
  Var matmul_masked(Var x, Var w, const Matrix* mask);
  // y = x + b (b broadcast across rows; b is 1 x cols).
  Var add_rowvec(Var x, Var b);

  // Elementwise ------------------------------------------------------------
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var neg(Var a);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var tanh_(Var a);
  Var relu(Var a);
  // offset + softplus(x + shift)
  Var softplus(Var a, double shift = 0.0, double offset = 0.0);
  Var exp_(Var a);
  Var log_(Var a);
  Var square(Var a);
  Var abs_(Var a);  // subgradient 0 at 0

  // Structure --------------------------------------------------------------
  Var softmax_cols(Var a);  // softmax across the columns of each row
  Var slice_cols(Var a, int start, int len);
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);
  Var permute_cols(Var a, std::vector<int> perm);  // out[:,j] = in[:,perm[j]]
  Var gather_rows(Var a, std::vector<int> rows);   // out[i,:] = in[rows[i],:]

  // Reductions -------------------------------------------------------------
  Var rowwise_sum(Var a);  // (n x m) -> (n x 1)
  Var sum_all(Var a);      // -> 1x1
  Var mean_all(Var a);     // -> 1x1

  // Rational-quadratic spline ----------------------------------------------
  // x: (n x 1); widths/heights: (n x K) positive, each row summing to 2B;
  // derivs: (n x K+1) positive. Returns (y, logdet), both (n x 1).
  // Outside [-B, B] the map is the identity with zero logdet.
  std::pair<Var, Var> rqs_forward(Var x, Var widths, Var heights, Var derivs,
                                  double tail_bound);
  std::pair<Var, Var> rqs_inverse(Var y, Var widths, Var heights, Var derivs,
                                  double tail_bound);

  // Access -----------------------------------------------------------------
  const Matrix& value(Var v) const;
  int rows(Var v) const { return static_cast<int>(value(v).rows()); }
  int cols(Var v) const { return static_cast<int>(value(v).cols()); }

  // Reverse pass from a finite 1x1 loss node. Returns gradients shaped like
  // the trainable store (all zeros if no trainable leaves were created).
  // Throws NumericalError naming the eldest offending op if the loss is not
  // finite.
  GradientSet backward(Var loss);

 private:
  enum class Op {
    kConstant, kParam, kMatmul, kMatmulMasked, kAddRowvec, kAdd, kSub, kMul,
    kScale, kAddScalar, kTanh, kRelu, kSoftplus, kExp, kLog, kSquare,
    kAbs, kSoftmax, kSliceCols, kConcatCols, kConcatRows, kPermuteCols,
    kGatherRows, kRowwiseSum, kSumAll, kMeanAll, kRqsForward, kRqsInverse
  };
  static const char* op_name(Op op);

  struct Node {
    Op op;
    Matrix value;
    bool needs_grad{false};
    int a{-1}, b{-1}, c{-1}, d{-1};
    double s0{0.0}, s1{0.0}, s2{0.0};
    int i0{0}, i1{0};
    const Matrix* mask{nullptr};
    std::vector<int> indices;      // permutation / gather / concat offsets
    int param_idx{-1};
    bool param_trainable{false};
    std::vector<RqsRowCtx> rqs;
  };

  int push(Node n);
  void accumulate(int id, const Matrix& g);
  Matrix& grad_buffer(int id);
  void backward_node(int id);

  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
  std::vector<char> has_grad_;
  const ParameterStore* trainable_store_{nullptr};
  // One leaf per distinct parameter array per tape.
  std::unordered_map<const void*, int> param_leaves_;
};

// Evaluates build(tape) to a scalar loss and returns d(loss)/d(params) for
// every parameter in `params`. The builder must create its parameter leaves
// from `params` with trainable=true.
GradientSet grad(const ParameterStore& params,
                 const std::function<Var(Tape&)>& build);

}  // namespace f4f
