#include "f4f/transforms.hpp"

#include <cmath>
#include <functional>
#include <numeric>

namespace f4f {

namespace {

// Unconstrained value that maps to exactly 1.0 through
// min_derivative + softplus(. + shift) at zero input.
double derivative_shift(double min_derivative) {
  return std::log(std::expm1(1.0 - min_derivative));
}

}  // namespace

// ------------------------------ SplineParams --------------------------------

void SplineParams::validate() const {
  const auto k = bin_widths.size();
  if (k < 1 || bin_heights.size() != k || knot_derivatives.size() != k + 1) {
    throw std::invalid_argument("SplineParams: inconsistent sizes");
  }
  if (!(tail_bound > 0.0)) throw std::invalid_argument("SplineParams: tail_bound must be positive");
  if ((bin_widths.array() <= 0.0).any() || (bin_heights.array() <= 0.0).any()) {
    throw std::invalid_argument("SplineParams: bin widths/heights must be positive");
  }
  if ((knot_derivatives.array() <= 0.0).any()) {
    throw std::invalid_argument("SplineParams: knot derivatives must be positive");
  }
  const double span = 2.0 * tail_bound;
  if (std::abs(bin_widths.sum() - span) > 1e-9 * span ||
      std::abs(bin_heights.sum() - span) > 1e-9 * span) {
    throw std::invalid_argument("SplineParams: knots must partition [-B, B] in both axes");
  }
}

std::pair<double, double> rqs_forward(double x, const SplineParams& p) {
  p.validate();
  Tape t;
  const int k = static_cast<int>(p.bin_widths.size());
  Var xv = t.constant(Matrix::Constant(1, 1, x));
  Var w = t.constant(p.bin_widths.transpose());
  Var h = t.constant(p.bin_heights.transpose());
  Var d = t.constant(p.knot_derivatives.transpose());
  (void)k;
  auto [y, ld] = t.rqs_forward(xv, w, h, d, p.tail_bound);
  return {t.value(y)(0, 0), t.value(ld)(0, 0)};
}

std::pair<double, double> rqs_inverse(double y, const SplineParams& p) {
  p.validate();
  Tape t;
  Var yv = t.constant(Matrix::Constant(1, 1, y));
  Var w = t.constant(p.bin_widths.transpose());
  Var h = t.constant(p.bin_heights.transpose());
  Var d = t.constant(p.knot_derivatives.transpose());
  auto [x, ld] = t.rqs_inverse(yv, w, h, d, p.tail_bound);
  return {t.value(x)(0, 0), t.value(ld)(0, 0)};
}

// ---------------------------- TransformConfig -------------------------------

TransformConfig TransformConfig::preset(const std::string& name) {
  TransformConfig cfg;
  if (name == "standard") {
    cfg.layers = 4;
    cfg.residual_blocks = 2;
  } else if (name == "bigger") {
    cfg.layers = 5;
    cfg.residual_blocks = 3;
  } else {
    throw std::invalid_argument("unknown architecture preset: " + name);
  }
  return cfg;
}

// --------------------------- AutoregressiveLayer ----------------------------

AutoregressiveLayer::AutoregressiveLayer(const TransformConfig& cfg,
                                         ParameterStore& store,
                                         const std::string& prefix,
                                         RandomStream* init,
                                         std::vector<int> ar_rank)
    : cfg_(cfg), store_(&store), ar_rank_(std::move(ar_rank)) {
  const int dim = cfg.dim;
  const int hidden = cfg.hidden;
  const int out_per_dim = cfg.params_per_dim();
  const int out_total = dim * out_per_dim;

  if (static_cast<int>(ar_rank_.size()) != dim) {
    throw std::invalid_argument("AutoregressiveLayer: ar_rank size mismatch");
  }
  dim_by_rank_.assign(static_cast<std::size_t>(dim), -1);
  for (int d = 0; d < dim; ++d) dim_by_rank_[static_cast<std::size_t>(ar_rank_[static_cast<std::size_t>(d)])] = d;

  // MADE degrees: input degree = rank + 1, hidden cycling over 1..dim-1,
  // outputs repeat the input degrees per parameter block. A hidden unit of
  // degree g may read inputs of degree <= g; an output of degree g may read
  // hidden units of degree < g (strictly earlier dimensions only).
  std::vector<int> in_deg(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim; ++i) in_deg[static_cast<std::size_t>(i)] = ar_rank_[static_cast<std::size_t>(i)] + 1;
  std::vector<int> hid_deg(static_cast<std::size_t>(hidden));
  const int cycle = std::max(dim - 1, 1);
  for (int u = 0; u < hidden; ++u) hid_deg[static_cast<std::size_t>(u)] = 1 + (u % cycle);

  mask_in_.resize(hidden, dim);
  for (int u = 0; u < hidden; ++u) {
    for (int i = 0; i < dim; ++i) {
      mask_in_(u, i) = hid_deg[static_cast<std::size_t>(u)] >= in_deg[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    }
  }
  mask_hidden_.resize(hidden, hidden);
  for (int u = 0; u < hidden; ++u) {
    for (int v = 0; v < hidden; ++v) {
      mask_hidden_(u, v) = hid_deg[static_cast<std::size_t>(u)] >= hid_deg[static_cast<std::size_t>(v)] ? 1.0 : 0.0;
    }
  }
  mask_out_.resize(out_total, hidden);
  for (int o = 0; o < out_total; ++o) {
    const int deg = in_deg[static_cast<std::size_t>(o / out_per_dim)];
    for (int u = 0; u < hidden; ++u) {
      mask_out_(o, u) = deg > hid_deg[static_cast<std::size_t>(u)] ? 1.0 : 0.0;
    }
  }

  auto ensure = [&](const std::string& name, int rows, int cols, bool zero,
                    int fan_in) -> int {
    int idx = store.index_of(name);
    if (idx >= 0) {
      const Matrix& v = store.value(idx);
      if (v.rows() != rows || v.cols() != cols) {
        throw std::invalid_argument("parameter shape mismatch for " + name);
      }
      return idx;
    }
    if (init == nullptr) {
      throw std::invalid_argument("missing parameter and no initializer: " + name);
    }
    if (zero) return store.add(name, Matrix::Zero(rows, cols));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return store.add(name, init->uniform_matrix(rows, cols, -bound, bound));
  };

  idx_in_w_ = ensure(prefix + ".in.w", hidden, dim, false, dim);
  idx_in_b_ = ensure(prefix + ".in.b", 1, hidden, true, 0);
  if (cfg.cond_dim > 0) {
    idx_ctx_w_ = ensure(prefix + ".in.ctx_w", hidden, cfg.cond_dim, false, cfg.cond_dim);
  }
  for (int b = 0; b < cfg.residual_blocks; ++b) {
    const std::string bp = prefix + ".block" + std::to_string(b);
    std::array<int, 4> ids{};
    ids[0] = ensure(bp + ".w1", hidden, hidden, false, hidden);
    ids[1] = ensure(bp + ".b1", 1, hidden, true, 0);
    ids[2] = ensure(bp + ".w2", hidden, hidden, false, hidden);
    ids[3] = ensure(bp + ".b2", 1, hidden, true, 0);
    block_idx_.push_back(ids);
  }
  // Final affine layer zero-initialized: every transform starts as the identity.
  idx_out_w_ = ensure(prefix + ".out.w", out_total, hidden, true, hidden);
  idx_out_b_ = ensure(prefix + ".out.b", 1, out_total, true, 0);
  if (cfg.cond_dim > 0) {
    idx_out_ctx_ = ensure(prefix + ".out.ctx_w", out_total, cfg.cond_dim, true, cfg.cond_dim);
  }
}

Var AutoregressiveLayer::leaf(Tape& t, int idx) const {
  return t.param(*store_, idx);
}

Var AutoregressiveLayer::activate(Tape& t, Var v) const {
  return cfg_.activation == Activation::kTanh ? t.tanh_(v) : t.relu(v);
}

Var AutoregressiveLayer::conditioner_t(Tape& t, Var x,
                                       std::optional<Var> embedded_cond) const {
  Var h = t.matmul_masked(x, leaf(t, idx_in_w_), &mask_in_);
  if (embedded_cond) {
    h = t.add(h, t.matmul(*embedded_cond, leaf(t, idx_ctx_w_)));
  }
  h = t.add_rowvec(h, leaf(t, idx_in_b_));
  for (const auto& ids : block_idx_) {
    Var z = activate(t, h);
    z = t.add_rowvec(t.matmul_masked(z, leaf(t, ids[0]), &mask_hidden_), leaf(t, ids[1]));
    z = activate(t, z);
    z = t.add_rowvec(t.matmul_masked(z, leaf(t, ids[2]), &mask_hidden_), leaf(t, ids[3]));
    h = t.add(h, z);
  }
  Var out = t.matmul_masked(activate(t, h), leaf(t, idx_out_w_), &mask_out_);
  if (embedded_cond) {
    out = t.add(out, t.matmul(*embedded_cond, leaf(t, idx_out_ctx_)));
  }
  return t.add_rowvec(out, leaf(t, idx_out_b_));
}

AutoregressiveLayer::ConstrainedParams AutoregressiveLayer::constrain_t(Tape& t, Var block) const {
  const int k = cfg_.bins;
  const double span = 2.0 * cfg_.tail_bound;
  const double free_span = span - cfg_.min_bin * static_cast<double>(k);
  ConstrainedParams p;
  p.widths = t.add_scalar(
      t.scale(t.softmax_cols(t.slice_cols(block, 0, k)), free_span), cfg_.min_bin);
  p.heights = t.add_scalar(
      t.scale(t.softmax_cols(t.slice_cols(block, k, k)), free_span), cfg_.min_bin);
  p.derivs = t.softplus(t.slice_cols(block, 2 * k, k + 1),
                        derivative_shift(cfg_.min_derivative), cfg_.min_derivative);
  return p;
}

std::pair<Var, Var> AutoregressiveLayer::inverse_t(Tape& t, Var y,
                                                   std::optional<Var> embedded_cond) const {
  const int dim = cfg_.dim;
  const int per_dim = cfg_.params_per_dim();
  Var out = conditioner_t(t, y, embedded_cond);
  std::vector<Var> xs;
  Var logdet{-1};
  for (int d = 0; d < dim; ++d) {
    ConstrainedParams p = constrain_t(t, t.slice_cols(out, d * per_dim, per_dim));
    auto [xd, ld] = t.rqs_inverse(t.slice_cols(y, d, 1), p.widths, p.heights,
                                  p.derivs, cfg_.tail_bound);
    xs.push_back(xd);
    logdet = d == 0 ? ld : t.add(logdet, ld);
  }
  return {t.concat_cols(xs), logdet};
}

std::pair<Var, Var> AutoregressiveLayer::forward_t(Tape& t, Var x,
                                                   std::optional<Var> embedded_cond) const {
  const int dim = cfg_.dim;
  const int per_dim = cfg_.params_per_dim();
  const int n = t.rows(x);
  // Dimensions are produced in rank order; parameters for a dimension read
  // only already-computed outputs, so unknown slots can be fed as zeros.
  std::vector<Var> ys(static_cast<std::size_t>(dim), Var{-1});
  Var logdet{-1};
  for (int r = 0; r < dim; ++r) {
    const int d = dim_by_rank_[static_cast<std::size_t>(r)];
    std::vector<Var> cols;
    for (int j = 0; j < dim; ++j) {
      cols.push_back(ar_rank_[static_cast<std::size_t>(j)] < r
                         ? ys[static_cast<std::size_t>(j)]
                         : t.constant(Matrix::Zero(n, 1)));
    }
    Var probe = t.concat_cols(cols);
    Var out = conditioner_t(t, probe, embedded_cond);
    ConstrainedParams p = constrain_t(t, t.slice_cols(out, d * per_dim, per_dim));
    auto [yd, ld] = t.rqs_forward(t.slice_cols(x, d, 1), p.widths, p.heights,
                                  p.derivs, cfg_.tail_bound);
    ys[static_cast<std::size_t>(d)] = yd;
    logdet = r == 0 ? ld : t.add(logdet, ld);
  }
  return {t.concat_cols(ys), logdet};
}

// ---------------------------- CompositeTransform ----------------------------

CompositeTransform::CompositeTransform(TransformConfig cfg, ParameterStore& store,
                                       std::string prefix, RandomStream* init)
    : cfg_(cfg), store_(&store), prefix_(std::move(prefix)) {
  if (cfg_.dim < 1) throw std::invalid_argument("TransformConfig: dim must be >= 1");
  layers_.reserve(static_cast<std::size_t>(cfg_.layers));
  for (int l = 0; l < cfg_.layers; ++l) {
    std::vector<int> rank(static_cast<std::size_t>(cfg_.dim));
    std::iota(rank.begin(), rank.end(), 0);
    if (l % 2 == 1) std::reverse(rank.begin(), rank.end());
    layers_.emplace_back(cfg_, store, prefix_ + ".layer" + std::to_string(l), init,
                         std::move(rank));
  }
}

Var CompositeTransform::embed_cond_t(Tape& t, Var raw_cond) const {
  return t.scale(t.add_scalar(raw_cond, -cfg_.cond_shift), 1.0 / cfg_.cond_scale);
}

std::pair<Var, Var> CompositeTransform::forward_t(Tape& t, Var x,
                                                  std::optional<Var> raw_cond) const {
  if (t.cols(x) != cfg_.dim) throw std::invalid_argument("transform forward: dimension mismatch");
  if (cfg_.cond_dim > 0 && !raw_cond) throw std::invalid_argument("transform forward: condition required");
  std::optional<Var> emb;
  if (raw_cond && cfg_.cond_dim > 0) emb = embed_cond_t(t, *raw_cond);
  Var logdet = t.constant(Matrix::Zero(t.rows(x), 1));
  for (const auto& layer : layers_) {
    auto [y, ld] = layer.forward_t(t, x, emb);
    x = y;
    logdet = t.add(logdet, ld);
  }
  return {x, logdet};
}

std::pair<Var, Var> CompositeTransform::inverse_t(Tape& t, Var y,
                                                  std::optional<Var> raw_cond) const {
  if (t.cols(y) != cfg_.dim) throw std::invalid_argument("transform inverse: dimension mismatch");
  if (cfg_.cond_dim > 0 && !raw_cond) throw std::invalid_argument("transform inverse: condition required");
  std::optional<Var> emb;
  if (raw_cond && cfg_.cond_dim > 0) emb = embed_cond_t(t, *raw_cond);
  Var logdet = t.constant(Matrix::Zero(t.rows(y), 1));
  for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
    auto [x, ld] = layers_[static_cast<std::size_t>(l)].inverse_t(t, y, emb);
    logdet = t.add(logdet, ld);
    y = x;
  }
  return {y, logdet};
}

namespace {

// Grad-free evaluation in bounded-memory chunks (a tape node is created per
// op per chunk, so chunk size bounds the peak footprint).
constexpr Eigen::Index kEvalChunkRows = 1024;

std::pair<Matrix, Vector> chunked_eval(
    const Matrix& input, const Matrix* cond,
    const std::function<std::pair<Var, Var>(Tape&, Var, std::optional<Var>)>& body) {
  Matrix out(input.rows(), input.cols());
  Vector logdet(input.rows());
  for (Eigen::Index start = 0; start < input.rows(); start += kEvalChunkRows) {
    const Eigen::Index len = std::min(kEvalChunkRows, input.rows() - start);
    Tape t;
    std::optional<Var> c;
    if (cond != nullptr) c = t.constant(cond->middleRows(start, len));
    auto [o, ld] = body(t, t.constant(input.middleRows(start, len)), c);
    out.middleRows(start, len) = t.value(o);
    logdet.segment(start, len) = t.value(ld).col(0);
  }
  return {std::move(out), std::move(logdet)};
}

}  // namespace

std::pair<Matrix, Vector> CompositeTransform::forward(const Matrix& x, const Matrix* cond) const {
  return chunked_eval(x, cond, [this](Tape& t, Var v, std::optional<Var> c) {
    return forward_t(t, v, c);
  });
}

std::pair<Matrix, Vector> CompositeTransform::inverse(const Matrix& y, const Matrix* cond) const {
  return chunked_eval(y, cond, [this](Tape& t, Var v, std::optional<Var> c) {
    return inverse_t(t, v, c);
  });
}

}  // namespace f4f
