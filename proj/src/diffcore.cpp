#include "f4f/diffcore.hpp"

#include <algorithm>
#include <cmath>

namespace f4f {

namespace {

double stable_softplus(double t) {
  if (t > 30.0) return t;
  return std::log1p(std::exp(t));
}

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// ---------------------------------------------------------------------------
// Rational-quadratic spline core. Bin k spans [X_k, X_{k+1}] with width w_k,
// height h_k, slope s_k = h_k / w_k and knot derivatives dl = d_k, dr = d_{k+1}:
//
//   xi = (x - X_k) / w_k,   th = xi (1 - xi)
//   Q  = s + (dl + dr - 2s) th
//   y  = Y_k + h (s xi^2 + dl th) / Q
//   dy/dx = s^2 (dr xi^2 + 2 s th + dl (1 - xi)^2) / Q^2
//
// All partials of y and L = log(dy/dx) w.r.t. (x, w_k, h_k, X_k, dl, dr) are
// computed here once and reused by both spline ops (the inverse op maps them
// through the implicit function theorem).
// ---------------------------------------------------------------------------

struct RqsEval {
  double y{0.0};
  double logdet{0.0};
  RqsRowCtx ctx;
};

RqsEval rqs_eval_forward(double x, const double* w, const double* h,
                         const double* d, int nbins, double tail) {
  RqsEval out;
  out.ctx.x = x;
  if (!(x > -tail && x < tail)) {
    out.y = x;
    out.logdet = 0.0;
    out.ctx.in_range = false;
    out.ctx.deriv = 1.0;
    return out;
  }

  int k = 0;
  double xk = -tail;
  for (; k < nbins - 1; ++k) {
    if (x < xk + w[k]) break;
    xk += w[k];
  }
  double yk = -tail;
  for (int j = 0; j < k; ++j) yk += h[j];

  const double wk = w[k];
  const double hk = h[k];
  const double s = hk / wk;
  const double dl = d[k];
  const double dr = d[k + 1];

  double xi = (x - xk) / wk;
  xi = std::clamp(xi, 0.0, 1.0);
  const double th = xi * (1.0 - xi);
  const double dth = 1.0 - 2.0 * xi;

  const double coef = dl + dr - 2.0 * s;
  const double q = s + coef * th;
  const double a = s * xi * xi + dl * th;
  const double m = dr * xi * xi + 2.0 * s * th + dl * (1.0 - xi) * (1.0 - xi);

  out.y = yk + hk * a / q;
  out.logdet = 2.0 * std::log(s) + std::log(m) - 2.0 * std::log(q);

  // Partials w.r.t. the local variables (xi, s, dl, dr, h).
  const double a_xi = 2.0 * s * xi + dl * dth;
  const double q_xi = coef * dth;
  const double q2 = q * q;
  const double y_xi = hk * (a_xi * q - a * q_xi) / q2;
  const double y_s = hk * (xi * xi * q - a * (1.0 - 2.0 * th)) / q2;
  const double y_dl = hk * th * (q - a) / q2;
  const double y_dr = -hk * a * th / q2;
  const double y_h_direct = a / q;

  const double m_xi = 2.0 * dr * xi + 2.0 * s * dth - 2.0 * dl * (1.0 - xi);
  const double l_xi = m_xi / m - 2.0 * q_xi / q;
  const double l_s = 2.0 / s + 2.0 * th / m - 2.0 * (1.0 - 2.0 * th) / q;
  const double l_dl = (1.0 - xi) * (1.0 - xi) / m - 2.0 * th / q;
  const double l_dr = xi * xi / m - 2.0 * th / q;

  // Chain through xi = (x - X_k)/w_k and s = h_k/w_k.
  RqsRowCtx& c = out.ctx;
  c.bin = k;
  c.in_range = true;
  c.deriv = s * s * m / q2;
  c.y_x = y_xi / wk;
  c.y_xk = -y_xi / wk;
  c.y_w = -(y_xi * xi + y_s * s) / wk;
  c.y_h = y_s / wk + y_h_direct;
  c.y_dl = y_dl;
  c.y_dr = y_dr;
  c.l_x = l_xi / wk;
  c.l_xk = -l_xi / wk;
  c.l_w = -(l_xi * xi + l_s * s) / wk;
  c.l_h = l_s / wk;
  c.l_dl = l_dl;
  c.l_dr = l_dr;
  return out;
}

// Closed-form inverse of the spline on one row. Returns x with f(x) = y.
double rqs_solve_x(double y, const double* w, const double* h, const double* d,
                   int nbins, double tail) {
  if (!(y > -tail && y < tail)) return y;

  int k = 0;
  double yk = -tail;
  for (; k < nbins - 1; ++k) {
    if (y < yk + h[k]) break;
    yk += h[k];
  }
  double xk = -tail;
  for (int j = 0; j < k; ++j) xk += w[j];

  const double hk = h[k];
  const double s = hk / w[k];
  const double dl = d[k];
  const double dr = d[k + 1];
  const double coef = dl + dr - 2.0 * s;
  const double dy = y - yk;

  const double qa = dy * coef + hk * (s - dl);
  const double qb = hk * dl - dy * coef;
  const double qc = -s * dy;
  const double disc = std::max(qb * qb - 4.0 * qa * qc, 0.0);
  const double xi = 2.0 * qc / (-qb - std::sqrt(disc));
  return xk + std::clamp(xi, 0.0, 1.0) * w[k];
}

}  // namespace

// --------------------------- ParameterStore --------------------------------

int ParameterStore::add(std::string name, Matrix value) {
  if (lookup_.count(name) != 0) {
    throw std::invalid_argument("ParameterStore: duplicate parameter name: " + name);
  }
  if (!value.allFinite()) {
    throw NumericalError("ParameterStore: non-finite initial value for " + name);
  }
  const int idx = static_cast<int>(values_.size());
  lookup_.emplace(name, idx);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return idx;
}

int ParameterStore::index_of(std::string_view name) const {
  auto it = lookup_.find(std::string(name));
  return it == lookup_.end() ? -1 : it->second;
}

long ParameterStore::total_elements() const {
  long n = 0;
  for (const auto& v : values_) n += static_cast<long>(v.size());
  return n;
}

bool ParameterStore::all_finite() const {
  for (const auto& v : values_) {
    if (!v.allFinite()) return false;
  }
  return true;
}

std::uint64_t ParameterStore::content_hash() const {
  std::uint64_t hash = 0xCBF29CE484222325ull;
  auto mix = [&hash](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash ^= p[i];
      hash *= 0x100000001B3ull;
    }
  };
  for (int i = 0; i < count(); ++i) {
    mix(names_[static_cast<std::size_t>(i)].data(), names_[static_cast<std::size_t>(i)].size());
    const auto& v = values_[static_cast<std::size_t>(i)];
    const std::int64_t r = v.rows(), c = v.cols();
    mix(&r, sizeof r);
    mix(&c, sizeof c);
    mix(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
  }
  return hash;
}

// ----------------------------- GradientSet ---------------------------------

GradientSet GradientSet::zeros_like(const ParameterStore& store) {
  GradientSet g;
  g.grads.reserve(static_cast<std::size_t>(store.count()));
  for (int i = 0; i < store.count(); ++i) {
    g.grads.push_back(Matrix::Zero(store.value(i).rows(), store.value(i).cols()));
  }
  return g;
}

double GradientSet::global_norm() const {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

bool GradientSet::all_finite() const {
  for (const auto& g : grads) {
    if (!g.allFinite()) return false;
  }
  return true;
}

GradientSet clip_grad_norm(GradientSet g, double max_norm) {
  clip_grad_norm_inplace(g, max_norm);
  return g;
}

double clip_grad_norm_inplace(GradientSet& g, double max_norm) {
  if (!(max_norm > 0.0)) {
    throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  }
  if (!g.all_finite()) {
    throw NumericalError("clip_grad_norm: non-finite gradients");
  }
  const double norm = g.global_norm();
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& m : g.grads) m *= f;
  }
  return norm;
}

// -------------------------------- Tape -------------------------------------

const char* Tape::op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kParam: return "parameter";
    case Op::kMatmul: return "matmul";
    case Op::kMatmulMasked: return "masked matmul";
    case Op::kAddRowvec: return "bias add";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add scalar";
    case Op::kTanh: return "tanh";
    case Op::kRelu: return "relu";
    case Op::kSoftplus: return "softplus";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSquare: return "square";
    case Op::kAbs: return "abs";
    case Op::kSoftmax: return "softmax";
    case Op::kSliceCols: return "column slice";
    case Op::kConcatCols: return "column concat";
    case Op::kConcatRows: return "row concat";
    case Op::kPermuteCols: return "column permute";
    case Op::kGatherRows: return "row gather";
    case Op::kRowwiseSum: return "rowwise sum";
    case Op::kSumAll: return "sum";
    case Op::kMeanAll: return "mean";
    case Op::kRqsForward: return "rq spline forward";
    case Op::kRqsInverse: return "rq spline inverse";
  }
  return "?";
}

int Tape::push(Node n) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(n));
  return id;
}

const Matrix& Tape::value(Var v) const {
  return nodes_[static_cast<std::size_t>(v.id)].value;
}

Var Tape::constant(Matrix v) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(v);
  return {push(std::move(n))};
}

Var Tape::param(const ParameterStore& store, int idx) {
  const void* key = static_cast<const void*>(&store.value(idx));
  if (auto it = param_leaves_.find(key); it != param_leaves_.end()) {
    return {it->second};
  }
  const bool trainable = trainable_store_ == &store;
  Node n;
  n.op = Op::kParam;
  n.value = store.value(idx);
  n.param_idx = idx;
  n.param_trainable = trainable;
  n.needs_grad = trainable;
  const int id = push(std::move(n));
  param_leaves_.emplace(key, id);
  return {id};
}

Var Tape::param(const ParameterStore& store, std::string_view name) {
  const int idx = store.index_of(name);
  if (idx < 0) throw std::invalid_argument("Tape: no such parameter: " + std::string(name));
  return param(store, idx);
}

Var Tape::matmul(Var x, Var w) {
  const Matrix& xv = value(x);
  const Matrix& wv = value(w);
  if (xv.cols() != wv.cols()) throw std::invalid_argument("matmul: dimension mismatch");
  Node n;
  n.op = Op::kMatmul;
  n.a = x.id;
  n.b = w.id;
  n.value.noalias() = xv * wv.transpose();
  n.needs_grad = nodes_[x.id].needs_grad || nodes_[w.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::matmul_masked(Var x, Var w, const Matrix* mask) {
  const Matrix& xv = value(x);
  const Matrix& wv = value(w);
  if (xv.cols() != wv.cols()) throw std::invalid_argument("matmul_masked: dimension mismatch");
  if (mask->rows() != wv.rows() || mask->cols() != wv.cols()) {
    throw std::invalid_argument("matmul_masked: mask shape mismatch");
  }
  Node n;
  n.op = Op::kMatmulMasked;
  n.a = x.id;
  n.b = w.id;
  n.mask = mask;
  n.value.noalias() = xv * wv.cwiseProduct(*mask).transpose();
  n.needs_grad = nodes_[x.id].needs_grad || nodes_[w.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::add_rowvec(Var x, Var b) {
  const Matrix& xv = value(x);
  const Matrix& bv = value(b);
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw std::invalid_argument("add_rowvec: bias shape mismatch");
  }
  Node n;
  n.op = Op::kAddRowvec;
  n.a = x.id;
  n.b = b.id;
  n.value = xv.rowwise() + bv.row(0);
  n.needs_grad = nodes_[x.id].needs_grad || nodes_[b.id].needs_grad;
  return {push(std::move(n))};
}

namespace {
void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
  }
}
}  // namespace

Var Tape::add(Var a, Var b) {
  check_same_shape(value(a), value(b), "add");
  Node n;
  n.op = Op::kAdd;
  n.a = a.id;
  n.b = b.id;
  n.value = value(a) + value(b);
  n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(value(a), value(b), "sub");
  Node n;
  n.op = Op::kSub;
  n.a = a.id;
  n.b = b.id;
  n.value = value(a) - value(b);
  n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(value(a), value(b), "mul");
  Node n;
  n.op = Op::kMul;
  n.a = a.id;
  n.b = b.id;
  n.value = value(a).cwiseProduct(value(b));
  n.needs_grad = nodes_[a.id].needs_grad || nodes_[b.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::neg(Var a) { return scale(a, -1.0); }

Var Tape::scale(Var a, double s) {
  Node n;
  n.op = Op::kScale;
  n.a = a.id;
  n.s0 = s;
  n.value = value(a) * s;
  n.needs_grad = nodes_[a.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::add_scalar(Var a, double s) {
  Node n;
  n.op = Op::kAddScalar;
  n.a = a.id;
  n.s0 = s;
  n.value = value(a).array() + s;
  n.needs_grad = nodes_[a.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::tanh_(Var a) {
  Node n;
  n.op = Op::kTanh;
  n.a = a.id;
  // tanh(x) = (e^{2x} - 1) / (e^{2x} + 1); Eigen vectorizes exp for doubles
  // but not tanh. The argument clamp keeps exp in range (tanh is +-1 to
  // machine precision beyond |x| = 20).
  {
    const auto e = (2.0 * value(a).array()).min(40.0).max(-40.0).exp();
    n.value = ((e - 1.0) / (e + 1.0)).matrix();
  }
  n.needs_grad = nodes_[a.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::relu(Var a) {
  Node n;
  n.op = Op::kRelu;
  n.a = a.id;
  n.value = value(a).cwiseMax(0.0);
  n.needs_grad = nodes_[a.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::softplus(Var a, double shift, double offset) {
  Node n;
  n.op = Op::kSoftplus;
  n.a = a.id;
  n.s0 = shift;
  n.s1 = offset;
  n.value = value(a).unaryExpr([shift, offset](double t) {
    return offset + stable_softplus(t + shift);
  });
  n.needs_grad = nodes_[a.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::exp_(Var a) {
  Node n;
  n.op = Op::kExp;
  n.a = a.id;
  n.value = value(a).array().exp();
  n.needs_grad = nodes_[a.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::log_(Var a) {
  Node n;
  n.op = Op::kLog;
  n.a = a.id;
  n.value = value(a).array().log();
  n.needs_grad = nodes_[a.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::square(Var a) {
  Node n;
  n.op = Op::kSquare;
  n.a = a.id;
  n.value = value(a).array().square();
  n.needs_grad = nodes_[a.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::abs_(Var a) {
  Node n;
  n.op = Op::kAbs;
  n.a = a.id;
  n.value = value(a).array().abs();
  n.needs_grad = nodes_[a.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::softmax_cols(Var a) {
  const Matrix& av = value(a);
  Node n;
  n.op = Op::kSoftmax;
  n.a = a.id;
  n.value.resize(av.rows(), av.cols());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    const double mx = av.row(i).maxCoeff();
    Eigen::RowVectorXd e = (av.row(i).array() - mx).exp();
    n.value.row(i) = e / e.sum();
  }
  n.needs_grad = nodes_[a.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::slice_cols(Var a, int start, int len) {
  const Matrix& av = value(a);
  if (start < 0 || len < 0 || start + len > av.cols()) {
    throw std::invalid_argument("slice_cols: out of range");
  }
  Node n;
  n.op = Op::kSliceCols;
  n.a = a.id;
  n.i0 = start;
  n.i1 = len;
  n.value = av.middleCols(start, len);
  n.needs_grad = nodes_[a.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Eigen::Index rows = value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += value(p).cols();
  }
  Node n;
  n.op = Op::kConcatCols;
  n.value.resize(rows, cols);
  Eigen::Index off = 0;
  for (Var p : parts) {
    n.indices.push_back(p.id);
    n.value.middleCols(off, value(p).cols()) = value(p);
    off += value(p).cols();
    n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
  }
  return {push(std::move(n))};
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Eigen::Index cols = value(parts[0]).cols();
  Eigen::Index rows = 0;
  for (Var p : parts) {
    if (value(p).cols() != cols) throw std::invalid_argument("concat_rows: col mismatch");
    rows += value(p).rows();
  }
  Node n;
  n.op = Op::kConcatRows;
  n.value.resize(rows, cols);
  Eigen::Index off = 0;
  for (Var p : parts) {
    n.indices.push_back(p.id);
    n.value.middleRows(off, value(p).rows()) = value(p);
    off += value(p).rows();
    n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
  }
  return {push(std::move(n))};
}

Var Tape::permute_cols(Var a, std::vector<int> perm) {
  const Matrix& av = value(a);
  if (static_cast<Eigen::Index>(perm.size()) != av.cols()) {
    throw std::invalid_argument("permute_cols: size mismatch");
  }
  Node n;
  n.op = Op::kPermuteCols;
  n.a = a.id;
  n.value.resize(av.rows(), av.cols());
  for (std::size_t j = 0; j < perm.size(); ++j) {
    n.value.col(static_cast<Eigen::Index>(j)) = av.col(perm[j]);
  }
  n.indices = std::move(perm);
  n.needs_grad = nodes_[a.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::gather_rows(Var a, std::vector<int> rows) {
  const Matrix& av = value(a);
  Node n;
  n.op = Op::kGatherRows;
  n.a = a.id;
  n.value.resize(static_cast<Eigen::Index>(rows.size()), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= av.rows()) throw std::invalid_argument("gather_rows: out of range");
    n.value.row(static_cast<Eigen::Index>(i)) = av.row(rows[i]);
  }
  n.indices = std::move(rows);
  n.needs_grad = nodes_[a.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::rowwise_sum(Var a) {
  Node n;
  n.op = Op::kRowwiseSum;
  n.a = a.id;
  n.value = value(a).rowwise().sum();
  n.needs_grad = nodes_[a.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::sum_all(Var a) {
  Node n;
  n.op = Op::kSumAll;
  n.a = a.id;
  n.value = Matrix::Constant(1, 1, value(a).sum());
  n.needs_grad = nodes_[a.id].needs_grad;
  return {push(std::move(n))};
}

Var Tape::mean_all(Var a) {
  Node n;
  n.op = Op::kMeanAll;
  n.a = a.id;
  n.value = Matrix::Constant(1, 1, value(a).mean());
  n.needs_grad = nodes_[a.id].needs_grad;
  return {push(std::move(n))};
}

namespace {
void check_rqs_shapes(const Matrix& x, const Matrix& w, const Matrix& h,
                      const Matrix& d) {
  const Eigen::Index n = x.rows();
  const Eigen::Index k = w.cols();
  if (x.cols() != 1) throw std::invalid_argument("rqs: input must be a column");
  if (w.rows() != n || h.rows() != n || d.rows() != n) {
    throw std::invalid_argument("rqs: batch size mismatch");
  }
  if (h.cols() != k || d.cols() != k + 1) {
    throw std::invalid_argument("rqs: parameter width mismatch");
  }
  if ((w.array() <= 0.0).any() || (h.array() <= 0.0).any() || (d.array() <= 0.0).any()) {
    throw std::invalid_argument("rqs: bin widths, heights and derivatives must be positive");
  }
}
}  // namespace

std::pair<Var, Var> Tape::rqs_forward(Var x, Var widths, Var heights, Var derivs,
                                      double tail_bound) {
  const Matrix& xv = value(x);
  const Matrix& wv = value(widths);
  const Matrix& hv = value(heights);
  const Matrix& dv = value(derivs);
  check_rqs_shapes(xv, wv, hv, dv);
  const int n = static_cast<int>(xv.rows());
  const int nbins = static_cast<int>(wv.cols());

  Node node;
  node.op = Op::kRqsForward;
  node.a = x.id;
  node.b = widths.id;
  node.c = heights.id;
  node.d = derivs.id;
  node.s0 = tail_bound;
  node.value.resize(n, 2);
  node.rqs.resize(static_cast<std::size_t>(n));
  // Rows are column-major in Eigen; copy per-row parameter slices once.
  std::vector<double> wrow(static_cast<std::size_t>(nbins));
  std::vector<double> hrow(static_cast<std::size_t>(nbins));
  std::vector<double> drow(static_cast<std::size_t>(nbins + 1));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < nbins; ++j) {
      wrow[static_cast<std::size_t>(j)] = wv(i, j);
      hrow[static_cast<std::size_t>(j)] = hv(i, j);
    }
    for (int j = 0; j <= nbins; ++j) drow[static_cast<std::size_t>(j)] = dv(i, j);
    RqsEval e = rqs_eval_forward(xv(i, 0), wrow.data(), hrow.data(), drow.data(),
                                 nbins, tail_bound);
    node.value(i, 0) = e.y;
    node.value(i, 1) = e.logdet;
    node.rqs[static_cast<std::size_t>(i)] = e.ctx;
  }
  node.needs_grad = nodes_[x.id].needs_grad || nodes_[widths.id].needs_grad ||
                    nodes_[heights.id].needs_grad || nodes_[derivs.id].needs_grad;
  Var pair{push(std::move(node))};
  return {slice_cols(pair, 0, 1), slice_cols(pair, 1, 1)};
}

std::pair<Var, Var> Tape::rqs_inverse(Var y, Var widths, Var heights, Var derivs,
                                      double tail_bound) {
  const Matrix& yv = value(y);
  const Matrix& wv = value(widths);
  const Matrix& hv = value(heights);
  const Matrix& dv = value(derivs);
  check_rqs_shapes(yv, wv, hv, dv);
  const int n = static_cast<int>(yv.rows());
  const int nbins = static_cast<int>(wv.cols());

  Node node;
  node.op = Op::kRqsInverse;
  node.a = y.id;
  node.b = widths.id;
  node.c = heights.id;
  node.d = derivs.id;
  node.s0 = tail_bound;
  node.value.resize(n, 2);
  node.rqs.resize(static_cast<std::size_t>(n));
  std::vector<double> wrow(static_cast<std::size_t>(nbins));
  std::vector<double> hrow(static_cast<std::size_t>(nbins));
  std::vector<double> drow(static_cast<std::size_t>(nbins + 1));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < nbins; ++j) {
      wrow[static_cast<std::size_t>(j)] = wv(i, j);
      hrow[static_cast<std::size_t>(j)] = hv(i, j);
    }
    for (int j = 0; j <= nbins; ++j) drow[static_cast<std::size_t>(j)] = dv(i, j);
    const double x = rqs_solve_x(yv(i, 0), wrow.data(), hrow.data(), drow.data(),
                                 nbins, tail_bound);
    RqsEval e = rqs_eval_forward(x, wrow.data(), hrow.data(), drow.data(),
                                 nbins, tail_bound);
    node.value(i, 0) = x;
    node.value(i, 1) = -e.logdet;
    node.rqs[static_cast<std::size_t>(i)] = e.ctx;
  }
  node.needs_grad = nodes_[y.id].needs_grad || nodes_[widths.id].needs_grad ||
                    nodes_[heights.id].needs_grad || nodes_[derivs.id].needs_grad;
  Var pair{push(std::move(node))};
  return {slice_cols(pair, 0, 1), slice_cols(pair, 1, 1)};
}

// ------------------------------ backward -----------------------------------

Matrix& Tape::grad_buffer(int id) {
  if (!has_grad_[static_cast<std::size_t>(id)]) {
    grads_[static_cast<std::size_t>(id)] =
        Matrix::Zero(nodes_[static_cast<std::size_t>(id)].value.rows(),
                     nodes_[static_cast<std::size_t>(id)].value.cols());
    has_grad_[static_cast<std::size_t>(id)] = 1;
  }
  return grads_[static_cast<std::size_t>(id)];
}

void Tape::accumulate(int id, const Matrix& g) {
  if (id < 0) return;
  if (!nodes_[static_cast<std::size_t>(id)].needs_grad) return;
  grad_buffer(id) += g;
}

void Tape::backward_node(int id) {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  const Matrix& g = grads_[static_cast<std::size_t>(id)];
  auto in = [this](int i) -> const Matrix& { return nodes_[static_cast<std::size_t>(i)].value; };
  auto wants = [this](int i) { return i >= 0 && nodes_[static_cast<std::size_t>(i)].needs_grad; };

  switch (n.op) {
    case Op::kConstant:
    case Op::kParam:
      break;
    case Op::kMatmul:
      if (wants(n.a)) grad_buffer(n.a).noalias() += g * in(n.b);
      if (wants(n.b)) grad_buffer(n.b).noalias() += g.transpose() * in(n.a);
      break;
    case Op::kMatmulMasked:
      if (wants(n.a)) grad_buffer(n.a).noalias() += g * in(n.b).cwiseProduct(*n.mask);
      if (wants(n.b)) grad_buffer(n.b) += (g.transpose() * in(n.a)).cwiseProduct(*n.mask);
      break;
    case Op::kAddRowvec:
      accumulate(n.a, g);
      if (wants(n.b)) grad_buffer(n.b) += g.colwise().sum();
      break;
    case Op::kAdd:
      accumulate(n.a, g);
      accumulate(n.b, g);
      break;
    case Op::kSub:
      accumulate(n.a, g);
      if (wants(n.b)) grad_buffer(n.b) -= g;
      break;
    case Op::kMul:
      if (wants(n.a)) grad_buffer(n.a) += g.cwiseProduct(in(n.b));
      if (wants(n.b)) grad_buffer(n.b) += g.cwiseProduct(in(n.a));
      break;
    case Op::kScale:
      if (wants(n.a)) grad_buffer(n.a) += g * n.s0;
      break;
    case Op::kAddScalar:
      accumulate(n.a, g);
      break;
    case Op::kTanh:
      if (wants(n.a)) grad_buffer(n.a) += g.cwiseProduct((1.0 - n.value.array().square()).matrix());
      break;
    case Op::kRelu:
      if (wants(n.a)) {
        grad_buffer(n.a) += g.cwiseProduct(
            (in(n.a).array() > 0.0).cast<double>().matrix());
      }
      break;
    case Op::kSoftplus:
      if (wants(n.a)) {
        const double shift = n.s0;
        grad_buffer(n.a) += g.cwiseProduct(
            in(n.a).unaryExpr([shift](double t) { return sigmoid(t + shift); }));
      }
      break;
    case Op::kExp:
      if (wants(n.a)) grad_buffer(n.a) += g.cwiseProduct(n.value);
      break;
    case Op::kLog:
      if (wants(n.a)) grad_buffer(n.a) += g.cwiseQuotient(in(n.a));
      break;
    case Op::kSquare:
      if (wants(n.a)) grad_buffer(n.a) += 2.0 * g.cwiseProduct(in(n.a));
      break;
    case Op::kAbs:
      if (wants(n.a)) {
        grad_buffer(n.a) += g.cwiseProduct(in(n.a).unaryExpr([](double t) {
          return t > 0.0 ? 1.0 : (t < 0.0 ? -1.0 : 0.0);
        }));
      }
      break;
    case Op::kSoftmax:
      if (wants(n.a)) {
        Matrix& dst = grad_buffer(n.a);
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          const double dot = g.row(i).dot(n.value.row(i));
          dst.row(i) += n.value.row(i).cwiseProduct(g.row(i)) - dot * n.value.row(i);
        }
      }
      break;
    case Op::kSliceCols:
      if (wants(n.a)) grad_buffer(n.a).middleCols(n.i0, n.i1) += g;
      break;
    case Op::kConcatCols: {
      Eigen::Index off = 0;
      for (int pid : n.indices) {
        const Eigen::Index c = in(pid).cols();
        if (wants(pid)) grad_buffer(pid) += g.middleCols(off, c);
        off += c;
      }
      break;
    }
    case Op::kConcatRows: {
      Eigen::Index off = 0;
      for (int pid : n.indices) {
        const Eigen::Index r = in(pid).rows();
        if (wants(pid)) grad_buffer(pid) += g.middleRows(off, r);
        off += r;
      }
      break;
    }
    case Op::kPermuteCols:
      if (wants(n.a)) {
        Matrix& dst = grad_buffer(n.a);
        for (std::size_t j = 0; j < n.indices.size(); ++j) {
          dst.col(n.indices[j]) += g.col(static_cast<Eigen::Index>(j));
        }
      }
      break;
    case Op::kGatherRows:
      if (wants(n.a)) {
        Matrix& dst = grad_buffer(n.a);
        for (std::size_t i = 0; i < n.indices.size(); ++i) {
          dst.row(n.indices[i]) += g.row(static_cast<Eigen::Index>(i));
        }
      }
      break;
    case Op::kRowwiseSum:
      if (wants(n.a)) grad_buffer(n.a).colwise() += g.col(0);
      break;
    case Op::kSumAll:
      if (wants(n.a)) grad_buffer(n.a).array() += g(0, 0);
      break;
    case Op::kMeanAll:
      if (wants(n.a)) {
        grad_buffer(n.a).array() += g(0, 0) / static_cast<double>(in(n.a).size());
      }
      break;
    case Op::kRqsForward: {
      const bool wx = wants(n.a), ww = wants(n.b), wh = wants(n.c), wd = wants(n.d);
      Matrix* gx = wx ? &grad_buffer(n.a) : nullptr;
      Matrix* gw = ww ? &grad_buffer(n.b) : nullptr;
      Matrix* gh = wh ? &grad_buffer(n.c) : nullptr;
      Matrix* gd = wd ? &grad_buffer(n.d) : nullptr;
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const double gy = g(i, 0);
        const double gl = g(i, 1);
        const RqsRowCtx& c = n.rqs[static_cast<std::size_t>(i)];
        if (!c.in_range) {
          if (gx) (*gx)(i, 0) += gy;
          continue;
        }
        if (gx) (*gx)(i, 0) += gy * c.y_x + gl * c.l_x;
        if (gw) {
          (*gw)(i, c.bin) += gy * c.y_w + gl * c.l_w;
          const double gk = gy * c.y_xk + gl * c.l_xk;
          for (int j = 0; j < c.bin; ++j) (*gw)(i, j) += gk;
        }
        if (gh) {
          (*gh)(i, c.bin) += gy * c.y_h + gl * c.l_h;
          for (int j = 0; j < c.bin; ++j) (*gh)(i, j) += gy;
        }
        if (gd) {
          (*gd)(i, c.bin) += gy * c.y_dl + gl * c.l_dl;
          (*gd)(i, c.bin + 1) += gy * c.y_dr + gl * c.l_dr;
        }
      }
      break;
    }
    case Op::kRqsInverse: {
      const bool wy = wants(n.a), ww = wants(n.b), wh = wants(n.c), wd = wants(n.d);
      Matrix* gy = wy ? &grad_buffer(n.a) : nullptr;
      Matrix* gw = ww ? &grad_buffer(n.b) : nullptr;
      Matrix* gh = wh ? &grad_buffer(n.c) : nullptr;
      Matrix* gd = wd ? &grad_buffer(n.d) : nullptr;
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const double gx_up = g(i, 0);
        const double gl_up = g(i, 1);
        const RqsRowCtx& c = n.rqs[static_cast<std::size_t>(i)];
        if (!c.in_range) {
          if (gy) (*gy)(i, 0) += gx_up;
          continue;
        }
        // Implicit-function transport of the forward partials at x.
        const double u = (gl_up * c.l_x - gx_up) / c.deriv;
        if (gy) (*gy)(i, 0) += -u;
        if (gw) {
          (*gw)(i, c.bin) += u * c.y_w - gl_up * c.l_w;
          const double gk = u * c.y_xk - gl_up * c.l_xk;
          for (int j = 0; j < c.bin; ++j) (*gw)(i, j) += gk;
        }
        if (gh) {
          (*gh)(i, c.bin) += u * c.y_h - gl_up * c.l_h;
          for (int j = 0; j < c.bin; ++j) (*gh)(i, j) += u;
        }
        if (gd) {
          (*gd)(i, c.bin) += u * c.y_dl - gl_up * c.l_dl;
          (*gd)(i, c.bin + 1) += u * c.y_dr - gl_up * c.l_dr;
        }
      }
      break;
    }
  }
}

GradientSet Tape::backward(Var loss) {
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw std::invalid_argument("backward: loss must be scalar (1x1)");
  }
  if (!std::isfinite(lv(0, 0))) {
    // Name the eldest op that first produced non-finite values.
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!nodes_[i].value.allFinite()) {
        throw NumericalError(std::string("non-finite loss; first non-finite value produced by op '") +
                             op_name(nodes_[i].op) + "' (node " + std::to_string(i) + ")");
      }
    }
    throw NumericalError("non-finite loss");
  }

  grads_.assign(nodes_.size(), Matrix());
  has_grad_.assign(nodes_.size(), 0);
  grad_buffer(loss.id)(0, 0) = 1.0;

  for (int id = loss.id; id >= 0; --id) {
    if (!has_grad_[static_cast<std::size_t>(id)]) continue;
    if (!nodes_[static_cast<std::size_t>(id)].needs_grad) continue;
    backward_node(id);
  }

  GradientSet out;
  if (trainable_store_ != nullptr) {
    out = GradientSet::zeros_like(*trainable_store_);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.op == Op::kParam && n.param_trainable && has_grad_[i]) {
        out.grads[static_cast<std::size_t>(n.param_idx)] += grads_[i];
      }
    }
  }
  return out;
}

GradientSet grad(const ParameterStore& params,
                 const std::function<Var(Tape&)>& build) {
  Tape tape(&params);
  Var loss = build(tape);
  GradientSet g = tape.backward(loss);
  if (g.grads.empty()) g = GradientSet::zeros_like(params);
  return g;
}

}  // namespace f4f
