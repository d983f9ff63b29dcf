#include "f4f/distributions.hpp"

#include <cmath>

#include "f4f/rng.hpp"

namespace f4f {

namespace {
constexpr double kLogTwoPi = 1.8378770664093454836;
}

Vector Density::log_prob(const Matrix& x, const Matrix* cond) const {
  // Chunked so tape memory stays bounded on large evaluation sets.
  constexpr Eigen::Index kChunk = 1024;
  Vector out(x.rows());
  for (Eigen::Index start = 0; start < x.rows(); start += kChunk) {
    const Eigen::Index len = std::min(kChunk, x.rows() - start);
    Tape t;
    std::optional<Var> c;
    if (cond != nullptr) c = t.constant(cond->middleRows(start, len));
    Var lp = log_prob_t(t, t.constant(x.middleRows(start, len)), c);
    out.segment(start, len) = t.value(lp).col(0);
  }
  return out;
}

double normal_log_prob(const Vector& z) {
  if (!z.allFinite()) throw NumericalError("normal_log_prob: non-finite input");
  return -0.5 * static_cast<double>(z.size()) * kLogTwoPi - 0.5 * z.squaredNorm();
}

StandardNormal::StandardNormal(int dim) : dim_(dim) {
  if (dim < 1) throw std::invalid_argument("StandardNormal: dim must be positive");
}

Var StandardNormal::log_prob_t(Tape& t, Var x, std::optional<Var>) const {
  if (t.cols(x) != dim_) throw std::invalid_argument("StandardNormal: dimension mismatch");
  if (!t.value(x).allFinite()) throw NumericalError("StandardNormal: non-finite input");
  Var sq = t.rowwise_sum(t.square(x));
  return t.add_scalar(t.scale(sq, -0.5), -0.5 * dim_ * kLogTwoPi);
}

Matrix StandardNormal::sample(int n, const Matrix*, std::uint64_t seed) const {
  if (n <= 0) throw std::invalid_argument("StandardNormal: sample count must be positive");
  RandomStream rs(seed);
  return rs.normal_matrix(n, dim_);
}

FlowDensity::FlowDensity(CompositeTransform transform,
                         std::shared_ptr<ParameterStore> store,
                         std::shared_ptr<const Density> base)
    : transform_(std::move(transform)), store_(std::move(store)), base_(std::move(base)) {
  if (base_->dim() != transform_.config().dim) {
    throw std::invalid_argument("FlowDensity: base dimension mismatch");
  }
}

bool FlowDensity::conditional() const {
  return transform_.config().cond_dim > 0 || base_->conditional();
}

Var FlowDensity::log_prob_t(Tape& t, Var x, std::optional<Var> cond) const {
  auto [z, logdet] = transform_.inverse_t(t, x, cond);
  // The condition reaches the base density as well when that density is
  // itself conditional.
  Var base_lp = base_->log_prob_t(t, z, base_->conditional() ? cond : std::nullopt);
  return t.add(base_lp, logdet);
}

Matrix FlowDensity::sample(int n, const Matrix* cond, std::uint64_t seed) const {
  if (n <= 0) throw std::invalid_argument("FlowDensity: sample count must be positive");
  const Matrix z = base_->sample(n, cond, derive_seed(seed, "flow.base"));
  auto [x, logdet] = transform_.forward(z, cond);
  (void)logdet;
  return x;
}

}  // namespace f4f
