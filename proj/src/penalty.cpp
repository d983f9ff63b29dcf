#include "f4f/penalty.hpp"

namespace f4f {

void PenaltyConfig::validate() const {
  if (l1_weight < 0.0) throw std::invalid_argument("penalty.l1_weight must be non-negative");
}

double l1_penalty(const Matrix& x, const Matrix& y, double weight) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw std::invalid_argument("l1_penalty: shape mismatch");
  }
  if (weight < 0.0) throw std::invalid_argument("l1_penalty: weight must be non-negative");
  return weight * (x - y).cwiseAbs().rowwise().sum().mean();
}

Var l1_penalty_t(Tape& t, Var x, Var y, double weight) {
  if (weight < 0.0) throw std::invalid_argument("l1_penalty: weight must be non-negative");
  return t.scale(t.mean_all(t.rowwise_sum(t.abs_(t.sub(x, y)))), weight);
}

}  // namespace f4f
