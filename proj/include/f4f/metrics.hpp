#pragma once

#include <functional>
#include <optional>
#include <string>

#include "f4f/datasets.hpp"
#include "f4f/diffcore.hpp"
#include "f4f/distributions.hpp"

namespace f4f {

// Quantitative evaluation summary. Unused metrics are NaN (two use cases:
// density checkpoints get NLL/OOD, transport maps get translation/OOD).
struct EvalReport {
  double mean_translation{std::numeric_limits<double>::quiet_NaN()};
  double ood_fraction{std::numeric_limits<double>::quiet_NaN()};
  double mean_nll{std::numeric_limits<double>::quiet_NaN()};
  long n_points{0};
  std::uint64_t seed{0};

  // Structured key-value text, one `key = value` per line.
  std::string to_kv_text() const;
};

// Mean over points of the per-point L1 displacement sum_d |x_d - y_d|.
double mean_translation(const Matrix& x, const Matrix& y);

using SupportOracle = std::function<bool(double, double)>;

// Fraction of points failing the support oracle.
double ood_fraction(const Matrix& points, const SupportOracle& oracle);
double ood_fraction(const Matrix& points, DatasetName name,
                    std::optional<ConditionKind> kind = std::nullopt,
                    double c = 0.0, double tolerance = 0.0);

// Negative mean log density over a held-out set. Throws NumericalError
// naming the offending point if any log_prob is non-finite.
double mean_nll(const Density& density, const Matrix& points,
                const Matrix* cond = nullptr);

// Appends one CSV row (with a header when creating the file) to a results
// ledger: dataset, model, penalty weight, seed, metrics.
void append_results_ledger(const std::string& path, const std::string& dataset,
                           const std::string& model, double penalty_weight,
                           std::uint64_t seed, const EvalReport& report);

}  // namespace f4f
