#include "f4f/metrics.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace f4f {

namespace {
std::string fmt(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
}  // namespace

std::string EvalReport::to_kv_text() const {
  std::ostringstream os;
  os.precision(17);
  if (!std::isnan(mean_translation)) os << "mean_translation = " << mean_translation << "\n";
  if (!std::isnan(ood_fraction)) os << "ood_fraction = " << ood_fraction << "\n";
  if (!std::isnan(mean_nll)) os << "mean_nll = " << mean_nll << "\n";
  os << "n_points = " << n_points << "\n";
  os << "seed = " << seed << "\n";
  return os.str();
}

double mean_translation(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw std::invalid_argument("mean_translation: shape mismatch");
  }
  if (x.rows() == 0) throw std::invalid_argument("mean_translation: empty input");
  return (x - y).cwiseAbs().rowwise().sum().mean();
}

double ood_fraction(const Matrix& points, const SupportOracle& oracle) {
  if (points.rows() == 0) throw std::invalid_argument("ood_fraction: empty input");
  long bad = 0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    if (!oracle(points(i, 0), points(i, 1))) ++bad;
  }
  return static_cast<double>(bad) / static_cast<double>(points.rows());
}

double ood_fraction(const Matrix& points, DatasetName name,
                    std::optional<ConditionKind> kind, double c, double tolerance) {
  return ood_fraction(points, [&](double x, double y) {
    return support_membership(name, x, y, kind, c, tolerance);
  });
}

double mean_nll(const Density& density, const Matrix& points, const Matrix* cond) {
  if (points.rows() == 0) throw std::invalid_argument("mean_nll: empty input");
  const Vector lp = density.log_prob(points, cond);
  double total = 0.0;
  for (Eigen::Index i = 0; i < lp.size(); ++i) {
    if (!std::isfinite(lp[i])) {
      std::ostringstream os;
      os.precision(17);
      os << "mean_nll: non-finite log_prob at point (" << points(i, 0) << ", "
         << points(i, 1) << ")";
      throw NumericalError(os.str());
    }
    total += lp[i];
  }
  return -total / static_cast<double>(points.rows());
}

void append_results_ledger(const std::string& path, const std::string& dataset,
                           const std::string& model, double penalty_weight,
                           std::uint64_t seed, const EvalReport& report) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot open results ledger: " + path);
  if (fresh) {
    out << "dataset,model,penalty_weight,seed,mean_translation,ood_fraction,mean_nll,n_points\n";
  }
  out << dataset << ',' << model << ',' << fmt(penalty_weight) << ',' << seed << ','
      << fmt(report.mean_translation) << ',' << fmt(report.ood_fraction) << ','
      << fmt(report.mean_nll) << ',' << report.n_points << "\n";
}

}  // namespace f4f
