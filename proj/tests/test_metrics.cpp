#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>

#include "f4f/metrics.hpp"
#include "f4f/rng.hpp"

using namespace f4f;

namespace {

std::shared_ptr<FlowDensity> identity_flow() {
  TransformConfig cfg;
  cfg.dim = 2;
  cfg.layers = 2;
  cfg.residual_blocks = 1;
  cfg.hidden = 16;
  cfg.bins = 5;
  auto store = std::make_shared<ParameterStore>();
  RandomStream init(3);
  CompositeTransform tr(cfg, *store, "phi", &init);
  return std::make_shared<FlowDensity>(std::move(tr), store,
                                       std::make_shared<StandardNormal>(2));
}

struct HalfPlaneDensity final : Density {
  int dim() const override { return 2; }
  Var log_prob_t(Tape& t, Var x, std::optional<Var>) const override {
    Matrix lp(t.rows(x), 1);
    for (int i = 0; i < t.rows(x); ++i) {
      lp(i, 0) = t.value(x)(i, 0) < 0.0 ? -std::numeric_limits<double>::infinity() : -1.0;
    }
    return t.constant(lp);
  }
  Matrix sample(int n, const Matrix*, std::uint64_t) const override {
    return Matrix::Zero(n, 2);
  }
};

}  // namespace

TEST_CASE("mean_translation basics") {
  Matrix x(2, 2), y(2, 2);
  x << 0, 0, 1, 1;
  y << 1, 0, 1, 3;
  CHECK(mean_translation(x, x) == 0.0);
  CHECK(mean_translation(x, y) == doctest::Approx(1.5).epsilon(1e-15));
  Matrix z(3, 2);
  CHECK_THROWS_AS(mean_translation(x, z), std::invalid_argument);
}

TEST_CASE("mean_translation is a metric on paired samples") {
  RandomStream rs(5);
  const Matrix a = rs.normal_matrix(50, 2);
  const Matrix b = rs.normal_matrix(50, 2);
  const Matrix c = rs.normal_matrix(50, 2);
  CHECK(mean_translation(a, b) == mean_translation(b, a));
  CHECK(mean_translation(a, c) <= mean_translation(a, b) + mean_translation(b, c) + 1e-12);
  CHECK(mean_translation(a, b) >= 0.0);
}

TEST_CASE("ood_fraction basics") {
  const Matrix s = sample({DatasetName::kRing, 2000, 3});
  CHECK(ood_fraction(s, DatasetName::kRing) == 0.0);
  const Matrix origin = Matrix::Zero(100, 2);
  CHECK(ood_fraction(origin, DatasetName::kRing) == 1.0);
}

TEST_CASE("mean_nll of the identity flow on normal data is the Gaussian entropy") {
  auto flow = identity_flow();
  RandomStream rs(9);
  const Matrix data = rs.normal_matrix(100000, 2);
  const double nll = mean_nll(*flow, data);
  CHECK(nll == doctest::Approx(2.8378770664093454).epsilon(0.02 / 2.84));
}

TEST_CASE("mean_nll reports the offending point") {
  HalfPlaneDensity d;
  Matrix pts(2, 2);
  pts << 1.0, 0.0, -2.25, 0.5;
  CHECK_THROWS_WITH_AS(mean_nll(d, pts), doctest::Contains("-2.25"), NumericalError);
}

TEST_CASE("results ledger appends rows with a header") {
  const std::string path = (std::filesystem::temp_directory_path() / "f4f_test_ledger.csv").string();
  std::filesystem::remove(path);
  EvalReport r;
  r.mean_translation = 0.25;
  r.n_points = 10;
  r.seed = 42;
  append_results_ledger(path, "ring", "flow4flow", 1.0, 42, r);
  append_results_ledger(path, "ring", "flow4flow", 1.0, 43, r);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "dataset,model,penalty_weight,seed,mean_translation,ood_fraction,mean_nll,n_points");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 2);
  std::filesystem::remove(path);
}

TEST_CASE("EvalReport kv text lists only set metrics") {
  EvalReport r;
  r.mean_nll = 3.5;
  r.n_points = 100;
  r.seed = 7;
  const std::string text = r.to_kv_text();
  CHECK(text.find("mean_nll = 3.5") != std::string::npos);
  CHECK(text.find("mean_translation") == std::string::npos);
  CHECK(text.find("n_points = 100") != std::string::npos);
}
