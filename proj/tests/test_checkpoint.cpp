#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "f4f/checkpoint.hpp"
#include "f4f/rng.hpp"

using namespace f4f;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

TransformConfig small_cfg(int cond_dim = 0) {
  TransformConfig cfg;
  cfg.dim = 2;
  cfg.layers = 2;
  cfg.residual_blocks = 1;
  cfg.hidden = 8;
  cfg.bins = 4;
  cfg.cond_dim = cond_dim;
  cfg.cond_scale = cond_dim > 0 ? 45.0 : 1.0;
  return cfg;
}

std::shared_ptr<FlowDensity> random_density(std::uint64_t seed, int cond_dim = 0) {
  auto store = std::make_shared<ParameterStore>();
  store->rng_seed = seed;
  RandomStream init(seed);
  CompositeTransform tr(small_cfg(cond_dim), *store, "phi", &init);
  RandomStream rs(seed + 1);
  for (int i = 0; i < store->count(); ++i) {
    Matrix& v = store->value(i);
    v = rs.uniform_matrix(static_cast<int>(v.rows()), static_cast<int>(v.cols()), -0.5, 0.5);
  }
  return std::make_shared<FlowDensity>(std::move(tr), store,
                                       std::make_shared<StandardNormal>(2));
}

}  // namespace

TEST_CASE("flow density round trip is bitwise") {
  auto d = random_density(11);
  CheckpointMeta meta;
  meta.name = "meta";
  meta.entries.emplace_back("dataset", "ring");
  meta.entries.emplace_back("epochs", "10");

  const std::string path = tmp_path("f4f_ckpt_density.ckpt");
  save_flow_density(path, *d, meta);
  CHECK(checkpoint_kind(path) == "flow_density");

  LoadedFlowDensity loaded = load_flow_density(path);
  CHECK(loaded.meta.get("dataset") == std::string("ring"));
  CHECK(loaded.meta.get("epochs") == std::string("10"));
  CHECK(loaded.density->store()->content_hash() == d->store()->content_hash());
  CHECK(loaded.density->store()->rng_seed == d->store()->rng_seed);

  RandomStream rs(5);
  const Matrix x = rs.uniform_matrix(32, 2, -3.5, 3.5);
  CHECK((loaded.density->log_prob(x) - d->log_prob(x)).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove(path);
}

TEST_CASE("saving twice produces identical bytes") {
  auto d = random_density(13);
  CheckpointMeta meta;
  const std::string p1 = tmp_path("f4f_ckpt_a.ckpt");
  const std::string p2 = tmp_path("f4f_ckpt_b.ckpt");
  save_flow_density(p1, *d, meta);
  save_flow_density(p2, *d, meta);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  CHECK(!s1.empty());
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST_CASE("flow4flow round trip, separate and shared bases") {
  auto dx = random_density(21);
  auto dy = random_density(22);

  SUBCASE("separate bases") {
    FlowForFlowModel m = make_flow4flow(small_cfg(), dx, dy, ConditionMode::kNone, 23);
    RandomStream rs(24);
    for (int i = 0; i < m.gamma_store->count(); ++i) {
      Matrix& v = m.gamma_store->value(i);
      v = rs.uniform_matrix(static_cast<int>(v.rows()), static_cast<int>(v.cols()), -0.3, 0.3);
    }
    const std::string path = tmp_path("f4f_ckpt_model.ckpt");
    CheckpointMeta meta;
    meta.entries.emplace_back("penalty_weight", "1");
    save_flow4flow(path, m, meta);
    CHECK(checkpoint_kind(path) == "flow4flow");

    LoadedFlow4Flow loaded = load_flow4flow(path);
    CHECK(!loaded.model.shared_base());
    CHECK(loaded.model.gamma_store->content_hash() == m.gamma_store->content_hash());
    CHECK(loaded.model.density_x->store()->content_hash() == dx->store()->content_hash());
    CHECK(loaded.model.density_y->store()->content_hash() == dy->store()->content_hash());

    const Matrix x = rs.uniform_matrix(16, 2, -3.0, 3.0);
    CHECK((loaded.model.transfer(x) - m.transfer(x)).cwiseAbs().maxCoeff() == 0.0);
    std::filesystem::remove(path);
  }

  SUBCASE("shared base in delta mode") {
    auto shared = random_density(31, 1);
    FlowForFlowModel m = make_flow4flow(small_cfg(1), shared, shared, ConditionMode::kDelta, 32);
    const std::string path = tmp_path("f4f_ckpt_shared.ckpt");
    save_flow4flow(path, m, CheckpointMeta{});
    LoadedFlow4Flow loaded = load_flow4flow(path);
    CHECK(loaded.model.shared_base());
    CHECK(loaded.model.condition_mode == ConditionMode::kDelta);
    RandomStream rs(33);
    const Matrix x = rs.uniform_matrix(16, 2, -3.0, 3.0);
    const Matrix c0 = Matrix::Constant(16, 1, 5.0);
    const Matrix c1 = Matrix::Constant(16, 1, 40.0);
    CHECK((loaded.model.transfer(x, &c0, &c1) - m.transfer(x, &c0, &c1)).cwiseAbs().maxCoeff() == 0.0);
    std::filesystem::remove(path);
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string path = tmp_path("f4f_ckpt_corrupt.ckpt");

  SUBCASE("not a checkpoint at all") {
    std::ofstream out(path, std::ios::binary);
    out << "definitely not a checkpoint";
    out.close();
    CHECK_THROWS(load_flow_density(path));
  }
  SUBCASE("truncated data segment") {
    auto d = random_density(41);
    save_flow_density(path, *d, CheckpointMeta{});
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 64);
    CHECK_THROWS_WITH_AS(load_flow_density(path), doctest::Contains("truncated"),
                         std::runtime_error);
  }
  SUBCASE("wrong kind") {
    auto d = random_density(42);
    save_flow_density(path, *d, CheckpointMeta{});
    CHECK_THROWS_WITH_AS(load_flow4flow(path), doctest::Contains("not a flow4flow"),
                         std::runtime_error);
  }
  std::filesystem::remove(path);
}
