#include <doctest.h>

#include "f4f/config.hpp"

using namespace f4f;

TEST_CASE("full config text parses") {
  const std::string text = R"(
# identity map on four circles
[dataset]
name = four_circles

[architecture]
preset = standard
hidden = 128

[trainer]
batch_size = 128
initial_lr = 1e-4
epochs = 20
n_train = 100000
seed = 3

[penalty]
l1_weight = 1.0

[output]
dir = runs/fc
)";
  ExperimentConfig cfg = ExperimentConfig::parse_text(text);
  CHECK(cfg.dataset == DatasetName::kFourCircles);
  CHECK(cfg.target() == DatasetName::kFourCircles);
  CHECK(!cfg.conditional());
  CHECK(cfg.preset == "standard");
  CHECK(cfg.hidden == 128);
  CHECK(cfg.epochs == 20);
  CHECK(cfg.seed == 3);
  CHECK(cfg.penalty.l1_weight == 1.0);
  CHECK(cfg.output_dir == "runs/fc");
  CHECK(cfg.default_base_epochs() == 10);
  CHECK(cfg.default_f4f_epochs() == 20);
}

TEST_CASE("conditional config and mode defaults") {
  ExperimentConfig cfg = ExperimentConfig::parse_text(R"(
[dataset]
name = four_circles
mode = rotation
)");
  REQUIRE(cfg.conditional());
  CHECK(*cfg.condition_kind == ConditionKind::kRotation);
  CHECK(cfg.cmin == 0.0);
  CHECK(cfg.cmax == 45.0);
  CHECK(cfg.default_base_epochs() == 32);
  CHECK(cfg.default_f4f_epochs() == 12);

  const TransformConfig base = cfg.transform_config(true);
  CHECK(base.cond_dim == 1);
  CHECK(base.cond_shift == 0.0);
  CHECK(base.cond_scale == 45.0);
  const TransformConfig tr = cfg.transformer_config();
  CHECK(tr.cond_dim == 1);
  CHECK(tr.cond_shift == 0.0);

  ExperimentConfig radial = ExperimentConfig::parse_text(R"(
[dataset]
name = ring
mode = radial_scale
)");
  CHECK(radial.cmin == 0.5);
  CHECK(radial.cmax == 1.5);
}

TEST_CASE("unknown keys are listed in the error") {
  CHECK_THROWS_WITH_AS(ExperimentConfig::parse_text(R"(
[dataset]
name = ring
flavor = spicy

[trainer]
learning_rate = 3
)"),
                       doctest::Contains("flavor"), std::invalid_argument);
  try {
    ExperimentConfig::parse_text("[trainer]\nlearning_rate = 3\nbatch_size = 0\n");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("learning_rate") != std::string::npos);
  }
}

TEST_CASE("invalid values are rejected with the offending keys") {
  CHECK_THROWS_WITH_AS(ExperimentConfig::parse_text("[trainer]\nbatch_size = -4\n"),
                       doctest::Contains("batch_size"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(ExperimentConfig::parse_text("[dataset]\nname = blob\n"),
                       doctest::Contains("blob"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(ExperimentConfig::parse_text("[penalty]\nl1_weight = -1\n"),
                       doctest::Contains("l1_weight"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(ExperimentConfig::parse_text("[architecture]\npreset = huge\n"),
                       doctest::Contains("preset"), std::invalid_argument);
}

TEST_CASE("serialize / parse round trip") {
  ExperimentConfig cfg;
  cfg.dataset = DatasetName::kSpirals;
  cfg.target_dataset = DatasetName::kStar;
  cfg.hidden = 64;
  cfg.epochs = 7;
  cfg.seed = 99;
  cfg.penalty.l1_weight = 0.5;
  cfg.objective = Objective::kL1Only;
  ExperimentConfig back = ExperimentConfig::parse_text(cfg.serialize());
  CHECK(back.dataset == cfg.dataset);
  CHECK(back.target() == DatasetName::kStar);
  CHECK(back.hidden == 64);
  CHECK(back.epochs == 7);
  CHECK(back.seed == 99);
  CHECK(back.penalty.l1_weight == 0.5);
  CHECK(back.objective == Objective::kL1Only);
}
