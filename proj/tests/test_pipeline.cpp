#include <doctest.h>

#include <sstream>

#include "energyformer/error.hpp"
#include "energyformer/pipeline.hpp"
#include "energyformer/synth.hpp"

using namespace ef;

TEST_CASE("empty config keeps the defaults") {
  const RunConfig c = parse_config("{}");
  CHECK(c.train.learning_rate == 1e-3);
  CHECK(c.train.epochs == 80);
  CHECK(c.model.patch_size == 9);
  CHECK(c.model.encoder == EncoderKind::energy);
  CHECK(c.deterministic);
}

TEST_CASE("config keys map onto fields") {
  const RunConfig c = parse_config(R"({"learning_rate": 0.01, "epochs": 5, "patch_size": 11, "train_fraction": 0.07,
    "embed_dim": 16, "heads": 2, "encoder": "standard", "fope_enabled": false, "beta": 0.5,
    "sweep_fractions": [0.02, 0.04]})");
  CHECK(c.train.learning_rate == 0.01);
  CHECK(c.train.epochs == 5);
  CHECK(c.train.patch_size == 11);
  CHECK(c.model.patch_size == 11);
  CHECK(c.train.train_fraction == 0.07);
  CHECK(c.model.embed_dim == 16);
  CHECK(c.model.heads == 2);
  CHECK(c.model.encoder == EncoderKind::standard);
  CHECK_FALSE(c.model.fope_enabled);
  CHECK(c.model.beta == 0.5);
  CHECK(c.sweep_fractions == std::vector<double>{0.02, 0.04});
}

TEST_CASE("config round-trips through JSON") {
  RunConfig c;
  c.train.seed = 42;
  c.train.batch_size = 7;
  c.model.steps = 6;
  c.model.step_size = 0.125;
  c.sweep_patch_sizes = {5, 7};
  const RunConfig r = parse_config(to_json(c));
  CHECK(r.train.seed == 42);
  CHECK(r.train.batch_size == 7);
  CHECK(r.model.steps == 6);
  CHECK(r.model.step_size == 0.125);
  CHECK(r.sweep_patch_sizes == std::vector<std::size_t>{5, 7});
  CHECK(to_json(r) == to_json(c));
}

TEST_CASE("malformed config is a format error with an offset") {
  try {
    parse_config("{\"epochs\": }");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() > 0);
  }
  CHECK_THROWS_AS(parse_config("[1, 2]"), FormatError);
}

TEST_CASE("unknown keys and wrong types are configuration errors") {
  CHECK_THROWS_AS(parse_config(R"({"epoch": 3})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"epochs": "three"})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"epochs": -3})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"encoder": "hopfield"})"), ConfigError);
}

TEST_CASE("missing config file is an I/O error") {
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), IoError);
}

TEST_CASE("experiment and fraction sweep on a small scene") {
  SynthConfig sc;
  sc.classes = 3;
  sc.rows = sc.cols = 12;
  sc.bands = 4;
  const SynthScene s = synthesize(sc);
  RunConfig c = parse_config(R"({"epochs": 1, "batch_size": 8, "patch_size": 3, "embed_dim": 4, "heads": 2,
    "steps": 1, "spatial_kernel": 3, "train_fraction": 0.1})");
  const ExperimentResult r = run_experiment(s.cube, s.labels, c);
  CHECK(r.model.config().bands == 4);
  CHECK(r.model.config().classes == 3);
  CHECK(r.training.epoch_loss.size() == 1);
  CHECK(r.report.confusion.total() == r.split.test.size());
  CHECK(r.split.train.size() + r.split.test.size() == 144);

  const auto rows = sweep_fraction(s.cube, s.labels, c);
  REQUIRE(rows.size() == 6);
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].train_samples >= rows[i - 1].train_samples);
  std::ostringstream out;
  write_sweep_csv(rows, out);
  const std::string csv = out.str();
  CHECK(csv.rfind("axis,setting,train_samples,kappa,oa,aa,time_s\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);

  c.sweep_patch_sizes = {2, 4};
  const auto patch_rows = sweep_patch_size(s.cube, s.labels, c);
  REQUIRE(patch_rows.size() == 2);
  CHECK(patch_rows[0].axis == "patch_size");
  CHECK(patch_rows[1].setting == 4.0);
}

TEST_CASE("loss csv") {
  std::ostringstream out;
  write_loss_csv({0.5, 0.25}, out);
  CHECK(out.str() == "epoch,mean_loss\n0,0.5\n1,0.25\n");
}
