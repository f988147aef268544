#include <doctest.h>

#include <cmath>
#include <limits>

#include "energyformer/error.hpp"
#include "energyformer/synth.hpp"
#include "energyformer/train.hpp"

using namespace ef;

namespace {

struct Scene {
  HsiCube cube;
  LabelMap labels;
};

Scene scene(std::size_t classes, std::uint32_t side, std::uint32_t bands, double sigma, std::uint64_t seed = 7) {
  SynthConfig sc;
  sc.classes = classes;
  sc.rows = sc.cols = side;
  sc.bands = bands;
  sc.noise_sigma = sigma;
  sc.seed = seed;
  SynthScene s = synthesize(sc);
  return {normalize(s.cube), std::move(s.labels)};
}

ModelConfig tiny_model(std::size_t bands, std::size_t classes) {
  ModelConfig c;
  c.bands = bands;
  c.classes = classes;
  c.patch_size = 3;
  c.embed_dim = 4;
  c.heads = 2;
  c.hidden_mult = 2;
  c.steps = 2;
  c.spatial_kernel = 3;
  c.reduction = 2;
  return c;
}

TrainConfig tiny_train(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 4;
  t.patch_size = 3;
  t.train_fraction = 0.1;
  return t;
}

}  // namespace

TEST_CASE("two separable classes: loss below 0.1 within 30 epochs, train set fits") {
  const Scene s = scene(2, 16, 8, 0.01);
  ModelConfig mc;
  mc.bands = 8;
  mc.classes = 2;
  Model model(mc, 1);
  TrainConfig tc;
  tc.epochs = 30;
  tc.train_fraction = 0.1;
  const Split split = stratified_split(s.labels, tc.train_fraction, 2);
  const TrainResult r = train(model, s.cube, s.labels, split, tc);
  REQUIRE(r.epoch_loss.size() == 30);
  CHECK(r.epoch_loss.back() < 0.1);
  CHECK(r.epoch_loss.back() < r.epoch_loss.front());
  CHECK(r.seconds > 0.0);
  CHECK(evaluate(model, s.cube, s.labels, split.train).metrics.oa > 0.99);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const Scene s = scene(3, 10, 4, 0.02);
  Model model(tiny_model(4, 3), 3);
  const ParameterSet before = model.parameters();
  TrainConfig tc = tiny_train(3);
  tc.learning_rate = 0.0;
  train(model, s.cube, s.labels, stratified_split(s.labels, 0.1, 4), tc);
  CHECK(model.parameters().entries() == before.entries());
}

TEST_CASE("same seed gives bit-identical loss curves and parameters") {
  const Scene s = scene(3, 10, 4, 0.02);
  const Split split = stratified_split(s.labels, 0.1, 5);
  std::vector<double> curves[2];
  ParameterSet params[2];
  for (int run = 0; run < 2; ++run) {
    Model model(tiny_model(4, 3), 6);
    curves[run] = train(model, s.cube, s.labels, split, tiny_train(3)).epoch_loss;
    params[run] = model.parameters();
  }
  CHECK(curves[0] == curves[1]);
  CHECK(params[0].entries() == params[1].entries());
}

TEST_CASE("batch gradients do not depend on the thread count") {
  const Scene s = scene(3, 10, 4, 0.02);
  const Split split = stratified_split(s.labels, 0.2, 7);
  const Model model(tiny_model(4, 3), 8);
  const PatchSet data = gather_patches(s.cube, s.labels, split.train, 3);
  std::vector<std::size_t> batch(data.patches.size());
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = i;
  const BatchGradient one = batch_gradient(model, data, batch, 1);
  const BatchGradient three = batch_gradient(model, data, batch, 3);
  CHECK(one.loss == three.loss);
  CHECK(one.grads == three.grads);
}

TEST_CASE("one Adam step by hand") {
  ParameterSet ps;
  ps.add("w", Tensor({3}, std::vector<double>{1.0, -2.0, 0.5}));
  Adam adam(ps, 0.1, 0.9, 0.999, 1e-8);
  const std::vector<double> g{0.5, -4.0, 0.0};
  adam.step(ps, {Tensor({3}, g)});
  CHECK(adam.steps_taken() == 1);
  // Bias-corrected moments are g and g^2, so each entry moves by lr * g / (|g| + eps).
  const std::vector<double> start{1.0, -2.0, 0.5};
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(ps.get("w")[i] == doctest::Approx(start[i] - 0.1 * g[i] / (std::abs(g[i]) + 1e-8)).epsilon(1e-12));
}

TEST_CASE("training configuration is validated") {
  TrainConfig t;
  t.train_fraction = 1.0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = TrainConfig{};
  t.epochs = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = TrainConfig{};
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = TrainConfig{};
  t.beta2 = 1.0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = TrainConfig{};
  t.learning_rate = -1e-3;
  CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("non-finite loss names the epoch and batch") {
  const Scene s = scene(3, 10, 4, 0.02);
  Model model(tiny_model(4, 3), 9);
  model.parameters().get("head.bias")[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train(model, s.cube, s.labels, stratified_split(s.labels, 0.1, 1), tiny_train(1));
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 0") != std::string::npos);
    CHECK(msg.find("batch 0") != std::string::npos);
  }
}

TEST_CASE("labels outside the model are rejected") {
  const Scene s = scene(4, 10, 4, 0.02);
  Model model(tiny_model(4, 3), 10);
  const Split split = stratified_split(s.labels, 0.1, 1);
  CHECK_THROWS_AS(train(model, s.cube, s.labels, split, tiny_train(1)), ConfigError);
  CHECK_THROWS_AS(evaluate(model, s.cube, s.labels, split.test), ConfigError);
  CHECK_THROWS_AS(train(model, PatchSet{}, tiny_train(1)), DataError);
}

TEST_CASE("evaluation bookkeeping") {
  const Scene s = scene(3, 12, 4, 0.02);
  const Model model(tiny_model(4, 3), 11);
  const Split split = stratified_split(s.labels, 0.1, 12);
  const EvalReport r = evaluate(model, s.cube, s.labels, split.test);
  std::map<std::uint16_t, std::size_t> expected;
  for (std::size_t idx : split.test) ++expected[s.labels.labels[idx]];
  for (std::size_t c = 0; c < 3; ++c) CHECK(r.confusion.row_sum(c) == expected[static_cast<std::uint16_t>(c + 1)]);
  CHECK(r.confusion.total() == split.test.size());

  const LabelMap map = predict_map(model, s.cube, s.labels);
  CHECK(map.rows == s.cube.rows);
  CHECK(map.cols == s.cube.cols);
  for (std::size_t idx : split.test)
    CHECK(map.labels[idx] == model.predict(extract_patch(s.cube, s.labels, {idx / 12, idx % 12}, 3).data));

  HsiCube wrong = s.cube;
  wrong.bands = 5;
  CHECK_THROWS_AS(evaluate(model, wrong, s.labels, split.test), ConfigError);
}

TEST_CASE("unlabeled pixels are predicted only on request") {
  Scene s = scene(2, 8, 4, 0.02);
  s.labels.at(3, 3) = 0;
  const Model model(tiny_model(4, 2), 13);
  CHECK(predict_map(model, s.cube, s.labels).at(3, 3) == 0);
  CHECK(predict_map(model, s.cube, s.labels, true).at(3, 3) != 0);
}

TEST_CASE("gathered patches carry their labels") {
  const Scene s = scene(3, 10, 4, 0.02);
  const std::vector<std::size_t> pixels{0, 15, 99};
  const PatchSet ps = gather_patches(s.cube, s.labels, pixels, 5);
  REQUIRE(ps.patches.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(ps.labels[i] == s.labels.labels[pixels[i]]);
    CHECK(ps.patches[i].shape() == Shape{5, 5, 4});
  }
}
