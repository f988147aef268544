#include <doctest.h>

#include <cmath>
#include <random>

#include "energyformer/error.hpp"
#include "energyformer/model.hpp"
#include "oracle.hpp"

using namespace ef;
using oracle::random_tensor;

namespace {

ModelConfig small_config(EncoderKind kind = EncoderKind::energy) {
  ModelConfig c;
  c.bands = 4;
  c.classes = 3;
  c.patch_size = 3;
  c.embed_dim = 4;
  c.heads = 2;
  c.hidden_mult = 2;
  c.steps = 2;
  c.spatial_kernel = 3;
  c.reduction = 2;
  c.encoder = kind;
  return c;
}

}  // namespace

TEST_CASE("zero head gives uniform probabilities") {
  std::mt19937_64 rng(1);
  Tape t;
  Var tokens = t.constant(random_tensor({5, 4}, rng));
  const Tensor p = classify(tokens, t.constant(Tensor({4, 3}, 0.0)), t.constant(Tensor({3}, 0.0))).value();
  for (double v : p.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("a dominant bias wins") {
  std::mt19937_64 rng(2);
  Tape t;
  Var tokens = t.constant(random_tensor({5, 4}, rng));
  const Tensor p = classify(tokens, t.constant(Tensor({4, 3}, 0.0)), t.constant(Tensor({3}, std::vector<double>{10, 0, 0}))).value();
  CHECK(p[0] > 0.9999);
  CHECK(p[0] > p[1]);
  CHECK(p[0] > p[2]);
}

TEST_CASE("probabilities sum to one") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    Tape t;
    const Tensor p = classify(t.constant(random_tensor({4, 6}, rng, -5, 5)), t.constant(random_tensor({6, 5}, rng, -3, 3)),
                              t.constant(random_tensor({5}, rng, -3, 3)))
                         .value();
    double s = 0;
    for (double v : p.data()) s += v;
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("class token is the only row that reaches the head") {
  std::mt19937_64 rng(4);
  Tensor a = random_tensor({4, 3}, rng), b = a;
  for (std::size_t j = 0; j < 3; ++j) b.at({2, j}) += 5.0;
  Tape t;
  Var w = t.constant(random_tensor({3, 2}, rng)), bias = t.constant(random_tensor({2}, rng));
  CHECK(class_logits(t.constant(a), w, bias).value() == class_logits(t.constant(b), w, bias).value());
}

TEST_CASE("cross-entropy at uniform output is log C") {
  Tape t;
  for (std::size_t C : {2u, 5u, 16u})
    for (std::size_t target = 0; target < C; target += 3)
      CHECK(cross_entropy(t.constant(Tensor({1, C}, 0.7)), target).value().item() ==
            doctest::Approx(std::log(static_cast<double>(C))).epsilon(1e-14));
  CHECK_THROWS_AS(cross_entropy(t.constant(Tensor({1, 3})), 3), ArgumentError);
}

TEST_CASE("cross-entropy is positive for non-degenerate logits") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Tape t;
    CHECK(cross_entropy(t.constant(random_tensor({1, 4}, rng, -5, 5)), trial % 4).value().item() > 0.0);
  }
}

TEST_CASE("encoder kind names round-trip") {
  CHECK(encoder_kind_from_string(to_string(EncoderKind::energy)) == EncoderKind::energy);
  CHECK(encoder_kind_from_string(to_string(EncoderKind::standard)) == EncoderKind::standard);
  CHECK_THROWS_AS(encoder_kind_from_string("hopfield"), ConfigError);
}

TEST_CASE("model configuration is validated") {
  ModelConfig c = small_config();
  c.classes = 1;
  CHECK_THROWS_AS(Model(c, 0), ConfigError);
  c = small_config();
  c.heads = 3;
  CHECK_THROWS_AS(Model(c, 0), ConfigError);
  c = small_config();
  c.spatial_kernel = 4;
  CHECK_THROWS_AS(Model(c, 0), ConfigError);
  c = small_config();
  c.depth = 0;
  CHECK_THROWS_AS(Model(c, 0), ConfigError);
}

TEST_CASE("forward shapes and traces") {
  for (EncoderKind kind : {EncoderKind::energy, EncoderKind::standard}) {
    ModelConfig c = small_config(kind);
    c.depth = 2;
    const Model m(c, 6);
    std::mt19937_64 rng(7);
    Tape t;
    BoundParameters p(t, m.parameters(), false);
    const ModelOutput out = m.forward(p, t.constant(random_tensor({3, 3, 4}, rng)), true);
    CHECK(out.logits.shape() == Shape{1, 3});
    CHECK(out.traces.size() == (kind == EncoderKind::energy ? 2u : 0u));
    for (const auto& tr : out.traces) CHECK(tr.size() == c.steps + 1);
    CHECK_THROWS_AS(m.forward(p, t.constant(Tensor({3, 3, 5})), false), DimensionError);
  }
}

TEST_CASE("same seed builds identical parameters") {
  const Model a(small_config(), 11), b(small_config(), 11), c(small_config(), 12);
  CHECK(a.parameters().entries() == b.parameters().entries());
  CHECK_FALSE(a.parameters().entries() == c.parameters().entries());
}

TEST_CASE("whole-model gradients against finite differences") {
  for (EncoderKind kind : {EncoderKind::energy, EncoderKind::standard}) {
    Model m(small_config(kind), 13);
    std::mt19937_64 rng(14);
    for (auto& [name, t] : m.parameters().entries())
      for (auto& v : t.data()) v += std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
    const Tensor x = random_tensor({3, 3, 4}, rng);
    auto f = [&](const BoundParameters& p) { return cross_entropy(m.forward(p, p.tape().constant(x)).logits, 1); };
    for (const auto& [name, err] : oracle::parameter_gradient_errors(f, m.parameters())) {
      INFO(to_string(kind) << " " << name);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("single precision prediction stays close to double") {
  const Model m(small_config(), 15);
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_tensor({3, 3, 4}, rng, 0, 1);
    const auto p64 = m.predict_proba(x), p32 = m.predict_proba(x, Precision::f32);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(p64[c] - p32[c]) < 1e-4);
    const std::uint16_t label = m.predict(x);
    CHECK((label >= 1 && label <= 3));
  }
}
