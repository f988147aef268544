#include "energyformer/model.hpp"

#include <algorithm>
#include <random>

#include "energyformer/error.hpp"
#include "energyformer/standard_block.hpp"

namespace ef {

std::string to_string(EncoderKind kind) { return kind == EncoderKind::energy ? "energy" : "standard"; }

EncoderKind encoder_kind_from_string(const std::string& name) {
  if (name == "energy") return EncoderKind::energy;
  if (name == "standard") return EncoderKind::standard;
  throw ConfigError("unknown encoder kind '" + name + "' (expected energy or standard)");
}

ecbam::Config ModelConfig::ecbam_config() const {
  ecbam::Config c;
  c.bands = bands;
  c.embed_dim = embed_dim;
  c.spatial_kernel = spatial_kernel;
  c.reduction = reduction;
  c.ln_eps = ln_eps;
  return c;
}

energy::Config ModelConfig::encoder_config() const {
  energy::Config c;
  c.d_model = embed_dim;
  c.heads = heads;
  c.hidden = hidden_mult * embed_dim;
  c.beta = beta;
  c.step_size = step_size;
  c.steps = steps;
  c.ln_eps = ln_eps;
  c.fope.head_dim = heads ? embed_dim / heads : 0;
  c.fope.harmonics = fope_harmonics;
  c.fope.base = fope_base;
  c.fope.enabled = fope_enabled;
  return c;
}

void ModelConfig::validate() const {
  if (bands == 0) throw ConfigError("model needs at least one band");
  if (classes < 2) throw ConfigError("model needs at least 2 classes, got " + std::to_string(classes));
  if (patch_size == 0) throw ConfigError("patch size must be positive");
  if (depth == 0) throw ConfigError("depth must be at least 1");
  if (spatial_kernel % 2 == 0) throw ConfigError("spatial kernel must be odd");
  if (hidden_mult == 0) throw ConfigError("hidden_mult must be positive");
  if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
  energy::validate(encoder_config());
}

namespace {

std::string block_prefix(std::size_t i) { return "encoder." + std::to_string(i) + "."; }

}  // namespace

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  ecbam::init_parameters(params_, config_.ecbam_config(), rng);
  const energy::Config ec = config_.encoder_config();
  for (std::size_t i = 0; i < config_.depth; ++i) {
    if (config_.encoder == EncoderKind::energy)
      energy::init_parameters(params_, block_prefix(i), ec, rng);
    else
      standard::init_parameters(params_, block_prefix(i), ec, rng);
  }
  params_.add("head.weight", xavier_uniform({config_.embed_dim, config_.classes}, config_.embed_dim, config_.classes, rng));
  params_.add("head.bias", Tensor({config_.classes}, 0.0));
}

ModelOutput Model::forward(const BoundParameters& p, Var patch, bool record_trace) const {
  const Shape& s = patch.shape();
  if (s.size() != 3 || s[0] != s[1] || s[2] != config_.bands)
    throw DimensionError("patch must be [S,S," + std::to_string(config_.bands) + "], got " + to_string(s));
  ModelOutput out;
  Var tokens = ecbam::fuse_and_embed(p, patch, config_.ecbam_config());
  const energy::Config ec = config_.encoder_config();
  for (std::size_t i = 0; i < config_.depth; ++i) {
    if (config_.encoder == EncoderKind::energy) {
      const energy::Weights w = energy::bind(p, block_prefix(i), ec, tokens.shape()[0]);
      energy::ForwardResult r = energy::forward(tokens, w, record_trace);
      tokens = r.x;
      if (record_trace) out.traces.push_back(std::move(r.trace));
    } else {
      tokens = standard::forward(p, block_prefix(i), tokens, ec);
    }
  }
  out.logits = class_logits(tokens, p["head.weight"], p["head.bias"]);
  return out;
}

std::vector<double> Model::predict_proba(const Tensor& patch, Precision precision) const {
  Tape tape(precision);
  BoundParameters p(tape, params_, false);
  const ModelOutput out = forward(p, tape.constant(patch));
  const Tensor& probs = softmax(out.logits, 1).value();
  return {probs.data().begin(), probs.data().end()};
}

std::uint16_t Model::predict(const Tensor& patch, Precision precision) const {
  const std::vector<double> probs = predict_proba(patch, precision);
  return static_cast<std::uint16_t>(std::max_element(probs.begin(), probs.end()) - probs.begin() + 1);
}

Var class_logits(Var tokens, Var head_weight, Var head_bias) {
  const std::size_t C = head_weight.shape()[1];
  Var z = slice(tokens, 0, 0, 1);
  return matmul(z, head_weight) + reshape(head_bias, {1, C});
}

Var classify(Var tokens, Var head_weight, Var head_bias) {
  return softmax(class_logits(tokens, head_weight, head_bias), 1);
}

Var cross_entropy(Var logits, std::size_t target) {
  const std::size_t C = logits.value().size();
  if (target >= C) throw ArgumentError("target class out of range");
  Var flat = reshape(logits, {1, C});
  Var log_z = logsumexp(flat, 1);
  return log_z - slice(flat, 1, target, target + 1);
}

}  // namespace ef
