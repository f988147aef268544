#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "energyformer/ecbam.hpp"
#include "energyformer/energy_encoder.hpp"
#include "energyformer/parameters.hpp"

namespace ef {

enum class EncoderKind { energy, standard };

std::string to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& name);

/// Every architectural hyperparameter. Zero `bands`/`classes` are filled in from the data.
struct ModelConfig {
  std::size_t bands = 0;
  std::size_t classes = 0;
  std::size_t patch_size = 9;
  std::size_t embed_dim = 32;
  std::size_t heads = 4;
  std::size_t hidden_mult = 4;  // W_h rows (or FF width) = hidden_mult * embed_dim
  std::size_t steps = 4;        // T
  std::size_t depth = 1;
  double beta = 0.0;            // <= 0 selects 1/sqrt(head_dim)
  double step_size = 0.1;       // alpha
  std::size_t spatial_kernel = 7;
  std::size_t reduction = 8;
  std::size_t fope_harmonics = 2;
  double fope_base = 10000.0;
  bool fope_enabled = true;
  double ln_eps = 1e-5;
  EncoderKind encoder = EncoderKind::energy;

  ecbam::Config ecbam_config() const;
  energy::Config encoder_config() const;
  void validate() const;
};

struct ModelOutput {
  Var logits;                                  // [1, C]
  std::vector<energy::EnergyTrace> traces;     // one per energy block when requested
};

class Model {
 public:
  Model() = default;
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }

  /// patch: [S, S, K].
  ModelOutput forward(const BoundParameters& p, Var patch, bool record_trace = false) const;

  /// Class probabilities for one patch, no gradient recording.
  std::vector<double> predict_proba(const Tensor& patch, Precision precision = Precision::f64) const;
  /// 1-based class label.
  std::uint16_t predict(const Tensor& patch, Precision precision = Precision::f64) const;

 private:
  ModelConfig config_;
  ParameterSet params_;
};

/// softmax(W z_cls + b) on the class-token row of `tokens` [T, d].
Var classify(Var tokens, Var head_weight, Var head_bias);
/// Head logits W z_cls + b, [1, C]. `head_weight` is [d, C].
Var class_logits(Var tokens, Var head_weight, Var head_bias);
/// -log softmax(logits)[target]; target is 0-based.
Var cross_entropy(Var logits, std::size_t target);

}  // namespace ef
