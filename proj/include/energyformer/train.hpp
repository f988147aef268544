#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "energyformer/hsi_data.hpp"
#include "energyformer/metrics.hpp"
#include "energyformer/model.hpp"

namespace ef {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 80;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t patch_size = 9;
  double train_fraction = 0.05;
  std::size_t threads = 1;

  void validate() const;
};

/// Adam over a ParameterSet; state layout follows the set's order.
class Adam {
 public:
  Adam(const ParameterSet& params, double lr, double beta1, double beta2, double eps);
  void step(ParameterSet& params, const std::vector<Tensor>& grads);
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

/// Labeled patches ready for the model.
struct PatchSet {
  std::vector<Tensor> patches;         // [S, S, K]
  std::vector<std::uint16_t> labels;   // 1-based
};

PatchSet gather_patches(const HsiCube& cube, const LabelMap& labels, const std::vector<std::size_t>& pixels,
                        std::size_t patch_size, PatchMode mode = PatchMode::centered_mirror);

struct TrainResult {
  std::vector<double> epoch_loss;  // mean cross-entropy per epoch
  double seconds = 0.0;
};

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

/// Mean cross-entropy gradient of a batch. Samples run on independent tapes
/// (optionally on `threads` workers) and are summed in sample order, so the
/// result does not depend on the thread count.
struct BatchGradient {
  std::vector<Tensor> grads;
  double loss = 0.0;
};
BatchGradient batch_gradient(const Model& model, const PatchSet& data, const std::vector<std::size_t>& batch,
                             std::size_t threads = 1);

/// Minimizes mean cross-entropy with Adam. `cube` should already be normalized.
/// Throws DivergenceError naming epoch and batch on a non-finite loss.
TrainResult train(Model& model, const HsiCube& cube, const LabelMap& labels, const Split& split, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});
TrainResult train(Model& model, const PatchSet& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Scores `pixels` (normally the split's test set).
EvalReport evaluate(const Model& model, const HsiCube& cube, const LabelMap& labels, const std::vector<std::size_t>& pixels,
                    std::size_t threads = 1, Precision precision = Precision::f64);

/// Predicted label per pixel. Unlabeled pixels stay 0 unless `all_pixels`.
LabelMap predict_map(const Model& model, const HsiCube& cube, const LabelMap& labels, bool all_pixels = false,
                     std::size_t threads = 1, Precision precision = Precision::f64);

}  // namespace ef
