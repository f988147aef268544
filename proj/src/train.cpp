#include "energyformer/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <random>
#include <thread>

#include "energyformer/error.hpp"

namespace ef {

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers; the first exception is rethrown.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("Adam moments must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (patch_size == 0) throw ConfigError("patch_size must be positive");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
  if (threads == 0) throw ConfigError("threads must be positive");
}

Adam::Adam(const ParameterSet& params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& [name, value] : params.entries()) {
    m_.emplace_back(value.shape(), 0.0);
    v_.emplace_back(value.shape(), 0.0);
  }
}

void Adam::step(ParameterSet& params, const std::vector<Tensor>& grads) {
  if (grads.size() != m_.size()) throw ContractError("gradient count does not match optimizer state");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  auto& entries = params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor& p = entries[i].second;
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m_[i][k] = b1_ * m_[i][k] + (1.0 - b1_) * g[k];
      v_[i][k] = b2_ * v_[i][k] + (1.0 - b2_) * g[k] * g[k];
      p[k] -= lr_ * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + eps_);
    }
  }
}

PatchSet gather_patches(const HsiCube& cube, const LabelMap& labels, const std::vector<std::size_t>& pixels,
                        std::size_t patch_size, PatchMode mode) {
  PatchSet set;
  set.patches.reserve(pixels.size());
  for (std::size_t idx : pixels) {
    Patch p = extract_patch(cube, labels, {idx / cube.cols, idx % cube.cols}, patch_size, mode);
    set.patches.push_back(std::move(p.data));
    set.labels.push_back(p.label);
  }
  return set;
}

BatchGradient batch_gradient(const Model& model, const PatchSet& data, const std::vector<std::size_t>& batch,
                             std::size_t threads) {
  std::vector<std::vector<Tensor>> per_sample(batch.size());
  std::vector<double> losses(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    const std::size_t s = batch[i];
    Tape tape;
    BoundParameters p(tape, model.parameters());
    const ModelOutput out = model.forward(p, tape.constant(data.patches[s]));
    Var loss = cross_entropy(out.logits, static_cast<std::size_t>(data.labels[s] - 1));
    tape.backward(loss);
    losses[i] = loss.value().item();
    per_sample[i] = p.gradients();
  });
  BatchGradient result;
  result.grads = std::move(per_sample[0]);
  result.loss = losses[0];
  for (std::size_t i = 1; i < batch.size(); ++i) {
    result.loss += losses[i];
    for (std::size_t t = 0; t < result.grads.size(); ++t) {
      Tensor& acc = result.grads[t];
      const Tensor& g = per_sample[i][t];
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += g[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (Tensor& g : result.grads)
    for (double& v : g.storage()) v *= inv;
  result.loss *= inv;
  return result;
}

TrainResult train(Model& model, const PatchSet& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.patches.empty()) throw DataError("training set is empty");
  for (auto l : data.labels)
    if (l == 0 || l > model.config().classes)
      throw ConfigError("training label " + std::to_string(l) + " outside model classes 1.." +
                        std::to_string(model.config().classes));
  const auto start = std::chrono::steady_clock::now();
  Adam adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.patches.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
      BatchGradient bg;
      try {
        bg = batch_gradient(model, data, batch, cfg.threads);
      } catch (const NumericError& e) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch_index) + ": " + e.what());
      }
      if (!std::isfinite(bg.loss))
        throw DivergenceError("loss is not finite at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batch_index));
      adam.step(model.parameters(), bg.grads);
      loss_sum += bg.loss * static_cast<double>(batch.size());
    }
    const double mean_loss = loss_sum / static_cast<double>(order.size());
    result.epoch_loss.push_back(mean_loss);
    if (on_epoch) on_epoch(epoch, mean_loss);
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

TrainResult train(Model& model, const HsiCube& cube, const LabelMap& labels, const Split& split, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  const PatchSet data = gather_patches(cube, labels, split.train, cfg.patch_size);
  return train(model, data, cfg, on_epoch);
}

namespace {

void check_class_count(const Model& model, const LabelMap& labels) {
  if (labels.num_classes() > model.config().classes)
    throw ConfigError("label map has " + std::to_string(labels.num_classes()) + " classes, model was built for " +
                      std::to_string(model.config().classes));
  if (labels.rows == 0 || labels.cols == 0) throw DataError("empty label map");
}

}  // namespace

EvalReport evaluate(const Model& model, const HsiCube& cube, const LabelMap& labels, const std::vector<std::size_t>& pixels,
                    std::size_t threads, Precision precision) {
  check_class_count(model, labels);
  if (cube.bands != model.config().bands)
    throw ConfigError("cube has " + std::to_string(cube.bands) + " bands, model expects " +
                      std::to_string(model.config().bands));
  const std::size_t S = model.config().patch_size;
  std::vector<std::uint16_t> predicted(pixels.size());
  std::vector<std::uint16_t> truth(pixels.size());
  parallel_for(pixels.size(), threads, [&](std::size_t i) {
    const std::size_t idx = pixels[i];
    const Patch p = extract_patch(cube, labels, {idx / cube.cols, idx % cube.cols}, S);
    truth[i] = p.label;
    predicted[i] = model.predict(p.data, precision);
  });
  EvalReport report;
  report.confusion = ConfusionMatrix(model.config().classes);
  for (std::size_t i = 0; i < pixels.size(); ++i) report.confusion.add(truth[i] - 1u, predicted[i] - 1u);
  report.metrics = compute_metrics(report.confusion);
  return report;
}

LabelMap predict_map(const Model& model, const HsiCube& cube, const LabelMap& labels, bool all_pixels, std::size_t threads,
                     Precision precision) {
  check_class_count(model, labels);
  if (labels.rows != cube.rows || labels.cols != cube.cols) throw DataError("label map and cube dimensions differ");
  LabelMap out(cube.rows, cube.cols, 0);
  std::vector<std::size_t> pixels;
  for (std::size_t i = 0; i < labels.labels.size(); ++i)
    if (all_pixels || labels.labels[i] != 0) pixels.push_back(i);
  const std::size_t S = model.config().patch_size;
  parallel_for(pixels.size(), threads, [&](std::size_t i) {
    const std::size_t idx = pixels[i];
    const Tensor window = extract_window(cube, {idx / cube.cols, idx % cube.cols}, S);
    out.labels[idx] = model.predict(window, precision);
  });
  return out;
}

}  // namespace ef
