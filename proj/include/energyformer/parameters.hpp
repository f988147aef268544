#pragma once

#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "energyformer/autodiff.hpp"

namespace ef {

/// Named learnable tensors in insertion order. The order fixes the checkpoint
/// layout and the optimizer state layout.
class ParameterSet {
 public:
  using Entry = std::pair<std::string, Tensor>;

  Tensor& add(std::string name, Tensor init);
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const noexcept;

  std::vector<Entry>& entries() noexcept { return entries_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

 private:
  std::vector<Entry> entries_;
};

/// A ParameterSet registered on one tape for a forward pass.
class BoundParameters {
 public:
  BoundParameters(Tape& tape, const ParameterSet& params, bool trainable = true);

  Var operator[](std::string_view name) const;
  Tape& tape() const noexcept { return *tape_; }

  /// Gradients in ParameterSet order after `tape().backward(...)`.
  std::vector<Tensor> gradients() const;

 private:
  Tape* tape_;
  const ParameterSet* params_;
  std::vector<Var> vars_;
};

// Initializers.
Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng);
/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

}  // namespace ef
