#include "energyformer/parameters.hpp"

#include <cmath>

#include "energyformer/error.hpp"

namespace ef {

Tensor& ParameterSet::add(std::string name, Tensor init) {
  if (contains(name)) throw ConfigError("duplicate parameter name " + name);
  init.set_requires_grad(true);
  entries_.emplace_back(std::move(name), std::move(init));
  return entries_.back().second;
}

std::size_t ParameterSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].first == name) return i;
  throw ConfigError("unknown parameter " + std::string(name));
}

Tensor& ParameterSet::get(std::string_view name) { return entries_[index_of(name)].second; }
const Tensor& ParameterSet::get(std::string_view name) const { return entries_[index_of(name)].second; }

bool ParameterSet::contains(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.first == name) return true;
  return false;
}

std::size_t ParameterSet::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

BoundParameters::BoundParameters(Tape& tape, const ParameterSet& params, bool trainable)
    : tape_(&tape), params_(&params) {
  vars_.reserve(params.size());
  for (const auto& [name, value] : params.entries())
    vars_.push_back(trainable ? tape.parameter(value) : tape.constant(value));
}

Var BoundParameters::operator[](std::string_view name) const { return vars_[params_->index_of(name)]; }

std::vector<Tensor> BoundParameters::gradients() const {
  std::vector<Tensor> out;
  out.reserve(vars_.size());
  for (Var v : vars_) out.push_back(tape_->grad(v));
  return out;
}

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.storage()) v = dist(rng);
  return t;
}

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.storage()) v = dist(rng);
  return t;
}

}  // namespace ef
