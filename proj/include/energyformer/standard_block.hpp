#pragma once

// Pre-norm softmax self-attention + feed-forward block. Baseline encoder used
// in place of the energy block for the "standard attention + FF" ablation.
// Shares the FoPE rotation of queries and keys.

#include <random>
#include <string>

#include "energyformer/energy_encoder.hpp"

namespace ef::standard {

/// Reuses the energy config for d_model, heads, hidden (FF width), ln_eps and FoPE.
void init_parameters(ParameterSet& params, const std::string& prefix, const energy::Config& cfg, std::mt19937_64& rng);

/// x: [T, d_model] -> [T, d_model].
Var forward(const BoundParameters& p, const std::string& prefix, Var x, const energy::Config& cfg);

}  // namespace ef::standard
