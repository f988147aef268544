#pragma once

// Enhanced convolutional block attention: spatial gating, channel gating,
// learnable fusion with layer normalization, 1x1 projection to the embedding
// width and class-token prepend.

#include <random>
#include <string>

#include "energyformer/parameters.hpp"

namespace ef::ecbam {

struct Config {
  std::size_t bands = 0;
  std::size_t embed_dim = 32;
  std::size_t spatial_kernel = 7;  // odd
  std::size_t reduction = 8;       // channel-MLP reduction ratio before clamping
  double ln_eps = 1e-5;
};

/// Reduction ratio actually used: the largest divisor of `bands` not above
/// min(reduction, bands).
std::size_t effective_reduction(std::size_t bands, std::size_t reduction);
std::size_t channel_hidden(const Config& cfg);

/// Adds every ECBAM tensor under the "ecbam." prefix.
void init_parameters(ParameterSet& params, const Config& cfg, std::mt19937_64& rng);

/// x: [S,S,K] -> map [S,S,1] = sigmoid(conv_k([max_c x ; avg_c x])).
Var spatial_attention(const BoundParameters& p, Var x);
/// x: [S,S,K] -> weights [1,1,K] = sigmoid(W1 silu(W0 max_s x) + W1 silu(W0 avg_s x)).
Var channel_attention(const BoundParameters& p, Var x);
/// x: [S,S,K] -> tokens [S*S+1, d_embed], class token first.
Var fuse_and_embed(const BoundParameters& p, Var x, const Config& cfg);

}  // namespace ef::ecbam
