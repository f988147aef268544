#include "energyformer/ecbam.hpp"

#include <array>
#include <cmath>

#include "energyformer/error.hpp"

namespace ef::ecbam {

namespace {

// Broadcasts a one-element tensor to `shape`.
Var broadcast_scalar(Var s, const Shape& shape) {
  return expand(reshape(s, Shape(shape.size(), 1)), shape);
}

void check_patch(Var x) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[0] != s[1])
    throw DimensionError("ECBAM expects a square [S,S,K] patch, got " + to_string(s));
}

}  // namespace

std::size_t effective_reduction(std::size_t bands, std::size_t reduction) {
  if (bands == 0 || reduction == 0) throw ConfigError("bands and reduction ratio must be positive");
  std::size_t r = std::min(reduction, bands);
  while (bands % r != 0) --r;
  return r;
}

std::size_t channel_hidden(const Config& cfg) { return cfg.bands / effective_reduction(cfg.bands, cfg.reduction); }

void init_parameters(ParameterSet& params, const Config& cfg, std::mt19937_64& rng) {
  if (cfg.spatial_kernel % 2 == 0) throw ConfigError("spatial kernel size must be odd");
  const std::size_t K = cfg.bands, k = cfg.spatial_kernel, h = channel_hidden(cfg), d = cfg.embed_dim;
  params.add("ecbam.spatial.kernel", xavier_uniform({k, k, 2, 1}, k * k * 2, k * k, rng));
  params.add("ecbam.spatial.bias", Tensor({1}, 0.0));
  params.add("ecbam.channel.w0", xavier_uniform({K, h}, K, h, rng));
  params.add("ecbam.channel.w1", xavier_uniform({h, K}, h, K, rng));
  params.add("ecbam.fusion.gamma", Tensor::scalar(0.1));
  params.add("ecbam.fusion.alpha_c", Tensor::scalar(1.0));
  params.add("ecbam.fusion.alpha_s", Tensor::scalar(1.0));
  params.add("ecbam.norm.gain", Tensor({K}, 1.0));
  params.add("ecbam.norm.shift", Tensor({K}, 0.0));
  params.add("ecbam.embed.weight", xavier_uniform({K, d}, K, d, rng));
  params.add("ecbam.embed.bias", Tensor({d}, 0.0));
  params.add("ecbam.class_token", normal_tensor({1, d}, 0.02, rng));
}

Var spatial_attention(const BoundParameters& p, Var x) {
  check_patch(x);
  const std::size_t S = x.shape()[0];
  Var x4 = reshape(x, {1, S, S, x.shape()[2]});
  const std::array<Var, 2> pooled{max_reduce(x4, 3), mean(x4, 3)};
  Var stacked = concat(pooled, 3);  // [1,S,S,2]: max first
  Var map = sigmoid(conv2d(stacked, p["ecbam.spatial.kernel"], p["ecbam.spatial.bias"]));
  return reshape(map, {S, S, 1});
}

Var channel_attention(const BoundParameters& p, Var x) {
  check_patch(x);
  const std::size_t S = x.shape()[0], K = x.shape()[2];
  Var flat = reshape(x, {S * S, K});
  Var w0 = p["ecbam.channel.w0"];
  Var w1 = p["ecbam.channel.w1"];
  Var from_max = matmul(silu(matmul(max_reduce(flat, 0), w0)), w1);
  Var from_avg = matmul(silu(matmul(mean(flat, 0), w0)), w1);
  return reshape(sigmoid(from_max + from_avg), {1, 1, K});
}

Var fuse_and_embed(const BoundParameters& p, Var x, const Config& cfg) {
  check_patch(x);
  const std::size_t S = x.shape()[0], K = x.shape()[2];
  if (K != cfg.bands) throw DimensionError("patch has " + std::to_string(K) + " bands, model expects " + std::to_string(cfg.bands));
  const Shape full{S, S, K};
  Var f_s = expand(spatial_attention(p, x), full) * x;
  Var f_c = expand(channel_attention(p, x), full) * x;
  Var mix = broadcast_scalar(p["ecbam.fusion.alpha_c"], full) * f_c + broadcast_scalar(p["ecbam.fusion.alpha_s"], full) * f_s;
  Var pre = x + broadcast_scalar(p["ecbam.fusion.gamma"], full) * mix;
  Var fused = layernorm(reshape(pre, {S * S, K}), p["ecbam.norm.gain"], p["ecbam.norm.shift"], cfg.ln_eps);
  const std::size_t d = p["ecbam.embed.weight"].shape()[1];
  Var bias = expand(reshape(p["ecbam.embed.bias"], {1, d}), {S * S, d});
  Var embedded = matmul(fused, p["ecbam.embed.weight"]) + bias;
  const std::array<Var, 2> parts{p["ecbam.class_token"], embedded};
  return concat(parts, 0);
}

}  // namespace ef::ecbam
