#include "energyformer/standard_block.hpp"

#include <cmath>

namespace ef::standard {

void init_parameters(ParameterSet& params, const std::string& prefix, const energy::Config& cfg, std::mt19937_64& rng) {
  energy::validate(cfg);
  const std::size_t H = cfg.heads, D = cfg.d_model, d = energy::head_dim(cfg), F = cfg.hidden;
  params.add(prefix + "ln1.gain", Tensor({D}, 1.0));
  params.add(prefix + "ln1.shift", Tensor({D}, 0.0));
  params.add(prefix + "wq", xavier_uniform({H, D, d}, D, d, rng));
  params.add(prefix + "wk", xavier_uniform({H, D, d}, D, d, rng));
  params.add(prefix + "wv", xavier_uniform({H, D, d}, D, d, rng));
  params.add(prefix + "wo", xavier_uniform({H, d, D}, H * d, D, rng));
  params.add(prefix + "ln2.gain", Tensor({D}, 1.0));
  params.add(prefix + "ln2.shift", Tensor({D}, 0.0));
  params.add(prefix + "ff.w1", xavier_uniform({D, F}, D, F, rng));
  params.add(prefix + "ff.b1", Tensor({F}, 0.0));
  params.add(prefix + "ff.w2", xavier_uniform({F, D}, F, D, rng));
  params.add(prefix + "ff.b2", Tensor({D}, 0.0));
  fope::Config fc = cfg.fope;
  fc.head_dim = d;
  fope::init_parameters(params, prefix, fc);
}

Var forward(const BoundParameters& p, const std::string& prefix, Var x, const energy::Config& cfg) {
  const std::size_t T = x.shape()[0], D = x.shape()[1], F = cfg.hidden;
  const double scale_qk = 1.0 / std::sqrt(static_cast<double>(energy::head_dim(cfg)));
  fope::Config fc = cfg.fope;
  fc.head_dim = energy::head_dim(cfg);
  const fope::PhaseVars phase = fope::sequence_phase(p[prefix + "fope.coeffs"], fc, T - 1);

  Var h = layernorm(x, p[prefix + "ln1.gain"], p[prefix + "ln1.shift"], cfg.ln_eps);
  Var h3 = reshape(h, {1, T, D});
  Var q = fope::apply(matmul(h3, p[prefix + "wq"]), phase);
  Var k = fope::apply(matmul(h3, p[prefix + "wk"]), phase);
  Var v = matmul(h3, p[prefix + "wv"]);
  Var att = softmax(scale(matmul(q, transpose(k)), scale_qk), 2);  // rows are queries
  Var mixed = reshape(sum(matmul(matmul(att, v), p[prefix + "wo"]), 0), {T, D});
  x = x + mixed;

  Var h2 = layernorm(x, p[prefix + "ln2.gain"], p[prefix + "ln2.shift"], cfg.ln_eps);
  Var b1 = expand(reshape(p[prefix + "ff.b1"], {1, F}), {T, F});
  Var b2 = expand(reshape(p[prefix + "ff.b2"], {1, D}), {T, D});
  Var ff = matmul(relu(matmul(h2, p[prefix + "ff.w1"]) + b1), p[prefix + "ff.w2"]) + b2;
  return x + ff;
}

}  // namespace ef::standard
