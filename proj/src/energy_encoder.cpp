#include "energyformer/energy_encoder.hpp"

#include <cmath>
#include <ostream>

#include "energyformer/error.hpp"

namespace ef::energy {

std::size_t head_dim(const Config& cfg) { return cfg.d_model / cfg.heads; }

double effective_beta(const Config& cfg) {
  return cfg.beta > 0.0 ? cfg.beta : 1.0 / std::sqrt(static_cast<double>(head_dim(cfg)));
}

void validate(const Config& cfg) {
  if (cfg.heads == 0 || cfg.d_model == 0 || cfg.d_model % cfg.heads != 0)
    throw ConfigError("d_model (" + std::to_string(cfg.d_model) + ") must be a positive multiple of heads (" +
                      std::to_string(cfg.heads) + ")");
  if (head_dim(cfg) % 2 != 0) throw ConfigError("head dimension must be even for FoPE");
  if (cfg.hidden == 0) throw ConfigError("Hopfield hidden size must be positive");
  if (cfg.steps == 0) throw ConfigError("energy descent needs at least one step");
  if (!(cfg.step_size >= 0.0)) throw ConfigError("step size must be non-negative");
}

void init_parameters(ParameterSet& params, const std::string& prefix, const Config& cfg, std::mt19937_64& rng) {
  validate(cfg);
  const std::size_t H = cfg.heads, D = cfg.d_model, d = head_dim(cfg);
  params.add(prefix + "wq", xavier_uniform({H, D, d}, D, d, rng));
  params.add(prefix + "wk", xavier_uniform({H, D, d}, D, d, rng));
  params.add(prefix + "wh", xavier_uniform({cfg.hidden, D}, D, cfg.hidden, rng));
  params.add(prefix + "eln.gain", Tensor({D}, 1.0));
  params.add(prefix + "eln.shift", Tensor({D}, 0.0));
  fope::Config fc = cfg.fope;
  fc.head_dim = d;
  fope::init_parameters(params, prefix, fc);
}

Weights bind(const BoundParameters& p, const std::string& prefix, const Config& cfg, std::size_t tokens) {
  validate(cfg);
  if (tokens < 2) throw ContractError("energy attention needs at least 2 tokens");
  fope::Config fc = cfg.fope;
  fc.head_dim = head_dim(cfg);
  Weights w;
  w.wq = p[prefix + "wq"];
  w.wk = p[prefix + "wk"];
  w.wh = p[prefix + "wh"];
  w.eln_gain = p[prefix + "eln.gain"];
  w.eln_shift = p[prefix + "eln.shift"];
  w.phase = fope::sequence_phase(p[prefix + "fope.coeffs"], fc, tokens - 1);
  w.beta = effective_beta(cfg);
  w.step_size = cfg.step_size;
  w.steps = cfg.steps;
  w.ln_eps = cfg.ln_eps;
  return w;
}

Var project(Var g, Var w, const fope::PhaseVars& phase) {
  const Shape& gs = g.shape();
  if (gs.size() != 2) throw DimensionError("tokens must be [T, d_model], got " + to_string(gs));
  Var proj = matmul(reshape(g, {1, gs[0], gs[1]}), w);
  return fope::apply(proj, phase);
}

Var attention_scores(Var keys, Var queries) { return matmul(keys, transpose(queries)); }

Var attention_energy_per_head(Var scores, double beta) {
  const Shape& s = scores.shape();
  if (s.size() != 3 || s[1] != s[2]) throw DimensionError("scores must be [H, T, T], got " + to_string(s));
  if (s[1] < 2) throw ContractError("attention energy needs at least 2 tokens (the B != C sum is empty)");
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  Var lse = logsumexp(scale(scores, beta), 1, true);  // [H, 1, T], over B for each column C
  return scale(sum(lse, 2), -1.0 / beta);
}

Var attention_energy(Var scores, double beta) { return sum(attention_energy_per_head(scores, beta)); }

Var hopfield_energy(Var g, Var wh) {
  Var u = relu(matmul(g, transpose(wh)));
  return scale(sum(square(u)), -0.5);
}

namespace {

struct Normalized {
  Var g;     // ELN(x)
  Var xhat;  // (x - mu) / sigma
  Var inv;   // 1 / sigma, expanded to [T, D]
};

// ELN assembled from primitives so its Jacobian can be applied explicitly.
Normalized normalize(Var x, const Weights& w) {
  const Shape& s = x.shape();
  if (s.size() != 2) throw DimensionError("tokens must be [T, d_model], got " + to_string(s));
  const Shape full = s;
  const std::size_t D = s[1];
  Var centered = x - expand(mean(x, 1), full);
  Var inv = expand(rsqrt(add_scalar(mean(square(centered), 1), w.ln_eps)), full);
  Var xhat = centered * inv;
  Var gain = expand(reshape(w.eln_gain, {1, D}), full);
  Var shift = expand(reshape(w.eln_shift, {1, D}), full);
  return {xhat * gain + shift, xhat, inv};
}

struct Projected {
  Var q, k, scores;
};

Projected project_all(Var g, const Weights& w) {
  Projected p;
  p.q = project(g, w.wq, w.phase);
  p.k = project(g, w.wk, w.phase);
  p.scores = attention_scores(p.k, p.q);
  return p;
}

Energies energies_from(const Normalized& n, const Projected& p, const Weights& w) {
  Energies e;
  e.attention = attention_energy(p.scores, w.beta);
  e.hopfield = hopfield_energy(n.g, w.wh);
  e.total = e.attention + e.hopfield;
  return e;
}

Var gradient_from(const Normalized& n, const Projected& p, const Weights& w) {
  const Shape& full = n.g.shape();
  const std::size_t T = full[0], D = full[1];
  // dE_att/dA_BC = -sigma_BC, the column softmax over B != C.
  Var sigma = softmax(scale(p.scores, w.beta), 1, true);
  Var dk = neg(matmul(sigma, p.q));
  Var dq = neg(matmul(transpose(sigma), p.k));
  dq = fope::apply(dq, w.phase, true);
  dk = fope::apply(dk, w.phase, true);
  Var dg_heads = matmul(dq, transpose(w.wq)) + matmul(dk, transpose(w.wk));  // [H, T, D]
  Var dg = reshape(sum(dg_heads, 0), {T, D});
  dg = dg - matmul(relu(matmul(n.g, transpose(w.wh))), w.wh);
  // Back through ELN.
  Var dxhat = dg * expand(reshape(w.eln_gain, {1, D}), full);
  Var inner = dxhat - expand(mean(dxhat, 1), full) - n.xhat * expand(mean(dxhat * n.xhat, 1), full);
  return n.inv * inner;
}

}  // namespace

Energies energies(Var x, const Weights& w) {
  const Normalized n = normalize(x, w);
  return energies_from(n, project_all(n.g, w), w);
}

Var energy_gradient(Var x, const Weights& w) {
  const Normalized n = normalize(x, w);
  return gradient_from(n, project_all(n.g, w), w);
}

ForwardResult forward(Var x0, const Weights& w, bool record_trace) {
  if (w.steps == 0) throw ContractError("energy descent needs at least one step");
  ForwardResult result;
  result.x = x0;
  auto record = [&](std::size_t step, const Energies& e) {
    result.trace.push_back({step, e.attention.value().item(), e.hopfield.value().item(), e.total.value().item()});
  };
  std::size_t step = 0;
  try {
    for (; step < w.steps; ++step) {
      const Normalized n = normalize(result.x, w);
      const Projected p = project_all(n.g, w);
      if (record_trace) record(step, energies_from(n, p, w));
      result.x = result.x - scale(gradient_from(n, p, w), w.step_size);
    }
    if (record_trace) record(step, energies(result.x, w));
  } catch (const NumericError& e) {
    throw DivergenceError("energy descent diverged at step " + std::to_string(step) + " with alpha " +
                          std::to_string(w.step_size) + ": " + e.what());
  }
  return result;
}

void write_trace_csv(const EnergyTrace& trace, std::ostream& out) {
  out << "step,E_ATT,E_h,E_total\n";
  out.precision(17);
  for (const auto& r : trace) out << r.step << ',' << r.attention << ',' << r.hopfield << ',' << r.total << '\n';
}

}  // namespace ef::energy
