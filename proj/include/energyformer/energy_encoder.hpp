#pragma once

// Energy transformer block.
//
// Tokens x are normalized, g = ELN(x), and scored by
//   E_att = sum_h -(1/beta) sum_C log sum_{B != C} exp(beta A^h_BC),  A^h_BC = <K^h_B, Q^h_C>
//   E_hop = -1/2 sum_tokens |relu(W_h g)|^2
// with Q, K the FoPE-rotated projections of g. The forward pass runs T steps
// of x <- x - alpha * dE/dx, where dE/dx is assembled in closed form from tape
// primitives so a single reverse pass differentiates through the dynamics.

#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "energyformer/fope.hpp"
#include "energyformer/parameters.hpp"

namespace ef::energy {

struct Config {
  std::size_t d_model = 32;
  std::size_t heads = 4;
  std::size_t hidden = 128;  // rows of W_h
  double beta = 0.0;         // <= 0 selects 1/sqrt(head_dim)
  double step_size = 0.1;
  std::size_t steps = 4;
  double ln_eps = 1e-5;
  fope::Config fope;  // head_dim is overwritten with d_model / heads
};

std::size_t head_dim(const Config& cfg);
double effective_beta(const Config& cfg);
void validate(const Config& cfg);

/// W_Q, W_K as [H, d_model, d]; W_h as [hidden, d_model]; ELN gain/shift; FoPE coefficients.
void init_parameters(ParameterSet& params, const std::string& prefix, const Config& cfg, std::mt19937_64& rng);

struct Weights {
  Var wq, wk, wh, eln_gain, eln_shift;
  fope::PhaseVars phase;
  double beta = 1.0;
  double step_size = 0.1;
  std::size_t steps = 1;
  double ln_eps = 1e-5;
};

/// `tokens` counts the class token.
Weights bind(const BoundParameters& p, const std::string& prefix, const Config& cfg, std::size_t tokens);

/// [T, d_model] x [H, d_model, d] -> FoPE-rotated [H, T, d].
Var project(Var g, Var w, const fope::PhaseVars& phase);
/// A[h][B][C] = <K_B, Q_C>; inputs [H, T, d].
Var attention_scores(Var keys, Var queries);
/// Per-head energies [H, 1, 1] from scores [H, T, T]. Needs T >= 2.
Var attention_energy_per_head(Var scores, double beta);
Var attention_energy(Var scores, double beta);
Var hopfield_energy(Var g, Var wh);

struct Energies {
  Var attention, hopfield, total;
};

/// Energies of ELN(x).
Energies energies(Var x, const Weights& w);

/// Closed-form gradient of energies(x).total with respect to x.
Var energy_gradient(Var x, const Weights& w);

struct TraceRow {
  std::size_t step = 0;
  double attention = 0.0, hopfield = 0.0, total = 0.0;
};
using EnergyTrace = std::vector<TraceRow>;

struct ForwardResult {
  Var x;
  EnergyTrace trace;  // steps + 1 rows when recorded, else empty
};

/// Runs `w.steps` descent steps. Throws DivergenceError naming the step and alpha
/// when a value stops being finite.
ForwardResult forward(Var x0, const Weights& w, bool record_trace = false);

void write_trace_csv(const EnergyTrace& trace, std::ostream& out);

}  // namespace ef::energy
