#pragma once

// Fourier positional embedding for query/key vectors.
//
// Dimension pair m of a head is rotated at token position n by
//   exp(i w_m n) + sum_{r=1..D} a[m, r-1] exp(i (r+1) w_m n)
// when w_m >= w_floor, and left untouched otherwise. Dominant frequencies
// follow w_m = base^(-2m/d); the floor is 2 pi / N for N positioned tokens.
// Row 0 of a token sequence is the class token and is never rotated.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "energyformer/parameters.hpp"

namespace ef::fope {

struct Config {
  std::size_t head_dim = 8;   // even
  std::size_t harmonics = 2;  // D
  double base = 10000.0;
  bool enabled = true;
};

std::vector<double> dominant_frequencies(std::size_t head_dim, double base = 10000.0);
double floor_frequency(std::size_t positions);

/// Harmonic coefficients are [head_dim/2, harmonics], zero-initialized.
void init_parameters(ParameterSet& params, const std::string& prefix, const Config& cfg);

/// Phase multipliers for a token sequence: row t, pair m.
struct PhaseVars {
  Var re, im;                        // [tokens, head_dim/2]
  std::vector<std::uint8_t> active;  // tokens * head_dim/2, 0 = identity
  std::size_t tokens = 0, pairs = 0;
};

/// Plain-value phase field for inspection.
struct PhaseField {
  Tensor re, im;
  std::vector<std::uint8_t> active;
};

/// Phases for explicit positions; rows follow `positions` (no class-token row).
PhaseVars build_phase(Var coeffs, const Config& cfg, const std::vector<std::size_t>& positions, std::size_t floor_positions);
PhaseField build_phase(const Tensor& coeffs, const Config& cfg, const std::vector<std::size_t>& positions,
                       std::size_t floor_positions);

/// Same with an explicit frequency list and floor.
PhaseVars build_phase(Var coeffs, const std::vector<double>& frequencies, std::size_t harmonics,
                      const std::vector<std::size_t>& positions, double floor_frequency);

/// Phases for a class token followed by `patch_tokens` tokens at positions 0..patch_tokens-1.
PhaseVars sequence_phase(Var coeffs, const Config& cfg, std::size_t patch_tokens);

/// Rotates q or k [.., tokens, head_dim]. `conjugate` applies the transposed map,
/// used when pulling gradients back through the embedding.
Var apply(Var q_or_k, const PhaseVars& phase, bool conjugate = false);

}  // namespace ef::fope
