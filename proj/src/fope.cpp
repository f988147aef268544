#include "energyformer/fope.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "energyformer/error.hpp"

namespace ef::fope {

std::vector<double> dominant_frequencies(std::size_t head_dim, double base) {
  if (head_dim == 0 || head_dim % 2 != 0) throw ConfigError("FoPE head dimension must be even, got " + std::to_string(head_dim));
  if (!(base > 1.0)) throw ConfigError("FoPE base must exceed 1");
  std::vector<double> w(head_dim / 2);
  for (std::size_t m = 0; m < w.size(); ++m)
    w[m] = std::pow(base, -2.0 * static_cast<double>(m) / static_cast<double>(head_dim));
  return w;
}

double floor_frequency(std::size_t positions) {
  if (positions == 0) throw ArgumentError("floor frequency needs at least one position");
  return 2.0 * std::numbers::pi / static_cast<double>(positions);
}

void init_parameters(ParameterSet& params, const std::string& prefix, const Config& cfg) {
  dominant_frequencies(cfg.head_dim, cfg.base);
  params.add(prefix + "fope.coeffs", Tensor({cfg.head_dim / 2, std::max<std::size_t>(cfg.harmonics, 1)}, 0.0));
}

namespace {

// rows: optional leading identity row, then one row per position.
PhaseVars build_rows(Var coeffs, const std::vector<double>& w, std::size_t harmonics, bool enabled,
                     const std::vector<std::size_t>& positions, double w_floor, bool class_row) {
  Tape& tape = *coeffs.tape();
  const std::size_t P = w.size();
  if (coeffs.shape().size() != 2 || coeffs.shape()[0] != P)
    throw DimensionError("FoPE coefficients must be [" + std::to_string(P) + ", D], got " + to_string(coeffs.shape()));
  harmonics = std::min(harmonics, coeffs.shape()[1]);
  const std::size_t offset = class_row ? 1 : 0;
  const std::size_t T = positions.size() + offset;

  PhaseVars out;
  out.tokens = T;
  out.pairs = P;
  out.active.assign(T * P, 0);
  Tensor base_re({T, P}, 1.0), base_im({T, P}, 0.0);
  std::vector<Tensor> basis_re(harmonics, Tensor({T, P}, 0.0)), basis_im(harmonics, Tensor({T, P}, 0.0));
  for (std::size_t t = offset; t < T; ++t) {
    const double n = static_cast<double>(positions[t - offset]);
    for (std::size_t m = 0; m < P; ++m) {
      if (!enabled || w[m] < w_floor) continue;
      out.active[t * P + m] = 1;
      base_re[t * P + m] = std::cos(w[m] * n);
      base_im[t * P + m] = std::sin(w[m] * n);
      for (std::size_t r = 0; r < harmonics; ++r) {
        const double wr = static_cast<double>(r + 2) * w[m] * n;
        basis_re[r][t * P + m] = std::cos(wr);
        basis_im[r][t * P + m] = std::sin(wr);
      }
    }
  }
  out.re = tape.constant(std::move(base_re));
  out.im = tape.constant(std::move(base_im));
  for (std::size_t r = 0; r < harmonics; ++r) {
    Var a = expand(reshape(slice(coeffs, 1, r, r + 1), {1, P}), {T, P});
    out.re = out.re + a * tape.constant(basis_re[r]);
    out.im = out.im + a * tape.constant(basis_im[r]);
  }
  return out;
}

PhaseVars build_rows(Var coeffs, const Config& cfg, const std::vector<std::size_t>& positions, std::size_t floor_positions,
                     bool class_row) {
  return build_rows(coeffs, dominant_frequencies(cfg.head_dim, cfg.base), cfg.harmonics, cfg.enabled, positions,
                    floor_frequency(floor_positions), class_row);
}

}  // namespace

PhaseVars build_phase(Var coeffs, const Config& cfg, const std::vector<std::size_t>& positions, std::size_t floor_positions) {
  return build_rows(coeffs, cfg, positions, floor_positions, false);
}

PhaseField build_phase(const Tensor& coeffs, const Config& cfg, const std::vector<std::size_t>& positions,
                       std::size_t floor_positions) {
  Tape tape;
  PhaseVars v = build_rows(tape.constant(coeffs), cfg, positions, floor_positions, false);
  return PhaseField{v.re.value(), v.im.value(), std::move(v.active)};
}

PhaseVars build_phase(Var coeffs, const std::vector<double>& frequencies, std::size_t harmonics,
                      const std::vector<std::size_t>& positions, double floor_frequency) {
  return build_rows(coeffs, frequencies, harmonics, true, positions, floor_frequency, false);
}

PhaseVars sequence_phase(Var coeffs, const Config& cfg, std::size_t patch_tokens) {
  std::vector<std::size_t> positions(patch_tokens);
  for (std::size_t i = 0; i < patch_tokens; ++i) positions[i] = i;
  return build_rows(coeffs, cfg, positions, patch_tokens, true);
}

Var apply(Var q_or_k, const PhaseVars& phase, bool conjugate) {
  const Shape& s = q_or_k.shape();
  if (s.back() % 2 != 0) throw ConfigError("FoPE needs an even head dimension, got " + std::to_string(s.back()));
  return rotate_pairs(q_or_k, phase.re, phase.im, phase.active, conjugate);
}

}  // namespace ef::fope
