#pragma once

#include <cstdint>

#include "energyformer/hsi_data.hpp"

namespace ef {

struct SynthConfig {
  std::size_t classes = 4;
  std::uint32_t rows = 32, cols = 32, bands = 16;
  double noise_sigma = 0.02;
  std::uint64_t seed = 7;
};

struct SynthScene {
  HsiCube cube;
  LabelMap labels;
  std::vector<std::vector<float>> signatures;  // classes x bands, noise-free
};

/// Smooth random class spectra painted over seeded Voronoi regions (one site
/// per class, every pixel labeled), plus zero-mean Gaussian noise.
SynthScene synthesize(const SynthConfig& cfg);

}  // namespace ef
