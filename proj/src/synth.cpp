#include "energyformer/synth.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "energyformer/error.hpp"

namespace ef {

SynthScene synthesize(const SynthConfig& cfg) {
  if (cfg.classes < 2) throw ArgumentError("synthesis needs at least 2 classes");
  if (cfg.classes > 65535) throw ArgumentError("too many classes for 16-bit labels");
  if (cfg.rows == 0 || cfg.cols == 0 || cfg.bands == 0) throw ArgumentError("synthetic cube extents must be positive");
  if (!(cfg.noise_sigma >= 0.0)) throw ArgumentError("noise sigma must be non-negative");
  const std::size_t sites = cfg.classes;
  if (sites > static_cast<std::size_t>(cfg.rows) * cfg.cols) throw ArgumentError("cube too small for the requested classes");

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SynthScene scene;

  // Offset plus three Gaussian bumps over the band axis.
  const double K = static_cast<double>(cfg.bands);
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    std::vector<float> sig(cfg.bands);
    const double offset = 0.2 + 0.4 * unit(rng);
    double centers[3], widths[3], amps[3];
    for (int j = 0; j < 3; ++j) {
      centers[j] = unit(rng) * K;
      widths[j] = (0.08 + 0.25 * unit(rng)) * K;
      amps[j] = -0.3 + 0.6 * unit(rng);
    }
    for (std::size_t b = 0; b < cfg.bands; ++b) {
      double v = offset;
      for (int j = 0; j < 3; ++j) {
        const double z = (static_cast<double>(b) - centers[j]) / widths[j];
        v += amps[j] * std::exp(-0.5 * z * z);
      }
      sig[b] = static_cast<float>(v);
    }
    scene.signatures.push_back(std::move(sig));
  }

  // One distinct site pixel per class, so each class is a single contiguous region.
  std::set<std::size_t> taken;
  std::vector<std::pair<double, double>> site_pos;
  std::uniform_int_distribution<std::size_t> pick(0, static_cast<std::size_t>(cfg.rows) * cfg.cols - 1);
  while (site_pos.size() < sites) {
    const std::size_t p = pick(rng);
    if (!taken.insert(p).second) continue;
    site_pos.emplace_back(static_cast<double>(p / cfg.cols), static_cast<double>(p % cfg.cols));
  }

  scene.labels = LabelMap(cfg.rows, cfg.cols, 0);
  scene.cube = HsiCube(cfg.rows, cfg.cols, cfg.bands);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0.0 ? cfg.noise_sigma : 1.0);
  for (std::size_t r = 0; r < cfg.rows; ++r)
    for (std::size_t c = 0; c < cfg.cols; ++c) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::max();
      for (std::size_t s = 0; s < sites; ++s) {
        const double dr = static_cast<double>(r) - site_pos[s].first;
        const double dc = static_cast<double>(c) - site_pos[s].second;
        const double d = dr * dr + dc * dc;
        if (d < best_d) {
          best_d = d;
          best = s;
        }
      }
      const std::size_t cls = best;
      scene.labels.at(r, c) = static_cast<std::uint16_t>(cls + 1);
      for (std::size_t b = 0; b < cfg.bands; ++b) {
        double v = scene.signatures[cls][b];
        if (cfg.noise_sigma > 0.0) v += noise(rng);
        scene.cube.at(r, c, b) = static_cast<float>(v);
      }
    }
  return scene;
}

}  // namespace ef
