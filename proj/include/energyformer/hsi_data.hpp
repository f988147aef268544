#pragma once

// Hyperspectral cubes, label maps, their binary file formats, patch
// extraction and stratified train/test splitting.
//
// Cube file:  "HSIC1\n", u32 M, u32 N, u32 K, then M*N*K f32, (row, col, band) order.
// Label file: "HSIL1\n", u32 M, u32 N, then M*N u16.
// All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "energyformer/tensor.hpp"

namespace ef {

struct HsiCube {
  std::uint32_t rows = 0, cols = 0, bands = 0;
  std::vector<float> values;  // rows*cols*bands, row-major (row, col, band)

  HsiCube() = default;
  HsiCube(std::uint32_t m, std::uint32_t n, std::uint32_t k, float fill = 0.0f);

  float& at(std::size_t r, std::size_t c, std::size_t b) { return values[(r * cols + c) * bands + b]; }
  float at(std::size_t r, std::size_t c, std::size_t b) const { return values[(r * cols + c) * bands + b]; }

  /// Throws DataError if dimensions are zero, sizes disagree or a value is not finite.
  void validate() const;

  friend bool operator==(const HsiCube&, const HsiCube&) = default;
};

struct LabelMap {
  std::uint32_t rows = 0, cols = 0;
  std::vector<std::uint16_t> labels;  // 0 = unlabeled, 1..C = classes

  LabelMap() = default;
  LabelMap(std::uint32_t m, std::uint32_t n, std::uint16_t fill = 0);

  std::uint16_t& at(std::size_t r, std::size_t c) { return labels[r * cols + c]; }
  std::uint16_t at(std::size_t r, std::size_t c) const { return labels[r * cols + c]; }

  /// Largest label present.
  std::uint16_t num_classes() const;
  /// Pixel count per class label (label 0 excluded).
  std::map<std::uint16_t, std::size_t> class_counts() const;

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

HsiCube read_cube(const std::filesystem::path& path);
void write_cube(const HsiCube& cube, const std::filesystem::path& path);
LabelMap read_labels(const std::filesystem::path& path);
void write_labels(const LabelMap& labels, const std::filesystem::path& path);

// In-memory variants; the file functions are thin wrappers around these.
HsiCube decode_cube(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_cube(const HsiCube& cube);
LabelMap decode_labels(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_labels(const LabelMap& labels);

/// Per-band min-max scaling to [0, 1]. Constant bands become 0.
HsiCube normalize(const HsiCube& cube);

/// Number of fully contained S x S windows: (M - S + 1)(N - S + 1).
std::size_t patch_count(std::size_t rows, std::size_t cols, std::size_t patch_size);

enum class PatchMode { centered_mirror, valid };

struct PixelPos {
  std::size_t row = 0, col = 0;
  friend bool operator==(const PixelPos&, const PixelPos&) = default;
};

struct Patch {
  PixelPos center;
  std::size_t size = 0;  // S
  std::uint16_t label = 0;
  Tensor data;  // [S, S, K]
};

/// Reflects an out-of-range index back into [0, extent) without repeating the edge
/// sample (-1 -> 1, extent -> extent - 2).
std::size_t mirror_index(long index, std::size_t extent);

/// Window offsets along one axis are [-floor(S/2), S - 1 - floor(S/2)], so odd S is
/// centered and even S extends one pixel further up/left than down/right.
Patch extract_patch(const HsiCube& cube, const LabelMap& labels, PixelPos center, std::size_t patch_size,
                    PatchMode mode = PatchMode::centered_mirror);

/// Same window without the label requirement; used for dense map prediction.
Tensor extract_window(const HsiCube& cube, PixelPos center, std::size_t patch_size,
                      PatchMode mode = PatchMode::centered_mirror);

struct Split {
  std::vector<std::size_t> train;  // linear pixel indices (row * cols + col)
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
  double fraction = 0.0;
};

/// Per class, max(1, round(fraction * count)) pixels (capped at the class size) go to
/// train, the rest to test. Deterministic in (labels, fraction, seed).
Split stratified_split(const LabelMap& labels, double fraction, std::uint64_t seed);

}  // namespace ef
