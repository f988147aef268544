#include "energyformer/hsi_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>
#include <string_view>

#include "energyformer/error.hpp"

namespace ef {

namespace {

constexpr std::string_view kCubeMagic = "HSIC1\n";
constexpr std::string_view kLabelMagic = "HSIL1\n";

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void expect_magic(std::string_view magic) {
    if (bytes_.size() < magic.size() || std::memcmp(bytes_.data(), magic.data(), magic.size()) != 0)
      throw FormatError("bad magic, expected \"" + std::string(magic.substr(0, 5)) + "\\n\"", 0);
    pos_ = magic.size();
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint16_t u16(const char* what) {
    need(2, what);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  /// Fails unless `count * width` more bytes are available.
  void need_payload(std::uint64_t count, std::size_t width, const char* what) {
    const std::uint64_t remaining = bytes_.size() - pos_;
    if (count > std::numeric_limits<std::uint64_t>::max() / width || count * width > remaining)
      throw FormatError(std::string("truncated ") + what + ": header declares " + std::to_string(count) +
                            " entries but only " + std::to_string(remaining) + " bytes follow",
                        bytes_.size());
  }

  void expect_end() {
    if (pos_ != bytes_.size())
      throw FormatError(std::to_string(bytes_.size() - pos_) + " trailing bytes after payload", pos_);
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated while reading ") + what, bytes_.size());
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

HsiCube::HsiCube(std::uint32_t m, std::uint32_t n, std::uint32_t k, float fill)
    : rows(m), cols(n), bands(k), values(static_cast<std::size_t>(m) * n * k, fill) {}

void HsiCube::validate() const {
  if (rows == 0 || cols == 0 || bands == 0) throw DataError("cube extents must be positive");
  if (values.size() != static_cast<std::size_t>(rows) * cols * bands)
    throw DataError("cube payload size does not match its extents");
  for (float v : values)
    if (!std::isfinite(v)) throw DataError("cube contains a non-finite value");
}

LabelMap::LabelMap(std::uint32_t m, std::uint32_t n, std::uint16_t fill)
    : rows(m), cols(n), labels(static_cast<std::size_t>(m) * n, fill) {}

std::uint16_t LabelMap::num_classes() const {
  std::uint16_t c = 0;
  for (auto l : labels) c = std::max(c, l);
  return c;
}

std::map<std::uint16_t, std::size_t> LabelMap::class_counts() const {
  std::map<std::uint16_t, std::size_t> counts;
  for (auto l : labels)
    if (l != 0) ++counts[l];
  return counts;
}

std::vector<std::uint8_t> encode_cube(const HsiCube& cube) {
  cube.validate();
  std::vector<std::uint8_t> out(kCubeMagic.begin(), kCubeMagic.end());
  out.reserve(kCubeMagic.size() + 12 + cube.values.size() * 4);
  put_u32(out, cube.rows);
  put_u32(out, cube.cols);
  put_u32(out, cube.bands);
  for (float v : cube.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

HsiCube decode_cube(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.expect_magic(kCubeMagic);
  const std::size_t header_at = r.pos();
  HsiCube cube;
  cube.rows = r.u32("rows");
  cube.cols = r.u32("cols");
  cube.bands = r.u32("bands");
  if (cube.rows == 0 || cube.cols == 0 || cube.bands == 0) throw FormatError("zero cube extent", header_at);
  const std::uint64_t count = static_cast<std::uint64_t>(cube.rows) * cube.cols * cube.bands;
  r.need_payload(count, 4, "cube payload");
  cube.values.resize(count);
  for (auto& v : cube.values) v = r.f32("cube value");
  r.expect_end();
  return cube;
}

std::vector<std::uint8_t> encode_labels(const LabelMap& labels) {
  if (labels.labels.size() != static_cast<std::size_t>(labels.rows) * labels.cols)
    throw DataError("label payload size does not match its extents");
  std::vector<std::uint8_t> out(kLabelMagic.begin(), kLabelMagic.end());
  put_u32(out, labels.rows);
  put_u32(out, labels.cols);
  for (auto l : labels.labels) put_u16(out, l);
  return out;
}

LabelMap decode_labels(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.expect_magic(kLabelMagic);
  const std::size_t header_at = r.pos();
  LabelMap map;
  map.rows = r.u32("rows");
  map.cols = r.u32("cols");
  if (map.rows == 0 || map.cols == 0) throw FormatError("zero label-map extent", header_at);
  const std::uint64_t count = static_cast<std::uint64_t>(map.rows) * map.cols;
  r.need_payload(count, 2, "label payload");
  map.labels.resize(count);
  for (auto& l : map.labels) l = r.u16("label");
  r.expect_end();
  return map;
}

HsiCube read_cube(const std::filesystem::path& path) { return decode_cube(slurp(path)); }
void write_cube(const HsiCube& cube, const std::filesystem::path& path) { spit(path, encode_cube(cube)); }
LabelMap read_labels(const std::filesystem::path& path) { return decode_labels(slurp(path)); }
void write_labels(const LabelMap& labels, const std::filesystem::path& path) { spit(path, encode_labels(labels)); }

HsiCube normalize(const HsiCube& cube) {
  cube.validate();
  HsiCube out = cube;
  const std::size_t pixels = static_cast<std::size_t>(cube.rows) * cube.cols;
  for (std::size_t b = 0; b < cube.bands; ++b) {
    float lo = std::numeric_limits<float>::max(), hi = std::numeric_limits<float>::lowest();
    for (std::size_t p = 0; p < pixels; ++p) {
      lo = std::min(lo, cube.values[p * cube.bands + b]);
      hi = std::max(hi, cube.values[p * cube.bands + b]);
    }
    const double range = static_cast<double>(hi) - static_cast<double>(lo);
    for (std::size_t p = 0; p < pixels; ++p) {
      float& v = out.values[p * cube.bands + b];
      v = range > 0.0 ? static_cast<float>((static_cast<double>(v) - lo) / range) : 0.0f;
    }
  }
  return out;
}

std::size_t patch_count(std::size_t rows, std::size_t cols, std::size_t patch_size) {
  if (patch_size == 0) throw ArgumentError("patch size must be positive");
  if (patch_size > std::min(rows, cols))
    throw ArgumentError("patch size " + std::to_string(patch_size) + " exceeds min(M, N) = " +
                        std::to_string(std::min(rows, cols)));
  return (rows - patch_size + 1) * (cols - patch_size + 1);
}

std::size_t mirror_index(long index, std::size_t extent) {
  if (extent == 1) return 0;
  const long period = 2 * (static_cast<long>(extent) - 1);
  long i = index % period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<long>(extent) ? i : period - i);
}

Tensor extract_window(const HsiCube& cube, PixelPos center, std::size_t patch_size, PatchMode mode) {
  if (patch_size == 0) throw ArgumentError("patch size must be positive");
  if (center.row >= cube.rows || center.col >= cube.cols)
    throw BoundsError("patch center (" + std::to_string(center.row) + "," + std::to_string(center.col) +
                      ") outside cube");
  const long half = static_cast<long>(patch_size / 2);
  const long r0 = static_cast<long>(center.row) - half;
  const long c0 = static_cast<long>(center.col) - half;
  const long span = static_cast<long>(patch_size);
  if (mode == PatchMode::valid &&
      (r0 < 0 || c0 < 0 || r0 + span > static_cast<long>(cube.rows) || c0 + span > static_cast<long>(cube.cols)))
    throw BoundsError("window of size " + std::to_string(patch_size) + " at (" + std::to_string(center.row) + "," +
                      std::to_string(center.col) + ") leaves the cube in valid mode");
  const std::size_t K = cube.bands;
  Tensor out(Shape{patch_size, patch_size, K});
  for (std::size_t i = 0; i < patch_size; ++i) {
    const std::size_t r = mirror_index(r0 + static_cast<long>(i), cube.rows);
    for (std::size_t j = 0; j < patch_size; ++j) {
      const std::size_t c = mirror_index(c0 + static_cast<long>(j), cube.cols);
      for (std::size_t b = 0; b < K; ++b) out[(i * patch_size + j) * K + b] = cube.at(r, c, b);
    }
  }
  return out;
}

Patch extract_patch(const HsiCube& cube, const LabelMap& labels, PixelPos center, std::size_t patch_size,
                    PatchMode mode) {
  if (labels.rows != cube.rows || labels.cols != cube.cols) throw DataError("label map and cube dimensions differ");
  if (center.row >= cube.rows || center.col >= cube.cols) throw BoundsError("patch center outside cube");
  const std::uint16_t label = labels.at(center.row, center.col);
  if (label == 0)
    throw ArgumentError("pixel (" + std::to_string(center.row) + "," + std::to_string(center.col) + ") is unlabeled");
  Patch p;
  p.center = center;
  p.size = patch_size;
  p.label = label;
  p.data = extract_window(cube, center, patch_size, mode);
  return p;
}

Split stratified_split(const LabelMap& labels, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ArgumentError("split fraction must lie in (0, 1)");
  const std::uint16_t classes = labels.num_classes();
  if (classes == 0) throw DataError("label map has no labeled pixels");
  std::vector<std::vector<std::size_t>> members(classes + 1u);
  for (std::size_t i = 0; i < labels.labels.size(); ++i)
    if (labels.labels[i] != 0) members[labels.labels[i]].push_back(i);

  Split split;
  split.seed = seed;
  split.fraction = fraction;
  std::mt19937_64 rng(seed);
  for (std::uint16_t c = 1; c <= classes; ++c) {
    auto& pool = members[c];
    if (pool.empty()) throw DataError("class " + std::to_string(c) + " has no labeled pixels");
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto wanted = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pool.size())));
    const std::size_t n_train = std::min(pool.size(), std::max<std::size_t>(1, wanted));
    split.train.insert(split.train.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test.insert(split.test.end(), pool.begin() + static_cast<std::ptrdiff_t>(n_train), pool.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

}  // namespace ef
