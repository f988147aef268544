#include "energyformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string_view>

#include "energyformer/error.hpp"

namespace ef {

namespace {

constexpr std::string_view kMagic = "EFCK1\n";

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Cursor {
 public:
  explicit Cursor(const std::vector<std::uint8_t>& b) : b_(b) {}

  std::uint64_t uint(std::size_t width, const char* what) {
    if (b_.size() - pos_ < width) throw FormatError(std::string("truncated checkpoint while reading ") + what, b_.size());
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += width;
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) throw FormatError(std::string("truncated checkpoint while reading ") + what, b_.size());
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

// ModelConfig <-> named scalars.
NamedTensors config_tensors(const ModelConfig& c) {
  auto s = [](double v) { return Tensor::scalar(v); };
  auto z = [](std::size_t v) { return Tensor::scalar(static_cast<double>(v)); };
  return {
      {"config.bands", z(c.bands)},
      {"config.classes", z(c.classes)},
      {"config.patch_size", z(c.patch_size)},
      {"config.embed_dim", z(c.embed_dim)},
      {"config.heads", z(c.heads)},
      {"config.hidden_mult", z(c.hidden_mult)},
      {"config.steps", z(c.steps)},
      {"config.depth", z(c.depth)},
      {"config.beta", s(c.beta)},
      {"config.step_size", s(c.step_size)},
      {"config.spatial_kernel", z(c.spatial_kernel)},
      {"config.reduction", z(c.reduction)},
      {"config.fope_harmonics", z(c.fope_harmonics)},
      {"config.fope_base", s(c.fope_base)},
      {"config.fope_enabled", s(c.fope_enabled ? 1.0 : 0.0)},
      {"config.ln_eps", s(c.ln_eps)},
      {"config.encoder", s(c.encoder == EncoderKind::energy ? 0.0 : 1.0)},
  };
}

ModelConfig config_from(const NamedTensors& all, std::size_t& consumed) {
  ModelConfig c;
  const NamedTensors layout = config_tensors(c);
  if (all.size() < layout.size()) throw FormatError("checkpoint lacks the model configuration block", kMagic.size());
  auto get = [&](std::size_t i) {
    if (all[i].first != layout[i].first)
      throw FormatError("expected checkpoint entry " + layout[i].first + ", found " + all[i].first, kMagic.size());
    return all[i].second.item();
  };
  auto z = [&](std::size_t i) { return static_cast<std::size_t>(get(i)); };
  c.bands = z(0);
  c.classes = z(1);
  c.patch_size = z(2);
  c.embed_dim = z(3);
  c.heads = z(4);
  c.hidden_mult = z(5);
  c.steps = z(6);
  c.depth = z(7);
  c.beta = get(8);
  c.step_size = get(9);
  c.spatial_kernel = z(10);
  c.reduction = z(11);
  c.fope_harmonics = z(12);
  c.fope_base = get(13);
  c.fope_enabled = get(14) != 0.0;
  c.ln_eps = get(15);
  c.encoder = get(16) == 0.0 ? EncoderKind::energy : EncoderKind::standard;
  consumed = layout.size();
  return c;
}

}  // namespace

std::vector<std::uint8_t> encode_tensors(const NamedTensors& tensors) {
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
  }
  for (const auto& entry : tensors)
    for (double v : entry.second.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

NamedTensors decode_tensors(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kMagic.size() || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
    throw FormatError("bad checkpoint magic, expected \"EFCK1\\n\"", 0);
  Cursor c(bytes);
  c.bytes(kMagic.size(), "magic");
  const auto count = c.uint(4, "tensor count");
  std::vector<std::pair<std::string, Shape>> manifest;
  std::uint64_t total_values = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t at = c.pos();
    const auto len = c.uint(4, "name length");
    std::string name = c.bytes(len, "tensor name");
    const auto rank = c.uint(4, "rank");
    if (rank == 0 || rank > 8) throw FormatError("tensor " + name + " has unsupported rank " + std::to_string(rank), at);
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint64_t r = 0; r < rank; ++r) {
      const auto e = c.uint(4, "extent");
      if (e == 0) throw FormatError("tensor " + name + " has a zero extent", c.pos() - 4);
      n *= e;
      if (n > (std::uint64_t{1} << 40)) throw FormatError("tensor " + name + " extent overflow", c.pos() - 4);
      shape.push_back(e);
    }
    total_values += n;
    manifest.emplace_back(std::move(name), std::move(shape));
  }
  if (c.remaining() != total_values * 8)
    throw FormatError("checkpoint payload holds " + std::to_string(c.remaining()) + " bytes, manifest needs " +
                          std::to_string(total_values * 8),
                      c.pos());
  NamedTensors out;
  for (auto& [name, shape] : manifest) {
    Tensor t(shape);
    for (double& v : t.storage()) v = std::bit_cast<double>(c.uint(8, "value"));
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

std::vector<std::uint8_t> encode_checkpoint(const Model& model) {
  NamedTensors all = config_tensors(model.config());
  for (const auto& e : model.parameters().entries()) all.push_back(e);
  return encode_tensors(all);
}

Model decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  const NamedTensors all = decode_tensors(bytes);
  std::size_t consumed = 0;
  const ModelConfig cfg = config_from(all, consumed);
  Model model(cfg, 0);
  auto& entries = model.parameters().entries();
  if (all.size() - consumed != entries.size())
    throw FormatError("checkpoint has " + std::to_string(all.size() - consumed) + " parameters, model needs " +
                          std::to_string(entries.size()),
                      kMagic.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, t] = all[consumed + i];
    if (name != entries[i].first || t.shape() != entries[i].second.shape())
      throw FormatError("checkpoint tensor " + name + " " + to_string(t.shape()) + " does not match model parameter " +
                            entries[i].first + " " + to_string(entries[i].second.shape()),
                        kMagic.size());
    entries[i].second = t;
    entries[i].second.set_requires_grad(true);
  }
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace ef
