#pragma once

// Checkpoint file: "EFCK1\n", u32 tensor count, then per tensor
// u32 name length, name bytes, u32 rank, rank x u32 extents; then every
// tensor's values as little-endian f64 in manifest order.
//
// A model checkpoint stores its ModelConfig as "config.<field>" scalars ahead
// of the parameters, so a file is self-describing.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "energyformer/model.hpp"

namespace ef {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

std::vector<std::uint8_t> encode_tensors(const NamedTensors& tensors);
NamedTensors decode_tensors(const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> encode_checkpoint(const Model& model);
Model decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace ef
