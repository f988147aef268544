#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "energyformer/hsi_data.hpp"

namespace ef {

using Rgb = std::array<std::uint8_t, 3>;

/// Class c in 1..C -> HSV(360 (c-1)/C, 1, 1) in RGB, channels rounded half up;
/// label 0 -> black.
Rgb class_color(std::uint16_t label, std::size_t classes);

/// Binary PPM (P6) bytes for a label map.
std::vector<std::uint8_t> render_ppm(const LabelMap& map, std::size_t classes);
void write_ppm(const LabelMap& map, std::size_t classes, const std::filesystem::path& path);

}  // namespace ef
