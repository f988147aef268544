#include "energyformer/render.hpp"

#include <fstream>
#include <string>

#include "energyformer/error.hpp"

namespace ef {

Rgb class_color(std::uint16_t label, std::size_t classes) {
  if (label == 0) return {0, 0, 0};
  if (classes == 0 || label > classes) throw ArgumentError("label " + std::to_string(label) + " outside palette");
  // Sector formula with s = v = 1 (p = 0, q = 1 - f, t = f), in exact integer
  // arithmetic: hue/60 = 6(label-1)/classes, f = rem/classes, bytes rounded half up.
  const std::uint64_t C = classes;
  const std::uint64_t h6 = 6 * (static_cast<std::uint64_t>(label) - 1);
  const std::uint64_t sector = h6 / C, rem = h6 % C;
  auto byte = [C](std::uint64_t num) { return static_cast<std::uint8_t>((510 * num + C) / (2 * C)); };
  const std::uint8_t t = byte(rem), q = byte(C - rem);
  switch (sector) {
    case 0: return {255, t, 0};
    case 1: return {q, 255, 0};
    case 2: return {0, 255, t};
    case 3: return {0, q, 255};
    case 4: return {t, 0, 255};
    default: return {255, 0, q};
  }
}

std::vector<std::uint8_t> render_ppm(const LabelMap& map, std::size_t classes) {
  const std::string header = "P6\n" + std::to_string(map.cols) + " " + std::to_string(map.rows) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + map.labels.size() * 3);
  for (auto l : map.labels) {
    const Rgb c = class_color(l, classes);
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

void write_ppm(const LabelMap& map, std::size_t classes, const std::filesystem::path& path) {
  const auto bytes = render_ppm(map, classes);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace ef
