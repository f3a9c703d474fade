#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "floodseg/raster.hpp"

namespace floodseg::png {

/// 8-bit RGB encoding: water blue (0, 0, 255), non-water white, ignore gray.
std::vector<std::uint8_t> encode_mask(const Mask& mask);
void write_mask(const std::filesystem::path& path, const Mask& mask);

}  // namespace floodseg::png
