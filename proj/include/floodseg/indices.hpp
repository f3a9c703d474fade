#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "floodseg/raster.hpp"

namespace floodseg::indices {

enum class IndexKind { Mndwi, Ndwi };

/// Normalized-difference water index plane. `valid` is 0 where the pixel is
/// nodata or the band sum is zero; such pixels hold value 0.
struct IndexMap {
    std::size_t width = 0, height = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> valid;
    IndexKind kind = IndexKind::Mndwi;

    IndexMap() = default;
    IndexMap(std::size_t width, std::size_t height, IndexKind kind)
        : width(width), height(height), values(width * height, 0.0), valid(width * height, 1), kind(kind) {}
    double at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
};

/// (a - b) / (a + b) per pixel.
IndexMap normalized_difference(const Raster& raster, const char* a, const char* b, IndexKind kind);

/// (G - SWIR2) / (G + SWIR2).
IndexMap mndwi(const Raster& raster);
/// (G - NIR) / (G + NIR).
IndexMap ndwi(const Raster& raster);

/// Water where index >= threshold (or <= threshold when
/// water_when_at_or_above is false). Invalid pixels become Ignore.
Mask threshold_mask(const IndexMap& index, double threshold, bool water_when_at_or_above = true);

/// Water where the SWIR sample is at or below the threshold; low SWIR
/// reflectance means absorption by water.
Mask threshold_swir_mask(std::span<const float> swir, std::size_t width, std::size_t height, double threshold);

}  // namespace floodseg::indices
