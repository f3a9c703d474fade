#include "floodseg/indices.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace floodseg::indices {

IndexMap normalized_difference(const Raster& raster, const char* a, const char* b, IndexKind kind) {
    const auto& pa = raster.band(a);
    const auto& pb = raster.band(b);
    IndexMap out(raster.width, raster.height, kind);
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        const double x = pa[i], y = pb[i];
        const double denom = x + y;
        if (raster.is_nodata(pa[i]) || raster.is_nodata(pb[i]) || denom == 0.0 || !std::isfinite(denom)) {
            out.values[i] = 0.0;
            out.valid[i] = 0;
            continue;
        }
        // Negative reflectances can push the ratio outside [-1, 1].
        out.values[i] = std::clamp((x - y) / denom, -1.0, 1.0);
    }
    return out;
}

IndexMap mndwi(const Raster& raster) {
    return normalized_difference(raster, bands::kGreen, bands::kSwir2, IndexKind::Mndwi);
}

IndexMap ndwi(const Raster& raster) { return normalized_difference(raster, bands::kGreen, bands::kNir, IndexKind::Ndwi); }

Mask threshold_mask(const IndexMap& index, double threshold, bool water_when_at_or_above) {
    Mask m(index.width, index.height);
    for (std::size_t i = 0; i < m.labels.size(); ++i) {
        if (!index.valid[i]) {
            m.labels[i] = Label::Ignore;
            continue;
        }
        const double v = index.values[i];
        const bool water = water_when_at_or_above ? v >= threshold : v <= threshold;
        m.labels[i] = water ? Label::Water : Label::NonWater;
    }
    return m;
}

Mask threshold_swir_mask(std::span<const float> swir, std::size_t width, std::size_t height, double threshold) {
    if (swir.size() != width * height) throw std::invalid_argument("SWIR plane size does not match dimensions");
    Mask m(width, height);
    for (std::size_t i = 0; i < swir.size(); ++i) {
        if (!std::isfinite(swir[i])) {
            m.labels[i] = Label::Ignore;
            continue;
        }
        m.labels[i] = swir[i] <= threshold ? Label::Water : Label::NonWater;
    }
    return m;
}

}  // namespace floodseg::indices
