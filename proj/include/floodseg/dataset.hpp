#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "floodseg/raster.hpp"
#include "floodseg/tensor.hpp"

namespace floodseg::dataset {

/// Per-band mean and standard deviation over a set of rasters.
struct BandStats {
    std::vector<std::string> bands;
    std::vector<double> mean, stddev;

    double mean_of(const std::string& band) const;
    double stddev_of(const std::string& band) const;
};

/// Population statistics; a deviation below 1e-6 is raised to 1e-6.
BandStats compute_band_stats(const std::vector<Raster>& rasters, const std::vector<std::string>& bands);

/// Network input channels in order.
std::vector<std::string> input_bands(bool use_nir);

/// [1, C, H, W] of (x - mean) / std for the given bands.
Tensor normalized_input(const Raster& raster, const BandStats& stats, const std::vector<std::string>& bands);
/// [1, 1, H, W] raw SWIR2 reflectance.
Tensor swir_target(const Raster& raster);
/// Concatenates [1, C, H, W] tensors along the batch axis (no gradient).
Tensor stack(const std::vector<Tensor>& items);

/// A raster as read from disk plus its normalized network input; indices
/// are always computed from the raw bands.
struct Ingested {
    Raster raw;
    Tensor input;
};

Ingested ingest(const std::filesystem::path& path, const BandStats& stats, bool use_nir);

}  // namespace floodseg::dataset
