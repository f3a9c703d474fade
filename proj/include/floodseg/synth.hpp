#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "floodseg/raster.hpp"

namespace floodseg::synth {

/// Mean reflectance per band in the order R, G, B, NIR, SWIR2.
using BandMeans = std::array<double, 5>;

struct SpectralModel {
    BandMeans water{0.04, 0.15, 0.09, 0.03, 0.04};
    BandMeans land{0.14, 0.12, 0.09, 0.33, 0.40};
    /// Dark land patches: low SWIR2 yet not water.
    BandMeans shadow{0.03, 0.04, 0.04, 0.05, 0.10};
    double pixel_std = 0.02;
    /// Pixels within this distance (in pixels) of the true boundary get extra
    /// zero-mean noise on G and SWIR2. 0 disables the mode.
    double boundary_band = 0.0;
    double boundary_std = 0.15;
};

struct SceneSpec {
    std::size_t width = 64, height = 64;
    std::uint64_t seed = 0;
    int blob_count = 2;
    /// Blob radii as fractions of min(width, height).
    double radius_min = 0.12, radius_max = 0.3;
    int meander_count = 1;
    double meander_half_width_min = 1.5, meander_half_width_max = 3.0;
    /// Amplitude as a fraction of the tile height; wavelength in pixels.
    double meander_amplitude = 0.15, meander_wavelength = 40.0;
    SpectralModel spectral;
    bool shadows = false;
    int shadow_count = 2;
};

struct LabeledScene {
    Raster raster;  // R, G, B, NIR, SWIR2
    Mask truth;     // exact
    /// 1 where boundary noise was applied.
    std::vector<std::uint8_t> corrupted;
};

LabeledScene generate_scene(const SceneSpec& spec);

struct SplitFractions {
    double train = 0.90, val = 0.05, test = 0.05;
};

struct SplitCounts {
    std::size_t train = 0, val = 0, test = 0;
};

/// val = floor(n * f_val), test = floor(n * f_test), train takes the rest.
SplitCounts split_counts(std::size_t n, const SplitFractions& fractions);

struct ManifestEntry {
    std::string id;
    std::string split;  // "train" | "val" | "test"
    std::string image;  // paths relative to the manifest
    std::string truth;
    bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
    std::size_t width = 0, height = 0;
    std::uint64_t seed = 0;
    std::vector<ManifestEntry> scenes;

    std::vector<ManifestEntry> split(const std::string& name) const;
    std::string to_json() const;
    static Manifest from_json(const std::string& text);
    bool operator==(const Manifest&) const = default;
};

/// Scene i uses seed template.seed + i. Writes <dir>/<id>.fsr (image),
/// <dir>/<id>_truth.fsr (mask) and <dir>/manifest.json. Scenes are assigned
/// to train, val and test in id order.
Manifest generate_dataset(const SceneSpec& templ, std::size_t n, const SplitFractions& fractions,
                          const std::filesystem::path& dir);

}  // namespace floodseg::synth
