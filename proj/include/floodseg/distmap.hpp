#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "floodseg/indices.hpp"
#include "floodseg/raster.hpp"

namespace floodseg::distmap {

/// Pixel coordinate; x is the column, y the row. Pixel centers sit on the
/// integer grid.
struct Point {
    std::int32_t x = 0, y = 0;
    bool operator==(const Point&) const = default;
    auto operator<=>(const Point&) const = default;
};

enum class PointClass { Water, NonWater };

const char* to_string(PointClass c);

struct PointSet {
    std::vector<Point> water;
    std::vector<Point> nonwater;

    std::size_t size() const { return water.size() + nonwater.size(); }
    bool operator==(const PointSet&) const = default;
};

/// A confident-point class had no candidates.
class EmptyClassError : public std::runtime_error {
public:
    explicit EmptyClassError(PointClass which);
    PointClass which() const { return which_; }

private:
    PointClass which_;
};

struct Thresholds {
    double phi_high = 0.5;
    double phi_low = -0.2;

    void validate() const;
};

/// Water candidates have index >= phi_high, non-water candidates
/// index <= phi_low (invalid pixels never qualify). Classes larger than
/// max_per_class are uniformly subsampled with a generator seeded by `seed`.
/// Either class may come back empty.
PointSet collect_confident_points(const indices::IndexMap& index, const Thresholds& thresholds,
                                  std::size_t max_per_class, std::uint64_t seed);

/// As collect_confident_points, but an empty class raises EmptyClassError.
PointSet sample_confident_points(const indices::IndexMap& index, const Thresholds& thresholds,
                                 std::size_t max_per_class, std::uint64_t seed);

struct DistanceMap {
    std::size_t width = 0, height = 0;
    std::vector<double> values;
};

/// Exact Euclidean distance from every pixel to the nearest point, computed
/// with the separable lower-envelope transform (two 1-D passes over squared
/// distances). Throws std::invalid_argument for an empty point list or a
/// point outside the grid.
DistanceMap distance_map(std::span<const Point> points, std::size_t width, std::size_t height);

struct AdaptiveDistanceMap {
    std::size_t width = 0, height = 0;
    std::vector<double> values;  // in [0, 1], high toward water
    PointClass dense_class = PointClass::Water;
};

/// Distance map of the class with more points (ties go to water), divided
/// by its maximum and oriented so water evidence is high: 1 - d/max for a
/// water-dense set, d/max for a non-water-dense set. A zero maximum gives a
/// zero map before orientation.
AdaptiveDistanceMap adaptive_distance_map(const PointSet& points, std::size_t width, std::size_t height);

/// Both class maps, each divided by its own maximum; an empty class yields
/// an all-ones plane. Input of the two-map refiner variant.
std::pair<DistanceMap, DistanceMap> class_distance_maps(const PointSet& points, std::size_t width,
                                                        std::size_t height);

/// One-band raster ("DIST") for inspection.
Raster to_raster(std::span<const double> values, std::size_t width, std::size_t height);

}  // namespace floodseg::distmap
