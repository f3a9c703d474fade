#include "floodseg/distmap.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <limits>
#include <random>

namespace floodseg::distmap {

const char* to_string(PointClass c) { return c == PointClass::Water ? "water" : "non-water"; }

EmptyClassError::EmptyClassError(PointClass which)
    : std::runtime_error(std::string("no confident ") + to_string(which) + " pixels"), which_(which) {}

void Thresholds::validate() const {
    if (!(phi_high > phi_low)) {
        throw std::invalid_argument("phi_high (" + std::to_string(phi_high) + ") must exceed phi_low (" +
                                    std::to_string(phi_low) + ")");
    }
}

PointSet collect_confident_points(const indices::IndexMap& index, const Thresholds& thresholds,
                                  std::size_t max_per_class, std::uint64_t seed) {
    thresholds.validate();
    PointSet all;
    for (std::size_t y = 0; y < index.height; ++y) {
        for (std::size_t x = 0; x < index.width; ++x) {
            const std::size_t i = y * index.width + x;
            if (!index.valid[i]) continue;
            const Point p{static_cast<std::int32_t>(x), static_cast<std::int32_t>(y)};
            if (index.values[i] >= thresholds.phi_high) {
                all.water.push_back(p);
            } else if (index.values[i] <= thresholds.phi_low) {
                all.nonwater.push_back(p);
            }
        }
    }
    std::mt19937_64 rng(seed);
    auto cap = [&](std::vector<Point>& pts) {
        if (pts.size() <= max_per_class) return;
        std::vector<Point> kept;
        kept.reserve(max_per_class);
        std::sample(pts.begin(), pts.end(), std::back_inserter(kept), max_per_class, rng);
        pts = std::move(kept);
    };
    cap(all.water);
    cap(all.nonwater);
    return all;
}

PointSet sample_confident_points(const indices::IndexMap& index, const Thresholds& thresholds,
                                 std::size_t max_per_class, std::uint64_t seed) {
    PointSet pts = collect_confident_points(index, thresholds, max_per_class, seed);
    if (pts.water.empty()) throw EmptyClassError(PointClass::Water);
    if (pts.nonwater.empty()) throw EmptyClassError(PointClass::NonWater);
    return pts;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared distance transform: out[q] = min_p (q - p)^2 + f[p].
// Only finite samples contribute parabolas.
void transform_1d(const double* f, std::size_t n, std::size_t stride, double* out, std::vector<std::size_t>& v,
                  std::vector<double>& z) {
    v.clear();
    z.clear();
    for (std::size_t q = 0; q < n; ++q) {
        const double fq = f[q * stride];
        if (fq == kInf) continue;
        const double qd = static_cast<double>(q);
        while (!v.empty()) {
            const double p = static_cast<double>(v.back());
            const double s = ((fq + qd * qd) - (f[v.back() * stride] + p * p)) / (2.0 * (qd - p));
            if (s <= z.back()) {
                v.pop_back();
                z.pop_back();
            } else {
                z.push_back(s);
                break;
            }
        }
        if (v.empty()) z.push_back(-kInf);
        v.push_back(q);
    }
    if (v.empty()) {
        for (std::size_t q = 0; q < n; ++q) out[q * stride] = kInf;
        return;
    }
    // z[k] is where parabola k starts to win.
    std::size_t k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        const double qd = static_cast<double>(q);
        while (k + 1 < v.size() && z[k + 1] < qd) ++k;
        const double d = qd - static_cast<double>(v[k]);
        out[q * stride] = d * d + f[v[k] * stride];
    }
}

}  // namespace

DistanceMap distance_map(std::span<const Point> points, std::size_t width, std::size_t height) {
    if (points.empty()) throw std::invalid_argument("distance_map needs at least one point");
    std::vector<double> grid(width * height, kInf);
    for (const auto& p : points) {
        if (p.x < 0 || p.y < 0 || static_cast<std::size_t>(p.x) >= width || static_cast<std::size_t>(p.y) >= height) {
            throw std::invalid_argument("point (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                                        ") outside the grid");
        }
        grid[static_cast<std::size_t>(p.y) * width + static_cast<std::size_t>(p.x)] = 0.0;
    }
    std::vector<double> tmp(width * height);
    std::vector<std::size_t> v;
    std::vector<double> z;
    v.reserve(std::max(width, height));
    z.reserve(std::max(width, height) + 1);
    for (std::size_t x = 0; x < width; ++x) transform_1d(grid.data() + x, height, width, tmp.data() + x, v, z);
    for (std::size_t y = 0; y < height; ++y)
        transform_1d(tmp.data() + y * width, width, 1, grid.data() + y * width, v, z);
    for (auto& d : grid) d = std::sqrt(d);
    return {width, height, std::move(grid)};
}

namespace {

void divide_by_max(std::vector<double>& values) {
    const double mx = values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
    if (mx == 0.0) {
        std::fill(values.begin(), values.end(), 0.0);
        return;
    }
    for (auto& v : values) v /= mx;
}

}  // namespace

AdaptiveDistanceMap adaptive_distance_map(const PointSet& points, std::size_t width, std::size_t height) {
    if (points.water.empty() && points.nonwater.empty()) {
        throw std::invalid_argument("adaptive_distance_map needs at least one sampled point");
    }
    const bool water_dense = points.water.size() >= points.nonwater.size();
    auto dm = distance_map(water_dense ? points.water : points.nonwater, width, height);
    divide_by_max(dm.values);
    if (water_dense) {
        for (auto& v : dm.values) v = 1.0 - v;
    }
    return {width, height, std::move(dm.values), water_dense ? PointClass::Water : PointClass::NonWater};
}

std::pair<DistanceMap, DistanceMap> class_distance_maps(const PointSet& points, std::size_t width,
                                                        std::size_t height) {
    auto one = [&](const std::vector<Point>& pts) {
        if (pts.empty()) return DistanceMap{width, height, std::vector<double>(width * height, 1.0)};
        auto dm = distance_map(pts, width, height);
        divide_by_max(dm.values);
        return dm;
    };
    return {one(points.water), one(points.nonwater)};
}

Raster to_raster(std::span<const double> values, std::size_t width, std::size_t height) {
    Raster r(width, height);
    std::vector<float> plane(values.begin(), values.end());
    r.add_band("DIST", std::move(plane));
    return r;
}

}  // namespace floodseg::distmap
