#include <gtest/gtest.h>

#include <random>

#include "floodseg/indices.hpp"

namespace floodseg::indices {
namespace {

Raster two_band(const char* a, std::vector<float> va, const char* b, std::vector<float> vb, std::size_t w,
                std::size_t h) {
    Raster r(w, h);
    r.add_band(a, std::move(va));
    r.add_band(b, std::move(vb));
    return r;
}

Raster uniform(float g, float other, const char* band) { return two_band("G", {g}, band, {other}, 1, 1); }

TEST(Mndwi, Examples) {
    EXPECT_DOUBLE_EQ(mndwi(uniform(0.4f, 0.4f, "SWIR2")).values[0], 0.0);
    EXPECT_DOUBLE_EQ(mndwi(uniform(0.5f, 0.0f, "SWIR2")).values[0], 1.0);
    EXPECT_NEAR(mndwi(uniform(0.1f, 0.3f, "SWIR2")).values[0], -0.5, 1e-7);
}

TEST(Ndwi, Examples) {
    EXPECT_DOUBLE_EQ(ndwi(uniform(0.25f, 0.25f, "NIR")).values[0], 0.0);
    EXPECT_DOUBLE_EQ(ndwi(uniform(0.2f, 0.0f, "NIR")).values[0], 1.0);
    EXPECT_NEAR(ndwi(uniform(0.3f, 0.1f, "NIR")).values[0], 0.5, 1e-7);
}

TEST(Mndwi, MissingBandNamed) {
    Raster r(1, 1);
    r.add_band("G", {0.3f});
    try {
        mndwi(r);
        FAIL() << "expected BandMissingError";
    } catch (const BandMissingError& e) {
        EXPECT_EQ(e.band(), "SWIR2");
    }
}

TEST(Mndwi, ZeroDenominatorIsZeroAndIgnored) {
    auto idx = mndwi(uniform(0.0f, 0.0f, "SWIR2"));
    EXPECT_EQ(idx.values[0], 0.0);
    EXPECT_EQ(idx.valid[0], 0);
    EXPECT_EQ(threshold_mask(idx, 0.35).labels[0], Label::Ignore);
}

TEST(Mndwi, NodataPixelsIgnored) {
    auto r = two_band("G", {0.3f, -9999.0f}, "SWIR2", {0.1f, 0.1f}, 2, 1);
    r.nodata = -9999.0f;
    auto idx = mndwi(r);
    EXPECT_EQ(idx.valid[0], 1);
    EXPECT_EQ(idx.valid[1], 0);
}

TEST(Mndwi, RangeAndAntisymmetry) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    std::vector<float> g(256), s(256);
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = d(rng);
        s[i] = d(rng);
    }
    auto a = mndwi(two_band("G", g, "SWIR2", s, 16, 16));
    auto b = mndwi(two_band("G", s, "SWIR2", g, 16, 16));
    for (std::size_t i = 0; i < g.size(); ++i) {
        EXPECT_GE(a.values[i], -1.0);
        EXPECT_LE(a.values[i], 1.0);
        EXPECT_EQ(a.values[i], -b.values[i]);
    }
}

IndexMap plane(std::vector<double> v, std::size_t w, std::size_t h) {
    IndexMap m(w, h, IndexKind::Mndwi);
    m.values = std::move(v);
    return m;
}

TEST(ThresholdMask, UniformPlanes) {
    auto water = threshold_mask(plane(std::vector<double>(9, 0.5), 3, 3), 0.35);
    EXPECT_EQ(water.count(Label::Water), 9u);
    auto dry = threshold_mask(plane(std::vector<double>(9, 0.0), 3, 3), 0.35);
    EXPECT_EQ(dry.count(Label::NonWater), 9u);
}

TEST(ThresholdMask, MixedPlane) {
    auto m = threshold_mask(plane({0.4, 0.3, 0.35, -0.1}, 2, 2), 0.35, true);
    EXPECT_EQ(m.labels, (std::vector<Label>{Label::Water, Label::NonWater, Label::Water, Label::NonWater}));
    auto below = threshold_mask(plane({0.4, 0.3, 0.35, -0.1}, 2, 2), 0.35, false);
    EXPECT_EQ(below.labels, (std::vector<Label>{Label::NonWater, Label::Water, Label::Water, Label::Water}));
}

TEST(ThresholdMask, MonotoneInThreshold) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<double> v(400);
    for (auto& x : v) x = d(rng);
    auto idx = plane(v, 20, 20);
    std::size_t prev = idx.values.size() + 1;
    for (double t = -1.0; t <= 1.0; t += 0.05) {
        auto m = threshold_mask(idx, t);
        EXPECT_LE(m.count(Label::Water), prev);
        prev = m.count(Label::Water);
    }
}

TEST(ThresholdSwir, Examples) {
    std::vector<float> zeros(16, 0.0f), ones(16, 1.0f);
    EXPECT_EQ(threshold_swir_mask(zeros, 4, 4, 0.35).count(Label::Water), 16u);
    EXPECT_EQ(threshold_swir_mask(ones, 4, 4, 0.35).count(Label::NonWater), 16u);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> d(0.0f, 0.8f);
    std::vector<float> s(64);
    for (auto& x : s) x = d(rng);
    auto m = threshold_swir_mask(s, 8, 8, 0.35);
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_EQ(m.labels[i], s[i] <= 0.35f ? Label::Water : Label::NonWater);
    }
}

}  // namespace
}  // namespace floodseg::indices
