#include <gtest/gtest.h>

#include <png.h>

#include <cmath>
#include <numbers>

#include "floodseg/indices.hpp"
#include "floodseg/png.hpp"
#include "floodseg/refiner.hpp"
#include "floodseg/synth.hpp"

namespace floodseg::refiner {
namespace {

using distmap::Point;
using distmap::PointSet;

indices::IndexMap plane(std::size_t w, std::size_t h, double fill) {
    indices::IndexMap m(w, h, indices::IndexKind::Mndwi);
    std::fill(m.values.begin(), m.values.end(), fill);
    return m;
}

// Left part clean water, right part clean land.
indices::IndexMap two_regions(std::size_t w, std::size_t h) {
    auto m = plane(w, h, -0.6);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w / 3; ++x) m.values[y * w + x] = 0.8;
    return m;
}

RefinerConfig fast_config() {
    RefinerConfig c;
    c.k_iterations = 40;
    c.seed = 5;
    return c;
}

TEST(RefinerInput, ZeroInputsGiveZeroTensor) {
    auto idx = plane(4, 3, 0.0);
    distmap::AdaptiveDistanceMap dm{4, 3, std::vector<double>(12, 0.0), distmap::PointClass::Water};
    auto t = build_refiner_input(idx, dm);
    for (double v : t.data()) EXPECT_EQ(v, 0.0);
}

TEST(RefinerInput, ChannelsAndShape) {
    indices::IndexMap idx(48, 32, indices::IndexKind::Mndwi);
    distmap::AdaptiveDistanceMap dm{48, 32, std::vector<double>(48 * 32), distmap::PointClass::Water};
    for (std::size_t i = 0; i < idx.values.size(); ++i) {
        idx.values[i] = std::sin(0.1 * static_cast<double>(i));
        dm.values[i] = std::cos(0.05 * static_cast<double>(i));
    }
    auto t = build_refiner_input(idx, dm);
    EXPECT_EQ(t.shape(), (Shape{1, 2, 32, 48}));
    for (std::size_t i = 0; i < idx.values.size(); ++i) {
        EXPECT_EQ(t.data()[i], idx.values[i]);
        EXPECT_EQ(t.data()[idx.values.size() + i], dm.values[i]);
    }
    distmap::AdaptiveDistanceMap wrong{10, 10, std::vector<double>(100), distmap::PointClass::Water};
    EXPECT_THROW(build_refiner_input(idx, wrong), ShapeError);
}

TEST(PartialLabelLoss, HalfProbabilityClosedForm) {
    Tensor p = Tensor::full({1, 1, 4, 4}, 0.5);
    PointSet pts;
    pts.water = {{0, 0}, {1, 2}};
    pts.nonwater = {{3, 3}, {2, 0}};
    EXPECT_NEAR(partial_label_loss(p, pts).item(), 4.0 * std::numbers::ln2, 1e-12);
}

TEST(PartialLabelLoss, PerfectPredictionNearZero) {
    std::vector<double> v(16, 0.5);
    v[0] = 1.0;
    v[5] = 1.0;
    v[15] = 0.0;
    Tensor p({1, 1, 4, 4}, v);
    PointSet pts;
    pts.water = {{0, 0}, {1, 1}};
    pts.nonwater = {{3, 3}};
    const double eps = 1e-7;
    EXPECT_LE(partial_label_loss(p, pts, eps).item(), 3.0 * -std::log(1.0 - eps) + 1e-15);
}

TEST(PartialLabelLoss, IgnoresUnsampledPixels) {
    std::vector<double> v(9, 0.3);
    PointSet pts;
    pts.water = {{0, 0}};
    pts.nonwater = {{2, 2}};
    const double before = partial_label_loss(Tensor({1, 1, 3, 3}, v), pts).item();
    v[4] = 0.99;
    v[1] = 0.01;
    EXPECT_EQ(partial_label_loss(Tensor({1, 1, 3, 3}, v), pts).item(), before);
    EXPECT_THROW(partial_label_loss(Tensor({1, 1, 3, 3}, v), PointSet{}), std::invalid_argument);
}

TEST(Refine, IterationCountContract) {
    auto idx = two_regions(16, 12);
    auto cfg = fast_config();
    cfg.k_iterations = 0;
    EXPECT_THROW(refine(idx, cfg), std::invalid_argument);
    cfg.k_iterations = 1;
    auto r = refine(idx, cfg);
    EXPECT_FALSE(r.fallback);
    EXPECT_EQ(r.mask.labels.labels.size(), 16u * 12u);
    for (double p : r.mask.probabilities) {
        EXPECT_GE(p, 0.0);
        EXPECT_LE(p, 1.0);
    }
}

TEST(Refine, SeparableInputAgreesWithPoints) {
    auto idx = two_regions(24, 16);
    RefinerConfig cfg;  // default k
    cfg.seed = 1;
    auto r = refine(idx, cfg);
    ASSERT_FALSE(r.fallback);
    auto coarse = indices::threshold_mask(idx, 0.35);
    std::size_t agree = 0;
    for (const auto* set : {&r.points.water, &r.points.nonwater}) {
        for (const auto& p : *set) agree += r.mask.labels.at(p.x, p.y) == coarse.at(p.x, p.y);
    }
    EXPECT_GE(static_cast<double>(agree), 0.99 * static_cast<double>(r.points.size()));
    EXPECT_LE(r.final_loss, r.initial_loss);
}

TEST(Refine, LabelsAreThresholdedProbabilities) {
    synth::SceneSpec spec;
    spec.width = spec.height = 24;
    spec.seed = 3;
    spec.spectral.boundary_band = 2;
    auto idx = indices::mndwi(synth::generate_scene(spec).raster);
    auto r = refine(idx, fast_config());
    ASSERT_FALSE(r.fallback);
    for (std::size_t i = 0; i < r.mask.probabilities.size(); ++i) {
        EXPECT_EQ(r.mask.labels.labels[i], r.mask.probabilities[i] >= 0.5 ? Label::Water : Label::NonWater);
    }
    EXPECT_LE(r.final_loss, r.initial_loss);
}

TEST(Refine, Deterministic) {
    auto idx = two_regions(16, 16);
    idx.values[40] = 0.1;
    auto a = refine(idx, fast_config());
    auto b = refine(idx, fast_config());
    EXPECT_EQ(a.mask.probabilities, b.mask.probabilities);
    EXPECT_EQ(a.mask.labels.labels, b.mask.labels.labels);
}

TEST(Refine, EmptyClassFallsBackToCoarseMask) {
    auto idx = plane(8, 8, 0.9);
    idx.values[3] = 0.2;
    auto r = refine(idx, fast_config());
    EXPECT_TRUE(r.fallback);
    ASSERT_TRUE(r.empty_class.has_value());
    EXPECT_EQ(*r.empty_class, distmap::PointClass::NonWater);
    EXPECT_EQ(r.mask.labels.labels, indices::threshold_mask(idx, 0.35).labels);
}

TEST(Refine, NoConfidentPointsPropagates) {
    auto idx = plane(8, 8, 0.1);
    EXPECT_THROW(refine(idx, fast_config()), NoConfidentPointsError);
    auto cfg = fast_config();
    cfg.fallback_when_no_points = true;
    EXPECT_TRUE(refine(idx, cfg).fallback);
}

TEST(Refine, TwoMapAblationRuns) {
    auto idx = two_regions(16, 16);
    auto cfg = fast_config();
    cfg.adaptive = false;
    auto r = refine(idx, cfg);
    EXPECT_FALSE(r.fallback);
    EXPECT_LE(r.final_loss, r.initial_loss);
}

TEST(RefineBatch, SingleImageMatchesRefine) {
    auto idx = two_regions(16, 12);
    auto single = refine(idx, fast_config());
    auto batch = refine_batch({idx}, fast_config());
    ASSERT_EQ(batch.size(), 1u);
    EXPECT_EQ(batch[0].mask.probabilities, single.mask.probabilities);
}

TEST(RefineBatch, DuplicatesGetIdenticalMasks) {
    auto idx = two_regions(16, 12);
    idx.values[20] = 0.0;
    auto batch = refine_batch({idx, idx}, fast_config());
    EXPECT_EQ(batch[0].mask.probabilities, batch[1].mask.probabilities);
}

TEST(RefineBatch, MixedBatchFallsBackPerTile) {
    auto good = two_regions(16, 12);
    auto dry = plane(16, 12, -0.7);
    auto batch = refine_batch({good, dry, good}, fast_config());
    EXPECT_FALSE(batch[0].fallback);
    EXPECT_TRUE(batch[1].fallback);
    EXPECT_EQ(*batch[1].empty_class, distmap::PointClass::Water);
    EXPECT_FALSE(batch[2].fallback);
    EXPECT_EQ(batch[1].mask.labels.count(Label::NonWater), 16u * 12u);
}

TEST(Refine, NoisyBoundaryHeldOutAtLeastCoarse) {
    double refined = 0, coarse = 0;
    for (std::uint64_t s = 0; s < 3; ++s) {
        synth::SceneSpec spec;
        spec.width = spec.height = 32;
        spec.seed = 500 + s;
        spec.spectral.boundary_band = 3;
        auto scene = synth::generate_scene(spec);
        auto idx = indices::mndwi(scene.raster);
        RefinerConfig cfg;
        cfg.seed = s;
        auto r = refine(idx, cfg);
        ASSERT_FALSE(r.fallback);
        auto thr = indices::threshold_mask(idx, 0.35);
        std::vector<char> held(idx.values.size(), 1);
        for (const auto* set : {&r.points.water, &r.points.nonwater})
            for (const auto& p : *set) held[p.y * idx.width + p.x] = 0;
        double n = 0, a = 0, b = 0;
        for (std::size_t i = 0; i < held.size(); ++i) {
            if (!held[i]) continue;
            ++n;
            a += r.mask.labels.labels[i] == scene.truth.labels[i];
            b += thr.labels[i] == scene.truth.labels[i];
        }
        refined += a / n;
        coarse += b / n;
    }
    EXPECT_GE(refined, coarse);
}

TEST(Png, MaskColors) {
    Mask m(3, 1);
    m.labels = {Label::Water, Label::NonWater, Label::Ignore};
    auto bytes = png::encode_mask(m);
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    ASSERT_TRUE(png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()));
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(image));
    ASSERT_TRUE(png_image_finish_read(&image, nullptr, px.data(), 0, nullptr));
    EXPECT_EQ(image.width, 3u);
    EXPECT_EQ(px, (std::vector<std::uint8_t>{0, 0, 255, 255, 255, 255, 128, 128, 128}));
}

}  // namespace
}  // namespace floodseg::refiner
