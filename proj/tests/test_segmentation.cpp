#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "floodseg/dataset.hpp"
#include "floodseg/segmentation.hpp"
#include "floodseg/synth.hpp"

namespace floodseg::seg {
namespace {

const std::vector<std::size_t> kSmall{4, 4, 8, 8, 8};

Tensor uniform(Shape s, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = d(rng);
    return Tensor(std::move(s), std::move(v));
}

double bce(double p, double t) { return -(t * std::log(p) + (1 - t) * std::log(1 - p)); }

TEST(Segmentor, ShapeContract) {
    std::mt19937_64 rng(1);
    SegmentorNet net(4, kSmall, rng);
    auto pred = seg_forward(net, uniform({1, 3, 64, 64}, rng, -1, 1), uniform({1, 1, 64, 64}, rng, 0, 0.5), {},
                            {false, 0, 0.0});
    EXPECT_EQ(pred.probabilities.shape(), (Shape{1, 1, 64, 64}));
    for (double p : pred.probabilities.data()) {
        EXPECT_GE(p, 0.0);
        EXPECT_LE(p, 1.0);
    }
    EXPECT_EQ(pred.labels(0).width, 64u);
    EXPECT_THROW(net.forward(uniform({1, 4, 48, 64}, rng, -1, 1), {false, 0, 0.0}), ShapeError);
}

TEST(Segmentor, SwappedInputsAreRejected) {
    std::mt19937_64 rng(2);
    SegmentorNet net(4, kSmall, rng);
    auto rgb = uniform({1, 3, 32, 32}, rng, -1, 1);
    auto s = uniform({1, 1, 32, 32}, rng, 0, 0.5);
    EXPECT_THROW(seg_forward(net, s, rgb, {}, {false, 0, 0.0}), ShapeError);
    EXPECT_THROW(seg_forward_rgb(net, rgb, {false, 0, 0.0}), ShapeError);
    SegmentorNet rgb_only(3, kSmall, rng);
    EXPECT_EQ(seg_forward_rgb(rgb_only, rgb, {false, 0, 0.0}).batch(), 1u);
}

TEST(Segmentor, EvalModeIsDeterministic) {
    std::mt19937_64 a(5), b(5), data(6);
    SegmentorNet n1(4, kSmall, a), n2(4, kSmall, b);
    auto rgb = uniform({2, 3, 32, 32}, data, -1, 1);
    auto s = uniform({2, 1, 32, 32}, data, 0, 0.5);
    auto p1 = seg_forward(n1, rgb, s, {}, {false, 0, 0.0}).probabilities;
    auto p2 = seg_forward(n2, rgb, s, {}, {false, 0, 0.0}).probabilities;
    auto p3 = seg_forward(n1, rgb, s, {}, {false, 0, 0.0}).probabilities;
    for (std::size_t i = 0; i < p1.numel(); ++i) {
        EXPECT_EQ(p1.data()[i], p2.data()[i]);
        EXPECT_EQ(p1.data()[i], p3.data()[i]);
    }
}

Mask random_mask(std::size_t w, std::size_t h, std::mt19937_64& rng, bool with_ignore) {
    Mask m(w, h);
    std::uniform_int_distribution<int> d(0, with_ignore ? 2 : 1);
    for (auto& l : m.labels) {
        const int v = d(rng);
        l = v == 0 ? Label::NonWater : v == 1 ? Label::Water : Label::Ignore;
    }
    return m;
}

TEST(SegLoss, HalfEverywhereIsLn2) {
    std::mt19937_64 rng(3);
    auto p = Tensor::full({2, 1, 5, 7}, 0.5);
    std::vector<Mask> t{random_mask(7, 5, rng, true), random_mask(7, 5, rng, false)};
    EXPECT_NEAR(segmentation_loss(p, t).item(), std::numbers::ln2, 1e-12);
}

TEST(SegLoss, ExactPredictionIsNearZero) {
    std::mt19937_64 rng(4);
    auto m = random_mask(6, 6, rng, true);
    std::vector<double> p(36);
    for (std::size_t i = 0; i < 36; ++i) p[i] = m.labels[i] == Label::Water ? 1.0 : 0.0;
    EXPECT_LT(segmentation_loss(Tensor({1, 1, 6, 6}, p), {m}).item(), 1e-6);
}

TEST(SegLoss, FlipDeltaMatchesPerPixelBce) {
    std::mt19937_64 rng(5);
    auto m = random_mask(8, 4, rng, false);
    auto p = uniform({1, 1, 4, 8}, rng, 0.05, 0.95);
    const double before = segmentation_loss(p, {m}).item();
    const std::size_t k = 13;
    const double t = m.labels[k] == Label::Water ? 1.0 : 0.0;
    m.labels[k] = t == 1.0 ? Label::NonWater : Label::Water;
    const double after = segmentation_loss(p, {m}).item();
    const double pk = p.data()[k];
    EXPECT_NEAR(after - before, (bce(pk, 1 - t) - bce(pk, t)) / 32.0, 1e-12);
}

TEST(SegLoss, IgnorePixelsDoNotMatter) {
    std::mt19937_64 rng(6);
    auto m = random_mask(8, 8, rng, true);
    auto p = uniform({1, 1, 8, 8}, rng, 0.05, 0.95);
    const double base = segmentation_loss(p, {m}).item();
    std::vector<double> q(p.data().begin(), p.data().end());
    for (std::size_t i = 0; i < q.size(); ++i)
        if (m.labels[i] == Label::Ignore) q[i] = 1.0 - q[i] * 0.5;
    EXPECT_EQ(segmentation_loss(Tensor(p.shape(), q), {m}).item(), base);

    Mask all_ignored(8, 8, Label::Ignore);
    EXPECT_EQ(segmentation_loss(p, {all_ignored}).item(), 0.0);
    EXPECT_THROW(segmentation_loss(p, {m, m}), ShapeError);
}

// Small labeled scenes turned into joint-training samples.
struct Fixture {
    std::vector<synth::LabeledScene> scenes;
    std::vector<Sample> samples;
    dataset::BandStats stats;
};

Fixture make_fixture(std::size_t n, std::uint64_t seed) {
    Fixture f;
    std::vector<Raster> rasters;
    for (std::size_t i = 0; i < n; ++i) {
        synth::SceneSpec s;
        s.width = s.height = 32;
        s.seed = seed + i;
        f.scenes.push_back(synth::generate_scene(s));
        rasters.push_back(f.scenes.back().raster);
    }
    const auto bands = dataset::input_bands(false);
    f.stats = dataset::compute_band_stats(rasters, bands);
    for (std::size_t i = 0; i < n; ++i) {
        f.samples.push_back({"s" + std::to_string(i), dataset::normalized_input(rasters[i], f.stats, bands),
                             indices::mndwi(rasters[i])});
    }
    return f;
}

gan::GanConfig gan_config() {
    gan::GanConfig c;
    c.generator_width = 4;
    c.discriminator_width = 4;
    c.warmup_steps = 2;
    c.seed = 3;
    return c;
}

JointConfig joint_config(bool freeze) {
    JointConfig c;
    c.widths = kSmall;
    c.freeze_generator = freeze;
    c.refiner.k_iterations = 10;
    c.swir_scale = {0.2, 0.15};
    c.seed = 8;
    return c;
}

std::vector<double> params_of(gan::Generator& g) {
    nn::StateDict d;
    g.collect("", d);
    std::vector<double> out;
    for (auto& p : d.params) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

TEST(JointTrainer, FrozenGeneratorIsUnchangedAndGetsNoGradient) {
    auto f = make_fixture(2, 40);
    gan::GanTrainer g(gan_config());
    const auto before = params_of(g.generator());
    JointTrainer t(joint_config(true), &g);
    t.step(f.samples);
    EXPECT_EQ(params_of(g.generator()), before);
    nn::StateDict d;
    g.generator().collect("", d);
    for (auto& p : d.params)
        for (double v : p.tensor.grad()) EXPECT_EQ(v, 0.0) << p.name;
}

TEST(JointTrainer, UnfrozenGeneratorReceivesGradient) {
    auto f = make_fixture(2, 40);
    gan::GanTrainer g(gan_config());
    const auto before = params_of(g.generator());
    JointTrainer t(joint_config(false), &g);
    auto r = t.step(f.samples);
    EXPECT_TRUE(std::isfinite(r.loss));
    EXPECT_NE(params_of(g.generator()), before);
    nn::StateDict d;
    g.generator().collect("", d);
    double norm = 0;
    for (auto& p : d.params)
        for (double v : p.tensor.grad()) norm += v * v;
    EXPECT_GT(norm, 0.0);
}

TEST(JointTrainer, SeededRunIsBitReproducible) {
    auto f = make_fixture(2, 50);
    auto run = [&] {
        gan::GanTrainer g(gan_config());
        JointTrainer t(joint_config(false), &g);
        std::vector<double> out;
        for (int i = 0; i < 3; ++i) out.push_back(t.step(f.samples).loss);
        auto p = predict_tile(f.samples[0].input, &g.generator(), t.segmentor(), t.config().swir_scale);
        out.insert(out.end(), p.probabilities.data().begin(), p.probabilities.data().end());
        return out;
    };
    EXPECT_EQ(run(), run());
}

TEST(JointTrainer, CacheAndCoarseTargets) {
    auto f = make_fixture(2, 60);
    auto c = joint_config(true);
    c.use_swir = false;
    c.cache_refined = true;
    JointTrainer t(c, nullptr);
    auto first = t.targets_for(f.samples);
    auto second = t.targets_for(f.samples);
    EXPECT_EQ(first[0].labels, second[0].labels);

    c.coarse_supervision = true;
    JointTrainer coarse(c, nullptr);
    auto targets = coarse.targets_for(f.samples);
    EXPECT_EQ(targets[1].labels, indices::threshold_mask(f.samples[1].mndwi, c.refiner.coarse_threshold).labels);

    auto bad = joint_config(false);
    EXPECT_THROW(JointTrainer(bad, nullptr), std::invalid_argument);
}

TEST(PredictTile, EqualsComposition) {
    auto f = make_fixture(1, 70);
    std::mt19937_64 rng(9);
    gan::Generator gen(3, 4, rng);
    SegmentorNet net(4, kSmall, rng);
    const SwirScale scale{0.2, 0.15};
    auto p = predict_tile(f.samples[0].input, &gen, net, scale);
    const nn::Mode eval{false, 0, 0.0};
    auto q = seg_forward(net, rgb_channels(f.samples[0].input), gen.forward(f.samples[0].input, eval), scale, eval);
    ASSERT_EQ(p.probabilities.shape(), q.probabilities.shape());
    for (std::size_t i = 0; i < p.probabilities.numel(); ++i) EXPECT_EQ(p.probabilities.data()[i], q.probabilities.data()[i]);

    SegmentorNet rgb_net(3, kSmall, rng);
    auto r = predict_tile(f.samples[0].input, nullptr, rgb_net, scale);
    auto s = seg_forward_rgb(rgb_net, rgb_channels(f.samples[0].input), eval);
    for (std::size_t i = 0; i < r.probabilities.numel(); ++i) EXPECT_EQ(r.probabilities.data()[i], s.probabilities.data()[i]);
}

TEST(PredictTile, AllWaterTileAfterTraining) {
    auto f = make_fixture(6, 80);
    synth::SceneSpec flood;
    flood.width = flood.height = 32;
    flood.seed = 99;
    flood.blob_count = 1;
    flood.meander_count = 0;
    flood.radius_min = flood.radius_max = 3.0;
    const auto scene = synth::generate_scene(flood);
    ASSERT_EQ(scene.truth.count(Label::Water), 32u * 32u);
    const auto input = dataset::normalized_input(scene.raster, f.stats, dataset::input_bands(false));

    // A generator fitted on the pixel term so S~ carries the water signal.
    auto gc = gan_config();
    gc.warmup_steps = 40;
    gc.lr_generator = 1e-3;
    gan::GanTrainer g(gc);
    std::vector<Tensor> rgb, swir;
    for (std::size_t i = 0; i < 6; ++i) {
        rgb.push_back(f.samples[i].input);
        swir.push_back(dataset::swir_target(f.scenes[i].raster));
    }
    const auto rgb_batch = dataset::stack(rgb), swir_batch = dataset::stack(swir);
    for (int i = 0; i < 40; ++i) g.step(rgb_batch, swir_batch);

    auto c = joint_config(true);
    c.coarse_supervision = true;
    c.total_steps = 120;
    c.lr_segmentor = 3e-3;
    JointTrainer t(c, &g);
    for (std::size_t i = 0; i < 120; ++i) t.step({f.samples[(3 * i) % 6], f.samples[(3 * i + 1) % 6], f.samples[(3 * i + 2) % 6]});
    auto labels = predict_tile(input, &g.generator(), t.segmentor(), c.swir_scale).labels(0);
    EXPECT_GT(static_cast<double>(labels.count(Label::Water)) / (32.0 * 32.0), 0.9);
}

}  // namespace
}  // namespace floodseg::seg
