#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "floodseg/gan.hpp"

namespace floodseg::gan {
namespace {

Tensor filled(Shape s, double v, bool grad = false) { return Tensor::full(std::move(s), v, grad); }

Tensor uniform(Shape s, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = d(rng);
    return Tensor(std::move(s), std::move(v));
}

TEST(GanLoss, PerfectGeneratorIsZero) {
    auto s = filled({1, 1, 4, 4}, 0.3);
    auto l = generator_loss(s, s, filled({1, 1, 2, 2}, 1.0));
    EXPECT_EQ(l.total.item(), 0.0);
    EXPECT_EQ(l.pixel.item(), 0.0);
    EXPECT_EQ(l.adversarial.item(), 0.0);
}

TEST(GanLoss, OffsetByOneGivesOne) {
    std::mt19937_64 rng(3);
    auto s = uniform({2, 1, 8, 8}, rng, -1, 1);
    std::vector<double> shifted(s.data().begin(), s.data().end());
    for (auto& v : shifted) v += 1.0;
    auto l = generator_loss(s, Tensor(s.shape(), shifted), filled({2, 1, 1, 1}, 1.0));
    EXPECT_NEAR(l.total.item(), 1.0, 1e-12);
    EXPECT_NEAR(l.pixel.item(), 1.0, 1e-12);
}

TEST(GanLoss, ZeroScoresGiveOne) {
    auto s = filled({1, 1, 4, 4}, 0.7);
    auto l = generator_loss(s, s, filled({1, 1, 3, 3}, 0.0));
    EXPECT_EQ(l.total.item(), 1.0);
    EXPECT_EQ(l.adversarial.item(), 1.0);
}

TEST(GanLoss, DiscriminatorClosedForms) {
    const Shape g{2, 1, 2, 2};
    EXPECT_EQ(discriminator_loss(filled(g, 0.0), filled(g, 1.0)).item(), 0.0);
    EXPECT_EQ(discriminator_loss(filled(g, 1.0), filled(g, 0.0)).item(), 2.0);
    EXPECT_NEAR(discriminator_loss(filled(g, 0.5), filled(g, 0.5)).item(), 0.5, 1e-15);
}

TEST(GanLoss, FeatureMatchingClosedForms) {
    std::mt19937_64 rng(9);
    auto real = uniform({1, 4, 3, 3}, rng, -2, 2);
    EXPECT_EQ(feature_matching_loss(real, real).item(), 0.0);
    for (double c : {0.25, -1.5, 3.0}) {
        std::vector<double> f(real.data().begin(), real.data().end());
        for (auto& v : f) v += c;
        EXPECT_NEAR(feature_matching_loss(real, Tensor(real.shape(), f)).item(), c * c, 1e-12) << c;
    }
}

TEST(GanLoss, FeatureMatchingGradientOnlyReachesFake) {
    std::mt19937_64 rng(10);
    auto real = uniform({1, 2, 3, 3}, rng, -1, 1);
    auto fake = uniform({1, 2, 3, 3}, rng, -1, 1);
    Tensor real_leaf(real.shape(), std::vector<double>(real.data().begin(), real.data().end()), true);
    Tensor fake_leaf(fake.shape(), std::vector<double>(fake.data().begin(), fake.data().end()), true);
    feature_matching_loss(real_leaf, fake_leaf).backward();

    // d/df mean (f - r)^2 = 2 (f - r) / n, checked by central differences.
    const double n = static_cast<double>(fake.numel()), h = 1e-6;
    for (std::size_t i = 0; i < fake.numel(); ++i) {
        auto f = std::vector<double>(fake.data().begin(), fake.data().end());
        f[i] += h;
        const double up = feature_matching_loss(real, Tensor(fake.shape(), f)).item();
        f[i] -= 2 * h;
        const double down = feature_matching_loss(real, Tensor(fake.shape(), f)).item();
        EXPECT_NEAR(fake_leaf.grad()[i], (up - down) / (2 * h), 1e-8);
        EXPECT_NEAR(fake_leaf.grad()[i], 2 * (fake.data()[i] - real.data()[i]) / n, 1e-12);
    }
    for (double g : real_leaf.grad()) EXPECT_EQ(g, 0.0);
}

TEST(GanLoss, WeightedTotal) {
    const auto z = Tensor::scalar(0.0);
    EXPECT_EQ(gan_total_loss(z, z, z, {}).item(), 0.0);
    LossWeights ones{1, 1, 1};
    EXPECT_NEAR(gan_total_loss(Tensor::scalar(0.2), Tensor::scalar(0.3), Tensor::scalar(0.5), ones).item(), 1.0,
                1e-15);
    LossWeights a{0.7, 1.3, 2.0}, b{0.7, 1.3, 4.0};
    const auto lg = Tensor::scalar(0.4), ld = Tensor::scalar(0.9), lf = Tensor::scalar(0.35);
    const double base = gan_total_loss(lg, ld, Tensor::scalar(0.0), a).item();
    EXPECT_NEAR(gan_total_loss(lg, ld, lf, b).item() - base, 2 * (gan_total_loss(lg, ld, lf, a).item() - base), 1e-12);
    EXPECT_THROW((LossWeights{-1, 1, 1}).validate(), std::invalid_argument);
}

TEST(Generator, ShapeContract) {
    std::mt19937_64 rng(1);
    Generator g(3, 4, rng);
    auto x = uniform({2, 3, 64, 64}, rng, -1, 1);
    auto y = g.forward(x, {false, 0, 0.0});
    EXPECT_EQ(y.shape(), (Shape{2, 1, 64, 64}));
    for (double v : y.data()) EXPECT_TRUE(std::isfinite(v));
    EXPECT_THROW(g.forward(uniform({1, 3, 36, 32}, rng, -1, 1), {false, 0, 0.0}), ShapeError);
    EXPECT_THROW(g.forward(uniform({1, 4, 32, 32}, rng, -1, 1), {false, 0, 0.0}), ShapeError);

    Generator with_nir(generator_inputs(true), 4, rng);
    EXPECT_EQ(with_nir.forward(uniform({1, 4, 16, 16}, rng, -1, 1), {false, 0, 0.0}).shape(), (Shape{1, 1, 16, 16}));
}

TEST(Generator, EvalModeIsDeterministic) {
    std::mt19937_64 a(42), b(42), data(5);
    Generator g1(3, 4, a), g2(3, 4, b);
    auto x = uniform({1, 3, 16, 16}, data, -1, 1);
    const nn::Mode eval{false, 0, 0.0};
    auto y1 = g1.forward(x, eval), y2 = g2.forward(x, eval), y3 = g1.forward(x, eval);
    for (std::size_t i = 0; i < y1.numel(); ++i) {
        EXPECT_EQ(y1.data()[i], y2.data()[i]);
        EXPECT_EQ(y1.data()[i], y3.data()[i]);
    }
}

TEST(Discriminator, PatchGridFormula) {
    std::mt19937_64 rng(2);
    Discriminator d(4, rng);
    // Five stride-2, kernel-4, pad-1 stages: out = floor(in / 2) each time.
    const std::pair<std::size_t, std::size_t> cases[] = {{32, 1}, {64, 2}, {96, 3}, {128, 4}};
    for (auto [side, grid] : cases) {
        EXPECT_EQ(Discriminator::patch_grid(side), grid);
        std::size_t expect = side;
        for (int i = 0; i < 5; ++i) expect = (expect + 2 - 4) / 2 + 1;
        EXPECT_EQ(grid, expect);
    }
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{32, 32}, {64, 32}, {96, 64}}) {
        auto out = d.forward(uniform({2, 1, h, w}, rng, 0, 0.5), {true, 1, 0.0});
        EXPECT_EQ(out.scores.shape(), (Shape{2, 1, Discriminator::patch_grid(h), Discriminator::patch_grid(w)}));
        for (double v : out.scores.data()) {
            EXPECT_GT(v, 0.0);
            EXPECT_LT(v, 1.0);
        }
        EXPECT_EQ(out.features.dim(2), Discriminator::patch_grid(h) * 2);
    }
}

GanConfig small_config() {
    GanConfig c;
    c.generator_width = 4;
    c.discriminator_width = 4;
    c.total_steps = 20;
    c.warmup_steps = 3;
    c.seed = 11;
    return c;
}

std::vector<double> snapshot(nn::StateDict d) {
    std::vector<double> out;
    for (auto& p : d.params) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
    for (auto& b : d.buffers) out.insert(out.end(), b.values->begin(), b.values->end());
    return out;
}

TEST(GanTrainer, WarmupLeavesDiscriminatorUntouched) {
    GanTrainer t(small_config());
    std::mt19937_64 rng(4);
    auto rgb = uniform({2, 3, 32, 32}, rng, -1, 1);
    auto swir = uniform({2, 1, 32, 32}, rng, 0, 0.5);
    nn::StateDict dd, gd;
    t.discriminator().collect("", dd);
    t.generator().collect("", gd);
    const auto d0 = snapshot(dd), g0 = snapshot(gd);
    for (int i = 0; i < 3; ++i) EXPECT_TRUE(t.step(rgb, swir).warmup);
    EXPECT_EQ(snapshot(dd), d0);
    EXPECT_NE(snapshot(gd), g0);
    auto r = t.step(rgb, swir);
    EXPECT_FALSE(r.warmup);
    EXPECT_NE(snapshot(dd), d0);
    EXPECT_GT(r.discriminator, 0.0);
}

TEST(GanTrainer, SeededRunIsBitReproducible) {
    std::mt19937_64 rng(4);
    auto rgb = uniform({2, 3, 32, 32}, rng, -1, 1);
    auto swir = uniform({2, 1, 32, 32}, rng, 0, 0.5);
    auto run = [&] {
        GanTrainer t(small_config());
        for (int i = 0; i < 6; ++i) t.step(rgb, swir);
        std::vector<double> losses;
        for (auto& r : t.history()) losses.insert(losses.end(), {r.pixel, r.adversarial, r.discriminator, r.feature_matching});
        auto s = t.synthesize(rgb);
        losses.insert(losses.end(), s.data().begin(), s.data().end());
        return losses;
    };
    EXPECT_EQ(run(), run());
}

// Toy mapping SWIR = 1 - mean(RGB) on random inputs.
TEST(GanTrainer, LearnsToyMapping) {
    auto c = small_config();
    c.warmup_steps = 10;
    c.total_steps = 50;
    c.lr_generator = 1e-2;
    c.lr_discriminator = 3e-2;
    GanTrainer t(c);
    std::mt19937_64 rng(8);
    const std::size_t n = 4, s = 32, plane = s * s;
    auto rgb = uniform({n, 3, s, s}, rng, 0, 1);
    std::vector<double> target(n * plane);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
            double m = 0;
            for (std::size_t ch = 0; ch < 3; ++ch) m += rgb.data()[(b * 3 + ch) * plane + i];
            target[b * plane + i] = 1.0 - m / 3.0;
        }
    Tensor swir({n, 1, s, s}, target);
    const double first = t.step(rgb, swir).pixel;
    double last = first;
    for (int i = 1; i < 50; ++i) last = t.step(rgb, swir).pixel;
    EXPECT_LE(last, 0.5 * first) << first << " -> " << last;
}

// Largest singular value of the normalized weight, reshaped as the power
// iteration sees it, by a dense SVD.
double top_singular_value(const Tensor& w, nn::SpectralNorm& sn) {
    const std::size_t rows = w.dim(0), cols = w.numel() / rows;
    const double scale = sn.sigma_estimate(w);
    Eigen::MatrixXd m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) m(r, c) = w.data()[r * cols + c] / scale;
    return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

TEST(GanTrainer, SpectralBoundHoldsAfterTraining) {
    auto c = small_config();
    c.total_steps = 40;
    GanTrainer t(c);
    std::mt19937_64 rng(6);
    auto rgb = uniform({2, 3, 32, 32}, rng, -1, 1);
    auto swir = uniform({2, 1, 32, 32}, rng, 0, 0.5);
    for (int i = 0; i < 40; ++i) t.step(rgb, swir);
    auto layers = t.generator().spectral_layers();
    auto d_layers = t.discriminator().spectral_layers();
    layers.insert(layers.end(), d_layers.begin(), d_layers.end());
    ASSERT_FALSE(layers.empty());
    for (auto& [w, sn] : layers) EXPECT_LT(top_singular_value(w, *sn), 1.05);
}

TEST(GanTrainer, NonFiniteLossNamesTermAndStep) {
    GanTrainer t(small_config());
    std::mt19937_64 rng(4);
    auto rgb = uniform({1, 3, 32, 32}, rng, -1, 1);
    auto swir = uniform({1, 1, 32, 32}, rng, 0, 0.5);
    t.step(rgb, swir);
    auto bad = swir.data();
    std::vector<double> v(bad.begin(), bad.end());
    v[17] = std::numeric_limits<double>::quiet_NaN();
    try {
        t.step(rgb, Tensor(swir.shape(), v));
        FAIL() << "expected TrainingDivergedError";
    } catch (const TrainingDivergedError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("step 1"), std::string::npos) << msg;
    }
}

TEST(GanTrainer, LossCsvAndCheckpointRoundTrip) {
    GanTrainer t(small_config());
    std::mt19937_64 rng(4);
    auto rgb = uniform({1, 3, 32, 32}, rng, -1, 1);
    auto swir = uniform({1, 1, 32, 32}, rng, 0, 0.5);
    for (int i = 0; i < 5; ++i) t.step(rgb, swir);

    const auto dir = std::filesystem::temp_directory_path() / "floodseg_gan_test";
    std::filesystem::create_directories(dir);
    t.write_loss_csv(dir / "loss.csv");
    std::ifstream in(dir / "loss.csv");
    std::string line;
    std::size_t lines = 0;
    std::getline(in, line);
    EXPECT_EQ(line, "step,lr,lr_d,pixel,adversarial,discriminator,feature_matching");
    while (std::getline(in, line)) ++lines;
    EXPECT_EQ(lines, 5u);

    checkpoint::Archive a;
    t.export_state(a);
    auto other_config = small_config();
    other_config.seed = 99;
    GanTrainer u(other_config);
    u.import_state(a);
    auto s1 = t.synthesize(rgb), s2 = u.synthesize(rgb);
    for (std::size_t i = 0; i < s1.numel(); ++i) EXPECT_EQ(s1.data()[i], s2.data()[i]);
    std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace floodseg::gan
