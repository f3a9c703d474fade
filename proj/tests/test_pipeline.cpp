#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>

#include "floodseg/io.hpp"
#include "floodseg/pipeline.hpp"

namespace floodseg::pipeline {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("floodseg_pipeline_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

PipelineConfig tiny() {
    PipelineConfig c;
    c.seed = 3;
    c.data.scenes = 6;
    c.data.tile = 32;
    c.data.train = 0.5;
    c.data.val = 0.25;
    c.data.test = 0.25;
    c.refiner.k_iterations = 20;
    return c;
}

TEST(Config, RoundTripsThroughJson) {
    auto c = tiny();
    c.gan.lr_discriminator = 1.25e-3;
    c.seg.widths = {4, 4, 8, 8, 16};
    c.refiner.adaptive = false;
    const auto text = c.to_json();
    EXPECT_EQ(PipelineConfig::from_json(text).to_json(), text);

    Raster r(4, 4);
    for (const char* b : {bands::kRed, bands::kGreen, bands::kBlue, bands::kSwir2}) {
        r.add_band(b, std::vector<float>(16, 0.25f));
    }
    r.band(bands::kRed)[3] = 0.5f;
    c.normalization = compute_normalization({r}, false);
    const auto with_norm = c.to_json();
    EXPECT_EQ(PipelineConfig::from_json(with_norm).to_json(), with_norm);
}

TEST(Config, PartialFileKeepsDefaults) {
    auto c = PipelineConfig::from_json(R"({"gan": {"lr_generator": 0.001}})");
    EXPECT_EQ(c.gan.lr_generator, 1e-3);
    EXPECT_EQ(c.gan.lr_discriminator, 6e-4);
    EXPECT_EQ(c.seg.lr_segmentor, 1e-3);
    EXPECT_EQ(c.refiner.phi_high, 0.5);
    EXPECT_EQ(c.refiner.phi_low, -0.2);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    EXPECT_THROW(PipelineConfig::from_json(R"({"sed": 1})"), ConfigError);
    EXPECT_THROW(PipelineConfig::from_json(R"({"gan": {"lr": 1}})"), ConfigError);
    EXPECT_THROW(PipelineConfig::from_json(R"({"normalization": {"bands": [], "extra": 1}})"), ConfigError);
    EXPECT_THROW(PipelineConfig::from_json(R"({"seed": 1.5})"), ConfigError);
    EXPECT_THROW(PipelineConfig::from_json(R"({"seed": -1})"), ConfigError);
    EXPECT_THROW(PipelineConfig::from_json(R"({"seg": {"use_swir": 1}})"), ConfigError);
    EXPECT_THROW(PipelineConfig::from_json(R"({"data": {"tile": 48}})"), ConfigError);
    EXPECT_THROW(PipelineConfig::from_json(R"({"data": {"train": 0.5}})"), ConfigError);
    EXPECT_THROW(PipelineConfig::from_json(R"({"gan": {"lambda_f": -1}})"), ConfigError);
    EXPECT_THROW(PipelineConfig::from_json(R"({"refiner": {"k_iterations": 0}})"), ConfigError);
    EXPECT_THROW(PipelineConfig::from_json("{not json"), ConfigError);
}

TEST(Config, EnvironmentOverrides) {
    const std::map<std::string, std::string> env{
        {"FLOODSEG_SEED", "42"}, {"FLOODSEG_GAN_LR_GENERATOR", "0.003"}, {"FLOODSEG_SEG_WIDTHS", "[2,2,2,2,2]"},
        {"FLOODSEG_REFINER_ADAPTIVE", "false"}, {"HOME", "/root"}};
    auto c = apply_env_overrides(tiny(), env);
    EXPECT_EQ(c.seed, 42u);
    EXPECT_EQ(c.gan.lr_generator, 0.003);
    EXPECT_EQ(c.seg.widths, (std::vector<std::size_t>{2, 2, 2, 2, 2}));
    EXPECT_FALSE(c.refiner.adaptive);
    EXPECT_EQ(c.data.scenes, 6u);

    EXPECT_THROW(apply_env_overrides(tiny(), {{"FLOODSEG_GAN_LR", "1"}}), ConfigError);
    EXPECT_THROW(apply_env_overrides(tiny(), {{"FLOODSEG_THREADS", "0"}}), ConfigError);
    EXPECT_THROW(apply_env_overrides(tiny(), {{"FLOODSEG_USE_NIR", "maybe"}}), ConfigError);
}

TEST(ParallelFor, SlotsAreIndependentOfThreadCount) {
    auto run = [](std::size_t threads) {
        std::vector<double> out(97);
        parallel_for(out.size(), threads, [&](std::size_t i) { out[i] = std::sqrt(static_cast<double>(i)) * 3.0; });
        return out;
    };
    EXPECT_EQ(run(1), run(4));
    EXPECT_EQ(run(1), run(200));
}

TEST(ParallelFor, RethrowsLowestFailingIndex) {
    std::atomic<int> calls{0};
    try {
        parallel_for(20, 3, [&](std::size_t i) {
            ++calls;
            if (i == 7 || i == 13) throw std::runtime_error("tile " + std::to_string(i));
        });
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_STREQ(e.what(), "tile 7");
    }
    EXPECT_EQ(calls.load(), 20);
}

TEST(Ingest, NormalizedBandsHaveUnitStatistics) {
    const auto dir = scratch("ingest");
    Paths paths{dir, {}};
    auto c = tiny();
    const auto m = cmd_synth_data(c, paths);
    std::vector<Raster> rasters;
    for (const auto& e : m.scenes) rasters.push_back(raster_file::read(paths.data() / e.image));
    const auto norm = compute_normalization(rasters, true);

    const auto bands = dataset::input_bands(true);
    std::vector<double> sum(bands.size()), sq(bands.size());
    double n = 0;
    for (const auto& e : m.scenes) {
        const auto in = dataset::ingest(paths.data() / e.image, norm.bands, true);
        EXPECT_EQ(in.raw.planes, raster_file::read(paths.data() / e.image).planes);
        const std::size_t plane = in.raw.pixels();
        for (std::size_t b = 0; b < bands.size(); ++b)
            for (std::size_t i = 0; i < plane; ++i) {
                const double v = in.input.data()[b * plane + i];
                sum[b] += v;
                sq[b] += v * v;
            }
        n += static_cast<double>(plane);
    }
    for (std::size_t b = 0; b < bands.size(); ++b) {
        EXPECT_NEAR(sum[b] / n, 0.0, 1e-9) << bands[b];
        EXPECT_NEAR(sq[b] / n, 1.0, 1e-6) << bands[b];
    }
    fs::remove_all(dir);
}

TEST(Commands, EvaluateIdenticalMasksIsPerfect) {
    const auto dir = scratch("eval");
    Paths paths{dir, {}};
    const auto c = tiny();
    cmd_synth_data(c, paths);
    EvalOptions o;
    o.pred_dir = paths.data();
    o.pred_suffix = "_truth.fsr";
    o.split = "all";
    const auto r = cmd_evaluate(c, paths, o);
    EXPECT_EQ(r.pa, 1.0);
    EXPECT_EQ(r.miou, 1.0);
    EXPECT_EQ(r.fwiou, 1.0);
    EXPECT_TRUE(fs::exists(paths.eval() / "metrics.json"));
    EXPECT_TRUE(fs::exists(paths.eval() / "metrics.csv"));
    EXPECT_TRUE(fs::exists(paths.eval() / "config.json"));

    o.pred_dir = dir / "nowhere";
    EXPECT_THROW(cmd_evaluate(c, paths, o), std::runtime_error);
    fs::remove_all(dir);
}

TEST(Commands, RefineReportHasAllRows) {
    const auto dir = scratch("refine");
    Paths paths{dir, {}};
    auto c = tiny();
    c.threads = 2;
    cmd_synth_data(c, paths);
    const auto rows = cmd_refine(c, paths, "train");
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].method, "MNDWI threshold");
    EXPECT_EQ(rows[1].method, "Refiner (two distance maps)");
    EXPECT_EQ(rows[2].method, "Refiner (adaptive distance map)");
    const auto csv = io::read_file(paths.refine() / "report.csv");
    const std::string text(csv.begin(), csv.end());
    for (const auto& r : rows) EXPECT_NE(text.find(r.method), std::string::npos);
    EXPECT_TRUE(fs::exists(paths.refine() / "scene_0000_refined.fsr"));
    EXPECT_TRUE(fs::exists(paths.refine() / "scene_0000_refined.png"));
    EXPECT_THROW(cmd_refine(c, paths, "holdout"), ConfigError);
    fs::remove_all(dir);
}

TEST(Commands, EffectiveConfigIsWritten) {
    const auto dir = scratch("effective");
    Paths paths{dir, {}};
    const auto c = tiny();
    cmd_synth_data(c, paths);
    const auto bytes = io::read_file(paths.data() / "config.json");
    EXPECT_EQ(PipelineConfig::from_json(std::string(bytes.begin(), bytes.end())).to_json(), c.to_json());
    fs::remove_all(dir);
}

}  // namespace
}  // namespace floodseg::pipeline
