#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "floodseg/io.hpp"
#include "floodseg/pipeline.hpp"

namespace fp = floodseg::pipeline;

namespace {

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::string out_dir = "floodseg_out";
    std::string data_dir;
    bool freeze_generator = false;
    bool use_nir = false;
    bool no_adaptive = false;
};

// defaults < config file < FLOODSEG_* environment < command-line flags
fp::PipelineConfig resolve(const Options& o) {
    fp::PipelineConfig c;
    if (!o.config_path.empty()) {
        const auto bytes = floodseg::io::read_file(o.config_path);
        c = fp::PipelineConfig::from_json(std::string(bytes.begin(), bytes.end()));
    }
    c = fp::apply_env_overrides(c, fp::process_environment());
    if (o.seed) c.seed = *o.seed;
    if (o.threads) c.threads = *o.threads;
    if (o.freeze_generator) c.seg.freeze_generator = true;
    if (o.use_nir) c.use_nir = true;
    if (o.no_adaptive) c.refiner.adaptive = false;
    c.validate();
    return c;
}

void print_report(const std::string& name, const floodseg::metrics::Report& r) {
    std::printf("%-34s PA %6.2f  mIoU %6.2f  FW-IoU %6.2f\n", name.c_str(), 100 * r.pa, 100 * r.miou, 100 * r.fwiou);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Water segmentation pipeline for multiband rasters"};
    app.require_subcommand(1);
    app.fallthrough();
    Options o;
    app.add_option("--config", o.config_path, "JSON pipeline config")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "Override the config seed");
    app.add_option("--out-dir", o.out_dir, "Output root");
    app.add_option("--data-dir", o.data_dir, "Dataset directory (default <out-dir>/data)");
    app.add_option("--threads", o.threads, "Worker threads for tile-parallel stages")->check(CLI::PositiveNumber);
    app.add_flag("--freeze-generator", o.freeze_generator, "Do not fine-tune the generator during joint training");
    app.add_flag("--use-nir", o.use_nir, "Feed NIR to the generator as a fourth channel");
    app.add_flag("--no-adaptive-dmap", o.no_adaptive, "Refiner input MNDWI | D_w | D_nw instead of the adaptive map");

    auto* synth = app.add_subcommand("synth-data", "Generate a synthetic scene dataset");
    auto* train_gan = app.add_subcommand("train-gan", "Train the RGB to SWIR2 generator");
    auto* refine = app.add_subcommand("refine", "Refine coarse MNDWI masks and report threshold vs refiner");
    std::string refine_split = "train";
    refine->add_option("--split", refine_split, "train, val, test or all");
    auto* train_seg = app.add_subcommand("train-seg", "Staged GAN and joint segmentation training");
    auto* predict = app.add_subcommand("predict", "Predict water masks");
    std::string predict_split = "test";
    predict->add_option("--split", predict_split, "train, val, test or all");
    auto* evaluate = app.add_subcommand("evaluate", "Score predictions against truth masks");
    fp::EvalOptions eval;
    std::string pred_dir, truth_dir;
    evaluate->add_option("--split", eval.split, "train, val, test or all");
    evaluate->add_option("--pred-dir", pred_dir, "Prediction directory (default <out-dir>/predictions)");
    evaluate->add_option("--truth-dir", truth_dir, "Truth directory (default the dataset directory)");
    evaluate->add_option("--pred-suffix", eval.pred_suffix, "Prediction file suffix after the scene id");
    evaluate->add_option("--truth-suffix", eval.truth_suffix, "Truth file suffix after the scene id");
    evaluate->add_option("--method", eval.method, "Row label in the report");

    CLI11_PARSE(app, argc, argv);

    try {
        const auto config = resolve(o);
        const fp::Paths paths{o.out_dir, o.data_dir};
        if (*synth) {
            const auto m = fp::cmd_synth_data(config, paths);
            std::printf("wrote %zu scenes (%zu train, %zu val, %zu test) to %s\n", m.scenes.size(), m.split("train").size(),
                        m.split("val").size(), m.split("test").size(), paths.data().c_str());
        } else if (*train_gan) {
            const auto r = fp::cmd_train_gan(config, paths);
            std::printf("GAN: %llu steps, pixel loss %.6g -> %.6g\n", static_cast<unsigned long long>(r.steps), r.first_pixel,
                        r.last_pixel);
        } else if (*refine) {
            for (const auto& row : fp::cmd_refine(config, paths, refine_split)) print_report(row.method, row.report);
        } else if (*train_seg) {
            const auto r = fp::cmd_train_seg(config, paths);
            std::printf("segmentation: %llu steps, loss %.6g -> %.6g, %zu fallback tiles\n",
                        static_cast<unsigned long long>(r.steps), r.first_loss, r.last_loss, r.fallbacks);
        } else if (*predict) {
            fp::cmd_predict(config, paths, predict_split);
            std::printf("predictions written to %s\n", paths.predictions().c_str());
        } else if (*evaluate) {
            eval.pred_dir = pred_dir;
            eval.truth_dir = truth_dir;
            print_report(eval.method, fp::cmd_evaluate(config, paths, eval));
        }
    } catch (const fp::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
