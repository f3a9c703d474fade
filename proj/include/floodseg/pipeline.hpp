#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "floodseg/dataset.hpp"
#include "floodseg/gan.hpp"
#include "floodseg/metrics.hpp"
#include "floodseg/refiner.hpp"
#include "floodseg/segmentation.hpp"
#include "floodseg/synth.hpp"

namespace floodseg::pipeline {

/// Bad configuration: unknown key, wrong type or out-of-range value.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DataConfig {
    std::size_t scenes = 24;
    std::size_t tile = 64;
    double train = 0.90, val = 0.05, test = 0.05;
    int blob_count = 2, meander_count = 1;
    bool shadows = false;
    int shadow_count = 2;
    double boundary_band = 0.0, boundary_std = 0.15;
};

struct RefineStageConfig {
    int k_iterations = 200;
    double learning_rate = 1e-2;
    double phi_high = 0.5, phi_low = -0.2;
    std::size_t max_per_class = 1024;
    std::size_t width = 8;
    double eps = 1e-7;
    bool adaptive = true;
    double coarse_threshold = 0.35;
};

struct GanStageConfig {
    std::size_t generator_width = 8, discriminator_width = 8;
    double dropout = 0.1;
    double lr_generator = 2e-4, lr_discriminator = 6e-4, min_lr_fraction = 0.0;
    double lambda_g = 1.0, lambda_d = 1.0, lambda_f = 10.0;
    std::size_t batch_size = 4;
    std::size_t warmup_epochs = 5, adversarial_epochs = 30;
};

struct SegStageConfig {
    std::vector<std::size_t> widths = seg::default_widths();
    double lr_segmentor = 1e-3, lr_generator = 2e-4, min_lr_fraction = 0.0;
    std::size_t batch_size = 4;
    std::size_t joint_epochs = 60;
    bool use_swir = true;
    bool freeze_generator = false;
    bool cache_refined = true;
    bool coarse_supervision = false;
};

/// Per-band statistics for network inputs plus the SWIR2 scale used for S~.
struct Normalization {
    dataset::BandStats bands;
    seg::SwirScale swir;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    bool use_nir = false;
    DataConfig data;
    RefineStageConfig refiner;
    GanStageConfig gan;
    SegStageConfig seg;
    /// Computed from the training split when absent.
    std::optional<Normalization> normalization;

    void validate() const;
    std::string to_json() const;
    /// Keys not listed in the defaults are rejected; missing keys keep their
    /// defaults.
    static PipelineConfig from_json(const std::string& text);

    refiner::RefinerConfig refiner_config() const;
    gan::GanConfig gan_config(std::uint64_t total_steps, std::uint64_t warmup_steps) const;
    synth::SceneSpec scene_template() const;
};

/// Applies FLOODSEG_<SECTION>_<KEY> variables (for example FLOODSEG_GAN_LR_GENERATOR
/// or FLOODSEG_SEED) on top of `config`. Values are parsed as JSON, falling
/// back to a plain string. Unknown FLOODSEG_ variables are rejected.
PipelineConfig apply_env_overrides(const PipelineConfig& config, const std::map<std::string, std::string>& env);
std::map<std::string, std::string> process_environment();

struct Paths {
    std::filesystem::path out_dir;
    /// Defaults to <out>/data.
    std::filesystem::path data_dir;

    std::filesystem::path data() const { return data_dir.empty() ? out_dir / "data" : data_dir; }
    std::filesystem::path gan() const { return out_dir / "gan"; }
    std::filesystem::path seg() const { return out_dir / "seg"; }
    std::filesystem::path refine() const { return out_dir / "refine"; }
    std::filesystem::path predictions() const { return out_dir / "predictions"; }
    std::filesystem::path eval() const { return out_dir / "eval"; }
};

/// Runs fn(i) for i in [0, n) over `threads` workers. Each result slot is
/// written by exactly one call, so output order never depends on scheduling.
/// The first failure (lowest index) is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

synth::Manifest cmd_synth_data(const PipelineConfig& config, const Paths& paths);

struct GanRun {
    std::uint64_t steps = 0;
    double first_pixel = 0, last_pixel = 0;
};
GanRun cmd_train_gan(PipelineConfig config, const Paths& paths);

struct RefineRow {
    std::string method;
    metrics::Report report;
};
/// Threshold, two-map refiner and adaptive refiner rows over a split.
std::vector<RefineRow> cmd_refine(const PipelineConfig& config, const Paths& paths, const std::string& split);

struct SegRun {
    std::uint64_t steps = 0;
    double first_loss = 0, last_loss = 0;
    std::size_t fallbacks = 0;
};
/// Runs the GAN stages first when no GAN checkpoint exists (and S~ is used).
SegRun cmd_train_seg(PipelineConfig config, const Paths& paths);

void cmd_predict(const PipelineConfig& config, const Paths& paths, const std::string& split);

struct EvalOptions {
    std::filesystem::path pred_dir, truth_dir;
    std::string pred_suffix = "_mask.fsr", truth_suffix = "_truth.fsr";
    std::string split = "test";
    std::string method = "H2O-Net";
};
metrics::Report cmd_evaluate(const PipelineConfig& config, const Paths& paths, const EvalOptions& options);

/// Statistics of the input bands (and SWIR2) over a set of rasters.
Normalization compute_normalization(const std::vector<Raster>& rasters, bool use_nir);

}  // namespace floodseg::pipeline
