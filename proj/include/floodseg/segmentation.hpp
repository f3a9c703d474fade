#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "floodseg/checkpoint.hpp"
#include "floodseg/gan.hpp"
#include "floodseg/indices.hpp"
#include "floodseg/nn.hpp"
#include "floodseg/optim.hpp"
#include "floodseg/raster.hpp"
#include "floodseg/refiner.hpp"

namespace floodseg::seg {

/// Five encoder blocks (SN conv 3x3, SN conv 3x3, batch norm, leaky relu,
/// then an SN conv 3x3 stride 2 for pooling) and five decoder blocks (SN
/// transposed conv 4x4 stride 2, concat skip, two SN convs, batch norm, leaky
/// relu). A 1x1 conv gives the logit. H and W must be multiples of 32.
class SegmentorNet {
public:
    SegmentorNet(std::size_t in_channels, const std::vector<std::size_t>& widths, std::mt19937_64& rng);

    Tensor forward(const Tensor& x, const nn::Mode& mode);
    void collect(const std::string& prefix, nn::StateDict& dict);
    std::size_t in_channels() const { return in_channels_; }

private:
    struct EncBlock {
        nn::Conv2d conv1, conv2;
        nn::BatchNorm2d bn;
        nn::Conv2d pool;
    };
    struct DecBlock {
        nn::ConvTranspose2d up;
        nn::Conv2d conv1, conv2;
        nn::BatchNorm2d bn;
    };
    std::size_t in_channels_;
    std::vector<EncBlock> enc_;
    std::vector<DecBlock> dec_;
    nn::Conv2d head_;
};

std::vector<std::size_t> default_widths();

/// Water probabilities [N, 1, H, W] with labels at 0.5.
struct SegPrediction {
    Tensor probabilities;

    std::size_t batch() const { return probabilities.dim(0); }
    Mask labels(std::size_t item) const;
};

/// Affine map of raw SWIR2 reflectance to network scale.
struct SwirScale {
    double mean = 0.0, stddev = 1.0;
    Tensor apply(const Tensor& swir) const;
};

/// RGB [N, 3, H, W] and synthesized SWIR [N, 1, H, W] (raw reflectance) into
/// a four-channel segmentor. Channel counts are checked so the two inputs
/// cannot be swapped.
SegPrediction seg_forward(SegmentorNet& net, const Tensor& rgb, const Tensor& s_tilde, const SwirScale& scale,
                          const nn::Mode& mode);
/// Three-channel baseline without a SWIR channel.
SegPrediction seg_forward_rgb(SegmentorNet& net, const Tensor& rgb, const nn::Mode& mode);

/// Mean BCE over pixels whose target is not Ignore; zero when every pixel is
/// ignored. One mask per batch item.
Tensor segmentation_loss(const Tensor& probabilities, const std::vector<Mask>& targets, double eps = 1e-7);

struct JointConfig {
    /// Uses the generator's S~ as a fourth channel; false gives the
    /// RGB-only baseline.
    bool use_swir = true;
    bool freeze_generator = false;
    /// Reuse a tile's refined mask after its first refinement.
    bool cache_refined = false;
    /// Supervise with the coarse threshold mask instead of refined masks.
    bool coarse_supervision = false;
    double lr_segmentor = 1e-3, lr_generator = 2e-4;
    std::uint64_t total_steps = 1000;
    double min_lr_fraction = 0.0;
    std::vector<std::size_t> widths = default_widths();
    refiner::RefinerConfig refiner;
    SwirScale swir_scale;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Sample {
    std::string id;
    Tensor input;           // [1, 3 (+1 NIR), H, W] normalized; RGB are the first three channels
    indices::IndexMap mndwi;  // from raw bands
};

struct JointStepReport {
    std::uint64_t step = 0;
    double loss = 0;
    double lr_segmentor = 0, lr_generator = 0;
    std::size_t fallbacks = 0;
};

/// Segmentation training with optional fine-tuning of the generator through
/// S~. The GAN trainer must outlive this object.
class JointTrainer {
public:
    JointTrainer(const JointConfig& config, gan::GanTrainer* gan);

    JointStepReport step(const std::vector<Sample>& batch);

    /// Refined (or coarse) targets for a batch, honoring the cache flag.
    std::vector<Mask> targets_for(const std::vector<Sample>& batch, std::size_t* fallbacks = nullptr);

    SegmentorNet& segmentor() { return net_; }
    const JointConfig& config() const { return config_; }
    const std::vector<JointStepReport>& history() const { return history_; }

    void export_state(checkpoint::Archive& archive);
    void import_state(const checkpoint::Archive& archive);

private:
    JointConfig config_;
    gan::GanTrainer* gan_;
    std::mt19937_64 init_rng_;
    SegmentorNet net_;
    nn::StateDict dict_;
    optim::Adam opt_;
    optim::CosineSchedule seg_sched_, gen_sched_;
    std::map<std::string, Mask> cache_;
    std::uint64_t step_ = 0;
    std::vector<JointStepReport> history_;
};

/// Inference of RGB -> S~ -> segmentation with every network in eval mode.
/// `gen` may be null for the RGB-only preset.
SegPrediction predict_tile(const Tensor& input, gan::Generator* gen, SegmentorNet& net, const SwirScale& scale);

/// First three channels of a network input.
Tensor rgb_channels(const Tensor& input);

}  // namespace floodseg::seg
