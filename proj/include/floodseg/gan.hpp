#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "floodseg/checkpoint.hpp"
#include "floodseg/nn.hpp"
#include "floodseg/optim.hpp"
#include "floodseg/tensor.hpp"

namespace floodseg::gan {

/// RGB (optionally + NIR) to one-channel SWIR2 encoder-decoder.
///
/// Encoder block i (channels w * 2^i, i = 0..2): SN conv 3x3, batch norm,
/// leaky relu 0.2, dropout, then SN conv 3x3 stride 2. Decoder block: SN
/// transposed conv 4x4 stride 2, concat with the matching encoder output,
/// SN conv 3x3, batch norm, leaky relu, dropout. A plain 1x1 conv gives a
/// linear output at input resolution. H and W must be multiples of 8.
class Generator {
public:
    Generator(std::size_t in_channels, std::size_t width, std::mt19937_64& rng, std::uint64_t dropout_seed = 0);

    Tensor forward(const Tensor& x, const nn::Mode& mode);
    void collect(const std::string& prefix, nn::StateDict& dict);
    std::size_t in_channels() const { return in_channels_; }
    /// Every spectrally normalized layer, for post-training checks.
    std::vector<std::pair<Tensor, nn::SpectralNorm*>> spectral_layers();

private:
    struct EncBlock {
        nn::Conv2d conv;
        nn::BatchNorm2d bn;
        nn::Conv2d down;
    };
    struct DecBlock {
        nn::ConvTranspose2d up;
        nn::Conv2d conv;
        nn::BatchNorm2d bn;
    };
    std::size_t in_channels_;
    std::vector<EncBlock> enc_;
    std::vector<DecBlock> dec_;
    nn::Conv2d head_;
    std::mt19937_64 dropout_rng_;
};

struct DiscriminatorOutput {
    Tensor scores;    // [N, 1, h, w] in (0, 1)
    Tensor features;  // penultimate block output
};

/// PatchGAN over a one-channel SWIR map. Blocks 1-4: SN conv 4x4 stride 2
/// pad 1, batch norm, relu; self-attention after blocks 2 and 4. Block 5:
/// SN conv 4x4 stride 2 pad 1 to one channel and a sigmoid.
class Discriminator {
public:
    Discriminator(std::size_t width, std::mt19937_64& rng);

    DiscriminatorOutput forward(const Tensor& swir, const nn::Mode& mode);
    void collect(const std::string& prefix, nn::StateDict& dict);
    std::vector<std::pair<Tensor, nn::SpectralNorm*>> spectral_layers();

    /// Patch grid side for an input side: halved (floor) five times.
    static std::size_t patch_grid(std::size_t side);

private:
    struct Block {
        nn::Conv2d conv;
        nn::BatchNorm2d bn;
    };
    std::vector<Block> blocks_;
    nn::SelfAttention attn2_, attn4_;
    nn::Conv2d final_;
};

struct LossWeights {
    double lambda_g = 1.0, lambda_d = 1.0, lambda_f = 10.0;
    void validate() const;
};

struct GeneratorLoss {
    Tensor total;        // pixel + adversarial
    Tensor pixel;        // mean (s - s~)^2
    Tensor adversarial;  // mean (1 - D(s~))^2
};

GeneratorLoss generator_loss(const Tensor& s, const Tensor& s_tilde, const Tensor& d_fake_scores);
/// mean D(s~)^2 + mean (1 - D(s))^2.
Tensor discriminator_loss(const Tensor& d_fake_scores, const Tensor& d_real_scores);
/// mean (f_fake - f_real)^2 with the real branch detached.
Tensor feature_matching_loss(const Tensor& feat_real, const Tensor& feat_fake);
/// lambda_g L_G + lambda_d L_D + lambda_f L_F.
Tensor gan_total_loss(const Tensor& l_g, const Tensor& l_d, const Tensor& l_f, const LossWeights& weights);

/// A loss became NaN or infinite during training.
class TrainingDivergedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GanConfig {
    std::size_t generator_width = 8, discriminator_width = 8;
    double dropout = 0.1;
    double lr_generator = 2e-4, lr_discriminator = 6e-4;
    /// Cosine period in steps; learning rates reach min_lr_fraction * base.
    std::uint64_t total_steps = 1000;
    double min_lr_fraction = 0.0;
    /// Generator-only steps on the pixel term before the discriminator joins.
    std::uint64_t warmup_steps = 100;
    LossWeights weights;
    std::uint64_t seed = 0;
    bool use_nir = false;

    void validate() const;
};

struct GanStepReport {
    std::uint64_t step = 0;
    bool warmup = false;
    double lr_generator = 0, lr_discriminator = 0;
    double pixel = 0, adversarial = 0, discriminator = 0, feature_matching = 0;
};

/// Owns G, D and their optimizers.
class GanTrainer {
public:
    explicit GanTrainer(const GanConfig& config);

    /// rgb: [N, 3 (+1 with NIR), H, W] normalized input; swir: [N, 1, H, W]
    /// raw SWIR2 target.
    GanStepReport step(const Tensor& rgb, const Tensor& swir);

    Tensor synthesize(const Tensor& rgb, bool training = false);

    Generator& generator() { return generator_; }
    Discriminator& discriminator() { return discriminator_; }
    optim::Adam& generator_optimizer() { return g_opt_; }
    const GanConfig& config() const { return config_; }
    const std::vector<GanStepReport>& history() const { return history_; }
    std::uint64_t steps() const { return step_; }

    void write_loss_csv(const std::filesystem::path& path) const;
    void export_state(checkpoint::Archive& archive);
    void import_state(const checkpoint::Archive& archive);

private:
    GanConfig config_;
    std::mt19937_64 init_rng_;
    Generator generator_;
    Discriminator discriminator_;
    nn::StateDict g_dict_, d_dict_;
    optim::Adam g_opt_, d_opt_;
    optim::CosineSchedule g_sched_, d_sched_;
    std::uint64_t step_ = 0;
    std::vector<GanStepReport> history_;
};

/// Generator input channels: RGB, plus NIR when enabled.
inline std::size_t generator_inputs(bool use_nir) { return use_nir ? 4 : 3; }

}  // namespace floodseg::gan
