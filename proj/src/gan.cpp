#include "floodseg/gan.hpp"

#include <cmath>
#include <sstream>

#include "floodseg/io.hpp"

namespace floodseg::gan {

namespace {

constexpr double kSlope = 0.2;
constexpr std::size_t kStages = 3;
constexpr double kHeadInitScale = 0.1;

Tensor one_minus(const Tensor& x) { return ops::add_scalar(ops::mul_scalar(x, -1.0), 1.0); }

std::vector<Tensor> parameters_of(auto& net) {
    nn::StateDict d;
    net.collect("", d);
    return d.parameter_tensors();
}

void require_finite(double v, const char* term, std::uint64_t step) {
    if (!std::isfinite(v)) {
        throw TrainingDivergedError(std::string("non-finite ") + term + " at GAN step " + std::to_string(step));
    }
}

}  // namespace

Generator::Generator(std::size_t in_channels, std::size_t width, std::mt19937_64& rng, std::uint64_t dropout_seed)
    : in_channels_(in_channels), dropout_rng_(dropout_seed) {
    std::size_t prev = in_channels;
    for (std::size_t i = 0; i < kStages; ++i) {
        const std::size_t c = width << i;
        enc_.push_back({nn::Conv2d(prev, c, 3, 1, 1, true, rng), nn::BatchNorm2d(c), nn::Conv2d(c, c, 3, 2, 1, true, rng)});
        prev = c;
    }
    for (std::size_t j = 0; j < kStages; ++j) {
        const std::size_t skip = width << (kStages - 1 - j);
        dec_.push_back({nn::ConvTranspose2d(prev, skip, 4, 2, 1, true, rng), nn::Conv2d(2 * skip, skip, 3, 1, 1, true, rng),
                        nn::BatchNorm2d(skip)});
        prev = skip;
    }
    head_ = nn::Conv2d(prev, 1, 1, 1, 0, false, rng);
    // Small initial output so early pixel loss is not dominated by a random offset.
    for (auto& w : head_.weight.mutable_data()) w *= kHeadInitScale;
}

Tensor Generator::forward(const Tensor& x, const nn::Mode& mode) {
    if (x.ndim() != 4 || x.dim(1) != in_channels_) {
        throw ShapeError("generator expects [N, " + std::to_string(in_channels_) + ", H, W], got " + shape_str(x.shape()));
    }
    if (x.dim(2) % 8 != 0 || x.dim(3) % 8 != 0) {
        throw ShapeError("generator input " + shape_str(x.shape()) + " needs H and W divisible by 8");
    }
    std::vector<Tensor> skips;
    Tensor y = x;
    for (auto& b : enc_) {
        y = ops::leaky_relu(b.bn.forward(b.conv.forward(y, mode), mode), kSlope);
        y = ops::dropout(y, mode.dropout, mode.training, dropout_rng_);
        skips.push_back(y);
        y = b.down.forward(y, mode);
    }
    for (std::size_t j = 0; j < dec_.size(); ++j) {
        auto& b = dec_[j];
        y = ops::concat_channels({b.up.forward(y, mode), skips[kStages - 1 - j]});
        y = ops::leaky_relu(b.bn.forward(b.conv.forward(y, mode), mode), kSlope);
        y = ops::dropout(y, mode.dropout, mode.training, dropout_rng_);
    }
    return head_.forward(y, mode);
}

void Generator::collect(const std::string& prefix, nn::StateDict& dict) {
    for (std::size_t i = 0; i < enc_.size(); ++i) {
        const std::string p = prefix + "enc" + std::to_string(i);
        enc_[i].conv.collect(p + ".conv", dict);
        enc_[i].bn.collect(p + ".bn", dict);
        enc_[i].down.collect(p + ".down", dict);
    }
    for (std::size_t j = 0; j < dec_.size(); ++j) {
        const std::string p = prefix + "dec" + std::to_string(j);
        dec_[j].up.collect(p + ".up", dict);
        dec_[j].conv.collect(p + ".conv", dict);
        dec_[j].bn.collect(p + ".bn", dict);
    }
    head_.collect(prefix + "head", dict);
}

std::vector<std::pair<Tensor, nn::SpectralNorm*>> Generator::spectral_layers() {
    std::vector<std::pair<Tensor, nn::SpectralNorm*>> out;
    for (auto& b : enc_) {
        out.emplace_back(b.conv.weight, &b.conv.sn);
        out.emplace_back(b.down.weight, &b.down.sn);
    }
    for (auto& b : dec_) {
        out.emplace_back(b.up.weight, &b.up.sn);
        out.emplace_back(b.conv.weight, &b.conv.sn);
    }
    return out;
}

Discriminator::Discriminator(std::size_t width, std::mt19937_64& rng) {
    std::size_t prev = 1;
    for (std::size_t i = 0; i < 4; ++i) {
        const std::size_t c = width << i;
        blocks_.push_back({nn::Conv2d(prev, c, 4, 2, 1, true, rng), nn::BatchNorm2d(c)});
        prev = c;
    }
    attn2_ = nn::SelfAttention(width << 1, rng);
    attn4_ = nn::SelfAttention(width << 3, rng);
    final_ = nn::Conv2d(prev, 1, 4, 2, 1, true, rng);
}

std::size_t Discriminator::patch_grid(std::size_t side) {
    for (int i = 0; i < 5; ++i) side /= 2;
    return side;
}

DiscriminatorOutput Discriminator::forward(const Tensor& swir, const nn::Mode& mode) {
    if (swir.ndim() != 4 || swir.dim(1) != 1) {
        throw ShapeError("discriminator expects [N, 1, H, W], got " + shape_str(swir.shape()));
    }
    if (patch_grid(swir.dim(2)) == 0 || patch_grid(swir.dim(3)) == 0) {
        throw ShapeError("discriminator input " + shape_str(swir.shape()) + " is smaller than 32x32");
    }
    Tensor y = swir;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        y = ops::relu(blocks_[i].bn.forward(blocks_[i].conv.forward(y, mode), mode));
        if (i == 1) y = attn2_.forward(y, mode);
        if (i == 3) y = attn4_.forward(y, mode);
    }
    return {ops::sigmoid(final_.forward(y, mode)), y};
}

void Discriminator::collect(const std::string& prefix, nn::StateDict& dict) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const std::string p = prefix + "block" + std::to_string(i + 1);
        blocks_[i].conv.collect(p + ".conv", dict);
        blocks_[i].bn.collect(p + ".bn", dict);
    }
    attn2_.collect(prefix + "attn2", dict);
    attn4_.collect(prefix + "attn4", dict);
    final_.collect(prefix + "block5.conv", dict);
}

std::vector<std::pair<Tensor, nn::SpectralNorm*>> Discriminator::spectral_layers() {
    std::vector<std::pair<Tensor, nn::SpectralNorm*>> out;
    for (auto& b : blocks_) out.emplace_back(b.conv.weight, &b.conv.sn);
    for (auto* a : {&attn2_, &attn4_}) {
        for (auto* c : {&a->query, &a->key, &a->value}) out.emplace_back(c->weight, &c->sn);
    }
    out.emplace_back(final_.weight, &final_.sn);
    return out;
}

void LossWeights::validate() const {
    if (lambda_g < 0 || lambda_d < 0 || lambda_f < 0) throw std::invalid_argument("loss weights must be non-negative");
}

GeneratorLoss generator_loss(const Tensor& s, const Tensor& s_tilde, const Tensor& d_fake_scores) {
    if (s.shape() != s_tilde.shape()) {
        throw ShapeError("generator_loss: target " + shape_str(s.shape()) + " vs output " + shape_str(s_tilde.shape()));
    }
    GeneratorLoss l;
    l.pixel = ops::mse(s_tilde, s);
    l.adversarial = ops::mean(ops::square(one_minus(d_fake_scores)));
    l.total = ops::add(l.pixel, l.adversarial);
    return l;
}

Tensor discriminator_loss(const Tensor& d_fake_scores, const Tensor& d_real_scores) {
    return ops::add(ops::mean(ops::square(d_fake_scores)), ops::mean(ops::square(one_minus(d_real_scores))));
}

Tensor feature_matching_loss(const Tensor& feat_real, const Tensor& feat_fake) {
    if (feat_real.shape() != feat_fake.shape()) {
        throw ShapeError("feature_matching_loss: " + shape_str(feat_real.shape()) + " vs " + shape_str(feat_fake.shape()));
    }
    return ops::mse(feat_fake, feat_real.detach());
}

Tensor gan_total_loss(const Tensor& l_g, const Tensor& l_d, const Tensor& l_f, const LossWeights& w) {
    w.validate();
    return ops::add(ops::add(ops::mul_scalar(l_g, w.lambda_g), ops::mul_scalar(l_d, w.lambda_d)),
                    ops::mul_scalar(l_f, w.lambda_f));
}

void GanConfig::validate() const {
    if (generator_width == 0 || discriminator_width == 0) throw std::invalid_argument("network widths must be positive");
    if (dropout < 0 || dropout >= 1) throw std::invalid_argument("dropout must be in [0, 1)");
    if (!(lr_generator > 0) || !(lr_discriminator > 0)) throw std::invalid_argument("learning rates must be positive");
    if (total_steps == 0) throw std::invalid_argument("total_steps must be positive");
    if (min_lr_fraction < 0 || min_lr_fraction > 1) throw std::invalid_argument("min_lr_fraction must be in [0, 1]");
    weights.validate();
}

GanTrainer::GanTrainer(const GanConfig& config)
    : config_((config.validate(), config)),
      init_rng_(config.seed),
      generator_(generator_inputs(config.use_nir), config.generator_width, init_rng_, config.seed ^ 0x9e3779b97f4a7c15ULL),
      discriminator_(config.discriminator_width, init_rng_),
      g_opt_(parameters_of(generator_), optim::AdamConfig{config.lr_generator}),
      d_opt_(parameters_of(discriminator_), optim::AdamConfig{config.lr_discriminator}),
      g_sched_(config.lr_generator, config.lr_generator * config.min_lr_fraction, config.total_steps),
      d_sched_(config.lr_discriminator, config.lr_discriminator * config.min_lr_fraction, config.total_steps) {
    generator_.collect("generator.", g_dict_);
    discriminator_.collect("discriminator.", d_dict_);
}

Tensor GanTrainer::synthesize(const Tensor& rgb, bool training) {
    return generator_.forward(rgb, nn::Mode{training, 1, training ? config_.dropout : 0.0});
}

GanStepReport GanTrainer::step(const Tensor& rgb, const Tensor& swir) {
    GanStepReport r;
    r.step = step_;
    r.warmup = step_ < config_.warmup_steps;
    r.lr_generator = g_sched_.current();
    r.lr_discriminator = d_sched_.current();
    const nn::Mode train{true, 1, config_.dropout};
    const nn::Mode d_mode{true, 1, 0.0};
    const auto& w = config_.weights;

    try {
        Tensor fake = generator_.forward(rgb, train);
        if (r.warmup) {
            Tensor pixel = ops::mse(fake, swir);
            r.pixel = pixel.item();
            require_finite(r.pixel, "pixel loss", step_);
            g_opt_.zero_grad();
            ops::mul_scalar(pixel, w.lambda_g).backward();
            g_opt_.step(r.lr_generator);
        } else {
            // Discriminator update on a detached fake.
            d_opt_.zero_grad();
            Tensor d_loss = discriminator_loss(discriminator_.forward(fake.detach(), d_mode).scores,
                                               discriminator_.forward(swir, d_mode).scores);
            r.discriminator = d_loss.item();
            require_finite(r.discriminator, "discriminator loss", step_);
            ops::mul_scalar(d_loss, w.lambda_d).backward();
            d_opt_.step(r.lr_discriminator);

            // Generator update against the refreshed discriminator.
            g_opt_.zero_grad();
            auto fake_out = discriminator_.forward(fake, d_mode);
            Tensor real_features;
            {
                NoGradGuard guard;
                real_features = discriminator_.forward(swir, d_mode).features;
            }
            auto g_loss = generator_loss(swir, fake, fake_out.scores);
            Tensor fm = feature_matching_loss(real_features, fake_out.features);
            r.pixel = g_loss.pixel.item();
            r.adversarial = g_loss.adversarial.item();
            r.feature_matching = fm.item();
            require_finite(r.pixel, "pixel loss", step_);
            require_finite(r.adversarial, "adversarial loss", step_);
            require_finite(r.feature_matching, "feature-matching loss", step_);
            ops::add(ops::mul_scalar(g_loss.total, w.lambda_g), ops::mul_scalar(fm, w.lambda_f)).backward();
            g_opt_.step(r.lr_generator);
            d_opt_.zero_grad();
        }
    } catch (const NonFiniteError& e) {
        throw TrainingDivergedError(std::string(e.what()) + " at GAN step " + std::to_string(step_));
    }
    g_sched_.advance();
    d_sched_.advance();
    ++step_;
    history_.push_back(r);
    return r;
}

void GanTrainer::write_loss_csv(const std::filesystem::path& path) const {
    std::ostringstream os;
    os.precision(17);
    os << "step,lr,lr_d,pixel,adversarial,discriminator,feature_matching\n";
    for (const auto& r : history_) {
        os << r.step << ',' << r.lr_generator << ',' << r.lr_discriminator << ',' << r.pixel << ',' << r.adversarial
           << ',' << r.discriminator << ',' << r.feature_matching << '\n';
    }
    io::atomic_write(path, os.str());
}

void GanTrainer::export_state(checkpoint::Archive& archive) {
    checkpoint::export_state(g_dict_, "", archive);
    checkpoint::export_state(d_dict_, "", archive);
}

void GanTrainer::import_state(const checkpoint::Archive& archive) {
    checkpoint::import_state(archive, "", g_dict_);
    checkpoint::import_state(archive, "", d_dict_);
}

}  // namespace floodseg::gan
