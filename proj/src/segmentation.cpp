#include "floodseg/segmentation.hpp"

#include <cmath>

#include "floodseg/dataset.hpp"

namespace floodseg::seg {

namespace {

constexpr double kSlope = 0.2;

std::vector<Tensor> parameters_of(SegmentorNet& net) {
    nn::StateDict d;
    net.collect("", d);
    return d.parameter_tensors();
}

void require_finite(double v, std::uint64_t step) {
    if (!std::isfinite(v)) throw gan::TrainingDivergedError("non-finite segmentation loss at joint step " + std::to_string(step));
}

}  // namespace

std::vector<std::size_t> default_widths() { return {8, 16, 32, 64, 64}; }

SegmentorNet::SegmentorNet(std::size_t in_channels, const std::vector<std::size_t>& widths, std::mt19937_64& rng)
    : in_channels_(in_channels) {
    if (widths.size() != 5) throw std::invalid_argument("segmentor needs five block widths");
    std::size_t prev = in_channels;
    for (std::size_t c : widths) {
        enc_.push_back({nn::Conv2d(prev, c, 3, 1, 1, true, rng), nn::Conv2d(c, c, 3, 1, 1, true, rng), nn::BatchNorm2d(c),
                        nn::Conv2d(c, c, 3, 2, 1, true, rng)});
        prev = c;
    }
    for (std::size_t j = 0; j < widths.size(); ++j) {
        const std::size_t skip = widths[widths.size() - 1 - j];
        dec_.push_back({nn::ConvTranspose2d(prev, skip, 4, 2, 1, true, rng), nn::Conv2d(2 * skip, skip, 3, 1, 1, true, rng),
                        nn::Conv2d(skip, skip, 3, 1, 1, true, rng), nn::BatchNorm2d(skip)});
        prev = skip;
    }
    head_ = nn::Conv2d(prev, 1, 1, 1, 0, false, rng);
}

Tensor SegmentorNet::forward(const Tensor& x, const nn::Mode& mode) {
    if (x.ndim() != 4 || x.dim(1) != in_channels_) {
        throw ShapeError("segmentor expects [N, " + std::to_string(in_channels_) + ", H, W], got " + shape_str(x.shape()));
    }
    if (x.dim(2) % 32 != 0 || x.dim(3) % 32 != 0) {
        throw ShapeError("segmentor input " + shape_str(x.shape()) + " needs H and W divisible by 32");
    }
    std::vector<Tensor> skips;
    Tensor y = x;
    for (auto& b : enc_) {
        y = b.conv2.forward(b.conv1.forward(y, mode), mode);
        y = ops::leaky_relu(b.bn.forward(y, mode), kSlope);
        skips.push_back(y);
        y = b.pool.forward(y, mode);
    }
    for (std::size_t j = 0; j < dec_.size(); ++j) {
        auto& b = dec_[j];
        y = ops::concat_channels({b.up.forward(y, mode), skips[skips.size() - 1 - j]});
        y = b.conv2.forward(b.conv1.forward(y, mode), mode);
        y = ops::leaky_relu(b.bn.forward(y, mode), kSlope);
    }
    return head_.forward(y, mode);
}

void SegmentorNet::collect(const std::string& prefix, nn::StateDict& dict) {
    for (std::size_t i = 0; i < enc_.size(); ++i) {
        const std::string p = prefix + "enc" + std::to_string(i);
        enc_[i].conv1.collect(p + ".conv1", dict);
        enc_[i].conv2.collect(p + ".conv2", dict);
        enc_[i].bn.collect(p + ".bn", dict);
        enc_[i].pool.collect(p + ".pool", dict);
    }
    for (std::size_t j = 0; j < dec_.size(); ++j) {
        const std::string p = prefix + "dec" + std::to_string(j);
        dec_[j].up.collect(p + ".up", dict);
        dec_[j].conv1.collect(p + ".conv1", dict);
        dec_[j].conv2.collect(p + ".conv2", dict);
        dec_[j].bn.collect(p + ".bn", dict);
    }
    head_.collect(prefix + "head", dict);
}

Mask SegPrediction::labels(std::size_t item) const {
    const std::size_t h = probabilities.dim(2), w = probabilities.dim(3), plane = h * w;
    Mask m(w, h);
    auto p = probabilities.data();
    for (std::size_t i = 0; i < plane; ++i) m.labels[i] = p[item * plane + i] >= 0.5 ? Label::Water : Label::NonWater;
    return m;
}

Tensor SwirScale::apply(const Tensor& swir) const {
    return ops::mul_scalar(ops::add_scalar(swir, -mean), 1.0 / stddev);
}

SegPrediction seg_forward(SegmentorNet& net, const Tensor& rgb, const Tensor& s_tilde, const SwirScale& scale,
                          const nn::Mode& mode) {
    if (rgb.ndim() != 4 || rgb.dim(1) != 3) throw ShapeError("seg_forward: rgb must be [N, 3, H, W], got " + shape_str(rgb.shape()));
    if (s_tilde.ndim() != 4 || s_tilde.dim(1) != 1) {
        throw ShapeError("seg_forward: synthesized SWIR must be [N, 1, H, W], got " + shape_str(s_tilde.shape()));
    }
    return {ops::sigmoid(net.forward(ops::concat_channels({rgb, scale.apply(s_tilde)}), mode))};
}

SegPrediction seg_forward_rgb(SegmentorNet& net, const Tensor& rgb, const nn::Mode& mode) {
    if (rgb.ndim() != 4 || rgb.dim(1) != 3) throw ShapeError("seg_forward_rgb: rgb must be [N, 3, H, W], got " + shape_str(rgb.shape()));
    return {ops::sigmoid(net.forward(rgb, mode))};
}

Tensor segmentation_loss(const Tensor& probabilities, const std::vector<Mask>& targets, double eps) {
    if (probabilities.ndim() != 4 || probabilities.dim(1) != 1 || probabilities.dim(0) != targets.size()) {
        throw ShapeError("segmentation_loss: " + shape_str(probabilities.shape()) + " vs " + std::to_string(targets.size()) +
                         " targets");
    }
    const std::size_t plane = probabilities.dim(2) * probabilities.dim(3);
    std::vector<double> t(probabilities.numel(), 0.0), w(probabilities.numel(), 0.0);
    std::size_t counted = 0;
    for (std::size_t b = 0; b < targets.size(); ++b) {
        if (targets[b].labels.size() != plane) throw ShapeError("segmentation_loss: target size mismatch");
        for (std::size_t i = 0; i < plane; ++i) {
            const Label l = targets[b].labels[i];
            if (l == Label::Ignore) continue;
            t[b * plane + i] = l == Label::Water ? 1.0 : 0.0;
            w[b * plane + i] = 1.0;
            ++counted;
        }
    }
    if (counted == 0) return Tensor::scalar(0.0);
    for (auto& x : w) x /= static_cast<double>(counted);
    return ops::binary_cross_entropy(probabilities, t, w, eps);
}

void JointConfig::validate() const {
    if (!(lr_segmentor > 0) || !(lr_generator > 0)) throw std::invalid_argument("learning rates must be positive");
    if (total_steps == 0) throw std::invalid_argument("total_steps must be positive");
    if (min_lr_fraction < 0 || min_lr_fraction > 1) throw std::invalid_argument("min_lr_fraction must be in [0, 1]");
    if (!(swir_scale.stddev > 0)) throw std::invalid_argument("SWIR scale must be positive");
    refiner.validate();
}

Tensor rgb_channels(const Tensor& input) {
    if (input.ndim() != 4 || input.dim(1) < 3) throw ShapeError("rgb_channels: input " + shape_str(input.shape()));
    const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
    if (c == 3) return input;
    std::vector<double> out;
    out.reserve(n * 3 * plane);
    auto d = input.data();
    for (std::size_t b = 0; b < n; ++b) {
        out.insert(out.end(), d.begin() + static_cast<long>(b * c * plane), d.begin() + static_cast<long>((b * c + 3) * plane));
    }
    return Tensor({n, 3, input.dim(2), input.dim(3)}, std::move(out));
}

JointTrainer::JointTrainer(const JointConfig& config, gan::GanTrainer* gan)
    : config_((config.validate(), config)),
      gan_(gan),
      init_rng_(config.seed),
      net_(config.use_swir ? 4 : 3, config.widths, init_rng_),
      opt_(parameters_of(net_), optim::AdamConfig{config.lr_segmentor}),
      seg_sched_(config.lr_segmentor, config.lr_segmentor * config.min_lr_fraction, config.total_steps),
      gen_sched_(config.lr_generator, config.lr_generator * config.min_lr_fraction, config.total_steps) {
    if (config_.use_swir && !gan_) throw std::invalid_argument("joint training with S~ needs a generator");
    net_.collect("segmentor.", dict_);
}

std::vector<Mask> JointTrainer::targets_for(const std::vector<Sample>& batch, std::size_t* fallbacks) {
    std::vector<Mask> out(batch.size());
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (config_.coarse_supervision) {
            out[i] = indices::threshold_mask(batch[i].mndwi, config_.refiner.coarse_threshold, true);
            continue;
        }
        auto it = config_.cache_refined ? cache_.find(batch[i].id) : cache_.end();
        if (it != cache_.end()) {
            out[i] = it->second;
        } else {
            todo.push_back(i);
        }
    }
    if (!todo.empty()) {
        std::vector<indices::IndexMap> maps;
        for (auto i : todo) maps.push_back(batch[i].mndwi);
        auto cfg = config_.refiner;
        cfg.fallback_when_no_points = true;
        auto refined = refiner::refine_batch(maps, cfg);
        for (std::size_t k = 0; k < todo.size(); ++k) {
            if (fallbacks && refined[k].fallback) ++*fallbacks;
            out[todo[k]] = refined[k].mask.labels;
            if (config_.cache_refined) cache_[batch[todo[k]].id] = refined[k].mask.labels;
        }
    }
    return out;
}

JointStepReport JointTrainer::step(const std::vector<Sample>& batch) {
    if (batch.empty()) throw std::invalid_argument("joint step needs a non-empty batch");
    JointStepReport r;
    r.step = step_;
    r.lr_segmentor = seg_sched_.current();
    r.lr_generator = gen_sched_.current();
    const auto targets = targets_for(batch, &r.fallbacks);

    std::vector<Tensor> inputs;
    for (const auto& s : batch) inputs.push_back(s.input);
    const Tensor input = dataset::stack(inputs);
    const Tensor rgb = rgb_channels(input);
    const nn::Mode train{true, 1, 0.0};
    const bool tune_generator = config_.use_swir && !config_.freeze_generator;

    try {
        SegPrediction pred;
        if (config_.use_swir) {
            Tensor s_tilde;
            if (tune_generator) {
                s_tilde = gan_->synthesize(input, true);
            } else {
                NoGradGuard guard;
                s_tilde = gan_->synthesize(input, false);
            }
            pred = seg_forward(net_, rgb, s_tilde, config_.swir_scale, train);
        } else {
            pred = seg_forward_rgb(net_, rgb, train);
        }
        Tensor loss = segmentation_loss(pred.probabilities, targets, config_.refiner.eps);
        r.loss = loss.item();
        require_finite(r.loss, step_);
        opt_.zero_grad();
        if (tune_generator) gan_->generator_optimizer().zero_grad();
        if (loss.requires_grad()) loss.backward();
        opt_.step(r.lr_segmentor);
        if (tune_generator) gan_->generator_optimizer().step(r.lr_generator);
    } catch (const NonFiniteError& e) {
        throw gan::TrainingDivergedError(std::string(e.what()) + " at joint step " + std::to_string(step_));
    }
    seg_sched_.advance();
    gen_sched_.advance();
    ++step_;
    history_.push_back(r);
    return r;
}

void JointTrainer::export_state(checkpoint::Archive& archive) { checkpoint::export_state(dict_, "", archive); }
void JointTrainer::import_state(const checkpoint::Archive& archive) { checkpoint::import_state(archive, "", dict_); }

SegPrediction predict_tile(const Tensor& input, gan::Generator* gen, SegmentorNet& net, const SwirScale& scale) {
    NoGradGuard guard;
    const nn::Mode eval{false, 0, 0.0};
    const Tensor rgb = rgb_channels(input);
    if (!gen) return seg_forward_rgb(net, rgb, eval);
    return seg_forward(net, rgb, gen->forward(input, eval), scale, eval);
}

}  // namespace floodseg::seg
