#include "floodseg/refiner.hpp"

#include <cmath>
#include <stdexcept>

#include "floodseg/optim.hpp"

namespace floodseg::refiner {

namespace {

constexpr double kSlope = 0.2;

Tensor lrelu(const Tensor& x) { return ops::leaky_relu(x, kSlope); }

void require_same_size(const indices::IndexMap& index, std::size_t w, std::size_t h) {
    if (index.width != w || index.height != h) {
        throw ShapeError("refiner: distance map is " + std::to_string(w) + "x" + std::to_string(h) + ", index is " +
                         std::to_string(index.width) + "x" + std::to_string(index.height));
    }
}

// Per-image training material.
struct Prepared {
    std::vector<double> input;  // C * H * W
    distmap::PointSet points;
    bool usable = false;
    std::optional<distmap::PointClass> empty;
};

Prepared prepare(const indices::IndexMap& index, const RefinerConfig& config) {
    Prepared p;
    p.points = distmap::collect_confident_points(index, config.thresholds, config.max_per_class, config.seed);
    const bool no_water = p.points.water.empty(), no_land = p.points.nonwater.empty();
    if (no_water && no_land) {
        if (!config.fallback_when_no_points) throw NoConfidentPointsError();
        p.empty = distmap::PointClass::Water;
        return p;
    }
    if (no_water || no_land) {
        p.empty = no_water ? distmap::PointClass::Water : distmap::PointClass::NonWater;
        return p;
    }
    Tensor t;
    if (config.adaptive) {
        t = build_refiner_input(index, distmap::adaptive_distance_map(p.points, index.width, index.height));
    } else {
        auto [dw, dn] = distmap::class_distance_maps(p.points, index.width, index.height);
        t = build_two_map_input(index, dw, dn);
    }
    p.input.assign(t.data().begin(), t.data().end());
    p.usable = true;
    return p;
}

RefinedMask coarse_fallback(const indices::IndexMap& index, double threshold) {
    RefinedMask m;
    m.width = index.width;
    m.height = index.height;
    m.labels = indices::threshold_mask(index, threshold, true);
    m.probabilities.resize(m.labels.labels.size());
    for (std::size_t i = 0; i < m.probabilities.size(); ++i) {
        const Label l = m.labels.labels[i];
        m.probabilities[i] = l == Label::Water ? 1.0 : l == Label::NonWater ? 0.0 : 0.5;
    }
    return m;
}

void add_point_targets(const distmap::PointSet& points, std::size_t width, std::size_t offset,
                       std::vector<double>& target, std::vector<double>& weight) {
    for (const auto& p : points.water) {
        const std::size_t i = offset + static_cast<std::size_t>(p.y) * width + static_cast<std::size_t>(p.x);
        target[i] = 1.0;
        weight[i] = 1.0;
    }
    for (const auto& p : points.nonwater) {
        const std::size_t i = offset + static_cast<std::size_t>(p.y) * width + static_cast<std::size_t>(p.x);
        target[i] = 0.0;
        weight[i] = 1.0;
    }
}

}  // namespace

RefinerNet::RefinerNet(std::size_t in_channels, std::size_t width, std::mt19937_64& rng)
    : in_channels_(in_channels),
      enc1_(in_channels, width, 3, 1, 1, false, rng),
      enc2_(width, width, 3, 2, 1, false, rng),
      dec1_(2 * width, width, 3, 1, 1, false, rng),
      dec2_(width, width, 3, 1, 1, false, rng),
      head_(width, 1, 1, 1, 0, false, rng),
      enc1_bn_(width),
      dec1_bn_(width),
      enc2_in_(width),
      dec2_in_(width) {}

Tensor RefinerNet::forward(const Tensor& x, const nn::Mode& mode) {
    if (x.ndim() != 4 || x.dim(1) != in_channels_) {
        throw ShapeError("refiner expects [N, " + std::to_string(in_channels_) + ", H, W], got " +
                         shape_str(x.shape()));
    }
    const std::size_t h = x.dim(2), w = x.dim(3);
    Tensor skip = lrelu(enc1_bn_.forward(enc1_.forward(x, mode), mode));
    Tensor down = lrelu(enc2_in_.forward(enc2_.forward(skip, mode)));
    Tensor up = ops::crop(ops::upsample_bilinear(down, 2), h, w);
    Tensor y = ops::concat_channels({up, skip});
    y = lrelu(dec1_bn_.forward(dec1_.forward(y, mode), mode));
    y = lrelu(dec2_in_.forward(dec2_.forward(y, mode)));
    return head_.forward(y, mode);
}

void RefinerNet::collect(const std::string& prefix, nn::StateDict& dict) {
    enc1_.collect(prefix + "enc1", dict);
    enc1_bn_.collect(prefix + "enc1_bn", dict);
    enc2_.collect(prefix + "enc2", dict);
    enc2_in_.collect(prefix + "enc2_in", dict);
    dec1_.collect(prefix + "dec1", dict);
    dec1_bn_.collect(prefix + "dec1_bn", dict);
    dec2_.collect(prefix + "dec2", dict);
    dec2_in_.collect(prefix + "dec2_in", dict);
    head_.collect(prefix + "head", dict);
}

void RefinerConfig::validate() const {
    if (k_iterations < 1) throw std::invalid_argument("refiner k_iterations must be >= 1");
    if (!(learning_rate > 0)) throw std::invalid_argument("refiner learning rate must be positive");
    if (!(eps > 0 && eps < 0.5)) throw std::invalid_argument("refiner eps must be in (0, 0.5)");
    if (width == 0 || max_per_class == 0) throw std::invalid_argument("refiner width and max_per_class must be positive");
    thresholds.validate();
}

Tensor build_refiner_input(const indices::IndexMap& index, const distmap::AdaptiveDistanceMap& dmap) {
    require_same_size(index, dmap.width, dmap.height);
    const std::size_t n = index.values.size();
    std::vector<double> data(2 * n);
    std::copy(index.values.begin(), index.values.end(), data.begin());
    std::copy(dmap.values.begin(), dmap.values.end(), data.begin() + static_cast<long>(n));
    return Tensor({1, 2, index.height, index.width}, std::move(data));
}

Tensor build_two_map_input(const indices::IndexMap& index, const distmap::DistanceMap& water,
                           const distmap::DistanceMap& nonwater) {
    require_same_size(index, water.width, water.height);
    require_same_size(index, nonwater.width, nonwater.height);
    const std::size_t n = index.values.size();
    std::vector<double> data;
    data.reserve(3 * n);
    data.insert(data.end(), index.values.begin(), index.values.end());
    data.insert(data.end(), water.values.begin(), water.values.end());
    data.insert(data.end(), nonwater.values.begin(), nonwater.values.end());
    return Tensor({1, 3, index.height, index.width}, std::move(data));
}

Tensor partial_label_loss(const Tensor& probabilities, const distmap::PointSet& points, double eps) {
    if (points.size() == 0) throw std::invalid_argument("partial_label_loss: no labeled points");
    if (probabilities.ndim() != 4 || probabilities.dim(0) != 1 || probabilities.dim(1) != 1) {
        throw ShapeError("partial_label_loss expects [1, 1, H, W], got " + shape_str(probabilities.shape()));
    }
    const std::size_t h = probabilities.dim(2), w = probabilities.dim(3);
    for (const auto* set : {&points.water, &points.nonwater}) {
        for (const auto& p : *set) {
            if (p.x < 0 || p.y < 0 || static_cast<std::size_t>(p.x) >= w || static_cast<std::size_t>(p.y) >= h) {
                throw std::invalid_argument("partial_label_loss: point outside the plane");
            }
        }
    }
    std::vector<double> target(w * h, 0.0), weight(w * h, 0.0);
    add_point_targets(points, w, 0, target, weight);
    return ops::binary_cross_entropy(probabilities, target, weight, eps);
}

RefinedMask from_probabilities(std::vector<double> probabilities, std::size_t width, std::size_t height) {
    RefinedMask m;
    m.width = width;
    m.height = height;
    m.labels = Mask(width, height);
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
        m.labels.labels[i] = probabilities[i] >= 0.5 ? Label::Water : Label::NonWater;
    }
    m.probabilities = std::move(probabilities);
    return m;
}

RefineResult refine(const indices::IndexMap& index, const RefinerConfig& config) {
    return std::move(refine_batch({index}, config).front());
}

std::vector<RefineResult> refine_batch(const std::vector<indices::IndexMap>& images, const RefinerConfig& config) {
    config.validate();
    if (images.empty()) return {};
    const std::size_t w = images.front().width, h = images.front().height, plane = w * h;
    for (const auto& im : images) {
        if (im.width != w || im.height != h) throw ShapeError("refine_batch: images differ in size");
        for (double v : im.values) {
            if (!std::isfinite(v)) throw NonFiniteError("refine: index plane has non-finite values");
        }
    }

    std::vector<Prepared> prepared;
    prepared.reserve(images.size());
    for (const auto& im : images) prepared.push_back(prepare(im, config));

    std::vector<RefineResult> results(images.size());
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < images.size(); ++i) {
        results[i].points = prepared[i].points;
        if (prepared[i].usable) {
            active.push_back(i);
        } else {
            results[i].mask = coarse_fallback(images[i], config.coarse_threshold);
            results[i].fallback = true;
            results[i].empty_class = prepared[i].empty;
        }
    }
    if (active.empty()) return results;

    const std::size_t channels = config.adaptive ? 2 : 3;
    const std::size_t b = active.size();
    std::vector<double> input, target(b * plane, 0.0), weight(b * plane, 0.0);
    input.reserve(b * channels * plane);
    for (std::size_t j = 0; j < b; ++j) {
        const auto& p = prepared[active[j]];
        input.insert(input.end(), p.input.begin(), p.input.end());
        add_point_targets(p.points, w, j * plane, target, weight);
    }
    const Tensor x({b, channels, h, w}, std::move(input));

    std::mt19937_64 rng(config.seed);
    RefinerNet net(channels, config.width, rng);
    nn::StateDict dict;
    net.collect("", dict);
    auto params = dict.parameter_tensors();
    optim::AdamConfig adam_cfg;
    adam_cfg.lr = config.learning_rate;
    optim::Adam adam(params, adam_cfg);
    const nn::Mode train{true, 0, 0.0};

    auto loss_of = [&](const Tensor& logits) {
        return ops::binary_cross_entropy(ops::sigmoid(logits), target, weight, config.eps);
    };
    double best = std::numeric_limits<double>::infinity(), initial = 0;
    std::vector<std::vector<double>> best_params;
    auto snapshot = [&] {
        best_params.clear();
        for (const auto& t : params) best_params.emplace_back(t.data().begin(), t.data().end());
    };
    for (int step = 0; step < config.k_iterations; ++step) {
        adam.zero_grad();
        Tensor loss = loss_of(net.forward(x, train));
        const double value = loss.item();
        if (step == 0) initial = value;
        if (value < best) {
            best = value;
            snapshot();
        }
        loss.backward();
        adam.step();
    }
    double final_loss;
    {
        NoGradGuard guard;
        final_loss = loss_of(net.forward(x, train)).item();
    }
    // Keep the best parameters seen so the returned mask never scores worse
    // on the sampled points than the initialization.
    if (final_loss > best) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto dst = params[i].mutable_data();
            std::copy(best_params[i].begin(), best_params[i].end(), dst.begin());
        }
        final_loss = best;
    }

    NoGradGuard guard;
    Tensor prob = ops::sigmoid(net.forward(x, nn::Mode{false, 0, 0.0}));
    auto pd = prob.data();
    for (std::size_t j = 0; j < b; ++j) {
        auto& r = results[active[j]];
        r.mask = from_probabilities(std::vector<double>(pd.begin() + static_cast<long>(j * plane),
                                                        pd.begin() + static_cast<long>((j + 1) * plane)),
                                    w, h);
        r.initial_loss = initial;
        r.final_loss = final_loss;
    }
    return results;
}

}  // namespace floodseg::refiner
