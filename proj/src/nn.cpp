#include "floodseg/nn.hpp"

#include <cmath>

namespace floodseg::nn {

namespace {

void normalize(std::vector<double>& x) {
    double n = 0.0;
    for (double v : x) n += v * v;
    n = std::sqrt(n);
    if (n == 0.0) return;
    for (double& v : x) v /= n;
}

std::vector<double> random_unit(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> x(n);
    for (auto& v : x) v = dist(rng);
    normalize(x);
    return x;
}

}  // namespace

std::vector<Tensor> StateDict::parameter_tensors() const {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.tensor);
    return out;
}

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double gain = std::sqrt(2.0 / (1.0 + 0.2 * 0.2));
    const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = dist(rng);
    return Tensor(std::move(shape), std::move(data), true);
}

SpectralNorm::SpectralNorm(std::size_t rows, std::size_t cols, std::mt19937_64& rng)
    : u_(random_unit(rows, rng)), v_(random_unit(cols, rng)) {}

void SpectralNorm::power_iterate(const Tensor& weight, int iterations) {
    const std::size_t rows = u_.size(), cols = v_.size();
    auto w = weight.data();
    for (int it = 0; it < iterations; ++it) {
        std::fill(v_.begin(), v_.end(), 0.0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) v_[c] += w[r * cols + c] * u_[r];
        normalize(v_);
        std::fill(u_.begin(), u_.end(), 0.0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) u_[r] += w[r * cols + c] * v_[c];
        normalize(u_);
    }
}

double SpectralNorm::sigma_estimate(const Tensor& weight) const {
    const std::size_t rows = u_.size(), cols = v_.size();
    auto w = weight.data();
    double s = 0.0;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) s += u_[r] * w[r * cols + c] * v_[c];
    return s;
}

Tensor SpectralNorm::apply(const Tensor& weight, int iterations) {
    power_iterate(weight, iterations);
    return ops::spectral_normalize(weight, u_, v_);
}

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, std::size_t padding_,
               bool spectral_, std::mt19937_64& rng, bool with_bias)
    : stride(stride_), padding(padding_), spectral(spectral_) {
    weight = kaiming_uniform({out, in, kernel, kernel}, in * kernel * kernel, rng);
    if (with_bias) bias = Tensor::zeros({out}, true);
    if (spectral) sn = SpectralNorm(out, in * kernel * kernel, rng);
}

Tensor Conv2d::effective_weight() { return spectral ? sn.apply(weight, 0) : weight; }

Tensor Conv2d::forward(const Tensor& x, const Mode& mode) {
    Tensor w = spectral ? sn.apply(weight, mode.training ? mode.power_iterations : 0) : weight;
    return ops::conv2d(x, w, bias, stride, padding);
}

void Conv2d::collect(const std::string& prefix, StateDict& dict) {
    dict.params.push_back({prefix + ".weight", weight});
    if (bias.defined()) dict.params.push_back({prefix + ".bias", bias});
    if (spectral) {
        dict.buffers.push_back({prefix + ".sn_u", &sn.u()});
        dict.buffers.push_back({prefix + ".sn_v", &sn.v()});
    }
}

ConvTranspose2d::ConvTranspose2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_,
                                 std::size_t padding_, bool spectral_, std::mt19937_64& rng, bool with_bias)
    : stride(stride_), padding(padding_), spectral(spectral_) {
    weight = kaiming_uniform({in, out, kernel, kernel}, out * kernel * kernel, rng);
    if (with_bias) bias = Tensor::zeros({out}, true);
    if (spectral) sn = SpectralNorm(in, out * kernel * kernel, rng);
}

Tensor ConvTranspose2d::effective_weight() { return spectral ? sn.apply(weight, 0) : weight; }

Tensor ConvTranspose2d::forward(const Tensor& x, const Mode& mode) {
    Tensor w = spectral ? sn.apply(weight, mode.training ? mode.power_iterations : 0) : weight;
    return ops::conv_transpose2d(x, w, bias, stride, padding);
}

void ConvTranspose2d::collect(const std::string& prefix, StateDict& dict) {
    dict.params.push_back({prefix + ".weight", weight});
    if (bias.defined()) dict.params.push_back({prefix + ".bias", bias});
    if (spectral) {
        dict.buffers.push_back({prefix + ".sn_u", &sn.u()});
        dict.buffers.push_back({prefix + ".sn_v", &sn.v()});
    }
}

BatchNorm2d::BatchNorm2d(std::size_t channels)
    : gamma(Tensor::full({channels}, 1.0, true)),
      beta(Tensor::zeros({channels}, true)),
      running_mean(channels, 0.0),
      running_var(channels, 1.0) {}

Tensor BatchNorm2d::forward(const Tensor& x, const Mode& mode) {
    return ops::batch_norm(x, gamma, beta, running_mean, running_var, mode.training, momentum, eps);
}

void BatchNorm2d::collect(const std::string& prefix, StateDict& dict) {
    dict.params.push_back({prefix + ".gamma", gamma});
    dict.params.push_back({prefix + ".beta", beta});
    dict.buffers.push_back({prefix + ".running_mean", &running_mean});
    dict.buffers.push_back({prefix + ".running_var", &running_var});
}

InstanceNorm2d::InstanceNorm2d(std::size_t channels)
    : gamma(Tensor::full({channels}, 1.0, true)), beta(Tensor::zeros({channels}, true)) {}

Tensor InstanceNorm2d::forward(const Tensor& x) const { return ops::instance_norm(x, gamma, beta, eps); }

void InstanceNorm2d::collect(const std::string& prefix, StateDict& dict) {
    dict.params.push_back({prefix + ".gamma", gamma});
    dict.params.push_back({prefix + ".beta", beta});
}

SelfAttention::SelfAttention(std::size_t channels, std::mt19937_64& rng)
    : query(channels, std::max<std::size_t>(1, channels / 8), 1, 1, 0, true, rng),
      key(channels, std::max<std::size_t>(1, channels / 8), 1, 1, 0, true, rng),
      value(channels, channels, 1, 1, 0, true, rng),
      gamma(Tensor::scalar(0.0, true)) {}

Tensor SelfAttention::attention(const Tensor& x, const Mode& mode) {
    const std::size_t n = x.dim(0), hw = x.dim(2) * x.dim(3);
    Tensor q = query.forward(x, mode);
    Tensor k = key.forward(x, mode);
    const std::size_t d = q.dim(1);
    Tensor qt = ops::transpose12(ops::reshape(q, {n, d, hw}));  // [N, HW, d]
    Tensor km = ops::reshape(k, {n, d, hw});                    // [N, d, HW]
    return ops::softmax_last(ops::bmm(qt, km));
}

Tensor SelfAttention::forward(const Tensor& x, const Mode& mode) {
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor attn = attention(x, mode);
    Tensor v = ops::reshape(value.forward(x, mode), {n, c, hw});
    Tensor o = ops::bmm(v, ops::transpose12(attn));  // [N, C, HW]
    return ops::add(x, ops::scale(ops::reshape(o, x.shape()), gamma));
}

void SelfAttention::collect(const std::string& prefix, StateDict& dict) {
    query.collect(prefix + ".query", dict);
    key.collect(prefix + ".key", dict);
    value.collect(prefix + ".value", dict);
    dict.params.push_back({prefix + ".gamma", gamma});
}

}  // namespace floodseg::nn
