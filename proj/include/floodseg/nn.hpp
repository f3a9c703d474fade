#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "floodseg/ops.hpp"
#include "floodseg/tensor.hpp"

namespace floodseg::nn {

/// Named views of a network's trainable parameters and persistent buffers.
/// Parameters alias the network's tensors, buffers point into it.
struct StateDict {
    struct Param {
        std::string name;
        Tensor tensor;
    };
    struct Buffer {
        std::string name;
        std::vector<double>* values;
    };
    std::vector<Param> params;
    std::vector<Buffer> buffers;

    std::vector<Tensor> parameter_tensors() const;
};

/// Kaiming-uniform with the leaky-relu(0.2) gain.
Tensor kaiming_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

/// Power-iteration state for spectral normalization of one weight.
class SpectralNorm {
public:
    SpectralNorm() = default;
    SpectralNorm(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

    /// Runs `iterations` power steps (no gradient) then divides the weight by
    /// u^T W v. With iterations == 0 the stored vectors are used as is.
    Tensor apply(const Tensor& weight, int iterations);
    /// Refines u and v in place without producing a tensor.
    void power_iterate(const Tensor& weight, int iterations);
    double sigma_estimate(const Tensor& weight) const;

    std::vector<double>& u() { return u_; }
    std::vector<double>& v() { return v_; }

private:
    std::vector<double> u_, v_;
};

/// Behavior switches shared by every layer of a network.
struct Mode {
    bool training = true;
    /// Power iterations per training forward; 0 freezes u/v (used by
    /// finite-difference checks so repeated forwards see the same function).
    int power_iterations = 1;
    double dropout = 0.0;
};

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
           bool spectral, std::mt19937_64& rng, bool bias = true);
    Tensor forward(const Tensor& x, const Mode& mode);
    void collect(const std::string& prefix, StateDict& dict);
    /// Weight as used in the forward pass (spectrally normalized if enabled).
    Tensor effective_weight();

    Tensor weight, bias;
    std::size_t stride = 1, padding = 0;
    bool spectral = false;
    SpectralNorm sn;
};

class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
                    bool spectral, std::mt19937_64& rng, bool bias = true);
    Tensor forward(const Tensor& x, const Mode& mode);
    void collect(const std::string& prefix, StateDict& dict);
    Tensor effective_weight();

    Tensor weight, bias;
    std::size_t stride = 2, padding = 1;
    bool spectral = false;
    SpectralNorm sn;
};

class BatchNorm2d {
public:
    BatchNorm2d() = default;
    explicit BatchNorm2d(std::size_t channels);
    Tensor forward(const Tensor& x, const Mode& mode);
    void collect(const std::string& prefix, StateDict& dict);

    Tensor gamma, beta;
    std::vector<double> running_mean, running_var;
    double momentum = 0.1, eps = 1e-5;
};

class InstanceNorm2d {
public:
    InstanceNorm2d() = default;
    explicit InstanceNorm2d(std::size_t channels);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, StateDict& dict);

    Tensor gamma, beta;
    double eps = 1e-5;
};

/// Self-attention over spatial positions with a residual gate:
///   y = x + gamma * (V softmax(Q^T K)^T)
/// gamma starts at 0, so a fresh module is the identity map.
class SelfAttention {
public:
    SelfAttention() = default;
    SelfAttention(std::size_t channels, std::mt19937_64& rng);
    Tensor forward(const Tensor& x, const Mode& mode);
    /// Attention weights [N, HW, HW]; row i holds query position i.
    Tensor attention(const Tensor& x, const Mode& mode);
    void collect(const std::string& prefix, StateDict& dict);

    Conv2d query, key, value;
    Tensor gamma;
};

}  // namespace floodseg::nn
