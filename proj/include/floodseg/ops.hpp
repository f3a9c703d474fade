#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "floodseg/tensor.hpp"

/// Differentiable operations. Image tensors are laid out NCHW, row-major.
namespace floodseg::ops {

// Elementwise, same-shape operands.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
/// Multiplies every element by a differentiable scalar tensor.
Tensor scale(const Tensor& a, const Tensor& s);
Tensor square(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Mean of squared differences.
Tensor mse(const Tensor& a, const Tensor& b);

/// Weighted binary cross-entropy on probabilities, summed:
///   -sum_i w_i [t_i log p_i + (1 - t_i) log(1 - p_i)]
/// with p clamped to [eps, 1 - eps]. Clamped elements pass no gradient.
Tensor binary_cross_entropy(const Tensor& prob, std::span<const double> target,
                            std::span<const double> weight, double eps);

/// Cross-correlation. weight is [Cout, Cin, K, K]; bias is [Cout] or undefined.
/// Output size: (H + 2*padding - K) / stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// Adjoint of conv2d with respect to its input. weight is [Cin, Cout, K, K].
/// Output size: (H - 1) * stride - 2*padding + K.
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        std::size_t stride, std::size_t padding);

/// Statistics over (N, H, W) per channel. In training mode the batch
/// statistics normalize the input and the running buffers are updated with
/// the unbiased variance; in eval mode the running buffers are used.
/// Constant channels normalize to zero since eps keeps the divisor positive.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  std::vector<double>& running_mean, std::vector<double>& running_var, bool training,
                  double momentum, double eps);

/// Statistics over (H, W) per sample and channel, identical in both modes.
Tensor instance_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps);

/// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& input, double p, bool training, std::mt19937_64& rng);

/// Bilinear resize by an integer factor with align_corners = false:
/// source coordinate = (dst + 0.5) / factor - 0.5, clamped at the borders.
Tensor upsample_bilinear(const Tensor& input, std::size_t factor);

Tensor concat_channels(const std::vector<Tensor>& inputs);

/// Top-left spatial crop to [.., .., height, width].
Tensor crop(const Tensor& input, std::size_t height, std::size_t width);

/// Batched matrix product: [B, M, K] x [B, K, N] -> [B, M, N].
Tensor bmm(const Tensor& a, const Tensor& b);
/// Swaps the last two axes of a rank-3 tensor.
Tensor transpose12(const Tensor& a);
/// Softmax along the last axis.
Tensor softmax_last(const Tensor& a);

/// weight / sigma with sigma = u^T W v, W being weight flattened to
/// [dim0, rest]. u and v are treated as constants. A zero sigma returns the
/// weight unchanged.
Tensor spectral_normalize(const Tensor& weight, std::span<const double> u, std::span<const double> v);

}  // namespace floodseg::ops
