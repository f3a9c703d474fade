#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "floodseg/distmap.hpp"
#include "floodseg/indices.hpp"
#include "floodseg/nn.hpp"
#include "floodseg/raster.hpp"
#include "floodseg/tensor.hpp"

namespace floodseg::refiner {

/// One encoder block (conv, batch norm, leaky relu; stride-2 conv, instance
/// norm, leaky relu) and one decoder block (bilinear x2, crop, concat with the
/// full-resolution encoder features, conv, batch norm, leaky relu, conv,
/// instance norm, leaky relu), then a 1x1 logit head. Any H, W >= 2.
class RefinerNet {
public:
    RefinerNet(std::size_t in_channels, std::size_t width, std::mt19937_64& rng);

    /// Logits [N, 1, H, W].
    Tensor forward(const Tensor& x, const nn::Mode& mode);
    void collect(const std::string& prefix, nn::StateDict& dict);
    std::size_t in_channels() const { return in_channels_; }

private:
    std::size_t in_channels_;
    nn::Conv2d enc1_, enc2_, dec1_, dec2_, head_;
    nn::BatchNorm2d enc1_bn_, dec1_bn_;
    nn::InstanceNorm2d enc2_in_, dec2_in_;
};

struct RefinerConfig {
    int k_iterations = 200;
    double learning_rate = 1e-2;
    distmap::Thresholds thresholds;
    std::uint64_t seed = 0;
    std::size_t max_per_class = 1024;
    double eps = 1e-7;
    std::size_t width = 8;
    /// false selects the ablation input MNDWI | D_w | D_nw.
    bool adaptive = true;
    /// Coarse MNDWI threshold used for fallback masks (water at or above).
    double coarse_threshold = 0.35;
    /// Tiles with no confident point of either class fall back like a single
    /// empty class instead of raising NoConfidentPointsError.
    bool fallback_when_no_points = false;

    void validate() const;
};

/// Neither class has a confident point.
class NoConfidentPointsError : public std::runtime_error {
public:
    NoConfidentPointsError() : std::runtime_error("no confident water or non-water points") {}
};

struct RefinedMask {
    std::size_t width = 0, height = 0;
    std::vector<double> probabilities;
    /// Water where probability >= 0.5.
    Mask labels;
};

struct RefineResult {
    RefinedMask mask;
    /// Set when sampling found an empty class and the coarse mask was returned.
    bool fallback = false;
    std::optional<distmap::PointClass> empty_class;
    distmap::PointSet points;
    /// Partial-label loss before the first and after the last update.
    double initial_loss = 0, final_loss = 0;
};

/// [1, 2, H, W]: channel 0 MNDWI, channel 1 D_a.
Tensor build_refiner_input(const indices::IndexMap& index, const distmap::AdaptiveDistanceMap& dmap);
/// [1, 3, H, W]: MNDWI, D_w, D_nw.
Tensor build_two_map_input(const indices::IndexMap& index, const distmap::DistanceMap& water,
                           const distmap::DistanceMap& nonwater);

/// -sum_{P_w} log p - sum_{P_nw} log(1 - p) over a [1, 1, H, W] probability
/// plane, p clamped to [eps, 1 - eps]. Throws std::invalid_argument for an
/// empty point set.
Tensor partial_label_loss(const Tensor& probabilities, const distmap::PointSet& points, double eps = 1e-7);

RefinedMask from_probabilities(std::vector<double> probabilities, std::size_t width, std::size_t height);

RefineResult refine(const indices::IndexMap& index, const RefinerConfig& config);

/// One network trained on every image's points at once, then applied per
/// image. All images must share one size.
std::vector<RefineResult> refine_batch(const std::vector<indices::IndexMap>& images, const RefinerConfig& config);

}  // namespace floodseg::refiner
