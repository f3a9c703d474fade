#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "floodseg/raster.hpp"

namespace floodseg::metrics {

/// Two-class confusion counts; counts[i][j] is the number of pixels of true
/// class i predicted as class j. Class 0 is non-water, class 1 water.
struct ConfusionMatrix {
    static constexpr std::size_t kClasses = 2;
    std::array<std::array<std::uint64_t, kClasses>, kClasses> counts{};

    std::uint64_t total() const;
    /// t_i: pixels whose true class is i.
    std::uint64_t true_count(std::size_t i) const;
    /// Pixels predicted as class j.
    std::uint64_t predicted_count(std::size_t j) const;

    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix&) const = default;
};

/// Adds every pixel whose truth is not Ignore. A prediction of Ignore is
/// scored as non-water.
void accumulate(ConfusionMatrix& cm, const Mask& pred, const Mask& truth);

/// sum_i n_ii / sum_i t_i; 0 for an empty matrix.
double pixel_accuracy(const ConfusionMatrix& cm);
/// Mean over classes of n_ii / (t_i + sum_j n_ji - n_ii). Classes whose
/// union is empty are left out of the mean; 0 when no class has support.
double mean_iou(const ConfusionMatrix& cm);
/// (sum_k t_k)^-1 sum_i t_i n_ii / (t_i + sum_j n_ji - n_ii).
double fw_iou(const ConfusionMatrix& cm);

struct Report {
    double pa = 0, miou = 0, fwiou = 0;
};

Report report(const ConfusionMatrix& cm);

}  // namespace floodseg::metrics
