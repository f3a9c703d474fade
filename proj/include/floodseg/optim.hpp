#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "floodseg/tensor.hpp"

namespace floodseg::optim {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.4;
    double beta2 = 0.99;
    double eps = 1e-8;
};

/// First/second moment buffers for one parameter.
struct Moments {
    std::vector<double> m, v;
};

/// One bias-corrected Adam update of `param` in place. `step` is the
/// 1-based index of this update.
void adam_update(std::span<double> param, std::span<const double> grad, Moments& moments, std::uint64_t step,
                 double lr, const AdamConfig& config);

class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig config);

    /// Applies one update using each parameter's accumulated grad at `lr`.
    void step(double lr);
    void step() { step(config_.lr); }
    void zero_grad();

    std::uint64_t steps() const { return step_; }
    const AdamConfig& config() const { return config_; }
    const std::vector<Moments>& moments() const { return moments_; }

private:
    std::vector<Tensor> params_;
    std::vector<Moments> moments_;
    std::uint64_t step_ = 0;
    AdamConfig config_;
};

/// Cosine annealing from base_lr at t = 0 to min_lr at t = period:
///   lr(t) = min + (base - min) (1 + cos(pi t / period)) / 2
/// t beyond the period holds at min_lr.
class CosineSchedule {
public:
    CosineSchedule(double base_lr, double min_lr, std::uint64_t period);

    double lr_at(std::uint64_t t) const;
    double current() const { return lr_at(step_); }
    void advance() { ++step_; }
    std::uint64_t step() const { return step_; }

    double base_lr() const { return base_; }
    double min_lr() const { return min_; }
    std::uint64_t period() const { return period_; }

private:
    double base_, min_;
    std::uint64_t period_;
    std::uint64_t step_ = 0;
};

}  // namespace floodseg::optim
