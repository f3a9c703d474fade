#include "floodseg/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace floodseg::optim {

void adam_update(std::span<double> param, std::span<const double> grad, Moments& moments, std::uint64_t step,
                 double lr, const AdamConfig& config) {
    if (grad.size() != param.size()) throw ShapeError("adam_update: gradient length does not match parameter");
    if (step == 0) throw std::invalid_argument("adam_update: step index is 1-based");
    if (moments.m.size() != param.size()) {
        moments.m.assign(param.size(), 0.0);
        moments.v.assign(param.size(), 0.0);
    }
    const double b1 = config.beta1, b2 = config.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        moments.m[i] = b1 * moments.m[i] + (1.0 - b1) * g;
        moments.v[i] = b2 * moments.v[i] + (1.0 - b2) * g * g;
        const double mhat = moments.m[i] / c1;
        const double vhat = moments.v[i] / c2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + config.eps);
    }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), moments_(params_.size()), config_(config) {}

void Adam::step(double lr) {
    ++step_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        auto g = p.grad();
        for (double v : g) {
            if (!std::isfinite(v)) throw NonFiniteError("non-finite gradient at optimizer step " + std::to_string(step_));
        }
        adam_update(p.mutable_data(), g, moments_[i], step_, lr, config_);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

CosineSchedule::CosineSchedule(double base_lr, double min_lr, std::uint64_t period)
    : base_(base_lr), min_(min_lr), period_(period) {
    if (min_lr > base_lr) throw std::invalid_argument("cosine schedule: min_lr exceeds base_lr");
    if (period == 0) throw std::invalid_argument("cosine schedule: period must be positive");
}

double CosineSchedule::lr_at(std::uint64_t t) const {
    if (t >= period_) return min_;
    const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(period_);
    return min_ + 0.5 * (base_ - min_) * (1.0 + std::cos(phase));
}

}  // namespace floodseg::optim
