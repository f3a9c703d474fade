#include "floodseg/metrics.hpp"

#include <stdexcept>

namespace floodseg::metrics {

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts)
        for (auto v : row) t += v;
    return t;
}

std::uint64_t ConfusionMatrix::true_count(std::size_t i) const {
    std::uint64_t t = 0;
    for (auto v : counts[i]) t += v;
    return t;
}

std::uint64_t ConfusionMatrix::predicted_count(std::size_t j) const {
    std::uint64_t t = 0;
    for (const auto& row : counts) t += row[j];
    return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    for (std::size_t i = 0; i < kClasses; ++i)
        for (std::size_t j = 0; j < kClasses; ++j) counts[i][j] += other.counts[i][j];
    return *this;
}

void accumulate(ConfusionMatrix& cm, const Mask& pred, const Mask& truth) {
    if (pred.width != truth.width || pred.height != truth.height) {
        throw std::invalid_argument("prediction and truth masks differ in size");
    }
    for (std::size_t i = 0; i < truth.labels.size(); ++i) {
        if (truth.labels[i] == Label::Ignore) continue;
        const std::size_t t = truth.labels[i] == Label::Water ? 1 : 0;
        const std::size_t p = pred.labels[i] == Label::Water ? 1 : 0;
        ++cm.counts[t][p];
    }
}

double pixel_accuracy(const ConfusionMatrix& cm) {
    const auto total = cm.total();
    if (total == 0) return 0.0;
    std::uint64_t diag = 0;
    for (std::size_t i = 0; i < ConfusionMatrix::kClasses; ++i) diag += cm.counts[i][i];
    return static_cast<double>(diag) / static_cast<double>(total);
}

namespace {

std::uint64_t union_of(const ConfusionMatrix& cm, std::size_t i) {
    return cm.true_count(i) + cm.predicted_count(i) - cm.counts[i][i];
}

}  // namespace

double mean_iou(const ConfusionMatrix& cm) {
    double acc = 0.0;
    std::size_t classes = 0;
    for (std::size_t i = 0; i < ConfusionMatrix::kClasses; ++i) {
        const auto u = union_of(cm, i);
        if (u == 0) continue;
        acc += static_cast<double>(cm.counts[i][i]) / static_cast<double>(u);
        ++classes;
    }
    return classes ? acc / static_cast<double>(classes) : 0.0;
}

double fw_iou(const ConfusionMatrix& cm) {
    const auto total = cm.total();
    if (total == 0) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < ConfusionMatrix::kClasses; ++i) {
        const auto u = union_of(cm, i);
        if (u == 0) continue;
        acc += static_cast<double>(cm.true_count(i)) * static_cast<double>(cm.counts[i][i]) / static_cast<double>(u);
    }
    return acc / static_cast<double>(total);
}

Report report(const ConfusionMatrix& cm) { return {pixel_accuracy(cm), mean_iou(cm), fw_iou(cm)}; }

}  // namespace floodseg::metrics
