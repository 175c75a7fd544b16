#include "tuna/metrics.hpp"

#include "tuna/errors.hpp"

namespace tuna {

ConfusionMatrix::ConfusionMatrix(int64_t num_classes) : k_(num_classes) {
    if (num_classes < 1) {
        throw ContractError("ConfusionMatrix: need at least one class");
    }
    counts_.assign(static_cast<size_t>(k_ * k_), 0);
}

void ConfusionMatrix::add_pixel(int32_t gt, int32_t pred) {
    if (gt < 0 || gt >= k_ || pred < 0 || pred >= k_) {
        throw ContractError("ConfusionMatrix: class id out of range (gt=" + std::to_string(gt) +
                            ", pred=" + std::to_string(pred) + ", K=" + std::to_string(k_) + ")");
    }
    ++counts_[gt * k_ + pred];
}

void ConfusionMatrix::add_grid(const IntGrid& gt, const IntGrid& pred, int32_t ignore_index) {
    if (gt.h != pred.h || gt.w != pred.w) {
        throw ShapeError("ConfusionMatrix: grid sizes disagree");
    }
    for (size_t i = 0; i < gt.v.size(); ++i) {
        if (gt.v[i] == ignore_index) {
            continue;
        }
        add_pixel(gt.v[i], pred.v[i]);
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.k_ != k_) {
        throw ShapeError("ConfusionMatrix: merging different class counts");
    }
    for (size_t i = 0; i < counts_.size(); ++i) {
        counts_[i] += other.counts_[i];
    }
}

int64_t ConfusionMatrix::total() const {
    int64_t n = 0;
    for (int64_t c : counts_) {
        n += c;
    }
    return n;
}

int64_t ConfusionMatrix::tp(int64_t cls) const {
    return counts_[cls * k_ + cls];
}

int64_t ConfusionMatrix::fp(int64_t cls) const {
    int64_t n = 0;
    for (int64_t gt = 0; gt < k_; ++gt) {
        if (gt != cls) {
            n += counts_[gt * k_ + cls];
        }
    }
    return n;
}

int64_t ConfusionMatrix::fn(int64_t cls) const {
    int64_t n = 0;
    for (int64_t pred = 0; pred < k_; ++pred) {
        if (pred != cls) {
            n += counts_[cls * k_ + pred];
        }
    }
    return n;
}

Metrics compute_metrics(const ConfusionMatrix& cm) {
    const int64_t k = cm.num_classes();
    Metrics m;
    m.per_class_iou.assign(static_cast<size_t>(k), 0.0);
    m.class_present.assign(static_cast<size_t>(k), false);
    double iou_sum = 0.0;
    int64_t iou_classes = 0;
    double acc_sum = 0.0;
    int64_t acc_classes = 0;
    int64_t tp_total = 0;
    for (int64_t c = 0; c < k; ++c) {
        const int64_t tp = cm.tp(c);
        const int64_t fp = cm.fp(c);
        const int64_t fn = cm.fn(c);
        tp_total += tp;
        if (tp + fp + fn > 0) {
            const double iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
            m.per_class_iou[c] = iou;
            m.class_present[c] = true;
            iou_sum += iou;
            ++iou_classes;
        }
        if (tp + fn > 0) {
            acc_sum += static_cast<double>(tp) / static_cast<double>(tp + fn);
            ++acc_classes;
        }
    }
    m.miou = iou_classes > 0 ? iou_sum / static_cast<double>(iou_classes) : 0.0;
    m.macc = acc_classes > 0 ? acc_sum / static_cast<double>(acc_classes) : 0.0;
    const int64_t total = cm.total();
    m.aacc = total > 0 ? static_cast<double>(tp_total) / static_cast<double>(total) : 0.0;
    return m;
}

}  // namespace tuna
