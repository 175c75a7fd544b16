#pragma once

#include <cstdint>
#include <vector>

#include "tuna/ops.hpp"

namespace tuna {

// K x K pixel-count grid; rows are ground truth, columns are predictions.
// Ignored pixels enter no cell, so accumulation is order-independent.
class ConfusionMatrix {
  public:
    explicit ConfusionMatrix(int64_t num_classes);

    int64_t num_classes() const { return k_; }
    void add_pixel(int32_t gt, int32_t pred);
    void add_grid(const IntGrid& gt, const IntGrid& pred, int32_t ignore_index);
    void merge(const ConfusionMatrix& other);

    int64_t count(int64_t gt, int64_t pred) const { return counts_[gt * k_ + pred]; }
    int64_t total() const;

    int64_t tp(int64_t cls) const;
    int64_t fp(int64_t cls) const;
    int64_t fn(int64_t cls) const;

  private:
    int64_t k_;
    std::vector<int64_t> counts_;
};

struct Metrics {
    double miou = 0.0;
    double macc = 0.0;
    double aacc = 0.0;
    // IoU per class; entries for classes absent from both ground truth and
    // prediction are 0 and flagged absent.
    std::vector<double> per_class_iou;
    std::vector<bool> class_present;
};

// mIoU = mean over present classes of TP/(TP+FP+FN); mAcc = mean over
// gt-present classes of TP/(TP+FN); aAcc = sum TP / total pixels.
Metrics compute_metrics(const ConfusionMatrix& cm);

}  // namespace tuna
