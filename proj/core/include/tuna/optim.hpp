#pragma once

#include <map>
#include <string>
#include <vector>

#include "tuna/param_store.hpp"

namespace tuna {

struct AdamWConfig {
    double base_lr = 1e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Linear warmup to base_lr over warmup_iters, then cosine annealing down to
// base_lr * min_lr_ratio at total_iters.
struct Schedule {
    int64_t total_iters = 0;
    int64_t warmup_iters = 100;
    double min_lr_ratio = 0.0;

    void validate() const;
};

double cosine_lr(int64_t iter, const Schedule& s, double base_lr);

// Decoupled-weight-decay Adam. Moment state exists only for trainable
// parameters; frozen parameters are never touched and must never carry a
// gradient (ContractError if one does).
class AdamW {
  public:
    AdamW(const ParamStore& store, AdamWConfig cfg);

    // Consumes the gradients accumulated on trainable tensors (missing
    // gradient = zero) and clears them afterwards.
    void step(ParamStore& store, double lr);

    int64_t step_count() const { return steps_; }
    const AdamWConfig& config() const { return cfg_; }

  private:
    struct Slot {
        std::vector<double> m, v;
    };
    AdamWConfig cfg_;
    std::map<std::string, Slot> slots_;
    int64_t steps_ = 0;
};

}  // namespace tuna
