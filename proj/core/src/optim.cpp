#include "tuna/optim.hpp"

#include <cmath>
#include <numbers>

#include "tuna/errors.hpp"

namespace tuna {

void Schedule::validate() const {
    if (total_iters < 0 || warmup_iters < 0) {
        throw ConfigError("schedule: iteration counts must be non-negative");
    }
    if (warmup_iters > total_iters) {
        throw ConfigError("schedule: warmup_iters exceeds total_iters");
    }
    if (min_lr_ratio < 0.0 || min_lr_ratio > 1.0) {
        throw ConfigError("schedule: min_lr_ratio must be in [0,1]");
    }
}

double cosine_lr(int64_t iter, const Schedule& s, double base_lr) {
    s.validate();
    if (iter < 0 || iter > s.total_iters) {
        throw ContractError("cosine_lr: iteration " + std::to_string(iter) +
                            " outside [0," + std::to_string(s.total_iters) + "]");
    }
    if (iter < s.warmup_iters) {
        return base_lr * static_cast<double>(iter + 1) / static_cast<double>(s.warmup_iters);
    }
    const int64_t span = s.total_iters - s.warmup_iters;
    const double t = span > 0 ? static_cast<double>(iter - s.warmup_iters) /
                                    static_cast<double>(span)
                              : 0.0;
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    return base_lr * (s.min_lr_ratio + (1.0 - s.min_lr_ratio) * cosine);
}

AdamW::AdamW(const ParamStore& store, AdamWConfig cfg) : cfg_(cfg) {
    for (const ParamEntry& e : store.entries()) {
        if (e.trainable) {
            Slot slot;
            slot.m.assign(static_cast<size_t>(e.tensor.numel()), 0.0);
            slot.v.assign(static_cast<size_t>(e.tensor.numel()), 0.0);
            slots_.emplace(e.name, std::move(slot));
        }
    }
}

void AdamW::step(ParamStore& store, double lr) {
    store.assert_frozen_clean();
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (ParamEntry& e : store.entries()) {
        if (!e.trainable) {
            continue;
        }
        auto it = slots_.find(e.name);
        if (it == slots_.end()) {
            throw ContractError("adamw: parameter '" + e.name +
                                "' became trainable after optimizer construction");
        }
        Slot& slot = it->second;
        auto& p = e.tensor.mutable_data();
        const bool has_grad = e.tensor.has_grad();
        for (size_t i = 0; i < p.size(); ++i) {
            const double g = has_grad ? e.tensor.grad()[i] : 0.0;
            slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g;
            slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g * g;
            const double m_hat = slot.m[i] / bc1;
            const double v_hat = slot.v[i] / bc2;
            // Decoupled decay: shrink from the old value, then the Adam step.
            p[i] -= lr * cfg_.weight_decay * p[i];
            p[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        }
        e.tensor.zero_grad();
    }
}

}  // namespace tuna
