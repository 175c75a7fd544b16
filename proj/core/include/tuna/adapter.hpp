#pragma once

#include <array>
#include <vector>

#include "tuna/backbone.hpp"

namespace tuna {

enum class TunaStructure { parallel, sequential };

struct TunaConfig {
    std::array<int64_t, 4> kernel_sizes{7, 5, 5, 3};
    std::array<int64_t, 4> bottleneck_dims{64, 64, 96, 192};
    TunaStructure structure = TunaStructure::parallel;
    double s1_init = 1e-6;
    double s2_init = 0.0;
    double dropout_p = 0.1;
    bool adaptive_convolution = true;
    bool adaptive_embedding = true;

    void validate() const;

    // Stage schedules actually instantiated. Disabling adaptive_convolution
    // collapses every kernel to kernel_sizes[3]; disabling adaptive_embedding
    // collapses every bottleneck to bottleneck_dims[0].
    std::array<int64_t, 4> effective_kernels() const;
    std::array<int64_t, 4> effective_dims() const;
};

// Trainable parameters of one adapter instance plus its block's balance
// scales. d = bottleneck dim of the stage, C = embed dim, k = kernel size.
struct TunaBlockParams {
    Tensor down_w, down_b;  // [C,d], [d]
    Tensor dw_w, dw_b;      // [d,1,k,k], [d]
    Tensor pw_w, pw_b;      // [d,d,1,1], [d]
    Tensor up_w, up_b;      // [d,C], [C]
    Tensor s1;              // [C], per-channel scale on the frozen branch
    Tensor s2;              // [1], scalar scale on the adapter branch
};

std::vector<ParamSpec> tuna_param_specs(const BackboneConfig& bcfg, const TunaConfig& tcfg);

// Adds one TunaBlockParams set per transformer block to a store already
// holding the backbone. Adapter weights are truncated-normal(0.02), biases
// zero, s1/s2 filled with their configured inits. Trainability is applied
// separately by the preset.
void inject_tuna(ParamStore& store, const BackboneConfig& bcfg, const TunaConfig& tcfg, Rng& rng);

std::vector<std::vector<TunaBlockParams>> bind_tuna(const ParamStore& store,
                                                    const BackboneConfig& bcfg);

// The adapter branch before its outer residual: dropout(GeLU(F_up(conv pair
// (F_down(x)) + F_down(x)))). Token order is row-major (H, W), matching
// window_partition's layout.
Tensor tuna_delta(const Tensor& x, const TunaBlockParams& p, int64_t h, int64_t w,
                  double dropout_p, bool training, Rng* rng);

// Full adapter map including the outer residual: tuna_delta(x) + x.
Tensor tuna_forward(const Tensor& x, const TunaBlockParams& p, int64_t h, int64_t w,
                    double dropout_p, bool training, Rng* rng);

// One transformer block with the adapter injected.
//   parallel:   z = s1 (x) (MLP(LN(z_hat)) + z_hat) + s2 * tuna_forward(z_prev)
//   sequential: v = s1 (x) vanilla_block(z_prev); z = v + s2 * tuna_delta(v)
BlockState block_forward(const Tensor& z_prev, const BlockParams& host, const TunaBlockParams& p,
                         TunaStructure structure, int64_t h, int64_t w, bool shift,
                         double host_dropout_p, double tuna_dropout_p, bool training, Rng* rng);

// Overwrites every block's balance scales; used to neutralize the injection
// (s1=1, s2=0) or probe scaling behavior.
void set_scale_params(ParamStore& store, double s1, double s2);

}  // namespace tuna
