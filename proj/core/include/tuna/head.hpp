#pragma once

#include "tuna/backbone.hpp"

namespace tuna {

struct HeadConfig {
    int64_t channels = 64;  // common width F
    int64_t num_classes = 3;

    void validate() const;
};

// FPN-lite decode head: per-stage 1x1 projection to F channels, bilinear
// upsampling to the stage-0 grid, concatenation, 1x1 fusion, 1x1 classifier.
struct HeadParams {
    std::array<Tensor, 4> proj_w;  // [F, C_s, 1, 1]
    std::array<Tensor, 4> proj_b;  // [F]
    Tensor fuse_w, fuse_b;         // [F, 4F, 1, 1], [F]
    Tensor cls_w, cls_b;           // [K, F, 1, 1], [K]
};

std::vector<ParamSpec> head_param_specs(const BackboneConfig& bcfg, const HeadConfig& hcfg);
HeadParams bind_head(const ParamStore& store);

// Produces logits [B, num_classes, out_h, out_w]; no softmax.
Tensor head_forward(const StageFeatures& features, const HeadParams& p, int64_t out_h,
                    int64_t out_w);

}  // namespace tuna
