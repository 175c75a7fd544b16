#include "tuna/head.hpp"

namespace tuna {

void HeadConfig::validate() const {
    if (channels < 1) {
        throw ConfigError("head: channels must be >= 1");
    }
    if (num_classes < 2) {
        throw ConfigError("head: num_classes must be >= 2");
    }
}

std::vector<ParamSpec> head_param_specs(const BackboneConfig& bcfg, const HeadConfig& hcfg) {
    hcfg.validate();
    const int64_t f = hcfg.channels;
    std::vector<ParamSpec> out;
    for (int s = 0; s < 4; ++s) {
        const std::string pre = "head.proj." + std::to_string(s) + ".";
        out.push_back({pre + "w", {f, bcfg.embed_dims[s], 1, 1}, Component::head,
                       InitKind::trunc_normal_002});
        out.push_back({pre + "b", {f}, Component::head, InitKind::zeros});
    }
    out.push_back({"head.fuse.w", {f, 4 * f, 1, 1}, Component::head, InitKind::trunc_normal_002});
    out.push_back({"head.fuse.b", {f}, Component::head, InitKind::zeros});
    out.push_back({"head.cls.w", {hcfg.num_classes, f, 1, 1}, Component::head,
                   InitKind::trunc_normal_002});
    out.push_back({"head.cls.b", {hcfg.num_classes}, Component::head, InitKind::zeros});
    return out;
}

HeadParams bind_head(const ParamStore& store) {
    HeadParams p;
    for (int s = 0; s < 4; ++s) {
        const std::string pre = "head.proj." + std::to_string(s) + ".";
        p.proj_w[s] = store.get(pre + "w");
        p.proj_b[s] = store.get(pre + "b");
    }
    p.fuse_w = store.get("head.fuse.w");
    p.fuse_b = store.get("head.fuse.b");
    p.cls_w = store.get("head.cls.w");
    p.cls_b = store.get("head.cls.b");
    return p;
}

Tensor head_forward(const StageFeatures& features, const HeadParams& p, int64_t out_h,
                    int64_t out_w) {
    for (const Tensor& t : features.tokens) {
        if (!t.defined()) {
            throw ContractError("head_forward: missing stage features");
        }
    }
    const int64_t h0 = features.grids[0][0];
    const int64_t w0 = features.grids[0][1];
    std::vector<Tensor> pyramid;
    for (int s = 0; s < 4; ++s) {
        const Tensor& tokens = features.tokens[s];
        const int64_t b = tokens.dim(0);
        const int64_t c = tokens.dim(2);
        const int64_t h = features.grids[s][0];
        const int64_t w = features.grids[s][1];
        Tensor x = permute(reshape(tokens, {b, h, w, c}), {0, 3, 1, 2});  // [B,C,H,W]
        x = conv2d_pointwise(x, p.proj_w[s], p.proj_b[s]);
        if (h != h0 || w != w0) {
            x = upsample_bilinear(x, h0, w0);
        }
        pyramid.push_back(x);
    }
    Tensor fused = concat(pyramid, 1);                    // [B,4F,H0,W0]
    fused = conv2d_pointwise(fused, p.fuse_w, p.fuse_b);  // [B,F,H0,W0]
    Tensor logits = conv2d_pointwise(fused, p.cls_w, p.cls_b);
    if (logits.dim(2) != out_h || logits.dim(3) != out_w) {
        logits = upsample_bilinear(logits, out_h, out_w);
    }
    return logits;
}

}  // namespace tuna
