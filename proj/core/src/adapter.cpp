#include "tuna/adapter.hpp"

namespace tuna {

void TunaConfig::validate() const {
    for (int64_t k : kernel_sizes) {
        if (k < 1 || k % 2 == 0) {
            throw ConfigError("tuna: kernel sizes must be odd and >= 1, got " + std::to_string(k));
        }
    }
    for (int64_t d : bottleneck_dims) {
        if (d < 1) {
            throw ConfigError("tuna: bottleneck dims must be >= 1");
        }
    }
    if (s1_init < 0.0) {
        throw ConfigError("tuna: s1_init must be non-negative");
    }
    if (dropout_p < 0.0 || dropout_p >= 1.0) {
        throw ConfigError("tuna: dropout_p must be in [0,1)");
    }
}

std::array<int64_t, 4> TunaConfig::effective_kernels() const {
    if (adaptive_convolution) {
        return kernel_sizes;
    }
    return {kernel_sizes[3], kernel_sizes[3], kernel_sizes[3], kernel_sizes[3]};
}

std::array<int64_t, 4> TunaConfig::effective_dims() const {
    if (adaptive_embedding) {
        return bottleneck_dims;
    }
    return {bottleneck_dims[0], bottleneck_dims[0], bottleneck_dims[0], bottleneck_dims[0]};
}

namespace {

std::string block_prefix(int stage, int block) {
    return "stages." + std::to_string(stage) + ".blocks." + std::to_string(block) + ".";
}

}  // namespace

std::vector<ParamSpec> tuna_param_specs(const BackboneConfig& bcfg, const TunaConfig& tcfg) {
    tcfg.validate();
    const auto kernels = tcfg.effective_kernels();
    const auto dims = tcfg.effective_dims();
    std::vector<ParamSpec> out;
    for (int s = 0; s < 4; ++s) {
        const int64_t c = bcfg.embed_dims[s];
        const int64_t d = dims[s];
        const int64_t k = kernels[s];
        for (int b = 0; b < bcfg.depths[s]; ++b) {
            const std::string pre = block_prefix(s, b);
            out.push_back({pre + "tuna.down.w", {c, d}, Component::tuna,
                           InitKind::trunc_normal_002});
            out.push_back({pre + "tuna.down.b", {d}, Component::tuna, InitKind::zeros});
            out.push_back({pre + "tuna.dw.w", {d, 1, k, k}, Component::tuna,
                           InitKind::trunc_normal_002});
            out.push_back({pre + "tuna.dw.b", {d}, Component::tuna, InitKind::zeros});
            out.push_back({pre + "tuna.pw.w", {d, d, 1, 1}, Component::tuna,
                           InitKind::trunc_normal_002});
            out.push_back({pre + "tuna.pw.b", {d}, Component::tuna, InitKind::zeros});
            out.push_back({pre + "tuna.up.w", {d, c}, Component::tuna,
                           InitKind::trunc_normal_002});
            out.push_back({pre + "tuna.up.b", {c}, Component::tuna, InitKind::zeros});
            out.push_back({pre + "s1", {c}, Component::scales, InitKind::constant, tcfg.s1_init});
            out.push_back({pre + "s2", {1}, Component::scales, InitKind::constant, tcfg.s2_init});
        }
    }
    return out;
}

void inject_tuna(ParamStore& store, const BackboneConfig& bcfg, const TunaConfig& tcfg, Rng& rng) {
    materialize_params(store, tuna_param_specs(bcfg, tcfg), rng);
}

std::vector<std::vector<TunaBlockParams>> bind_tuna(const ParamStore& store,
                                                    const BackboneConfig& bcfg) {
    std::vector<std::vector<TunaBlockParams>> out(4);
    for (int s = 0; s < 4; ++s) {
        for (int b = 0; b < bcfg.depths[s]; ++b) {
            const std::string pre = block_prefix(s, b);
            TunaBlockParams p;
            p.down_w = store.get(pre + "tuna.down.w");
            p.down_b = store.get(pre + "tuna.down.b");
            p.dw_w = store.get(pre + "tuna.dw.w");
            p.dw_b = store.get(pre + "tuna.dw.b");
            p.pw_w = store.get(pre + "tuna.pw.w");
            p.pw_b = store.get(pre + "tuna.pw.b");
            p.up_w = store.get(pre + "tuna.up.w");
            p.up_b = store.get(pre + "tuna.up.b");
            p.s1 = store.get(pre + "s1");
            p.s2 = store.get(pre + "s2");
            out[s].push_back(std::move(p));
        }
    }
    return out;
}

Tensor tuna_delta(const Tensor& x, const TunaBlockParams& p, int64_t h, int64_t w,
                  double dropout_p, bool training, Rng* rng) {
    if (x.rank() != 3) {
        throw ShapeError("tuna_delta: expected tokens [B,L,C], got " + shape_str(x.shape()));
    }
    const int64_t b = x.dim(0);
    const int64_t l = x.dim(1);
    if (l != h * w) {
        throw ContractError("tuna_delta: token count " + std::to_string(l) +
                            " does not match grid " + std::to_string(h) + "x" + std::to_string(w));
    }
    if (training && dropout_p > 0.0 && rng == nullptr) {
        throw ContractError("tuna_delta: training with dropout requires an rng");
    }
    const int64_t d = p.down_w.dim(1);

    Tensor down = linear(x, p.down_w, p.down_b);                 // [B,L,d]
    Tensor spatial = permute(reshape(down, {b, h, w, d}), {0, 3, 1, 2});  // [B,d,H,W]
    Tensor conv = conv2d_depthwise(spatial, p.dw_w, p.dw_b);
    conv = conv2d_pointwise(conv, p.pw_w, p.pw_b);
    Tensor mid = add(conv, spatial);                             // inner residual
    Tensor tokens = reshape(permute(mid, {0, 2, 3, 1}), {b, l, d});
    Tensor up = linear(tokens, p.up_w, p.up_b);                  // [B,L,C]
    Tensor act = gelu(up);
    if (training && dropout_p > 0.0) {
        act = dropout(act, dropout_p, training, *rng);
    }
    return act;
}

Tensor tuna_forward(const Tensor& x, const TunaBlockParams& p, int64_t h, int64_t w,
                    double dropout_p, bool training, Rng* rng) {
    return add(tuna_delta(x, p, h, w, dropout_p, training, rng), x);
}

BlockState block_forward(const Tensor& z_prev, const BlockParams& host, const TunaBlockParams& p,
                         TunaStructure structure, int64_t h, int64_t w, bool shift,
                         double host_dropout_p, double tuna_dropout_p, bool training, Rng* rng) {
    BlockState state;
    state.z_prev = z_prev;
    state.h = h;
    state.w = w;
    if (structure == TunaStructure::parallel) {
        state.z_hat = block_attn_half(z_prev, host, h, w, shift);
        Tensor frozen = block_mlp_half(state.z_hat, host, host_dropout_p, training, rng);
        Tensor adapter = tuna_forward(z_prev, p, h, w, tuna_dropout_p, training, rng);
        state.z_out = add(mul(frozen, p.s1), mul(adapter, p.s2));
    } else {
        BlockState vanilla =
            swin_block_vanilla(z_prev, host, h, w, shift, host_dropout_p, training, rng);
        state.z_hat = vanilla.z_hat;
        Tensor v = mul(vanilla.z_out, p.s1);
        Tensor delta = tuna_delta(v, p, h, w, tuna_dropout_p, training, rng);
        state.z_out = add(v, mul(delta, p.s2));
    }
    return state;
}

void set_scale_params(ParamStore& store, double s1, double s2) {
    for (ParamEntry& e : store.entries()) {
        if (e.component != Component::scales) {
            continue;
        }
        const bool is_s1 = e.name.size() >= 3 && e.name.compare(e.name.size() - 3, 3, ".s1") == 0;
        const double v = is_s1 ? s1 : s2;
        for (double& x : e.tensor.mutable_data()) {
            x = v;
        }
    }
}

}  // namespace tuna
