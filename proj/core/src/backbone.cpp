#include "tuna/backbone.hpp"

#include <cmath>

namespace tuna {

void BackboneConfig::validate() const {
    if (patch_size < 1) {
        throw ConfigError("backbone: patch_size must be >= 1");
    }
    if (window_size < 2) {
        throw ConfigError("backbone: window_size must be >= 2");
    }
    for (int s = 0; s < 4; ++s) {
        if (depths[s] < 1) {
            throw ConfigError("backbone: depths must all be >= 1");
        }
        if (embed_dims[s] < 1 || num_heads[s] < 1) {
            throw ConfigError("backbone: embed_dims and num_heads must be positive");
        }
        if (embed_dims[s] % num_heads[s] != 0) {
            throw ConfigError("backbone: num_heads " + std::to_string(num_heads[s]) +
                              " does not divide embed_dim " + std::to_string(embed_dims[s]) +
                              " in stage " + std::to_string(s));
        }
        if (s > 0 && embed_dims[s] != 2 * embed_dims[s - 1]) {
            throw ConfigError("backbone: embed_dims must double per stage (patch merging)");
        }
    }
    if (mlp_ratio <= 0.0) {
        throw ConfigError("backbone: mlp_ratio must be positive");
    }
    if (dropout_p < 0.0 || dropout_p >= 1.0) {
        throw ConfigError("backbone: dropout_p must be in [0,1)");
    }
}

int64_t BackboneConfig::mlp_hidden(int stage) const {
    return static_cast<int64_t>(std::llround(static_cast<double>(embed_dims[stage]) * mlp_ratio));
}

namespace {

std::string block_prefix(int stage, int block) {
    return "stages." + std::to_string(stage) + ".blocks." + std::to_string(block) + ".";
}

std::string stage_prefix(int stage) {
    return "stages." + std::to_string(stage) + ".";
}

void push_norm(std::vector<ParamSpec>& out, const std::string& prefix, int64_t c,
               Component comp) {
    out.push_back({prefix + "gamma", {c}, comp, InitKind::ones});
    out.push_back({prefix + "beta", {c}, comp, InitKind::zeros});
}

}  // namespace

std::vector<ParamSpec> backbone_param_specs(const BackboneConfig& cfg) {
    cfg.validate();
    std::vector<ParamSpec> out;
    const int64_t p = cfg.patch_size;
    const int64_t c0 = cfg.embed_dims[0];
    const int64_t rel = (2 * cfg.window_size - 1) * (2 * cfg.window_size - 1);
    out.push_back({"patch_embed.proj.w", {3 * p * p, c0}, Component::backbone,
                   InitKind::trunc_normal_002});
    out.push_back({"patch_embed.proj.b", {c0}, Component::backbone, InitKind::zeros});
    push_norm(out, "patch_embed.norm.", c0, Component::backbone);
    for (int s = 0; s < 4; ++s) {
        const int64_t c = cfg.embed_dims[s];
        const int64_t hidden = cfg.mlp_hidden(s);
        for (int b = 0; b < cfg.depths[s]; ++b) {
            const std::string pre = block_prefix(s, b);
            push_norm(out, pre + "norm1.", c, Component::backbone);
            out.push_back({pre + "attn.qkv.w", {c, 3 * c}, Component::backbone,
                           InitKind::trunc_normal_002});
            out.push_back({pre + "attn.qkv.b", {3 * c}, Component::backbone, InitKind::zeros});
            out.push_back({pre + "attn.rel_table", {rel, cfg.num_heads[s]}, Component::backbone,
                           InitKind::trunc_normal_002});
            out.push_back({pre + "attn.proj.w", {c, c}, Component::backbone,
                           InitKind::trunc_normal_002});
            out.push_back({pre + "attn.proj.b", {c}, Component::backbone, InitKind::zeros});
            push_norm(out, pre + "norm2.", c, Component::backbone);
            out.push_back({pre + "mlp.fc1.w", {c, hidden}, Component::backbone,
                           InitKind::trunc_normal_002});
            out.push_back({pre + "mlp.fc1.b", {hidden}, Component::backbone, InitKind::zeros});
            out.push_back({pre + "mlp.fc2.w", {hidden, c}, Component::backbone,
                           InitKind::trunc_normal_002});
            out.push_back({pre + "mlp.fc2.b", {c}, Component::backbone, InitKind::zeros});
        }
        if (s < 3) {
            push_norm(out, stage_prefix(s) + "merge.norm.", 4 * c, Component::backbone);
            out.push_back({stage_prefix(s) + "merge.reduce.w", {4 * c, 2 * c},
                           Component::backbone, InitKind::trunc_normal_002});
        }
        push_norm(out, stage_prefix(s) + "out_norm.", c, Component::backbone);
    }
    return out;
}

void materialize_params(ParamStore& store, const std::vector<ParamSpec>& specs, Rng& rng) {
    for (const ParamSpec& spec : specs) {
        Tensor t;
        switch (spec.init) {
            case InitKind::trunc_normal_002:
                t = trunc_normal(spec.shape, rng, 0.02);
                break;
            case InitKind::zeros:
                t = Tensor::zeros(spec.shape);
                break;
            case InitKind::ones:
                t = Tensor::full(spec.shape, 1.0);
                break;
            case InitKind::constant:
                t = Tensor::full(spec.shape, spec.value);
                break;
        }
        store.add(spec.name, t, spec.component, /*trainable=*/false);
    }
}

namespace {

LayerNormParams bind_norm(const ParamStore& store, const std::string& prefix) {
    return {store.get(prefix + "gamma"), store.get(prefix + "beta")};
}

}  // namespace

BackboneParams bind_backbone(const ParamStore& store, const BackboneConfig& cfg) {
    BackboneParams out;
    out.patch_w = store.get("patch_embed.proj.w");
    out.patch_b = store.get("patch_embed.proj.b");
    out.patch_norm = bind_norm(store, "patch_embed.norm.");
    out.stages.resize(4);
    for (int s = 0; s < 4; ++s) {
        StageParams& stage = out.stages[s];
        for (int b = 0; b < cfg.depths[s]; ++b) {
            const std::string pre = block_prefix(s, b);
            BlockParams block;
            block.norm1 = bind_norm(store, pre + "norm1.");
            block.attn.qkv_w = store.get(pre + "attn.qkv.w");
            block.attn.qkv_b = store.get(pre + "attn.qkv.b");
            block.attn.rel_table = store.get(pre + "attn.rel_table");
            block.attn.proj_w = store.get(pre + "attn.proj.w");
            block.attn.proj_b = store.get(pre + "attn.proj.b");
            block.attn.num_heads = cfg.num_heads[s];
            block.attn.window = cfg.window_size;
            block.norm2 = bind_norm(store, pre + "norm2.");
            block.mlp.fc1_w = store.get(pre + "mlp.fc1.w");
            block.mlp.fc1_b = store.get(pre + "mlp.fc1.b");
            block.mlp.fc2_w = store.get(pre + "mlp.fc2.w");
            block.mlp.fc2_b = store.get(pre + "mlp.fc2.b");
            stage.blocks.push_back(std::move(block));
        }
        if (s < 3) {
            MergeParams merge;
            merge.norm = bind_norm(store, stage_prefix(s) + "merge.norm.");
            merge.reduce_w = store.get(stage_prefix(s) + "merge.reduce.w");
            stage.merge = std::move(merge);
        }
        stage.out_norm = bind_norm(store, stage_prefix(s) + "out_norm.");
    }
    return out;
}

Tensor patch_embed(const Tensor& image, const Tensor& proj_w, const Tensor& proj_b,
                   const LayerNormParams& norm, int64_t patch, int64_t* grid_h, int64_t* grid_w) {
    if (image.rank() != 4) {
        throw ShapeError("patch_embed: expected image [B,3,H,W], got " + shape_str(image.shape()));
    }
    if (image.dim(1) != 3) {
        throw ShapeError("patch_embed: expected 3 input channels, got " +
                         std::to_string(image.dim(1)));
    }
    const int64_t b = image.dim(0);
    const int64_t h = image.dim(2);
    const int64_t w = image.dim(3);
    const int64_t ph = (patch - h % patch) % patch;
    const int64_t pw = (patch - w % patch) % patch;
    Tensor x = image;
    if (ph > 0 || pw > 0) {
        x = pad(x, {{0, 0}, {0, 0}, {0, ph}, {0, pw}});
    }
    const int64_t gh = (h + ph) / patch;
    const int64_t gw = (w + pw) / patch;
    x = reshape(x, {b, 3, gh, patch, gw, patch});
    x = permute(x, {0, 2, 4, 1, 3, 5});  // [B, Gh, Gw, 3, p, p]
    x = reshape(x, {b, gh * gw, 3 * patch * patch});
    x = linear(x, proj_w, proj_b);
    x = layer_norm(x, norm.gamma, norm.beta);
    if (grid_h) *grid_h = gh;
    if (grid_w) *grid_w = gw;
    return x;
}

Tensor window_partition(const Tensor& x, int64_t window) {
    if (x.rank() != 4) {
        throw ShapeError("window_partition: expected [B,H,W,C], got " + shape_str(x.shape()));
    }
    const int64_t b = x.dim(0);
    const int64_t h = x.dim(1);
    const int64_t w = x.dim(2);
    const int64_t c = x.dim(3);
    if (h % window != 0 || w % window != 0) {
        throw ContractError("window_partition: grid " + std::to_string(h) + "x" +
                            std::to_string(w) + " not divisible by window " +
                            std::to_string(window));
    }
    Tensor t = reshape(x, {b, h / window, window, w / window, window, c});
    t = permute(t, {0, 1, 3, 2, 4, 5});
    return reshape(t, {b * (h / window) * (w / window), window * window, c});
}

Tensor window_reverse(const Tensor& windows, int64_t window, int64_t b, int64_t h, int64_t w) {
    if (windows.rank() != 3) {
        throw ShapeError("window_reverse: expected [B*nW, w*w, C], got " +
                         shape_str(windows.shape()));
    }
    const int64_t c = windows.dim(2);
    Tensor t = reshape(windows, {b, h / window, w / window, window, window, c});
    t = permute(t, {0, 1, 3, 2, 4, 5});
    return reshape(t, {b, h, w, c});
}

std::vector<int64_t> relative_position_index(int64_t window) {
    const int64_t n = window * window;
    std::vector<int64_t> idx(static_cast<size_t>(n * n));
    for (int64_t i = 0; i < n; ++i) {
        const int64_t yi = i / window;
        const int64_t xi = i % window;
        for (int64_t j = 0; j < n; ++j) {
            const int64_t yj = j / window;
            const int64_t xj = j % window;
            const int64_t dy = yi - yj + window - 1;
            const int64_t dx = xi - xj + window - 1;
            idx[static_cast<size_t>(i * n + j)] = dy * (2 * window - 1) + dx;
        }
    }
    return idx;
}

Tensor build_attn_mask(int64_t h, int64_t w, int64_t window, int64_t shift) {
    if (shift == 0) {
        return Tensor();
    }
    // Region labels in post-shift coordinates; pairs with different labels
    // came from different pre-shift regions and must not attend.
    Tensor regions = Tensor::zeros({1, h, w, 1});
    {
        auto& data = regions.mutable_data();
        auto bands = [&](int64_t size) {
            return std::array<std::pair<int64_t, int64_t>, 3>{
                std::pair<int64_t, int64_t>{0, size - window},
                {size - window, size - shift},
                {size - shift, size}};
        };
        double label = 0.0;
        for (const auto& hb : bands(h)) {
            for (const auto& wb : bands(w)) {
                for (int64_t y = std::max<int64_t>(hb.first, 0); y < hb.second; ++y) {
                    for (int64_t x = std::max<int64_t>(wb.first, 0); x < wb.second; ++x) {
                        data[static_cast<size_t>(y * w + x)] = label;
                    }
                }
                label += 1.0;
            }
        }
    }
    Tensor wins = window_partition(regions, window);  // [nW, N, 1]
    const int64_t n_windows = wins.dim(0);
    const int64_t n = wins.dim(1);
    Tensor mask = Tensor::zeros({n_windows, n, n});
    const auto& labels = wins.data();
    auto& out = mask.mutable_data();
    for (int64_t win = 0; win < n_windows; ++win) {
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t j = 0; j < n; ++j) {
                if (labels[win * n + i] != labels[win * n + j]) {
                    out[(win * n + i) * n + j] = -1e30;
                }
            }
        }
    }
    return mask;
}

Tensor window_attention(const Tensor& tokens, const AttnParams& p, const Tensor& mask) {
    if (tokens.rank() != 3) {
        throw ShapeError("window_attention: expected [B*nW, N, C], got " +
                         shape_str(tokens.shape()));
    }
    const int64_t bw = tokens.dim(0);
    const int64_t n = tokens.dim(1);
    const int64_t c = tokens.dim(2);
    const int64_t heads = p.num_heads;
    if (c % heads != 0) {
        throw ConfigError("window_attention: " + std::to_string(heads) +
                          " heads do not divide " + std::to_string(c) + " channels");
    }
    const int64_t dh = c / heads;
    Tensor qkv = linear(tokens, p.qkv_w, p.qkv_b);          // [Bw, N, 3C]
    qkv = reshape(qkv, {bw, n, 3, heads, dh});
    qkv = permute(qkv, {2, 0, 3, 1, 4});                    // [3, Bw, heads, N, dh]
    Tensor q = reshape(slice(qkv, 0, 0, 1), {bw, heads, n, dh});
    Tensor k = reshape(slice(qkv, 0, 1, 1), {bw, heads, n, dh});
    Tensor v = reshape(slice(qkv, 0, 2, 1), {bw, heads, n, dh});
    q = scale(q, 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor attn = matmul(q, permute(k, {0, 1, 3, 2}));      // [Bw, heads, N, N]

    Tensor bias = gather_rows(p.rel_table, relative_position_index(p.window));  // [N*N, heads]
    bias = permute(reshape(bias, {n, n, heads}), {2, 0, 1});
    attn = add(attn, reshape(bias, {1, heads, n, n}));

    if (mask.defined()) {
        const int64_t n_windows = mask.dim(0);
        const int64_t b = bw / n_windows;
        attn = reshape(attn, {b, n_windows, heads, n, n});
        attn = add(attn, reshape(mask, {1, n_windows, 1, n, n}));
        attn = reshape(attn, {bw, heads, n, n});
    }
    attn = softmax(attn, -1);
    Tensor out = matmul(attn, v);                           // [Bw, heads, N, dh]
    out = reshape(permute(out, {0, 2, 1, 3}), {bw, n, c});
    return linear(out, p.proj_w, p.proj_b);
}

Tensor block_attn_half(const Tensor& z, const BlockParams& p, int64_t h, int64_t w, bool shift) {
    const int64_t b = z.dim(0);
    const int64_t c = z.dim(2);
    if (z.dim(1) != h * w) {
        throw ContractError("block_attn_half: token count " + std::to_string(z.dim(1)) +
                            " does not match grid " + std::to_string(h) + "x" + std::to_string(w));
    }
    const int64_t window = p.attn.window;
    const int64_t shift_amt = shift ? window / 2 : 0;

    Tensor x = layer_norm(z, p.norm1.gamma, p.norm1.beta);
    x = reshape(x, {b, h, w, c});
    const int64_t ph = (window - h % window) % window;
    const int64_t pw = (window - w % window) % window;
    if (ph > 0 || pw > 0) {
        x = pad(x, {{0, 0}, {0, ph}, {0, pw}, {0, 0}});
    }
    const int64_t hp = h + ph;
    const int64_t wp = w + pw;
    if (shift_amt > 0) {
        x = roll(x, {-shift_amt, -shift_amt}, {1, 2});
    }
    Tensor mask = build_attn_mask(hp, wp, window, shift_amt);
    Tensor wins = window_partition(x, window);
    wins = window_attention(wins, p.attn, mask);
    x = window_reverse(wins, window, b, hp, wp);
    if (shift_amt > 0) {
        x = roll(x, {shift_amt, shift_amt}, {1, 2});
    }
    if (ph > 0) {
        x = slice(x, 1, 0, h);
    }
    if (pw > 0) {
        x = slice(x, 2, 0, w);
    }
    x = reshape(x, {b, h * w, c});
    return add(x, z);
}

Tensor block_mlp_half(const Tensor& z_hat, const BlockParams& p, double dropout_p, bool training,
                      Rng* rng) {
    if (training && dropout_p > 0.0 && rng == nullptr) {
        throw ContractError("block_mlp_half: training with dropout requires an rng");
    }
    Tensor x = layer_norm(z_hat, p.norm2.gamma, p.norm2.beta);
    x = linear(x, p.mlp.fc1_w, p.mlp.fc1_b);
    x = gelu(x);
    if (training && dropout_p > 0.0) {
        x = dropout(x, dropout_p, training, *rng);
    }
    x = linear(x, p.mlp.fc2_w, p.mlp.fc2_b);
    if (training && dropout_p > 0.0) {
        x = dropout(x, dropout_p, training, *rng);
    }
    return add(x, z_hat);
}

BlockState swin_block_vanilla(const Tensor& z_prev, const BlockParams& p, int64_t h, int64_t w,
                              bool shift, double dropout_p, bool training, Rng* rng) {
    BlockState state;
    state.z_prev = z_prev;
    state.h = h;
    state.w = w;
    state.z_hat = block_attn_half(z_prev, p, h, w, shift);
    state.z_out = block_mlp_half(state.z_hat, p, dropout_p, training, rng);
    return state;
}

Tensor patch_merging(const Tensor& x, const MergeParams& p, int64_t h, int64_t w, int64_t* out_h,
                     int64_t* out_w) {
    const int64_t b = x.dim(0);
    const int64_t c = x.dim(2);
    if (x.dim(1) != h * w) {
        throw ShapeError("patch_merging: token count " + std::to_string(x.dim(1)) +
                         " does not match grid " + std::to_string(h) + "x" + std::to_string(w));
    }
    Tensor t = reshape(x, {b, h, w, c});
    const int64_t ph = h % 2;
    const int64_t pw = w % 2;
    if (ph > 0 || pw > 0) {
        t = pad(t, {{0, 0}, {0, ph}, {0, pw}, {0, 0}});
    }
    const int64_t h2 = (h + ph) / 2;
    const int64_t w2 = (w + pw) / 2;
    // 2x2 neighborhoods, row-major within the neighborhood, concatenated on
    // the channel axis.
    t = reshape(t, {b, h2, 2, w2, 2, c});
    t = permute(t, {0, 1, 3, 2, 4, 5});  // [B, h2, w2, 2, 2, C]
    t = reshape(t, {b, h2 * w2, 4 * c});
    t = layer_norm(t, p.norm.gamma, p.norm.beta);
    t = matmul(t, p.reduce_w);
    if (out_h) *out_h = h2;
    if (out_w) *out_w = w2;
    return t;
}

StageFeatures backbone_forward(const Tensor& image, const BackboneParams& params,
                               const BackboneConfig& cfg, bool training, Rng* rng,
                               const BlockOverride& block_override) {
    StageFeatures feats;
    int64_t gh = 0;
    int64_t gw = 0;
    Tensor tokens = patch_embed(image, params.patch_w, params.patch_b, params.patch_norm,
                                cfg.patch_size, &gh, &gw);
    for (int s = 0; s < 4; ++s) {
        const StageParams& stage = params.stages[s];
        for (int b = 0; b < cfg.depths[s]; ++b) {
            const bool shift = (b % 2 == 1);
            if (block_override) {
                tokens = block_override(s, b, tokens, gh, gw, shift);
            } else {
                tokens = swin_block_vanilla(tokens, stage.blocks[b], gh, gw, shift, cfg.dropout_p,
                                            training, rng)
                             .z_out;
            }
        }
        feats.tokens[s] = layer_norm(tokens, stage.out_norm.gamma, stage.out_norm.beta);
        feats.grids[s] = {gh, gw};
        if (s < 3) {
            tokens = patch_merging(tokens, *stage.merge, gh, gw, &gh, &gw);
        }
    }
    return feats;
}

}  // namespace tuna
