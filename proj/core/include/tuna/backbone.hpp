#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tuna/ops.hpp"
#include "tuna/param_store.hpp"

namespace tuna {

struct BackboneConfig {
    int64_t patch_size = 4;
    std::array<int64_t, 4> embed_dims{192, 384, 768, 1536};
    std::array<int64_t, 4> depths{2, 2, 18, 2};
    std::array<int64_t, 4> num_heads{6, 12, 24, 48};
    int64_t window_size = 7;
    double mlp_ratio = 4.0;
    double dropout_p = 0.1;

    void validate() const;  // ConfigError on violated invariants
    int64_t mlp_hidden(int stage) const;
};

// Declarative description of one parameter; the single source of truth shared
// by shape-only counting and actual allocation.
enum class InitKind { trunc_normal_002, zeros, ones, constant };

struct ParamSpec {
    std::string name;
    Shape shape;
    Component component;
    InitKind init;
    double value = 0.0;  // for InitKind::constant
};

std::vector<ParamSpec> backbone_param_specs(const BackboneConfig& cfg);

// Allocates and initializes every spec into the store (trainable=false;
// presets flip the mask afterwards). Draws from `rng` in spec order.
void materialize_params(ParamStore& store, const std::vector<ParamSpec>& specs, Rng& rng);

struct LayerNormParams {
    Tensor gamma, beta;
};

struct AttnParams {
    Tensor qkv_w, qkv_b;    // [C,3C], [3C]
    Tensor proj_w, proj_b;  // [C,C], [C]
    Tensor rel_table;       // [(2w-1)^2, heads]
    int64_t num_heads = 1;
    int64_t window = 7;
};

struct MlpParams {
    Tensor fc1_w, fc1_b, fc2_w, fc2_b;
};

struct BlockParams {
    LayerNormParams norm1;
    AttnParams attn;
    LayerNormParams norm2;
    MlpParams mlp;
};

struct MergeParams {
    LayerNormParams norm;  // over 4C
    Tensor reduce_w;       // [4C, 2C], no bias
};

struct StageParams {
    std::vector<BlockParams> blocks;
    std::optional<MergeParams> merge;  // absent for the last stage
    LayerNormParams out_norm;
};

struct BackboneParams {
    Tensor patch_w, patch_b;  // [3*p*p, C0], [C0]
    LayerNormParams patch_norm;
    std::vector<StageParams> stages;
};

// Resolves the named entries created by backbone_param_specs into handles.
BackboneParams bind_backbone(const ParamStore& store, const BackboneConfig& cfg);

// Activations of one transformer block: input, post-attention state, output.
struct BlockState {
    Tensor z_prev;
    Tensor z_hat;
    Tensor z_out;
    int64_t h = 0, w = 0;
};

// Per-stage token outputs [B, H_i*W_i, C_i] plus their grid sizes.
struct StageFeatures {
    std::array<Tensor, 4> tokens;
    std::array<std::array<int64_t, 2>, 4> grids;
};

// Non-overlapping p x p patches, linearly projected and layer-normed.
// Images whose sides are not multiples of p are zero-padded first.
// Returns tokens [B, Gh*Gw, C0] and the patch grid size.
Tensor patch_embed(const Tensor& image, const Tensor& proj_w, const Tensor& proj_b,
                   const LayerNormParams& norm, int64_t patch, int64_t* grid_h, int64_t* grid_w);

// [B,H,W,C] -> [B*nW, w*w, C] in row-major window order; H and W must be
// multiples of w (padding is the caller's job).
Tensor window_partition(const Tensor& x, int64_t window);
Tensor window_reverse(const Tensor& windows, int64_t window, int64_t b, int64_t h, int64_t w);

// Flattened (2w-1)^2 relative-coordinate index for each token pair.
std::vector<int64_t> relative_position_index(int64_t window);

// Additive attention mask [nW, N, N] with 0 on allowed pairs and -1e30 on
// pairs that cross pre-shift region boundaries. Undefined tensor when
// shift == 0.
Tensor build_attn_mask(int64_t h, int64_t w, int64_t window, int64_t shift);

// Per-window multi-head self-attention with learned relative-position bias.
Tensor window_attention(const Tensor& tokens, const AttnParams& p, const Tensor& mask);

// Attention sub-block: z_hat = W-MSA(LN(z)) + z, with cyclic shift by
// floor(window/2) when shift is set.
Tensor block_attn_half(const Tensor& z, const BlockParams& p, int64_t h, int64_t w, bool shift);

// MLP sub-block: LN -> fc1 -> GeLU -> dropout -> fc2 -> dropout, plus the
// residual: returns MLP(LN(z_hat)) + z_hat.
Tensor block_mlp_half(const Tensor& z_hat, const BlockParams& p, double dropout_p, bool training,
                      Rng* rng);

BlockState swin_block_vanilla(const Tensor& z_prev, const BlockParams& p, int64_t h, int64_t w,
                              bool shift, double dropout_p, bool training, Rng* rng);

// Concatenate 2x2 neighborhoods (4C), layer-norm, project to 2C. Odd grids
// are zero-padded to even. Returns tokens plus the halved grid.
Tensor patch_merging(const Tensor& x, const MergeParams& p, int64_t h, int64_t w,
                     int64_t* out_h, int64_t* out_w);

// Replaces the vanilla block when an adapter (or any instrumentation) is
// injected; receives (stage, block_in_stage, z_prev, grid_h, grid_w, shift).
using BlockOverride =
    std::function<Tensor(int, int, const Tensor&, int64_t, int64_t, bool)>;

StageFeatures backbone_forward(const Tensor& image, const BackboneParams& params,
                               const BackboneConfig& cfg, bool training, Rng* rng,
                               const BlockOverride& block_override = {});

}  // namespace tuna
