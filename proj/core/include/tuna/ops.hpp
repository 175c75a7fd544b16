#pragma once

#include <utility>
#include <vector>

#include "tuna/tensor.hpp"

namespace tuna {

// Integer label grid (one class id per pixel). Labels are not differentiable
// values, so they live outside the Tensor type.
struct IntGrid {
    int64_t h = 0;
    int64_t w = 0;
    std::vector<int32_t> v;

    IntGrid() = default;
    IntGrid(int64_t height, int64_t width, int32_t fill = 0)
        : h(height), w(width), v(static_cast<size_t>(height * width), fill) {}

    int32_t& at(int64_t y, int64_t x) { return v[static_cast<size_t>(y * w + x)]; }
    int32_t at(int64_t y, int64_t x) const { return v[static_cast<size_t>(y * w + x)]; }
};

// Elementwise ops with numpy-style right-aligned broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// Batched matrix product: [..,m,k] x [..,k,n] -> [..,m,n] with broadcastable
// batch dimensions.
Tensor matmul(const Tensor& a, const Tensor& b);

// x[..,in] * w[in,out] + b[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Data movement. All are recorded on the tape and exactly invertible in the
// backward pass.
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor permute(const Tensor& x, const std::vector<int>& axes);
Tensor roll(const Tensor& x, const std::vector<int64_t>& shifts, const std::vector<int>& axes);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t length);
Tensor pad(const Tensor& x, const std::vector<std::pair<int64_t, int64_t>>& pads);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& indices);

// Normalization over the last axis, then affine with gamma/beta of size C.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Exact erf formulation.
Tensor gelu(const Tensor& x);

// Numerically stabilized by max subtraction; axis may be negative.
Tensor softmax(const Tensor& x, int axis = -1);

// Inverted dropout: zero with probability p and scale survivors by 1/(1-p)
// during training; exact identity in inference mode (no rng draws).
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

// x[B,C,H,W] * w[C,1,k,k] + bias[C], odd k, same padding (k-1)/2.
Tensor conv2d_depthwise(const Tensor& x, const Tensor& w, const Tensor& bias);

// x[B,Cin,H,W] * w[Cout,Cin,1,1] + bias[Cout]; per-pixel channel mixing.
Tensor conv2d_pointwise(const Tensor& x, const Tensor& w, const Tensor& bias);

// align_corners=false sampling on [B,C,H,W].
Tensor upsample_bilinear(const Tensor& x, int64_t out_h, int64_t out_w);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Mean over non-ignored pixels of -log softmax(logits)[target]. Gradient
// flows to logits only. All-ignored batches yield 0 with zero gradient.
Tensor cross_entropy(const Tensor& logits, const std::vector<IntGrid>& targets,
                     int32_t ignore_index);

// Per-pixel argmax over the class axis of [B,K,H,W]; ties take the lowest id.
std::vector<IntGrid> argmax_channel(const Tensor& logits);

}  // namespace tuna
