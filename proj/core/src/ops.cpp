#include "tuna/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tuna {

namespace {

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

bool wants(const ImplPtr& t) {
    return t->requires_grad;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const int ra = static_cast<int>(a.size());
    const int rb = static_cast<int>(b.size());
    const int r = std::max(ra, rb);
    Shape out(r);
    for (int d = 0; d < r; ++d) {
        const int64_t da = d < r - ra ? 1 : a[d - (r - ra)];
        const int64_t db = d < r - rb ? 1 : b[d - (r - rb)];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
        }
        out[d] = std::max(da, db);
    }
    return out;
}

// Strides of `in` right-aligned against broadcast result `out`; broadcast
// dimensions get stride 0.
std::vector<int64_t> bcast_strides(const Shape& in, const Shape& out) {
    const int r = static_cast<int>(out.size());
    const int ri = static_cast<int>(in.size());
    const auto s = strides_of(in);
    std::vector<int64_t> res(r, 0);
    for (int d = 0; d < r; ++d) {
        const int j = d - (r - ri);
        if (j >= 0 && in[j] != 1) {
            res[d] = s[j];
        }
    }
    return res;
}

// Odometer walk over `out`, calling f(flat_out, off_a, off_b) with offsets
// advanced by the given per-dimension strides.
template <typename F>
void for_each2(const Shape& out, const std::vector<int64_t>& sa, const std::vector<int64_t>& sb,
               F&& f) {
    const int r = static_cast<int>(out.size());
    const int64_t n = numel_of(out);
    std::vector<int64_t> idx(r, 0);
    int64_t oa = 0;
    int64_t ob = 0;
    for (int64_t o = 0; o < n; ++o) {
        f(o, oa, ob);
        for (int d = r - 1; d >= 0; --d) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < out[d]) {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

template <typename F>
void for_each1(const Shape& out, const std::vector<int64_t>& sa, F&& f) {
    const int r = static_cast<int>(out.size());
    const int64_t n = numel_of(out);
    std::vector<int64_t> idx(r, 0);
    int64_t oa = 0;
    for (int64_t o = 0; o < n; ++o) {
        f(o, oa);
        for (int d = r - 1; d >= 0; --d) {
            ++idx[d];
            oa += sa[d];
            if (idx[d] < out[d]) {
                break;
            }
            oa -= sa[d] * out[d];
            idx[d] = 0;
        }
    }
}

bool recording(std::initializer_list<const Tensor*> inputs) {
    if (Graph::active() == nullptr) {
        return false;
    }
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) {
            return true;
        }
    }
    return false;
}

void check_defined(const Tensor& t, const char* op) {
    if (!t.defined()) {
        throw ContractError(std::string(op) + ": undefined tensor argument");
    }
}

enum class BinKind { Add, Sub, Mul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind, const char* name) {
    check_defined(a, name);
    check_defined(b, name);
    const Shape oshape = broadcast_shape(a.shape(), b.shape());
    Tensor out = Tensor::zeros(oshape);
    const auto sa = bcast_strides(a.shape(), oshape);
    const auto sb = bcast_strides(b.shape(), oshape);
    const auto& pa = a.data();
    const auto& pb = b.data();
    auto& po = out.mutable_data();
    switch (kind) {
        case BinKind::Add:
            for_each2(oshape, sa, sb, [&](int64_t o, int64_t i, int64_t j) { po[o] = pa[i] + pb[j]; });
            break;
        case BinKind::Sub:
            for_each2(oshape, sa, sb, [&](int64_t o, int64_t i, int64_t j) { po[o] = pa[i] - pb[j]; });
            break;
        case BinKind::Mul:
            for_each2(oshape, sa, sb, [&](int64_t o, int64_t i, int64_t j) { po[o] = pa[i] * pb[j]; });
            break;
    }
    if (recording({&a, &b})) {
        out.set_requires_grad(true);
        ImplPtr ai = a.impl();
        ImplPtr bi = b.impl();
        ImplPtr oi = out.impl();
        Graph::active()->record(name, {ai, bi}, oi, [ai, bi, oi, oshape, sa, sb, kind] {
            const auto& go = oi->grad;
            if (wants(ai)) ai->ensure_grad();
            if (wants(bi)) bi->ensure_grad();
            for_each2(oshape, sa, sb, [&](int64_t o, int64_t i, int64_t j) {
                switch (kind) {
                    case BinKind::Add:
                        if (wants(ai)) ai->grad[i] += go[o];
                        if (wants(bi)) bi->grad[j] += go[o];
                        break;
                    case BinKind::Sub:
                        if (wants(ai)) ai->grad[i] += go[o];
                        if (wants(bi)) bi->grad[j] -= go[o];
                        break;
                    case BinKind::Mul:
                        if (wants(ai)) ai->grad[i] += go[o] * bi->data[j];
                        if (wants(bi)) bi->grad[j] += go[o] * ai->data[i];
                        break;
                }
            });
        });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, BinKind::Add, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, BinKind::Sub, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, BinKind::Mul, "mul");
}

Tensor scale(const Tensor& a, double factor) {
    check_defined(a, "scale");
    Tensor out = Tensor::zeros(a.shape());
    const auto& pa = a.data();
    auto& po = out.mutable_data();
    for (size_t i = 0; i < pa.size(); ++i) {
        po[i] = pa[i] * factor;
    }
    if (recording({&a})) {
        out.set_requires_grad(true);
        ImplPtr ai = a.impl();
        ImplPtr oi = out.impl();
        Graph::active()->record("scale", {ai}, oi, [ai, oi, factor] {
            ai->ensure_grad();
            for (size_t i = 0; i < ai->grad.size(); ++i) {
                ai->grad[i] += factor * oi->grad[i];
            }
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    if (a.rank() < 2 || b.rank() < 2) {
        throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    }
    const int64_t m = a.dim(-2);
    const int64_t k = a.dim(-1);
    const int64_t n = b.dim(-1);
    if (b.dim(-2) != k) {
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const Shape abatch(a.shape().begin(), a.shape().end() - 2);
    const Shape bbatch(b.shape().begin(), b.shape().end() - 2);
    const Shape obatch = broadcast_shape(abatch, bbatch);
    Shape oshape = obatch;
    oshape.push_back(m);
    oshape.push_back(n);
    Tensor out = Tensor::zeros(oshape);

    // Per-batch base offsets; broadcast batch dims contribute stride 0.
    auto batch_strides = [](const Shape& full, const Shape& batch, const Shape& obatch_) {
        const auto s = strides_of(full);
        const int r = static_cast<int>(obatch_.size());
        const int ri = static_cast<int>(batch.size());
        std::vector<int64_t> res(r, 0);
        for (int d = 0; d < r; ++d) {
            const int j = d - (r - ri);
            if (j >= 0 && batch[j] != 1) {
                res[d] = s[j];
            }
        }
        return res;
    };
    const auto sa = batch_strides(a.shape(), abatch, obatch);
    const auto sb = batch_strides(b.shape(), bbatch, obatch);

    {
        const auto& pa = a.data();
        const auto& pb = b.data();
        auto& po = out.mutable_data();
        for_each2(obatch, sa, sb, [&](int64_t batch, int64_t abase, int64_t bbase) {
            const int64_t obase = batch * m * n;
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (int64_t t = 0; t < k; ++t) {
                        s += pa[abase + i * k + t] * pb[bbase + t * n + j];
                    }
                    po[obase + i * n + j] = s;
                }
            }
        });
    }

    if (recording({&a, &b})) {
        out.set_requires_grad(true);
        ImplPtr ai = a.impl();
        ImplPtr bi = b.impl();
        ImplPtr oi = out.impl();
        Graph::active()->record("matmul", {ai, bi}, oi, [ai, bi, oi, obatch, sa, sb, m, n, k] {
            const auto& go = oi->grad;
            if (wants(ai)) ai->ensure_grad();
            if (wants(bi)) bi->ensure_grad();
            for_each2(obatch, sa, sb, [&](int64_t batch, int64_t abase, int64_t bbase) {
                const int64_t obase = batch * m * n;
                if (wants(ai)) {
                    for (int64_t i = 0; i < m; ++i) {
                        for (int64_t t = 0; t < k; ++t) {
                            double s = 0.0;
                            for (int64_t j = 0; j < n; ++j) {
                                s += go[obase + i * n + j] * bi->data[bbase + t * n + j];
                            }
                            ai->grad[abase + i * k + t] += s;
                        }
                    }
                }
                if (wants(bi)) {
                    for (int64_t t = 0; t < k; ++t) {
                        for (int64_t j = 0; j < n; ++j) {
                            double s = 0.0;
                            for (int64_t i = 0; i < m; ++i) {
                                s += ai->data[abase + i * k + t] * go[obase + i * n + j];
                            }
                            bi->grad[bbase + t * n + j] += s;
                        }
                    }
                }
            });
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add(matmul(x, w), b);
}

Tensor reshape(const Tensor& x, Shape new_shape) {
    check_defined(x, "reshape");
    if (numel_of(new_shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
    }
    Tensor out = Tensor::from_data(std::move(new_shape), x.data());
    if (recording({&x})) {
        out.set_requires_grad(true);
        ImplPtr xi = x.impl();
        ImplPtr oi = out.impl();
        Graph::active()->record("reshape", {xi}, oi, [xi, oi] {
            xi->ensure_grad();
            for (size_t i = 0; i < xi->grad.size(); ++i) {
                xi->grad[i] += oi->grad[i];
            }
        });
    }
    return out;
}

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
    check_defined(x, "permute");
    const int r = x.rank();
    if (static_cast<int>(axes.size()) != r) {
        throw ContractError("permute: axes rank mismatch");
    }
    std::vector<bool> seen(r, false);
    Shape oshape(r);
    for (int d = 0; d < r; ++d) {
        const int ax = axes[d];
        if (ax < 0 || ax >= r || seen[ax]) {
            throw ContractError("permute: invalid axis list");
        }
        seen[ax] = true;
        oshape[d] = x.shape()[ax];
    }
    const auto in_strides = strides_of(x.shape());
    std::vector<int64_t> sa(r);
    for (int d = 0; d < r; ++d) {
        sa[d] = in_strides[axes[d]];
    }
    Tensor out = Tensor::zeros(oshape);
    {
        const auto& px = x.data();
        auto& po = out.mutable_data();
        for_each1(oshape, sa, [&](int64_t o, int64_t i) { po[o] = px[i]; });
    }
    if (recording({&x})) {
        out.set_requires_grad(true);
        ImplPtr xi = x.impl();
        ImplPtr oi = out.impl();
        Graph::active()->record("permute", {xi}, oi, [xi, oi, oshape, sa] {
            xi->ensure_grad();
            for_each1(oshape, sa, [&](int64_t o, int64_t i) { xi->grad[i] += oi->grad[o]; });
        });
    }
    return out;
}

namespace {

// Per-dimension lookup tables mapping an output index to the input offset
// contribution. Handles the wraparound of roll.
std::vector<std::vector<int64_t>> roll_tables(const Shape& shape,
                                              const std::vector<int64_t>& shifts,
                                              const std::vector<int>& axes) {
    const auto strides = strides_of(shape);
    std::vector<std::vector<int64_t>> tables(shape.size());
    for (size_t d = 0; d < shape.size(); ++d) {
        tables[d].resize(shape[d]);
        int64_t shift = 0;
        for (size_t s = 0; s < axes.size(); ++s) {
            if (axes[s] == static_cast<int>(d)) {
                shift = shifts[s];
            }
        }
        const int64_t n = shape[d];
        for (int64_t i = 0; i < n; ++i) {
            const int64_t src = ((i - shift) % n + n) % n;
            tables[d][i] = src * strides[d];
        }
    }
    return tables;
}

}  // namespace

Tensor roll(const Tensor& x, const std::vector<int64_t>& shifts, const std::vector<int>& axes) {
    check_defined(x, "roll");
    if (shifts.size() != axes.size()) {
        throw ContractError("roll: shifts and axes disagree");
    }
    for (int ax : axes) {
        if (ax < 0 || ax >= x.rank()) {
            throw ContractError("roll: axis out of range");
        }
    }
    const Shape oshape = x.shape();
    const auto tables = roll_tables(oshape, shifts, axes);
    const int r = x.rank();
    Tensor out = Tensor::zeros(oshape);
    auto apply = [&](const std::vector<double>& src, std::vector<double>& dst, bool transpose) {
        std::vector<int64_t> idx(r, 0);
        const int64_t n = numel_of(oshape);
        for (int64_t o = 0; o < n; ++o) {
            int64_t i = 0;
            for (int d = 0; d < r; ++d) {
                i += tables[d][idx[d]];
            }
            if (transpose) {
                dst[i] += src[o];
            } else {
                dst[o] = src[i];
            }
            for (int d = r - 1; d >= 0; --d) {
                if (++idx[d] < oshape[d]) break;
                idx[d] = 0;
            }
        }
    };
    apply(x.data(), out.mutable_data(), false);
    if (recording({&x})) {
        out.set_requires_grad(true);
        ImplPtr xi = x.impl();
        ImplPtr oi = out.impl();
        Graph::active()->record("roll", {xi}, oi, [xi, oi, apply] {
            xi->ensure_grad();
            apply(oi->grad, xi->grad, true);
        });
    }
    return out;
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t length) {
    check_defined(x, "slice");
    if (axis < 0) {
        axis += x.rank();
    }
    if (axis < 0 || axis >= x.rank()) {
        throw ContractError("slice: axis out of range");
    }
    if (start < 0 || length <= 0 || start + length > x.shape()[axis]) {
        throw ContractError("slice: range [" + std::to_string(start) + "," +
                            std::to_string(start + length) + ") exceeds axis of size " +
                            std::to_string(x.shape()[axis]));
    }
    Shape oshape = x.shape();
    oshape[axis] = length;
    const auto in_strides = strides_of(x.shape());
    const int64_t base = start * in_strides[axis];
    Tensor out = Tensor::zeros(oshape);
    {
        const auto& px = x.data();
        auto& po = out.mutable_data();
        for_each1(oshape, in_strides, [&](int64_t o, int64_t i) { po[o] = px[base + i]; });
    }
    if (recording({&x})) {
        out.set_requires_grad(true);
        ImplPtr xi = x.impl();
        ImplPtr oi = out.impl();
        Graph::active()->record("slice", {xi}, oi, [xi, oi, oshape, in_strides, base] {
            xi->ensure_grad();
            for_each1(oshape, in_strides,
                      [&](int64_t o, int64_t i) { xi->grad[base + i] += oi->grad[o]; });
        });
    }
    return out;
}

Tensor pad(const Tensor& x, const std::vector<std::pair<int64_t, int64_t>>& pads) {
    check_defined(x, "pad");
    if (static_cast<int>(pads.size()) != x.rank()) {
        throw ContractError("pad: needs one (before, after) pair per axis");
    }
    Shape oshape = x.shape();
    for (int d = 0; d < x.rank(); ++d) {
        if (pads[d].first < 0 || pads[d].second < 0) {
            throw ContractError("pad: negative padding");
        }
        oshape[d] += pads[d].first + pads[d].second;
    }
    const auto out_strides = strides_of(oshape);
    int64_t base = 0;
    for (int d = 0; d < x.rank(); ++d) {
        base += pads[d].first * out_strides[d];
    }
    Tensor out = Tensor::zeros(oshape);
    {
        const auto& px = x.data();
        auto& po = out.mutable_data();
        for_each1(x.shape(), out_strides, [&](int64_t i, int64_t o) { po[base + o] = px[i]; });
    }
    if (recording({&x})) {
        out.set_requires_grad(true);
        ImplPtr xi = x.impl();
        ImplPtr oi = out.impl();
        const Shape ishape = x.shape();
        Graph::active()->record("pad", {xi}, oi, [xi, oi, ishape, out_strides, base] {
            xi->ensure_grad();
            for_each1(ishape, out_strides,
                      [&](int64_t i, int64_t o) { xi->grad[i] += oi->grad[base + o]; });
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) {
        throw ContractError("concat: no tensors given");
    }
    for (const Tensor& p : parts) {
        check_defined(p, "concat");
    }
    const int r = parts[0].rank();
    if (axis < 0) {
        axis += r;
    }
    if (axis < 0 || axis >= r) {
        throw ContractError("concat: axis out of range");
    }
    Shape oshape = parts[0].shape();
    int64_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != r) {
            throw ShapeError("concat: rank mismatch");
        }
        for (int d = 0; d < r; ++d) {
            if (d != axis && p.shape()[d] != oshape[d]) {
                throw ShapeError("concat: shapes " + shape_str(oshape) + " and " +
                                 shape_str(p.shape()) + " disagree off-axis");
            }
        }
        total += p.shape()[axis];
    }
    oshape[axis] = total;
    const auto out_strides = strides_of(oshape);
    Tensor out = Tensor::zeros(oshape);
    bool any_grad = false;
    int64_t offset = 0;
    std::vector<int64_t> offsets;
    for (const Tensor& p : parts) {
        offsets.push_back(offset);
        const int64_t base = offset * out_strides[axis];
        const auto& pp = p.data();
        auto& po = out.mutable_data();
        for_each1(p.shape(), out_strides, [&](int64_t i, int64_t o) { po[base + o] = pp[i]; });
        offset += p.shape()[axis];
        any_grad = any_grad || p.requires_grad();
    }
    if (Graph::active() != nullptr && any_grad) {
        out.set_requires_grad(true);
        std::vector<ImplPtr> impls;
        impls.reserve(parts.size());
        for (const Tensor& p : parts) {
            impls.push_back(p.impl());
        }
        ImplPtr oi = out.impl();
        const int ax = axis;
        Graph::active()->record("concat", impls, oi, [impls, oi, offsets, out_strides, ax] {
            for (size_t pi = 0; pi < impls.size(); ++pi) {
                if (!wants(impls[pi])) {
                    continue;
                }
                impls[pi]->ensure_grad();
                const int64_t base = offsets[pi] * out_strides[ax];
                for_each1(impls[pi]->shape, out_strides,
                          [&](int64_t i, int64_t o) { impls[pi]->grad[i] += oi->grad[base + o]; });
            }
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& indices) {
    check_defined(table, "gather_rows");
    if (table.rank() != 2) {
        throw ShapeError("gather_rows: table must be rank 2, got " + shape_str(table.shape()));
    }
    const int64_t rows = table.dim(0);
    const int64_t cols = table.dim(1);
    for (int64_t idx : indices) {
        if (idx < 0 || idx >= rows) {
            throw ContractError("gather_rows: index " + std::to_string(idx) +
                                " out of range [0," + std::to_string(rows) + ")");
        }
    }
    const int64_t m = static_cast<int64_t>(indices.size());
    Tensor out = Tensor::zeros({m, cols});
    {
        const auto& pt = table.data();
        auto& po = out.mutable_data();
        for (int64_t i = 0; i < m; ++i) {
            std::copy_n(pt.begin() + indices[i] * cols, cols, po.begin() + i * cols);
        }
    }
    if (recording({&table})) {
        out.set_requires_grad(true);
        ImplPtr ti = table.impl();
        ImplPtr oi = out.impl();
        Graph::active()->record("gather_rows", {ti}, oi, [ti, oi, indices, cols] {
            ti->ensure_grad();
            for (size_t i = 0; i < indices.size(); ++i) {
                for (int64_t c = 0; c < cols; ++c) {
                    ti->grad[indices[i] * cols + c] += oi->grad[static_cast<int64_t>(i) * cols + c];
                }
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    check_defined(x, "layer_norm");
    check_defined(gamma, "layer_norm");
    check_defined(beta, "layer_norm");
    if (eps <= 0.0) {
        throw ConfigError("layer_norm: eps must be positive");
    }
    const int64_t c = x.dim(-1);
    if (gamma.numel() != c || beta.numel() != c) {
        throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(c) + " elements");
    }
    const int64_t rows = x.numel() / c;
    Tensor out = Tensor::zeros(x.shape());
    std::vector<double> xhat(static_cast<size_t>(x.numel()));
    std::vector<double> inv_std(static_cast<size_t>(rows));
    {
        const auto& px = x.data();
        const auto& pg = gamma.data();
        const auto& pb = beta.data();
        auto& po = out.mutable_data();
        for (int64_t r = 0; r < rows; ++r) {
            const int64_t base = r * c;
            double mean = 0.0;
            for (int64_t i = 0; i < c; ++i) {
                mean += px[base + i];
            }
            mean /= static_cast<double>(c);
            double var = 0.0;
            for (int64_t i = 0; i < c; ++i) {
                const double d = px[base + i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(c);
            const double istd = 1.0 / std::sqrt(var + eps);
            inv_std[r] = istd;
            for (int64_t i = 0; i < c; ++i) {
                const double xh = (px[base + i] - mean) * istd;
                xhat[base + i] = xh;
                po[base + i] = pg[i] * xh + pb[i];
            }
        }
    }
    if (recording({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        ImplPtr xi = x.impl();
        ImplPtr gi = gamma.impl();
        ImplPtr bi = beta.impl();
        ImplPtr oi = out.impl();
        Graph::active()->record(
            "layer_norm", {xi, gi, bi}, oi,
            [xi, gi, bi, oi, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, c] {
                const auto& go = oi->grad;
                if (wants(xi)) xi->ensure_grad();
                if (wants(gi)) gi->ensure_grad();
                if (wants(bi)) bi->ensure_grad();
                for (int64_t r = 0; r < rows; ++r) {
                    const int64_t base = r * c;
                    if (wants(gi) || wants(bi)) {
                        for (int64_t i = 0; i < c; ++i) {
                            if (wants(gi)) gi->grad[i] += go[base + i] * xhat[base + i];
                            if (wants(bi)) bi->grad[i] += go[base + i];
                        }
                    }
                    if (wants(xi)) {
                        double mean_dxhat = 0.0;
                        double mean_dxhat_xhat = 0.0;
                        for (int64_t i = 0; i < c; ++i) {
                            const double dxh = go[base + i] * gi->data[i];
                            mean_dxhat += dxh;
                            mean_dxhat_xhat += dxh * xhat[base + i];
                        }
                        mean_dxhat /= static_cast<double>(c);
                        mean_dxhat_xhat /= static_cast<double>(c);
                        for (int64_t i = 0; i < c; ++i) {
                            const double dxh = go[base + i] * gi->data[i];
                            xi->grad[base + i] += inv_std[r] * (dxh - mean_dxhat -
                                                                xhat[base + i] * mean_dxhat_xhat);
                        }
                    }
                }
            });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    check_defined(x, "gelu");
    constexpr double inv_sqrt2 = std::numbers::sqrt2 / 2.0;
    Tensor out = Tensor::zeros(x.shape());
    {
        const auto& px = x.data();
        auto& po = out.mutable_data();
        for (size_t i = 0; i < px.size(); ++i) {
            po[i] = 0.5 * px[i] * (1.0 + std::erf(px[i] * inv_sqrt2));
        }
    }
    if (recording({&x})) {
        out.set_requires_grad(true);
        ImplPtr xi = x.impl();
        ImplPtr oi = out.impl();
        Graph::active()->record("gelu", {xi}, oi, [xi, oi] {
            xi->ensure_grad();
            const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
            for (size_t i = 0; i < xi->grad.size(); ++i) {
                const double v = xi->data[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * (std::numbers::sqrt2 / 2.0)));
                const double pdf = std::exp(-0.5 * v * v) * inv_sqrt_2pi;
                xi->grad[i] += oi->grad[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    check_defined(x, "softmax");
    const int r = x.rank();
    if (axis < 0) {
        axis += r;
    }
    if (axis < 0 || axis >= r) {
        throw ContractError("softmax: axis out of range");
    }
    if (axis != r - 1) {
        // Normalize over an inner axis by rotating it to the back and forth.
        std::vector<int> fwd;
        std::vector<int> bwd(r);
        for (int d = 0; d < r; ++d) {
            if (d != axis) {
                fwd.push_back(d);
            }
        }
        fwd.push_back(axis);
        for (int d = 0; d < r; ++d) {
            bwd[fwd[d]] = d;
        }
        return permute(softmax(permute(x, fwd), r - 1), bwd);
    }
    const int64_t c = x.dim(-1);
    const int64_t rows = x.numel() / c;
    Tensor out = Tensor::zeros(x.shape());
    {
        const auto& px = x.data();
        auto& po = out.mutable_data();
        for (int64_t row = 0; row < rows; ++row) {
            const int64_t base = row * c;
            double mx = px[base];
            for (int64_t i = 1; i < c; ++i) {
                mx = std::max(mx, px[base + i]);
            }
            double sum = 0.0;
            for (int64_t i = 0; i < c; ++i) {
                const double e = std::exp(px[base + i] - mx);
                po[base + i] = e;
                sum += e;
            }
            for (int64_t i = 0; i < c; ++i) {
                po[base + i] /= sum;
            }
        }
    }
    if (recording({&x})) {
        out.set_requires_grad(true);
        ImplPtr xi = x.impl();
        ImplPtr oi = out.impl();
        Graph::active()->record("softmax", {xi}, oi, [xi, oi, rows, c] {
            xi->ensure_grad();
            const auto& go = oi->grad;
            const auto& p = oi->data;
            for (int64_t row = 0; row < rows; ++row) {
                const int64_t base = row * c;
                double dot = 0.0;
                for (int64_t i = 0; i < c; ++i) {
                    dot += go[base + i] * p[base + i];
                }
                for (int64_t i = 0; i < c; ++i) {
                    xi->grad[base + i] += p[base + i] * (go[base + i] - dot);
                }
            }
        });
    }
    return out;
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
    check_defined(x, "dropout");
    if (p < 0.0 || p >= 1.0) {
        throw ConfigError("dropout: probability must be in [0,1), got " + std::to_string(p));
    }
    if (!training || p == 0.0) {
        return x;  // exact identity, no rng draws
    }
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mult(static_cast<size_t>(x.numel()));
    for (double& m : mult) {
        m = rng.uniform() < p ? 0.0 : keep_scale;
    }
    Tensor out = Tensor::zeros(x.shape());
    {
        const auto& px = x.data();
        auto& po = out.mutable_data();
        for (size_t i = 0; i < px.size(); ++i) {
            po[i] = px[i] * mult[i];
        }
    }
    if (recording({&x})) {
        out.set_requires_grad(true);
        ImplPtr xi = x.impl();
        ImplPtr oi = out.impl();
        Graph::active()->record("dropout", {xi}, oi, [xi, oi, mult = std::move(mult)] {
            xi->ensure_grad();
            for (size_t i = 0; i < xi->grad.size(); ++i) {
                xi->grad[i] += oi->grad[i] * mult[i];
            }
        });
    }
    return out;
}

Tensor conv2d_depthwise(const Tensor& x, const Tensor& w, const Tensor& bias) {
    check_defined(x, "conv2d_depthwise");
    check_defined(w, "conv2d_depthwise");
    check_defined(bias, "conv2d_depthwise");
    if (x.rank() != 4 || w.rank() != 4) {
        throw ShapeError("conv2d_depthwise: expected x[B,C,H,W], w[C,1,k,k], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    const int64_t b = x.dim(0);
    const int64_t c = x.dim(1);
    const int64_t h = x.dim(2);
    const int64_t ww = x.dim(3);
    const int64_t k = w.dim(2);
    if (w.dim(1) != 1 || w.dim(3) != k) {
        throw ShapeError("conv2d_depthwise: weight must be [C,1,k,k], got " + shape_str(w.shape()));
    }
    if (k % 2 == 0) {
        throw ConfigError("conv2d_depthwise: kernel size must be odd, got " + std::to_string(k));
    }
    if (w.dim(0) != c || bias.numel() != c) {
        throw ShapeError("conv2d_depthwise: channel mismatch between x " + shape_str(x.shape()) +
                         " and w " + shape_str(w.shape()));
    }
    const int64_t off = (k - 1) / 2;
    Tensor out = Tensor::zeros(x.shape());
    {
        const auto& px = x.data();
        const auto& pw = w.data();
        const auto& pb = bias.data();
        auto& po = out.mutable_data();
        for (int64_t bi = 0; bi < b; ++bi) {
            for (int64_t ci = 0; ci < c; ++ci) {
                const int64_t xbase = (bi * c + ci) * h * ww;
                const int64_t wbase = ci * k * k;
                for (int64_t oy = 0; oy < h; ++oy) {
                    for (int64_t ox = 0; ox < ww; ++ox) {
                        double s = pb[ci];
                        for (int64_t ky = 0; ky < k; ++ky) {
                            const int64_t iy = oy + ky - off;
                            if (iy < 0 || iy >= h) continue;
                            for (int64_t kx = 0; kx < k; ++kx) {
                                const int64_t ix = ox + kx - off;
                                if (ix < 0 || ix >= ww) continue;
                                s += px[xbase + iy * ww + ix] * pw[wbase + ky * k + kx];
                            }
                        }
                        po[xbase + oy * ww + ox] = s;
                    }
                }
            }
        }
    }
    if (recording({&x, &w, &bias})) {
        out.set_requires_grad(true);
        ImplPtr xi = x.impl();
        ImplPtr wi = w.impl();
        ImplPtr bi2 = bias.impl();
        ImplPtr oi = out.impl();
        Graph::active()->record("conv2d_depthwise", {xi, wi, bi2}, oi,
                                [xi, wi, bi2, oi, b, c, h, ww, k, off] {
            const auto& go = oi->grad;
            if (wants(xi)) xi->ensure_grad();
            if (wants(wi)) wi->ensure_grad();
            if (wants(bi2)) bi2->ensure_grad();
            for (int64_t bi = 0; bi < b; ++bi) {
                for (int64_t ci = 0; ci < c; ++ci) {
                    const int64_t xbase = (bi * c + ci) * h * ww;
                    const int64_t wbase = ci * k * k;
                    for (int64_t oy = 0; oy < h; ++oy) {
                        for (int64_t ox = 0; ox < ww; ++ox) {
                            const double g = go[xbase + oy * ww + ox];
                            if (wants(bi2)) bi2->grad[ci] += g;
                            for (int64_t ky = 0; ky < k; ++ky) {
                                const int64_t iy = oy + ky - off;
                                if (iy < 0 || iy >= h) continue;
                                for (int64_t kx = 0; kx < k; ++kx) {
                                    const int64_t ix = ox + kx - off;
                                    if (ix < 0 || ix >= ww) continue;
                                    if (wants(xi)) {
                                        xi->grad[xbase + iy * ww + ix] +=
                                            g * wi->data[wbase + ky * k + kx];
                                    }
                                    if (wants(wi)) {
                                        wi->grad[wbase + ky * k + kx] +=
                                            g * xi->data[xbase + iy * ww + ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor conv2d_pointwise(const Tensor& x, const Tensor& w, const Tensor& bias) {
    check_defined(x, "conv2d_pointwise");
    check_defined(w, "conv2d_pointwise");
    check_defined(bias, "conv2d_pointwise");
    if (x.rank() != 4 || w.rank() != 4 || w.dim(2) != 1 || w.dim(3) != 1) {
        throw ShapeError("conv2d_pointwise: expected x[B,Cin,H,W], w[Cout,Cin,1,1], got " +
                         shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    const int64_t b = x.dim(0);
    const int64_t cin = x.dim(1);
    const int64_t hw = x.dim(2) * x.dim(3);
    const int64_t cout = w.dim(0);
    if (w.dim(1) != cin || bias.numel() != cout) {
        throw ShapeError("conv2d_pointwise: channel mismatch between x " + shape_str(x.shape()) +
                         " and w " + shape_str(w.shape()));
    }
    Shape oshape = x.shape();
    oshape[1] = cout;
    Tensor out = Tensor::zeros(oshape);
    {
        const auto& px = x.data();
        const auto& pw = w.data();
        const auto& pb = bias.data();
        auto& po = out.mutable_data();
        for (int64_t bi = 0; bi < b; ++bi) {
            for (int64_t co = 0; co < cout; ++co) {
                for (int64_t p = 0; p < hw; ++p) {
                    double s = pb[co];
                    for (int64_t ci = 0; ci < cin; ++ci) {
                        s += px[(bi * cin + ci) * hw + p] * pw[co * cin + ci];
                    }
                    po[(bi * cout + co) * hw + p] = s;
                }
            }
        }
    }
    if (recording({&x, &w, &bias})) {
        out.set_requires_grad(true);
        ImplPtr xi = x.impl();
        ImplPtr wi = w.impl();
        ImplPtr bi2 = bias.impl();
        ImplPtr oi = out.impl();
        Graph::active()->record("conv2d_pointwise", {xi, wi, bi2}, oi,
                                [xi, wi, bi2, oi, b, cin, cout, hw] {
            const auto& go = oi->grad;
            if (wants(xi)) xi->ensure_grad();
            if (wants(wi)) wi->ensure_grad();
            if (wants(bi2)) bi2->ensure_grad();
            for (int64_t bi = 0; bi < b; ++bi) {
                for (int64_t co = 0; co < cout; ++co) {
                    for (int64_t p = 0; p < hw; ++p) {
                        const double g = go[(bi * cout + co) * hw + p];
                        if (wants(bi2)) bi2->grad[co] += g;
                        for (int64_t ci = 0; ci < cin; ++ci) {
                            if (wants(xi)) {
                                xi->grad[(bi * cin + ci) * hw + p] += g * wi->data[co * cin + ci];
                            }
                            if (wants(wi)) {
                                wi->grad[co * cin + ci] += g * xi->data[(bi * cin + ci) * hw + p];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

namespace {

struct LerpAxis {
    std::vector<int64_t> lo, hi;
    std::vector<double> frac;
};

// align_corners=false source coordinates, clamped at the borders.
LerpAxis lerp_axis(int64_t in, int64_t out) {
    LerpAxis ax;
    ax.lo.resize(out);
    ax.hi.resize(out);
    ax.frac.resize(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        const double f = std::floor(src);
        int64_t lo = static_cast<int64_t>(f);
        double frac = src - f;
        int64_t hi = lo + 1;
        if (lo < 0) {
            lo = 0;
            hi = 0;
            frac = 0.0;
        }
        if (hi >= in) {
            hi = in - 1;
            if (lo >= in) {
                lo = in - 1;
                frac = 0.0;
            }
        }
        ax.lo[o] = lo;
        ax.hi[o] = hi;
        ax.frac[o] = frac;
    }
    return ax;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, int64_t out_h, int64_t out_w) {
    check_defined(x, "upsample_bilinear");
    if (x.rank() != 4) {
        throw ShapeError("upsample_bilinear: expected [B,C,H,W], got " + shape_str(x.shape()));
    }
    if (out_h <= 0 || out_w <= 0) {
        throw ContractError("upsample_bilinear: non-positive output size");
    }
    const int64_t b = x.dim(0);
    const int64_t c = x.dim(1);
    const int64_t h = x.dim(2);
    const int64_t w = x.dim(3);
    const LerpAxis ay = lerp_axis(h, out_h);
    const LerpAxis ax = lerp_axis(w, out_w);
    Tensor out = Tensor::zeros({b, c, out_h, out_w});
    {
        const auto& px = x.data();
        auto& po = out.mutable_data();
        for (int64_t bc = 0; bc < b * c; ++bc) {
            const int64_t ibase = bc * h * w;
            const int64_t obase = bc * out_h * out_w;
            for (int64_t oy = 0; oy < out_h; ++oy) {
                const double fy = ay.frac[oy];
                for (int64_t ox = 0; ox < out_w; ++ox) {
                    const double fx = ax.frac[ox];
                    const double v00 = px[ibase + ay.lo[oy] * w + ax.lo[ox]];
                    const double v01 = px[ibase + ay.lo[oy] * w + ax.hi[ox]];
                    const double v10 = px[ibase + ay.hi[oy] * w + ax.lo[ox]];
                    const double v11 = px[ibase + ay.hi[oy] * w + ax.hi[ox]];
                    po[obase + oy * out_w + ox] = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
                                                  fy * ((1.0 - fx) * v10 + fx * v11);
                }
            }
        }
    }
    if (recording({&x})) {
        out.set_requires_grad(true);
        ImplPtr xi = x.impl();
        ImplPtr oi = out.impl();
        Graph::active()->record("upsample_bilinear", {xi}, oi,
                                [xi, oi, ay, ax, b, c, h, w, out_h, out_w] {
            xi->ensure_grad();
            const auto& go = oi->grad;
            for (int64_t bc = 0; bc < b * c; ++bc) {
                const int64_t ibase = bc * h * w;
                const int64_t obase = bc * out_h * out_w;
                for (int64_t oy = 0; oy < out_h; ++oy) {
                    const double fy = ay.frac[oy];
                    for (int64_t ox = 0; ox < out_w; ++ox) {
                        const double fx = ax.frac[ox];
                        const double g = go[obase + oy * out_w + ox];
                        xi->grad[ibase + ay.lo[oy] * w + ax.lo[ox]] += g * (1.0 - fy) * (1.0 - fx);
                        xi->grad[ibase + ay.lo[oy] * w + ax.hi[ox]] += g * (1.0 - fy) * fx;
                        xi->grad[ibase + ay.hi[oy] * w + ax.lo[ox]] += g * fy * (1.0 - fx);
                        xi->grad[ibase + ay.hi[oy] * w + ax.hi[ox]] += g * fy * fx;
                    }
                }
            }
        });
    }
    return out;
}

Tensor sum_all(const Tensor& x) {
    check_defined(x, "sum_all");
    double s = 0.0;
    for (double v : x.data()) {
        s += v;
    }
    Tensor out = Tensor::scalar(s);
    if (recording({&x})) {
        out.set_requires_grad(true);
        ImplPtr xi = x.impl();
        ImplPtr oi = out.impl();
        Graph::active()->record("sum_all", {xi}, oi, [xi, oi] {
            xi->ensure_grad();
            for (double& g : xi->grad) {
                g += oi->grad[0];
            }
        });
    }
    return out;
}

Tensor mean_all(const Tensor& x) {
    check_defined(x, "mean_all");
    const double inv = 1.0 / static_cast<double>(x.numel());
    double s = 0.0;
    for (double v : x.data()) {
        s += v;
    }
    Tensor out = Tensor::scalar(s * inv);
    if (recording({&x})) {
        out.set_requires_grad(true);
        ImplPtr xi = x.impl();
        ImplPtr oi = out.impl();
        Graph::active()->record("mean_all", {xi}, oi, [xi, oi, inv] {
            xi->ensure_grad();
            for (double& g : xi->grad) {
                g += oi->grad[0] * inv;
            }
        });
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<IntGrid>& targets,
                     int32_t ignore_index) {
    check_defined(logits, "cross_entropy");
    if (logits.rank() != 4) {
        throw ShapeError("cross_entropy: expected logits [B,K,H,W], got " +
                         shape_str(logits.shape()));
    }
    const int64_t b = logits.dim(0);
    const int64_t kk = logits.dim(1);
    const int64_t h = logits.dim(2);
    const int64_t w = logits.dim(3);
    if (static_cast<int64_t>(targets.size()) != b) {
        throw ShapeError("cross_entropy: got " + std::to_string(targets.size()) +
                         " target grids for batch of " + std::to_string(b));
    }
    for (const IntGrid& t : targets) {
        if (t.h != h || t.w != w) {
            throw ShapeError("cross_entropy: target grid " + std::to_string(t.h) + "x" +
                             std::to_string(t.w) + " does not match logits " + std::to_string(h) +
                             "x" + std::to_string(w));
        }
    }
    std::vector<double> probs(static_cast<size_t>(logits.numel()));
    int64_t count = 0;
    double loss = 0.0;
    {
        const auto& pl = logits.data();
        for (int64_t bi = 0; bi < b; ++bi) {
            for (int64_t y = 0; y < h; ++y) {
                for (int64_t x = 0; x < w; ++x) {
                    const int32_t t = targets[bi].at(y, x);
                    const int64_t pix = y * w + x;
                    auto logit_at = [&](int64_t k) {
                        return pl[((bi * kk + k) * h * w) + pix];
                    };
                    double mx = logit_at(0);
                    for (int64_t k = 1; k < kk; ++k) {
                        mx = std::max(mx, logit_at(k));
                    }
                    double sum = 0.0;
                    for (int64_t k = 0; k < kk; ++k) {
                        const double e = std::exp(logit_at(k) - mx);
                        probs[((bi * kk + k) * h * w) + pix] = e;
                        sum += e;
                    }
                    for (int64_t k = 0; k < kk; ++k) {
                        probs[((bi * kk + k) * h * w) + pix] /= sum;
                    }
                    if (t == ignore_index) {
                        continue;
                    }
                    if (t < 0 || t >= kk) {
                        throw DataError("cross_entropy: class id " + std::to_string(t) +
                                        " out of range [0," + std::to_string(kk) + ") at pixel (b=" +
                                        std::to_string(bi) + ", y=" + std::to_string(y) +
                                        ", x=" + std::to_string(x) + ")");
                    }
                    loss += (mx + std::log(sum)) - logit_at(t);
                    ++count;
                }
            }
        }
    }
    Tensor out = Tensor::scalar(count > 0 ? loss / static_cast<double>(count) : 0.0);
    if (recording({&logits})) {
        out.set_requires_grad(true);
        ImplPtr li = logits.impl();
        ImplPtr oi = out.impl();
        Graph::active()->record(
            "cross_entropy", {li}, oi,
            [li, oi, probs = std::move(probs), targets, ignore_index, b, kk, h, w, count] {
                if (count == 0) {
                    return;  // all pixels ignored: zero gradient by definition
                }
                li->ensure_grad();
                const double g = oi->grad[0] / static_cast<double>(count);
                for (int64_t bi = 0; bi < b; ++bi) {
                    for (int64_t y = 0; y < h; ++y) {
                        for (int64_t x = 0; x < w; ++x) {
                            const int32_t t = targets[bi].at(y, x);
                            if (t == ignore_index) {
                                continue;
                            }
                            const int64_t pix = y * w + x;
                            for (int64_t k = 0; k < kk; ++k) {
                                const int64_t o = ((bi * kk + k) * h * w) + pix;
                                li->grad[o] += g * (probs[o] - (k == t ? 1.0 : 0.0));
                            }
                        }
                    }
                }
            });
    }
    return out;
}

std::vector<IntGrid> argmax_channel(const Tensor& logits) {
    check_defined(logits, "argmax_channel");
    if (logits.rank() != 4) {
        throw ShapeError("argmax_channel: expected [B,K,H,W], got " + shape_str(logits.shape()));
    }
    const int64_t b = logits.dim(0);
    const int64_t kk = logits.dim(1);
    const int64_t h = logits.dim(2);
    const int64_t w = logits.dim(3);
    const auto& pl = logits.data();
    std::vector<IntGrid> out;
    out.reserve(b);
    for (int64_t bi = 0; bi < b; ++bi) {
        IntGrid grid(h, w);
        for (int64_t y = 0; y < h; ++y) {
            for (int64_t x = 0; x < w; ++x) {
                const int64_t pix = y * w + x;
                int32_t best = 0;
                double best_v = pl[(bi * kk) * h * w + pix];
                for (int64_t k = 1; k < kk; ++k) {
                    const double v = pl[((bi * kk + k) * h * w) + pix];
                    if (v > best_v) {
                        best_v = v;
                        best = static_cast<int32_t>(k);
                    }
                }
                grid.at(y, x) = best;
            }
        }
        out.push_back(std::move(grid));
    }
    return out;
}

}  // namespace tuna
