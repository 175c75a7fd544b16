#include "tuna/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "tuna/adapter.hpp"
#include "tuna/head.hpp"
#include "tuna/ops.hpp"

namespace tuna::gradcheck {

namespace {

double run_check(const LossFn& f, std::vector<Tensor>& inputs, double h, double analytic_offset) {
    std::vector<std::vector<double>> analytic;
    {
        for (Tensor& t : inputs) {
            t.zero_grad();
        }
        Graph graph;
        Tensor loss = f(inputs);
        graph.backward(loss);
        for (Tensor& t : inputs) {
            if (t.has_grad()) {
                analytic.push_back(t.grad());
            } else {
                analytic.emplace_back(static_cast<size_t>(t.numel()), 0.0);
            }
            t.zero_grad();
        }
    }
    double max_err = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        auto& data = inputs[i].mutable_data();
        for (size_t j = 0; j < data.size(); ++j) {
            const double saved = data[j];
            data[j] = saved + h;
            const double lp = f(inputs).item();
            data[j] = saved - h;
            const double lm = f(inputs).item();
            data[j] = saved;
            const double numeric = (lp - lm) / (2.0 * h);
            const double a = analytic[i][j] + analytic_offset;
            const double err =
                std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

// Squared magnitude keeps gradients non-uniform without extra inputs.
Tensor sq_loss(const Tensor& t) {
    return sum_all(mul(t, t));
}

struct Check {
    std::string name;
    std::string module;
    std::vector<Tensor> inputs;
    LossFn fn;
};

std::vector<Tensor> grad_inputs(std::initializer_list<Tensor> list) {
    std::vector<Tensor> out(list);
    for (Tensor& t : out) {
        t.set_requires_grad(true);
    }
    return out;
}

std::vector<Check> build_checks() {
    std::vector<Check> checks;
    Rng rng(0xbead5eed);

    checks.push_back({"add", "tensor", grad_inputs({randn({2, 3}, rng), randn({3}, rng)}),
                      [](const std::vector<Tensor>& in) { return sq_loss(add(in[0], in[1])); }});
    checks.push_back({"sub", "tensor", grad_inputs({randn({2, 3}, rng), randn({2, 3}, rng)}),
                      [](const std::vector<Tensor>& in) { return sq_loss(sub(in[0], in[1])); }});
    checks.push_back({"mul", "tensor", grad_inputs({randn({2, 3}, rng), randn({1, 3}, rng)}),
                      [](const std::vector<Tensor>& in) { return sq_loss(mul(in[0], in[1])); }});
    checks.push_back({"scale", "tensor", grad_inputs({randn({2, 3}, rng)}),
                      [](const std::vector<Tensor>& in) { return sq_loss(scale(in[0], -1.7)); }});
    checks.push_back({"matmul", "tensor", grad_inputs({randn({2, 3, 4}, rng), randn({4, 2}, rng)}),
                      [](const std::vector<Tensor>& in) {
                          return sq_loss(matmul(in[0], in[1]));
                      }});
    checks.push_back({"linear", "tensor",
                      grad_inputs({randn({2, 3}, rng), randn({3, 4}, rng), randn({4}, rng)}),
                      [](const std::vector<Tensor>& in) {
                          return sq_loss(linear(in[0], in[1], in[2]));
                      }});
    checks.push_back({"reshape_permute", "tensor", grad_inputs({randn({2, 3, 4}, rng)}),
                      [](const std::vector<Tensor>& in) {
                          return sq_loss(permute(reshape(in[0], {6, 4}), {1, 0}));
                      }});
    checks.push_back({"roll", "tensor", grad_inputs({randn({2, 4, 5}, rng)}),
                      [](const std::vector<Tensor>& in) {
                          return sq_loss(roll(in[0], {1, -2}, {1, 2}));
                      }});
    checks.push_back({"slice_concat_pad", "tensor", grad_inputs({randn({2, 6}, rng)}),
                      [](const std::vector<Tensor>& in) {
                          Tensor a = slice(in[0], 1, 0, 2);
                          Tensor b = slice(in[0], 1, 3, 3);
                          Tensor c = concat({a, b}, 1);
                          return sq_loss(pad(c, {{0, 1}, {1, 0}}));
                      }});
    checks.push_back({"gather_rows", "tensor", grad_inputs({randn({5, 3}, rng)}),
                      [](const std::vector<Tensor>& in) {
                          return sq_loss(gather_rows(in[0], {0, 2, 4, 2}));
                      }});
    checks.push_back({"layer_norm", "tensor",
                      grad_inputs({randn({3, 4}, rng), randn({4}, rng), randn({4}, rng)}),
                      [](const std::vector<Tensor>& in) {
                          return sq_loss(layer_norm(in[0], in[1], in[2]));
                      }});
    checks.push_back({"gelu", "tensor",
                      grad_inputs({Tensor::from_data({4}, {-2.0, -0.5, 0.3, 4.0})}),
                      [](const std::vector<Tensor>& in) { return sq_loss(gelu(in[0])); }});
    checks.push_back({"softmax", "tensor", grad_inputs({randn({2, 5}, rng)}),
                      [](const std::vector<Tensor>& in) { return sq_loss(softmax(in[0], -1)); }});
    checks.push_back({"dropout", "tensor", grad_inputs({randn({3, 4}, rng)}),
                      [](const std::vector<Tensor>& in) {
                          Rng local(99);  // same mask on every evaluation
                          return sq_loss(dropout(in[0], 0.4, true, local));
                      }});
    checks.push_back({"conv2d_depthwise", "tensor",
                      grad_inputs({randn({1, 2, 4, 4}, rng), randn({2, 1, 3, 3}, rng),
                                   randn({2}, rng)}),
                      [](const std::vector<Tensor>& in) {
                          return sq_loss(conv2d_depthwise(in[0], in[1], in[2]));
                      }});
    checks.push_back({"conv2d_pointwise", "tensor",
                      grad_inputs({randn({1, 3, 2, 2}, rng), randn({2, 3, 1, 1}, rng),
                                   randn({2}, rng)}),
                      [](const std::vector<Tensor>& in) {
                          return sq_loss(conv2d_pointwise(in[0], in[1], in[2]));
                      }});
    checks.push_back({"upsample_bilinear", "tensor", grad_inputs({randn({1, 2, 3, 3}, rng)}),
                      [](const std::vector<Tensor>& in) {
                          return sq_loss(upsample_bilinear(in[0], 5, 5));
                      }});
    checks.push_back({"sum_mean", "tensor", grad_inputs({randn({2, 3}, rng)}),
                      [](const std::vector<Tensor>& in) {
                          return add(sum_all(mul(in[0], in[0])), mean_all(in[0]));
                      }});
    {
        std::vector<IntGrid> targets(1, IntGrid(2, 2));
        targets[0].at(0, 0) = 0;
        targets[0].at(0, 1) = 1;
        targets[0].at(1, 0) = 2;
        targets[0].at(1, 1) = 255;  // ignored pixel
        checks.push_back({"cross_entropy", "tensor", grad_inputs({randn({1, 3, 2, 2}, rng)}),
                          [targets](const std::vector<Tensor>& in) {
                              return cross_entropy(in[0], targets, 255);
                          }});
    }

    {
        // Two 2x2 windows, C=8, 2 heads.
        AttnParams attn;
        attn.num_heads = 2;
        attn.window = 2;
        std::vector<Tensor> inputs = grad_inputs(
            {randn({2, 4, 8}, rng), randn({8, 24}, rng, 0.3), randn({24}, rng, 0.3),
             randn({8, 8}, rng, 0.3), randn({8}, rng, 0.3), randn({9, 2}, rng, 0.3)});
        checks.push_back({"window_attention", "backbone", inputs,
                          [attn](const std::vector<Tensor>& in) mutable {
                              attn.qkv_w = in[1];
                              attn.qkv_b = in[2];
                              attn.proj_w = in[3];
                              attn.proj_b = in[4];
                              attn.rel_table = in[5];
                              return sq_loss(window_attention(in[0], attn, Tensor()));
                          }});
    }

    auto make_block_inputs = [&rng]() {
        // z, norm1 g/b, qkv w/b, rel, proj w/b, norm2 g/b, fc1 w/b, fc2 w/b
        return grad_inputs({randn({1, 16, 8}, rng, 0.5), randn({8}, rng, 0.3),
                            randn({8}, rng, 0.3), randn({8, 24}, rng, 0.3),
                            randn({24}, rng, 0.3), randn({9, 2}, rng, 0.3),
                            randn({8, 8}, rng, 0.3), randn({8}, rng, 0.3),
                            randn({8}, rng, 0.3), randn({8}, rng, 0.3),
                            randn({8, 16}, rng, 0.3), randn({16}, rng, 0.3),
                            randn({16, 8}, rng, 0.3), randn({8}, rng, 0.3)});
    };
    auto bind_block = [](const std::vector<Tensor>& in) {
        BlockParams p;
        p.norm1.gamma = in[1];
        p.norm1.beta = in[2];
        p.attn.qkv_w = in[3];
        p.attn.qkv_b = in[4];
        p.attn.rel_table = in[5];
        p.attn.proj_w = in[6];
        p.attn.proj_b = in[7];
        p.attn.num_heads = 2;
        p.attn.window = 2;
        p.norm2.gamma = in[8];
        p.norm2.beta = in[9];
        p.mlp.fc1_w = in[10];
        p.mlp.fc1_b = in[11];
        p.mlp.fc2_w = in[12];
        p.mlp.fc2_b = in[13];
        return p;
    };
    checks.push_back({"swin_block", "backbone", make_block_inputs(),
                      [bind_block](const std::vector<Tensor>& in) {
                          const BlockParams p = bind_block(in);
                          return sq_loss(
                              swin_block_vanilla(in[0], p, 4, 4, /*shift=*/true, 0.0, false,
                                                 nullptr)
                                  .z_out);
                      }});

    auto make_tuna_inputs = [&rng]() {
        // x, down w/b, dw w/b, pw w/b, up w/b  (C=8, d=4, k=3, 4x4 grid)
        return grad_inputs({randn({1, 16, 8}, rng, 0.5), randn({8, 4}, rng, 0.3),
                            randn({4}, rng, 0.3), randn({4, 1, 3, 3}, rng, 0.3),
                            randn({4}, rng, 0.3), randn({4, 4, 1, 1}, rng, 0.3),
                            randn({4}, rng, 0.3), randn({4, 8}, rng, 0.3),
                            randn({8}, rng, 0.3)});
    };
    auto bind_tuna_params = [](const std::vector<Tensor>& in, size_t base) {
        TunaBlockParams p;
        p.down_w = in[base + 0];
        p.down_b = in[base + 1];
        p.dw_w = in[base + 2];
        p.dw_b = in[base + 3];
        p.pw_w = in[base + 4];
        p.pw_b = in[base + 5];
        p.up_w = in[base + 6];
        p.up_b = in[base + 7];
        return p;
    };
    checks.push_back({"tuna_forward", "adapter", make_tuna_inputs(),
                      [bind_tuna_params](const std::vector<Tensor>& in) {
                          const TunaBlockParams p = bind_tuna_params(in, 1);
                          return sq_loss(tuna_forward(in[0], p, 4, 4, 0.0, false, nullptr));
                      }});

    for (const char* structure : {"parallel", "sequential"}) {
        std::vector<Tensor> inputs = make_block_inputs();
        const size_t tuna_base = inputs.size();
        const std::vector<Tensor> tuna_in = make_tuna_inputs();
        inputs.insert(inputs.end(), tuna_in.begin() + 1, tuna_in.end());  // drop the x duplicate
        inputs.push_back(Tensor::full({8}, 0.9, true));   // s1
        inputs.push_back(Tensor::full({1}, 0.2, true));   // s2
        const bool parallel = std::string(structure) == "parallel";
        checks.push_back(
            {std::string("tuna_block_") + structure, "adapter", inputs,
             [bind_block, bind_tuna_params, tuna_base, parallel](const std::vector<Tensor>& in) {
                 const BlockParams host = bind_block(in);
                 TunaBlockParams p = bind_tuna_params(in, tuna_base);
                 p.s1 = in[tuna_base + 8];
                 p.s2 = in[tuna_base + 9];
                 return sq_loss(block_forward(in[0], host, p,
                                              parallel ? TunaStructure::parallel
                                                       : TunaStructure::sequential,
                                              4, 4, /*shift=*/false, 0.0, 0.0, false, nullptr)
                                    .z_out);
             }});
    }

    {
        // Head over a 4-stage pyramid, plus the pixel loss; out size 5x5
        // exercises the final interpolation.
        std::vector<Tensor> inputs = grad_inputs(
            {randn({1, 16, 8}, rng, 0.5), randn({1, 4, 16}, rng, 0.5),
             randn({1, 1, 32}, rng, 0.5), randn({1, 1, 64}, rng, 0.5),
             randn({4, 8, 1, 1}, rng, 0.3), randn({4}, rng, 0.3),
             randn({4, 16, 1, 1}, rng, 0.3), randn({4}, rng, 0.3),
             randn({4, 32, 1, 1}, rng, 0.3), randn({4}, rng, 0.3),
             randn({4, 64, 1, 1}, rng, 0.3), randn({4}, rng, 0.3),
             randn({4, 16, 1, 1}, rng, 0.3), randn({4}, rng, 0.3),
             randn({3, 4, 1, 1}, rng, 0.3), randn({3}, rng, 0.3)});
        std::vector<IntGrid> targets(1, IntGrid(5, 5));
        for (int64_t y = 0; y < 5; ++y) {
            for (int64_t x = 0; x < 5; ++x) {
                targets[0].at(y, x) = static_cast<int32_t>((y + x) % 3);
            }
        }
        targets[0].at(2, 2) = 255;
        checks.push_back({"head_loss", "head", inputs,
                          [targets](const std::vector<Tensor>& in) {
                              StageFeatures feats;
                              feats.tokens = {in[0], in[1], in[2], in[3]};
                              feats.grids = {{{4, 4}, {2, 2}, {1, 1}, {1, 1}}};
                              HeadParams head;
                              for (int s = 0; s < 4; ++s) {
                                  head.proj_w[s] = in[4 + 2 * s];
                                  head.proj_b[s] = in[5 + 2 * s];
                              }
                              head.fuse_w = in[12];
                              head.fuse_b = in[13];
                              head.cls_w = in[14];
                              head.cls_b = in[15];
                              Tensor logits = head_forward(feats, head, 5, 5);
                              return cross_entropy(logits, targets, 255);
                          }});
    }
    return checks;
}

}  // namespace

double max_relative_error(const LossFn& f, std::vector<Tensor>& inputs, double h) {
    return run_check(f, inputs, h, 0.0);
}

std::vector<CheckResult> run_suite(const SuiteOptions& opts) {
    std::vector<CheckResult> results;
    for (Check& check : build_checks()) {
        if (!opts.module.empty() && check.module != opts.module) {
            continue;
        }
        const double offset = check.name == opts.perturb_op ? 1e-2 : 0.0;
        CheckResult r;
        r.name = check.name;
        r.max_rel_err = run_check(check.fn, check.inputs, opts.h, offset);
        r.pass = r.max_rel_err < opts.tol;
        results.push_back(std::move(r));
    }
    return results;
}

}  // namespace tuna::gradcheck
