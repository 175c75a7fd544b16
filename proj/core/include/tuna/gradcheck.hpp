#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tuna/tensor.hpp"

namespace tuna::gradcheck {

// Forward builder: consumes the inputs and returns a scalar loss. Must be
// deterministic across calls (re-seed any internal rng on every call).
using LossFn = std::function<Tensor(const std::vector<Tensor>& inputs)>;

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Compares tape gradients against central finite differences (step h) on
// every element of every input. Relative error per element is
// |a - n| / max(1, |a|, |n|); the maximum over all elements is returned.
double max_relative_error(const LossFn& f, std::vector<Tensor>& inputs, double h = 1e-5);

struct SuiteOptions {
    double tol = 1e-4;
    double h = 1e-5;
    std::string module;      // empty = all; "tensor" | "backbone" | "adapter" | "head"
    std::string perturb_op;  // test hook: corrupt this check's analytic gradient
};

// Finite-difference coverage of every differentiable op plus the composed
// paths (adapter forward, injected blocks, head+loss).
std::vector<CheckResult> run_suite(const SuiteOptions& opts = {});

}  // namespace tuna::gradcheck
