#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tuna/errors.hpp"
#include "tuna/rng.hpp"

namespace tuna {

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& shape);
std::vector<int64_t> strides_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    bool leaf = true;
    std::vector<double> grad;  // empty until a gradient is accumulated

    void ensure_grad() {
        if (grad.empty()) {
            grad.assign(data.size(), 0.0);
        }
    }
};

}  // namespace detail

// Dense row-major tensor of 64-bit floats. Copying a Tensor copies the
// handle, not the buffer; buffers are immutable after creation except for
// gradient accumulation and explicit parameter updates through
// mutable_data() (optimizer / initialization only, never under a live
// Graph).
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int64_t numel() const;
    int rank() const;
    int64_t dim(int axis) const;

    const std::vector<double>& data() const;
    // Raw write access for initialization and optimizer steps.
    std::vector<double>& mutable_data();

    double item() const;  // ContractError unless numel() == 1
    double at(const Shape& index) const;

    bool requires_grad() const;
    void set_requires_grad(bool value);
    bool has_grad() const;
    const std::vector<double>& grad() const;  // ContractError if absent
    void zero_grad();

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

  private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Random initializers. All draws advance the passed generator in flat index
// order, so initialization is reproducible from the seed alone.
Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);
Tensor rand_uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0);
Tensor trunc_normal(Shape shape, Rng& rng, double stddev, bool requires_grad = false);

// Dynamic tape recording one forward pass. Ops append nodes while a Graph is
// active on this thread; with no active Graph, ops run in pure inference
// mode and record nothing. One Graph per training step, single-threaded.
class Graph {
  public:
    Graph();
    ~Graph();
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Seeds d(loss)/d(loss) = 1 and walks the tape once in reverse. The tape
    // is consumed. Throws ContractError for non-scalar losses or losses that
    // never entered this graph.
    void backward(const Tensor& loss);

    size_t size() const { return nodes_.size(); }

    // Recording-order scan for the first op whose output holds a NaN/Inf.
    std::optional<std::string> first_nonfinite_op() const;

    static Graph* active();

    // Used by ops; not part of the public surface.
    void record(const char* op, std::vector<std::shared_ptr<detail::TensorImpl>> inputs,
                std::shared_ptr<detail::TensorImpl> output, std::function<void()> backward_fn);

  private:
    struct Node {
        const char* op;
        std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
        std::shared_ptr<detail::TensorImpl> output;
        std::function<void()> backward_fn;
    };
    std::vector<Node> nodes_;
};

}  // namespace tuna
