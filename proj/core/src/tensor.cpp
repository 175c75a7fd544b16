#include "tuna/tensor.hpp"

#include <cmath>
#include <sstream>

namespace tuna {

int64_t numel_of(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        n *= d;
    }
    return n;
}

std::vector<int64_t> strides_of(const Shape& shape) {
    std::vector<int64_t> strides(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    return strides;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
    for (int64_t d : shape) {
        if (d <= 0) {
            throw ShapeError("invalid tensor shape " + shape_str(shape));
        }
    }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    validate_shape(shape);
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->data.assign(numel_of(shape), 0.0);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.impl_->data) {
        v = value;
    }
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    validate_shape(shape);
    if (numel_of(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("from_data: shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) {
    return from_data({1}, {value});
}

const Shape& Tensor::shape() const {
    return impl_->shape;
}

int64_t Tensor::numel() const {
    return static_cast<int64_t>(impl_->data.size());
}

int Tensor::rank() const {
    return static_cast<int>(impl_->shape.size());
}

int64_t Tensor::dim(int axis) const {
    if (axis < 0) {
        axis += rank();
    }
    if (axis < 0 || axis >= rank()) {
        throw ContractError("dim: axis out of range");
    }
    return impl_->shape[axis];
}

const std::vector<double>& Tensor::data() const {
    return impl_->data;
}

std::vector<double>& Tensor::mutable_data() {
    return impl_->data;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item: tensor has shape " + shape_str(shape()) + ", expected a scalar");
    }
    return impl_->data[0];
}

double Tensor::at(const Shape& index) const {
    if (static_cast<int>(index.size()) != rank()) {
        throw ContractError("at: index rank mismatch");
    }
    const auto strides = strides_of(impl_->shape);
    int64_t off = 0;
    for (size_t i = 0; i < index.size(); ++i) {
        if (index[i] < 0 || index[i] >= impl_->shape[i]) {
            throw ContractError("at: index out of range");
        }
        off += index[i] * strides[i];
    }
    return impl_->data[off];
}

bool Tensor::requires_grad() const {
    return impl_->requires_grad;
}

void Tensor::set_requires_grad(bool value) {
    impl_->requires_grad = value;
}

bool Tensor::has_grad() const {
    return impl_ && !impl_->grad.empty();
}

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) {
        throw ContractError("grad: no gradient has been accumulated");
    }
    return impl_->grad;
}

void Tensor::zero_grad() {
    impl_->grad.clear();
}

Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (double& v : t.mutable_data()) {
        v = rng.normal() * stddev;
    }
    return t;
}

Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_data()) {
        v = lo + (hi - lo) * rng.uniform();
    }
    return t;
}

Tensor trunc_normal(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (double& v : t.mutable_data()) {
        v = rng.truncated_normal(stddev);
    }
    return t;
}

namespace {

thread_local std::vector<Graph*> g_graph_stack;

}  // namespace

Graph::Graph() {
    g_graph_stack.push_back(this);
}

Graph::~Graph() {
    g_graph_stack.pop_back();
}

Graph* Graph::active() {
    return g_graph_stack.empty() ? nullptr : g_graph_stack.back();
}

void Graph::record(const char* op, std::vector<std::shared_ptr<detail::TensorImpl>> inputs,
                   std::shared_ptr<detail::TensorImpl> output, std::function<void()> backward_fn) {
    output->leaf = false;
    nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward_fn)});
}

void Graph::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ContractError("backward: loss must be a defined scalar tensor");
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward: loss is not connected to any trainable tensor");
    }
    auto impl = loss.impl();
    impl->ensure_grad();
    impl->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (!it->output->grad.empty()) {
            it->backward_fn();
        }
    }
    nodes_.clear();
}

std::optional<std::string> Graph::first_nonfinite_op() const {
    for (const auto& node : nodes_) {
        for (double v : node.output->data) {
            if (!std::isfinite(v)) {
                return std::string(node.op);
            }
        }
    }
    return std::nullopt;
}

}  // namespace tuna
