#include "cardiogen/numerics/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace cardiogen {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) {
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ')';
    return os.str();
}

namespace detail {

Real* Node::grad_buffer() {
    if (grad.empty()) {
        grad.assign(value.size(), Real(0));
    }
    return grad.data();
}

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<Real> data, bool requires_grad) {
    for (auto e : shape) {
        if (e == 0) {
            throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        }
    }
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return node;
}

// Parents-before-children order of every grad-requiring node reachable from root.
std::vector<detail::Node*> topo_order(detail::Node* root) {
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(new_node(std::move(shape), std::vector<Real>(n, Real(0)), requires_grad));
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(new_node(std::move(shape), std::vector<Real>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<Real> data, bool requires_grad) {
    return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(Real value) { return Tensor::full({1}, value); }

const Shape& Tensor::shape() const {
    if (!node_) {
        throw Error("use of an undefined tensor");
    }
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const Real> Tensor::data() const {
    shape();
    return node_->value;
}

std::span<Real> Tensor::mutable_data() {
    shape();
    return node_->value;
}

Real Tensor::item() const {
    if (numel() != 1) {
        throw ShapeError("item() on a tensor of shape " + shape_str(shape()));
    }
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    shape();
    node_->requires_grad = flag;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const Real> Tensor::grad() const {
    shape();
    return std::span<const Real>(node_->grad_buffer(), node_->value.size());
}

std::span<Real> Tensor::mutable_grad() {
    shape();
    return std::span<Real>(node_->grad_buffer(), node_->value.size());
}

void Tensor::zero_grad() {
    if (node_ && !node_->grad.empty()) {
        std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
    }
}

void Tensor::backward() const {
    if (numel() != 1) {
        throw ShapeError("backward() requires a single-element tensor, got " + shape_str(shape()));
    }
    if (!node_->requires_grad) {
        return;
    }
    auto order = topo_order(node_.get());
    for (auto* n : order) {
        if (!n->is_leaf()) {
            n->grad.assign(n->value.size(), Real(0));
        }
    }
    node_->grad_buffer()[0] += Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (!(*it)->is_leaf()) {
            (*it)->backward(**it);
        }
    }
    for (auto* n : order) {
        if (!n->is_leaf()) {
            std::vector<Real>().swap(n->grad);
        }
    }
}

Tensor Tensor::detach() const {
    return Tensor(new_node(shape(), node_->value, false));
}

Tensor Tensor::clone() const {
    auto v = node_->value;
    return autograd::make_result(shape(), std::move(v), {*this}, [](detail::Node& self) {
        auto& p = *self.parents[0];
        Real* g = p.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            g[i] += self.grad[i];
        }
    });
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

namespace autograd {

Tensor make_result(Shape shape, std::vector<Real> value, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> fn) {
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& in : inputs) {
            needs = needs || in.requires_grad();
        }
    }
    auto node = new_node(std::move(shape), std::move(value), needs);
    if (needs) {
        node->parents.reserve(inputs.size());
        for (const auto& in : inputs) {
            node->parents.push_back(in.node());
        }
        node->backward = std::move(fn);
    }
    return Tensor(std::move(node));
}

std::vector<std::vector<Real>> grad(const Tensor& loss, std::span<const Tensor> wrt) {
    if (loss.numel() != 1) {
        throw ShapeError("autograd::grad requires a scalar loss");
    }
    std::vector<std::vector<Real>> out;
    out.reserve(wrt.size());
    if (!loss.requires_grad()) {
        for (const auto& w : wrt) {
            out.emplace_back(w.numel(), Real(0));
        }
        return out;
    }
    auto order = topo_order(loss.node().get());
    std::unordered_set<detail::Node*> targets;
    for (const auto& w : wrt) {
        targets.insert(w.node().get());
    }
    std::unordered_set<detail::Node*> dependent;
    for (auto* n : order) {
        bool dep = targets.count(n) > 0;
        for (const auto& p : n->parents) {
            dep = dep || dependent.count(p.get()) > 0;
        }
        if (dep) {
            dependent.insert(n);
        }
    }
    // Leaves keep their accumulated grads; park them while this pass runs.
    std::unordered_map<detail::Node*, std::vector<Real>> parked;
    for (auto* n : order) {
        if (n->is_leaf()) {
            parked[n].swap(n->grad);
        } else {
            n->grad.assign(n->value.size(), Real(0));
        }
    }
    loss.node()->grad_buffer()[0] += Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (!(*it)->is_leaf() && dependent.count(*it)) {
            (*it)->backward(**it);
        }
    }
    for (const auto& w : wrt) {
        auto* n = w.node().get();
        if (n->grad.empty()) {
            out.emplace_back(n->value.size(), Real(0));
        } else {
            out.push_back(n->grad);
        }
    }
    for (auto* n : order) {
        if (n->is_leaf()) {
            n->grad.swap(parked[n]);
        } else {
            std::vector<Real>().swap(n->grad);
        }
    }
    return out;
}

}  // namespace autograd

}  // namespace cardiogen
