#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cardiogen/error.hpp"

namespace cardiogen {

// Scalar type of the whole library. The default build is single precision;
// the gradient-check build compiles the same sources with CARDIOGEN_DOUBLE.
#if defined(CARDIOGEN_DOUBLE)
using Real = double;
#else
using Real = float;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<Real> value;
    // Empty until something writes a gradient; sized like value afterwards.
    std::vector<Real> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward;

    Real* grad_buffer();
    bool is_leaf() const { return !backward; }
};

}  // namespace detail

// Dense row-major tensor handle with reverse-mode autodiff. Copies share the
// underlying storage; an op result records its parents only while grad mode
// is enabled and at least one input requires a gradient.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, Real value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<Real> data, bool requires_grad = false);
    static Tensor scalar(Real value);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const Real> data() const;
    // Direct write access, for parameter initialisation and checkpoint loads.
    // Never use on a tensor that is part of a live graph.
    std::span<Real> mutable_data();
    Real item() const;
    Real at(std::size_t flat_index) const { return data()[flat_index]; }

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool has_grad() const;
    // Gradient view; all zeros if nothing has been accumulated yet.
    std::span<const Real> grad() const;
    std::span<Real> mutable_grad();
    void zero_grad();

    // Seeds d(self)/d(self) = 1 and accumulates into every leaf that requires
    // a gradient. Requires a single-element tensor. Intermediate gradients are
    // recomputed from scratch on each call, so backward may be called several
    // times on one graph.
    void backward() const;

    Tensor detach() const;
    Tensor clone() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

// Scoped guard that disables graph construction on the current thread.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

namespace autograd {

// Gradients of `loss` with respect to `wrt`, without touching any .grad()
// buffer of the graph. Only the part of the graph downstream of `wrt` is
// traversed.
std::vector<std::vector<Real>> grad(const Tensor& loss, std::span<const Tensor> wrt);

// Builds an op result. `fn` is installed only if some input requires a grad.
Tensor make_result(Shape shape, std::vector<Real> value, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> fn);

}  // namespace autograd

}  // namespace cardiogen
