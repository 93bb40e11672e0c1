#include "cardiogen/numerics/params.hpp"

#include <algorithm>

namespace cardiogen {

Tensor ParamStore::add(const std::string& name, Shape shape) {
    if (contains(name)) {
        throw Error("duplicate parameter name '" + name + "'");
    }
    auto t = Tensor::zeros(std::move(shape), true);
    entries_.push_back({name, t});
    return t;
}

Tensor ParamStore::add_normal(const std::string& name, Shape shape, Rng& rng, double stddev) {
    auto t = add(name, std::move(shape));
    for (auto& v : t.mutable_data()) {
        v = static_cast<Real>(rng.normal() * stddev);
    }
    return t;
}

Tensor ParamStore::add_constant(const std::string& name, Shape shape, Real value) {
    auto t = add(name, std::move(shape));
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), value);
    return t;
}

const NamedParam* ParamStore::find(const std::string& name) const {
    for (const auto& e : entries_) {
        if (e.name == name) {
            return &e;
        }
    }
    return nullptr;
}

const Tensor& ParamStore::get(const std::string& name) const {
    const auto* p = find(name);
    if (!p) {
        throw Error("unknown parameter '" + name + "'");
    }
    return p->tensor;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
        n += e.tensor.numel();
    }
    return n;
}

void ParamStore::zero_grad() {
    for (auto& e : entries_) {
        e.tensor.zero_grad();
    }
}

void ParamStore::set_requires_grad(bool flag) {
    for (auto& e : entries_) {
        e.tensor.set_requires_grad(flag);
    }
}

void ParamStore::copy_values_from(const ParamStore& other) {
    for (auto& e : entries_) {
        const auto* src = other.find(e.name);
        if (!src) {
            throw Error("parameter '" + e.name + "' missing from source");
        }
        if (src->tensor.shape() != e.tensor.shape()) {
            throw ShapeError("parameter '" + e.name + "' shape " + shape_str(src->tensor.shape()) +
                             " vs " + shape_str(e.tensor.shape()));
        }
        std::copy(src->tensor.data().begin(), src->tensor.data().end(), e.tensor.mutable_data().begin());
    }
}

}  // namespace cardiogen
