#pragma once

#include <string>
#include <vector>

#include "cardiogen/numerics/rng.hpp"
#include "cardiogen/numerics/tensor.hpp"

namespace cardiogen {

struct NamedParam {
    std::string name;
    Tensor tensor;
};

// Ordered registry of trainable tensors. Layers keep Tensor handles that
// share storage with the entries here, so loads and optimiser updates are
// visible to the model without re-binding.
class ParamStore {
public:
    Tensor add(const std::string& name, Shape shape);
    Tensor add_normal(const std::string& name, Shape shape, Rng& rng, double stddev);
    Tensor add_constant(const std::string& name, Shape shape, Real value);

    const Tensor& get(const std::string& name) const;
    const NamedParam* find(const std::string& name) const;
    bool contains(const std::string& name) const { return find(name) != nullptr; }

    std::vector<NamedParam>& entries() { return entries_; }
    const std::vector<NamedParam>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t scalar_count() const;

    void zero_grad();
    void set_requires_grad(bool flag);
    // Copies values of every matching entry from `other`; names and shapes
    // must agree exactly.
    void copy_values_from(const ParamStore& other);

private:
    std::vector<NamedParam> entries_;
};

}  // namespace cardiogen
