#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cardiogen/numerics/ops.hpp"
#include "cardiogen/numerics/params.hpp"

namespace cardiogen::nn {

// Low-rank update of one linear layer: W x + (alpha / rank) * B (A x).
// A is rank x in, B is out x rank; B starts at zero so a fresh adapter leaves
// the layer unchanged.
struct LoraAdapter {
    std::string target;
    std::size_t rank = 1;
    Tensor A;
    Tensor B;
    Real alpha = Real(1);

    Real scaling() const { return alpha / static_cast<Real>(rank); }
};

// Creates a trainable adapter for a layer of the given extents, A ~ N(0, 1/in).
LoraAdapter make_lora(const std::string& target, std::size_t in, std::size_t out, std::size_t rank,
                      Real alpha, Rng& rng);

// y = x W + b with W stored [in, out].
class Linear {
public:
    Linear() = default;
    // init_std < 0 selects 1/sqrt(in).
    Linear(ParamStore& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
           double init_std = -1.0, bool bias = true);

    Tensor forward(const Tensor& x) const;

    const std::string& name() const { return name_; }
    std::size_t in_features() const { return in_; }
    std::size_t out_features() const { return out_; }
    const Tensor& weight() const { return weight_; }
    Tensor& weight() { return weight_; }
    const Tensor& bias() const { return bias_; }

    void attach(std::shared_ptr<const LoraAdapter> adapter) { adapter_ = std::move(adapter); }
    const LoraAdapter* adapter() const { return adapter_.get(); }

private:
    std::string name_;
    std::size_t in_ = 0;
    std::size_t out_ = 0;
    Tensor weight_;
    Tensor bias_;
    std::shared_ptr<const LoraAdapter> adapter_;
};

// Attaches (merged = false) or folds (merged = true) each adapter into the
// linear layer it targets. Folding computes W' = W + (alpha/r) (B A)^T and
// leaves the layer without an adapter. Throws on unknown targets or extents.
void apply_lora(std::span<Linear* const> linears, std::span<const std::shared_ptr<const LoraAdapter>> adapters,
                bool merged);

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParamStore& params, const std::string& name, std::size_t dim);
    Tensor forward(const Tensor& x) const { return ops::layer_norm(x, gamma_, beta_); }

private:
    Tensor gamma_;
    Tensor beta_;
};

struct BlockConfig {
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t head_dim = 16;
    std::size_t ff_mult = 4;
    // Residual-branch output projections are scaled by 1/sqrt(2 * depth).
    std::size_t depth = 1;
};

// Pre-norm transformer block over rows laid out as [groups * length, dim].
// The key projection has no bias: softmax is invariant to it.
class TransformerBlock {
public:
    TransformerBlock() = default;
    TransformerBlock(ParamStore& params, const std::string& name, const BlockConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& x, std::size_t groups, std::size_t length, bool causal,
                   std::span<const std::uint8_t> key_valid = {}) const;

    void collect_linears(std::vector<Linear*>& out);

private:
    BlockConfig cfg_;
    LayerNorm ln1_, ln2_;
    Linear qkv_, proj_, ff1_, ff2_;
    Tensor q_bias_, v_bias_, k_zero_;
};

// Row permutation of x[A * B * C, D] from (a, b, c) to (a, c, b) order.
Tensor swap_middle(const Tensor& x, std::size_t a, std::size_t b, std::size_t c);

}  // namespace cardiogen::nn
