#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cardiogen/numerics/tensor.hpp"

// Differentiable tensor operations. Binary elementwise ops broadcast only when
// the second operand is a scalar or matches the trailing dimensions of the
// first. Reductions accumulate sequentially, so results are bit-reproducible.
namespace cardiogen::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
Tensor add_scalar(const Tensor& a, Real offset);
Tensor neg(const Tensor& a);

// op(a) * op(b) for 2-D operands, op = optional transpose.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
// x[N,in] * w[in,out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, Real slope);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
// Gradient is zero where the input was clamped.
Tensor clamp(const Tensor& x, Real lo, Real hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// [R, C] -> [R]
Tensor row_mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Normalises each row of x[N, D] and applies gamma[D], beta[D].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = Real(1e-5));

struct AttentionLayout {
    std::size_t groups = 1;   // independent sequences
    std::size_t length = 1;   // sequence length per group
    std::size_t heads = 1;
    std::size_t head_dim = 1;
    bool causal = false;      // query i sees keys j <= i only
};

// Multi-head scaled dot-product attention over packed projections
// qkv[groups*length, 3*heads*head_dim] laid out as [q | k | v]. `key_valid`,
// when non-empty, has groups*length flags; invalid keys are skipped entirely
// (they never enter a score, max or sum), which keeps masked positions exact.
Tensor attention(const Tensor& qkv, const AttentionLayout& layout,
                 std::span<const std::uint8_t> key_valid = {});

// Rows of table[V, D] selected by indices -> [n, D]
Tensor embedding(const Tensor& table, std::span<const std::uint32_t> indices);
// out.flat[i] = x.flat[index[i]]; reshaped to `shape`.
Tensor gather(const Tensor& x, std::vector<std::size_t> index, Shape shape);
// Concatenate along axis 0; trailing extents must agree.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
// Forward value replaced by `forward_values`; gradient flows to z unchanged.
Tensor straight_through(const Tensor& z, std::vector<Real> forward_values);

// sum_i mask_i * -log softmax(logits_i)[target_i] / divisor, logits[N, V].
Tensor masked_nll(const Tensor& logits, std::span<const std::uint32_t> targets,
                  std::span<const std::uint8_t> mask, Real divisor);
// -(1/N) sum [y log p + (1-y) log(1-p)] with p clamped to [eps, 1-eps].
Tensor binary_cross_entropy(const Tensor& probs, std::span<const Real> labels,
                            Real clamp_eps = Real(1e-7));

Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace cardiogen::ops
