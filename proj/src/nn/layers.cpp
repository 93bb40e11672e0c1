#include "cardiogen/nn/layers.hpp"

#include <cmath>

namespace cardiogen::nn {

LoraAdapter make_lora(const std::string& target, std::size_t in, std::size_t out, std::size_t rank,
                      Real alpha, Rng& rng) {
    if (rank == 0) {
        throw ConfigError("LoRA rank must be positive");
    }
    LoraAdapter a;
    a.target = target;
    a.rank = rank;
    a.alpha = alpha;
    std::vector<Real> av(rank * in);
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : av) {
        v = static_cast<Real>(rng.normal() * sd);
    }
    a.A = Tensor::from({rank, in}, std::move(av), true);
    a.B = Tensor::zeros({out, rank}, true);
    return a;
}

Linear::Linear(ParamStore& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
               double init_std, bool bias)
    : name_(name), in_(in), out_(out) {
    const double sd = init_std < 0 ? 1.0 / std::sqrt(static_cast<double>(in)) : init_std;
    weight_ = params.add_normal(name + ".weight", {in, out}, rng, sd);
    if (bias) {
        bias_ = params.add(name + ".bias", {out});
    }
}

Tensor Linear::forward(const Tensor& x) const {
    Tensor y = ops::linear(x, weight_, bias_);
    if (adapter_) {
        Tensor low = ops::matmul(x, adapter_->A, false, true);
        Tensor up = ops::matmul(low, adapter_->B, false, true);
        y = ops::add(y, ops::scale(up, adapter_->scaling()));
    }
    return y;
}

void apply_lora(std::span<Linear* const> linears, std::span<const std::shared_ptr<const LoraAdapter>> adapters,
                bool merged) {
    for (const auto& ad : adapters) {
        Linear* target = nullptr;
        for (auto* l : linears) {
            if (l->name() == ad->target) {
                target = l;
                break;
            }
        }
        if (!target) {
            throw ConfigError("LoRA target '" + ad->target + "' is not a linear layer of this model");
        }
        const std::size_t in = target->in_features(), out = target->out_features();
        if (ad->A.shape() != Shape{ad->rank, in} || ad->B.shape() != Shape{out, ad->rank}) {
            throw ShapeError("LoRA adapter for '" + ad->target + "' has A " + shape_str(ad->A.shape()) +
                             ", B " + shape_str(ad->B.shape()) + "; layer is " + std::to_string(in) +
                             " -> " + std::to_string(out));
        }
        if (!merged) {
            target->attach(ad);
            continue;
        }
        auto w = target->weight().mutable_data();
        auto a = ad->A.data();
        auto b = ad->B.data();
        const Real s = ad->scaling();
        for (std::size_t i = 0; i < in; ++i) {
            for (std::size_t o = 0; o < out; ++o) {
                Real acc = 0;
                for (std::size_t k = 0; k < ad->rank; ++k) {
                    acc += b[o * ad->rank + k] * a[k * in + i];
                }
                w[i * out + o] += s * acc;
            }
        }
        target->attach(nullptr);
    }
}

LayerNorm::LayerNorm(ParamStore& params, const std::string& name, std::size_t dim) {
    gamma_ = params.add_constant(name + ".gamma", {dim}, Real(1));
    beta_ = params.add(name + ".beta", {dim});
}

TransformerBlock::TransformerBlock(ParamStore& params, const std::string& name, const BlockConfig& cfg, Rng& rng)
    : cfg_(cfg) {
    const std::size_t inner = cfg.heads * cfg.head_dim;
    const std::size_t hidden = cfg.ff_mult * cfg.dim;
    const double resid = 1.0 / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(cfg.depth, 1)));
    ln1_ = LayerNorm(params, name + ".ln1", cfg.dim);
    qkv_ = Linear(params, name + ".attn.qkv", cfg.dim, 3 * inner, rng, -1.0, false);
    q_bias_ = params.add(name + ".attn.q_bias", {inner});
    v_bias_ = params.add(name + ".attn.v_bias", {inner});
    k_zero_ = Tensor::zeros({inner});
    proj_ = Linear(params, name + ".attn.proj", inner, cfg.dim, rng, resid / std::sqrt(static_cast<double>(inner)));
    ln2_ = LayerNorm(params, name + ".ln2", cfg.dim);
    ff1_ = Linear(params, name + ".ff.up", cfg.dim, hidden, rng);
    ff2_ = Linear(params, name + ".ff.down", hidden, cfg.dim, rng, resid / std::sqrt(static_cast<double>(hidden)));
}

Tensor TransformerBlock::forward(const Tensor& x, std::size_t groups, std::size_t length, bool causal,
                                 std::span<const std::uint8_t> key_valid) const {
    ops::AttentionLayout lay{groups, length, cfg_.heads, cfg_.head_dim, causal};
    std::vector<Tensor> bias_parts{q_bias_, k_zero_, v_bias_};
    Tensor qkv = ops::add(qkv_.forward(ln1_.forward(x)), ops::concat_rows(bias_parts));
    Tensor h = ops::attention(qkv, lay, key_valid);
    Tensor y = ops::add(x, proj_.forward(h));
    Tensor f = ff2_.forward(ops::gelu(ff1_.forward(ln2_.forward(y))));
    return ops::add(y, f);
}

void TransformerBlock::collect_linears(std::vector<Linear*>& out) {
    out.push_back(&qkv_);
    out.push_back(&proj_);
    out.push_back(&ff1_);
    out.push_back(&ff2_);
}

Tensor swap_middle(const Tensor& x, std::size_t a, std::size_t b, std::size_t c) {
    const std::size_t d = x.numel() / (a * b * c);
    if (a * b * c * d != x.numel()) {
        throw ShapeError("swap_middle: " + shape_str(x.shape()) + " is not divisible into " + std::to_string(a) +
                         "x" + std::to_string(b) + "x" + std::to_string(c) + " rows");
    }
    std::vector<std::size_t> index(x.numel());
    std::size_t out = 0;
    for (std::size_t i = 0; i < a; ++i) {
        for (std::size_t k = 0; k < c; ++k) {
            for (std::size_t j = 0; j < b; ++j) {
                const std::size_t src = ((i * b + j) * c + k) * d;
                for (std::size_t e = 0; e < d; ++e) {
                    index[out++] = src + e;
                }
            }
        }
    }
    return ops::gather(x, std::move(index), {a * b * c, d});
}

}  // namespace cardiogen::nn
