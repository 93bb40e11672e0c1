#include "cardiogen/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace cardiogen::ops {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// out[M,N] += op(A) * op(B), A stored [ar, ac], B stored [br, bc].
void gemm_acc(Real* out, const Real* a, std::size_t ar, std::size_t ac, bool ta, const Real* b,
              std::size_t br, std::size_t bc, bool tb) {
    const auto m = static_cast<Eigen::Index>(ta ? ac : ar);
    const auto n = static_cast<Eigen::Index>(tb ? br : bc);
    MatMap c(out, m, n);
    ConstMatMap am(a, static_cast<Eigen::Index>(ar), static_cast<Eigen::Index>(ac));
    ConstMatMap bm(b, static_cast<Eigen::Index>(br), static_cast<Eigen::Index>(bc));
    if (!ta && !tb) {
        c.noalias() += am * bm;
    } else if (!ta && tb) {
        c.noalias() += am * bm.transpose();
    } else if (ta && !tb) {
        c.noalias() += am.transpose() * bm;
    } else {
        c.noalias() += am.transpose() * bm.transpose();
    }
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
    }
}

// Extent of the broadcast operand b against a; 0 if not broadcastable.
std::size_t broadcast_inner(const Shape& a, const Shape& b) {
    if (a == b) {
        return shape_numel(a);
    }
    if (shape_numel(b) == 1) {
        return 1;
    }
    if (b.size() > a.size()) {
        return 0;
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) {
            return 0;
        }
    }
    return shape_numel(b);
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
    auto xs = x.data();
    std::vector<Real> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        out[i] = fwd(xs[i]);
    }
    return autograd::make_result(x.shape(), std::move(out), {x}, [deriv](detail::Node& self) {
        auto& p = *self.parents[0];
        Real* g = p.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            g[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
        }
    });
}

enum class BinOp { Add, Sub, Mul };

Tensor binary(const Tensor& a_in, const Tensor& b_in, BinOp op) {
    const Tensor* a = &a_in;
    const Tensor* b = &b_in;
    std::size_t inner = broadcast_inner(a->shape(), b->shape());
    bool swapped = false;
    if (inner == 0 && op != BinOp::Sub) {
        inner = broadcast_inner(b->shape(), a->shape());
        std::swap(a, b);
        swapped = true;
    }
    if (inner == 0) {
        throw ShapeError("cannot broadcast " + shape_str(b_in.shape()) + " against " +
                         shape_str(a_in.shape()));
    }
    (void)swapped;
    auto av = a->data();
    auto bv = b->data();
    std::vector<Real> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        Real y = bv[i % inner];
        switch (op) {
            case BinOp::Add: out[i] = av[i] + y; break;
            case BinOp::Sub: out[i] = av[i] - y; break;
            case BinOp::Mul: out[i] = av[i] * y; break;
        }
    }
    return autograd::make_result(a->shape(), std::move(out), {*a, *b}, [inner, op](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& g = self.grad;
        if (pa.requires_grad) {
            Real* ga = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += op == BinOp::Mul ? g[i] * pb.value[i % inner] : g[i];
            }
        }
        if (pb.requires_grad) {
            Real* gb = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                Real d = g[i];
                if (op == BinOp::Sub) {
                    d = -d;
                } else if (op == BinOp::Mul) {
                    d *= pa.value[i];
                }
                gb[i % inner] += d;
            }
        }
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul); }

Tensor scale(const Tensor& a, Real factor) {
    return unary(a, [factor](Real x) { return x * factor; }, [factor](Real, Real) { return factor; });
}

Tensor add_scalar(const Tensor& a, Real offset) {
    return unary(a, [offset](Real x) { return x + offset; }, [](Real, Real) { return Real(1); });
}

Tensor neg(const Tensor& a) { return scale(a, Real(-1)); }

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t ar = a.dim(0), ac = a.dim(1), br = b.dim(0), bc = b.dim(1);
    const std::size_t m = ta ? ac : ar, k = ta ? ar : ac;
    const std::size_t k2 = tb ? bc : br, n = tb ? br : bc;
    if (k != k2) {
        throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    std::vector<Real> out(m * n, Real(0));
    gemm_acc(out.data(), a.data().data(), ar, ac, ta, b.data().data(), br, bc, tb);
    return autograd::make_result({m, n}, std::move(out), {a, b},
                                 [ar, ac, br, bc, ta, tb, m, n](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const Real* g = self.grad.data();
        if (pa.requires_grad) {
            if (!ta) {
                gemm_acc(pa.grad_buffer(), g, m, n, false, pb.value.data(), br, bc, !tb);
            } else {
                gemm_acc(pa.grad_buffer(), pb.value.data(), br, bc, tb, g, m, n, true);
            }
        }
        if (pb.requires_grad) {
            if (!tb) {
                gemm_acc(pb.grad_buffer(), pa.value.data(), ar, ac, !ta, g, m, n, false);
            } else {
                gemm_acc(pb.grad_buffer(), g, m, n, true, pa.value.data(), ar, ac, ta);
            }
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require_rank(x, 2, "linear");
    require_rank(w, 2, "linear");
    const std::size_t rows = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
    if (w.dim(0) != in) {
        throw ShapeError("linear: input width " + std::to_string(in) + " vs weight " +
                         shape_str(w.shape()));
    }
    const bool has_bias = bias.defined();
    if (has_bias && bias.numel() != out_dim) {
        throw ShapeError("linear: bias " + shape_str(bias.shape()) + " vs out width " +
                         std::to_string(out_dim));
    }
    std::vector<Real> out(rows * out_dim, Real(0));
    if (has_bias) {
        auto bv = bias.data();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy(bv.begin(), bv.end(), out.begin() + static_cast<std::ptrdiff_t>(r * out_dim));
        }
    }
    gemm_acc(out.data(), x.data().data(), rows, in, false, w.data().data(), in, out_dim, false);
    std::vector<Tensor> inputs{x, w};
    if (has_bias) {
        inputs.push_back(bias);
    }
    return autograd::make_result({rows, out_dim}, std::move(out), std::move(inputs),
                                 [rows, in, out_dim, has_bias](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        const Real* g = self.grad.data();
        if (px.requires_grad) {
            gemm_acc(px.grad_buffer(), g, rows, out_dim, false, pw.value.data(), in, out_dim, true);
        }
        if (pw.requires_grad) {
            gemm_acc(pw.grad_buffer(), px.value.data(), rows, in, true, g, rows, out_dim, false);
        }
        if (has_bias && self.parents[2]->requires_grad) {
            Real* gb = self.parents[2]->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < out_dim; ++c) {
                    gb[c] += g[r * out_dim + c];
                }
            }
        }
    });
}

Tensor gelu(const Tensor& x) {
    constexpr Real c = Real(0.7978845608028654);
    constexpr Real k = Real(0.044715);
    return unary(
        x,
        [](Real v) { return Real(0.5) * v * (Real(1) + std::tanh(c * (v + k * v * v * v))); },
        [](Real v, Real) {
            Real t = std::tanh(c * (v + k * v * v * v));
            return Real(0.5) * (Real(1) + t) +
                   Real(0.5) * v * (Real(1) - t * t) * c * (Real(1) + Real(3) * k * v * v);
        });
}

Tensor relu(const Tensor& x) {
    return unary(x, [](Real v) { return v > 0 ? v : Real(0); },
                 [](Real v, Real) { return v > 0 ? Real(1) : Real(0); });
}

Tensor leaky_relu(const Tensor& x, Real slope) {
    return unary(x, [slope](Real v) { return v > 0 ? v : slope * v; },
                 [slope](Real v, Real) { return v > 0 ? Real(1) : slope; });
}

Tensor tanh(const Tensor& x) {
    return unary(x, [](Real v) { return std::tanh(v); },
                 [](Real, Real y) { return Real(1) - y * y; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(x, [](Real v) { return Real(1) / (Real(1) + std::exp(-v)); },
                 [](Real, Real y) { return y * (Real(1) - y); });
}

Tensor exp(const Tensor& x) {
    return unary(x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

Tensor log(const Tensor& x) {
    for (auto v : x.data()) {
        if (!(v > 0)) {
            throw NumericError("log of a non-positive value");
        }
    }
    return unary(x, [](Real v) { return std::log(v); }, [](Real v, Real) { return Real(1) / v; });
}

Tensor square(const Tensor& x) {
    return unary(x, [](Real v) { return v * v; }, [](Real v, Real) { return Real(2) * v; });
}

Tensor clamp(const Tensor& x, Real lo, Real hi) {
    return unary(x, [lo, hi](Real v) { return std::clamp(v, lo, hi); },
                 [lo, hi](Real v, Real) { return (v >= lo && v <= hi) ? Real(1) : Real(0); });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (auto v : x.data()) {
        acc += v;
    }
    return autograd::make_result({1}, {static_cast<Real>(acc)}, {x}, [](detail::Node& self) {
        auto& p = *self.parents[0];
        Real* g = p.grad_buffer();
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            g[i] += self.grad[0];
        }
    });
}

Tensor mean(const Tensor& x) {
    const Real inv = Real(1) / static_cast<Real>(x.numel());
    double acc = 0.0;
    for (auto v : x.data()) {
        acc += v;
    }
    return autograd::make_result({1}, {static_cast<Real>(acc / static_cast<double>(x.numel()))}, {x},
                                 [inv](detail::Node& self) {
        auto& p = *self.parents[0];
        Real* g = p.grad_buffer();
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            g[i] += self.grad[0] * inv;
        }
    });
}

Tensor row_mean(const Tensor& x) {
    require_rank(x, 2, "row_mean");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    auto xv = x.data();
    std::vector<Real> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            acc += xv[r * cols + c];
        }
        out[r] = static_cast<Real>(acc / static_cast<double>(cols));
    }
    return autograd::make_result({rows}, std::move(out), {x}, [rows, cols](detail::Node& self) {
        auto& p = *self.parents[0];
        Real* g = p.grad_buffer();
        const Real inv = Real(1) / static_cast<Real>(cols);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
                g[r * cols + c] += self.grad[r] * inv;
            }
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    std::vector<Real> v(x.data().begin(), x.data().end());
    return autograd::make_result(std::move(shape), std::move(v), {x}, [](detail::Node& self) {
        auto& p = *self.parents[0];
        Real* g = p.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            g[i] += self.grad[i];
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
    require_rank(x, 2, "layer_norm");
    const std::size_t rows = x.dim(0), d = x.dim(1);
    if (gamma.numel() != d || beta.numel() != d) {
        throw ShapeError("layer_norm: affine parameters must have width " + std::to_string(d));
    }
    auto xv = x.data();
    auto gv = gamma.data();
    auto bv = beta.data();
    std::vector<Real> out(rows * d);
    std::vector<Real> xhat(rows * d);
    std::vector<Real> rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* row = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            mu += row[c];
        }
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            double diff = row[c] - mu;
            var += diff * diff;
        }
        var /= static_cast<double>(d);
        const Real rs = static_cast<Real>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        rstd[r] = rs;
        for (std::size_t c = 0; c < d; ++c) {
            Real h = (row[c] - static_cast<Real>(mu)) * rs;
            xhat[r * d + c] = h;
            out[r * d + c] = h * gv[c] + bv[c];
        }
    }
    return autograd::make_result(
        {rows, d}, std::move(out), {x, gamma, beta},
        [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& pb = *self.parents[2];
            const auto& g = self.grad;
            if (pg.requires_grad || pb.requires_grad) {
                Real* gg = pg.requires_grad ? pg.grad_buffer() : nullptr;
                Real* gb = pb.requires_grad ? pb.grad_buffer() : nullptr;
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < d; ++c) {
                        if (gg) {
                            gg[c] += g[r * d + c] * xhat[r * d + c];
                        }
                        if (gb) {
                            gb[c] += g[r * d + c];
                        }
                    }
                }
            }
            if (px.requires_grad) {
                Real* gx = px.grad_buffer();
                const Real inv_d = Real(1) / static_cast<Real>(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                        Real dy = g[r * d + c] * pg.value[c];
                        s1 += dy;
                        s2 += dy * xhat[r * d + c];
                    }
                    const Real m1 = static_cast<Real>(s1) * inv_d;
                    const Real m2 = static_cast<Real>(s2) * inv_d;
                    for (std::size_t c = 0; c < d; ++c) {
                        Real dy = g[r * d + c] * pg.value[c];
                        gx[r * d + c] += rstd[r] * (dy - m1 - xhat[r * d + c] * m2);
                    }
                }
            }
        });
}

Tensor attention(const Tensor& qkv, const AttentionLayout& lay, std::span<const std::uint8_t> key_valid) {
    require_rank(qkv, 2, "attention");
    const std::size_t G = lay.groups, L = lay.length, H = lay.heads, hd = lay.head_dim;
    const std::size_t E = H * hd;
    if (qkv.dim(0) != G * L || qkv.dim(1) != 3 * E) {
        throw ShapeError("attention: packed qkv " + shape_str(qkv.shape()) + " does not match layout " +
                         std::to_string(G) + "x" + std::to_string(L) + " heads=" + std::to_string(H) +
                         " head_dim=" + std::to_string(hd));
    }
    if (!key_valid.empty() && key_valid.size() != G * L) {
        throw ShapeError("attention: key mask length mismatch");
    }
    std::vector<std::uint8_t> valid(key_valid.begin(), key_valid.end());
    const Real sc = Real(1) / std::sqrt(static_cast<Real>(hd));
    const Real* in = qkv.data().data();
    const std::size_t stride = 3 * E;
    std::vector<Real> out(G * L * E, Real(0));
    std::vector<Real> probs(G * H * L * L, Real(0));
    std::vector<Real> scores(L);
    for (std::size_t g = 0; g < G; ++g) {
        for (std::size_t h = 0; h < H; ++h) {
            Real* P = probs.data() + (g * H + h) * L * L;
            for (std::size_t i = 0; i < L; ++i) {
                const Real* q = in + (g * L + i) * stride + h * hd;
                const std::size_t jend = lay.causal ? i + 1 : L;
                Real mx = -std::numeric_limits<Real>::infinity();
                bool any = false;
                for (std::size_t j = 0; j < jend; ++j) {
                    if (!valid.empty() && !valid[g * L + j]) {
                        continue;
                    }
                    const Real* k = in + (g * L + j) * stride + E + h * hd;
                    Real s = 0;
                    for (std::size_t d = 0; d < hd; ++d) {
                        s += q[d] * k[d];
                    }
                    s *= sc;
                    scores[j] = s;
                    mx = std::max(mx, s);
                    any = true;
                }
                if (!any) {
                    continue;
                }
                Real total = 0;
                for (std::size_t j = 0; j < jend; ++j) {
                    if (!valid.empty() && !valid[g * L + j]) {
                        continue;
                    }
                    Real e = std::exp(scores[j] - mx);
                    P[i * L + j] = e;
                    total += e;
                }
                const Real inv = Real(1) / total;
                Real* o = out.data() + (g * L + i) * E + h * hd;
                for (std::size_t j = 0; j < jend; ++j) {
                    if (!valid.empty() && !valid[g * L + j]) {
                        continue;
                    }
                    Real p = P[i * L + j] * inv;
                    P[i * L + j] = p;
                    const Real* v = in + (g * L + j) * stride + 2 * E + h * hd;
                    for (std::size_t d = 0; d < hd; ++d) {
                        o[d] += p * v[d];
                    }
                }
            }
        }
    }
    return autograd::make_result(
        {G * L, E}, std::move(out), {qkv},
        [G, L, H, hd, E, sc, causal = lay.causal, valid = std::move(valid),
         probs = std::move(probs)](detail::Node& self) {
            auto& p = *self.parents[0];
            const Real* in = p.value.data();
            Real* gin = p.grad_buffer();
            const std::size_t stride = 3 * E;
            std::vector<Real> dp(L);
            for (std::size_t g = 0; g < G; ++g) {
                for (std::size_t h = 0; h < H; ++h) {
                    const Real* P = probs.data() + (g * H + h) * L * L;
                    for (std::size_t i = 0; i < L; ++i) {
                        const Real* dout = self.grad.data() + (g * L + i) * E + h * hd;
                        const std::size_t jend = causal ? i + 1 : L;
                        Real dot = 0;
                        for (std::size_t j = 0; j < jend; ++j) {
                            if (!valid.empty() && !valid[g * L + j]) {
                                continue;
                            }
                            const Real* v = in + (g * L + j) * stride + 2 * E + h * hd;
                            Real* gv = gin + (g * L + j) * stride + 2 * E + h * hd;
                            const Real pij = P[i * L + j];
                            Real s = 0;
                            for (std::size_t d = 0; d < hd; ++d) {
                                s += dout[d] * v[d];
                                gv[d] += pij * dout[d];
                            }
                            dp[j] = s;
                            dot += pij * s;
                        }
                        const Real* q = in + (g * L + i) * stride + h * hd;
                        Real* gq = gin + (g * L + i) * stride + h * hd;
                        for (std::size_t j = 0; j < jend; ++j) {
                            if (!valid.empty() && !valid[g * L + j]) {
                                continue;
                            }
                            const Real ds = P[i * L + j] * (dp[j] - dot) * sc;
                            const Real* k = in + (g * L + j) * stride + E + h * hd;
                            Real* gk = gin + (g * L + j) * stride + E + h * hd;
                            for (std::size_t d = 0; d < hd; ++d) {
                                gq[d] += ds * k[d];
                                gk[d] += ds * q[d];
                            }
                        }
                    }
                }
            }
        });
}

Tensor embedding(const Tensor& table, std::span<const std::uint32_t> indices) {
    require_rank(table, 2, "embedding");
    const std::size_t V = table.dim(0), D = table.dim(1);
    if (indices.empty()) {
        throw ShapeError("embedding: empty index list");
    }
    std::vector<std::uint32_t> idx(indices.begin(), indices.end());
    std::vector<Real> out(idx.size() * D);
    auto tv = table.data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= V) {
            throw ShapeError("embedding index " + std::to_string(idx[r]) + " >= table rows " +
                             std::to_string(V));
        }
        std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(idx[r] * D), D,
                    out.begin() + static_cast<std::ptrdiff_t>(r * D));
    }
    const std::size_t n = idx.size();
    return autograd::make_result({n, D}, std::move(out), {table}, [D, idx = std::move(idx)](detail::Node& self) {
        Real* g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < idx.size(); ++r) {
            for (std::size_t c = 0; c < D; ++c) {
                g[idx[r] * D + c] += self.grad[r * D + c];
            }
        }
    });
}

Tensor gather(const Tensor& x, std::vector<std::size_t> index, Shape shape) {
    if (shape_numel(shape) != index.size()) {
        throw ShapeError("gather: index count does not match output shape " + shape_str(shape));
    }
    auto xv = x.data();
    std::vector<Real> out(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= xv.size()) {
            throw ShapeError("gather: index out of range");
        }
        out[i] = xv[index[i]];
    }
    return autograd::make_result(std::move(shape), std::move(out), {x},
                                 [index = std::move(index)](detail::Node& self) {
        Real* g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < index.size(); ++i) {
            g[index[i]] += self.grad[i];
        }
    });
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) {
        throw ShapeError("concat_rows: nothing to concatenate");
    }
    Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    std::size_t rows = 0;
    std::vector<Real> out;
    std::vector<Tensor> inputs;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        Shape t(p.shape().begin() + 1, p.shape().end());
        if (t != tail) {
            throw ShapeError("concat_rows: trailing extents differ: " + shape_str(p.shape()) + " vs " +
                             shape_str(parts[0].shape()));
        }
        offsets.push_back(out.size());
        out.insert(out.end(), p.data().begin(), p.data().end());
        rows += p.dim(0);
        inputs.push_back(p);
    }
    Shape shape{rows};
    shape.insert(shape.end(), tail.begin(), tail.end());
    return autograd::make_result(std::move(shape), std::move(out), std::move(inputs),
                                 [offsets = std::move(offsets)](detail::Node& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            auto& p = *self.parents[k];
            if (!p.requires_grad) {
                continue;
            }
            Real* g = p.grad_buffer();
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                g[i] += self.grad[offsets[k] + i];
            }
        }
    });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    if (x.rank() < 1 || begin >= end || end > x.dim(0)) {
        throw ShapeError("slice_rows: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") of " + shape_str(x.shape()));
    }
    const std::size_t row = x.numel() / x.dim(0);
    Shape shape = x.shape();
    shape[0] = end - begin;
    std::vector<Real> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * row),
                          x.data().begin() + static_cast<std::ptrdiff_t>(end * row));
    const std::size_t off = begin * row;
    return autograd::make_result(std::move(shape), std::move(out), {x}, [off](detail::Node& self) {
        Real* g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            g[off + i] += self.grad[i];
        }
    });
}

Tensor straight_through(const Tensor& z, std::vector<Real> forward_values) {
    if (forward_values.size() != z.numel()) {
        throw ShapeError("straight_through: value count mismatch");
    }
    return autograd::make_result(z.shape(), std::move(forward_values), {z}, [](detail::Node& self) {
        Real* g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            g[i] += self.grad[i];
        }
    });
}

Tensor masked_nll(const Tensor& logits, std::span<const std::uint32_t> targets,
                  std::span<const std::uint8_t> mask, Real divisor) {
    require_rank(logits, 2, "masked_nll");
    const std::size_t N = logits.dim(0), V = logits.dim(1);
    if (targets.size() != N || mask.size() != N) {
        throw ShapeError("masked_nll: targets/mask length must equal logit rows");
    }
    if (!(divisor > 0)) {
        throw NumericError("masked_nll: divisor must be positive");
    }
    auto lv = logits.data();
    double total = 0.0;
    std::vector<std::uint32_t> tg(targets.begin(), targets.end());
    std::vector<std::uint8_t> mk(mask.begin(), mask.end());
    std::vector<Real> lse(N, Real(0));
    for (std::size_t i = 0; i < N; ++i) {
        if (!mk[i]) {
            continue;
        }
        if (tg[i] >= V) {
            throw ShapeError("masked_nll: target " + std::to_string(tg[i]) + " >= vocab " + std::to_string(V));
        }
        const Real* row = lv.data() + i * V;
        Real mx = *std::max_element(row, row + V);
        double s = 0.0;
        for (std::size_t v = 0; v < V; ++v) {
            s += std::exp(static_cast<double>(row[v] - mx));
        }
        double l = static_cast<double>(mx) + std::log(s);
        lse[i] = static_cast<Real>(l);
        total += l - static_cast<double>(row[tg[i]]);
    }
    return autograd::make_result(
        {1}, {static_cast<Real>(total / static_cast<double>(divisor))}, {logits},
        [N, V, divisor, tg = std::move(tg), mk = std::move(mk), lse = std::move(lse)](detail::Node& self) {
            auto& p = *self.parents[0];
            Real* g = p.grad_buffer();
            const Real up = self.grad[0] / divisor;
            for (std::size_t i = 0; i < N; ++i) {
                if (!mk[i]) {
                    continue;
                }
                const Real* row = p.value.data() + i * V;
                for (std::size_t v = 0; v < V; ++v) {
                    g[i * V + v] += up * std::exp(row[v] - lse[i]);
                }
                g[i * V + tg[i]] -= up;
            }
        });
}

Tensor binary_cross_entropy(const Tensor& probs, std::span<const Real> labels, Real clamp_eps) {
    const std::size_t N = probs.numel();
    if (labels.size() != N) {
        throw ShapeError("binary_cross_entropy: label count mismatch");
    }
    std::vector<Real> y(labels.begin(), labels.end());
    auto pv = probs.data();
    const Real lo = clamp_eps, hi = Real(1) - clamp_eps;
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        const double p = std::clamp(pv[i], lo, hi);
        total += y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
    }
    return autograd::make_result({1}, {static_cast<Real>(-total / static_cast<double>(N))}, {probs},
                                 [N, lo, hi, y = std::move(y)](detail::Node& self) {
        auto& p = *self.parents[0];
        Real* g = p.grad_buffer();
        const Real up = self.grad[0] / static_cast<Real>(N);
        for (std::size_t i = 0; i < N; ++i) {
            const Real v = p.value[i];
            if (v < lo || v > hi) {
                continue;
            }
            g[i] += -up * (y[i] / v - (Real(1) - y[i]) / (Real(1) - v));
        }
    });
}

Tensor mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    return mean(square(sub(a, b)));
}

}  // namespace cardiogen::ops
