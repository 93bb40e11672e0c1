// Every differentiable op against central differences over ten seeded shapes.
// Built twice. The double build is the gradient-check build and is held to
// the strict 1e-8 denominator floor at 1e-5. In single precision a difference
// quotient carries absolute rounding noise of order 1e-5, so coordinates with
// a smaller true gradient cannot meet a pure relative bound; that build
// reports the strict figure and is gated with a denominator floor of 0.2.
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <map>

#include "cardiogen/nn/layers.hpp"
#include "cardiogen/numerics/gradcheck.hpp"
#include "cardiogen/numerics/ops.hpp"

using namespace cardiogen;

namespace {

#if defined(CARDIOGEN_DOUBLE)
constexpr double kTolerance = 1e-5;
constexpr double kGateFloor = 1e-8;
constexpr Real kEps = Real(1e-5);
constexpr Real kEpsQuadratic = Real(1e-3);
constexpr const char* kPrecision = "f64";
#else
constexpr double kTolerance = 1e-3;
constexpr double kGateFloor = 0.2;
constexpr Real kEps = Real(1e-2);
// Central differences are exact for a function quadratic in the perturbed
// coordinate, so a wide step only shrinks the rounding term.
constexpr Real kEpsQuadratic = Real(0.25);
constexpr const char* kPrecision = "f32";
#endif

constexpr int kSeeds = 10;

Tensor rand_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<Real> v(shape_numel(shape));
    for (auto& e : v) {
        e = static_cast<Real>(rng.uniform(lo, hi));
    }
    return Tensor::from(shape, std::move(v));
}

// Values with |x| in [0.2, 1.2], keeping clear of kinks at zero.
Tensor rand_away(const Shape& shape, Rng& rng) {
    std::vector<Real> v(shape_numel(shape));
    for (auto& e : v) {
        const double m = rng.uniform(0.2, 1.2);
        e = static_cast<Real>(rng.bernoulli(0.5) ? m : -m);
    }
    return Tensor::from(shape, std::move(v));
}

// Fixed random-sign weights with magnitude in [0.5, 1.5], so no output
// coordinate receives a vanishing upstream gradient.
Tensor weights_like(const Shape& shape, Rng& rng) { return rand_away(shape, rng); }

std::size_t small(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

Tensor wsum(const Tensor& y, const Tensor& w) { return ops::sum(ops::mul(y, w)); }

using CaseFn = std::function<GradCheckReport(Rng&)>;

GradCheckReport check(const std::function<Tensor()>& f, std::vector<Tensor> inputs, Real eps = kEps) {
    return grad_check_report(f, inputs, eps);
}

GradCheckReport check_quadratic(const std::function<Tensor()>& f, std::vector<Tensor> inputs) {
    return grad_check_report(f, inputs, kEpsQuadratic);
}

GradCheckReport unary(Rng& rng, const std::function<Tensor(const Tensor&)>& op, bool away = false,
                      double lo = -1.0, double hi = 1.0) {
    Shape s{small(rng, 1, 4), small(rng, 1, 5)};
    Tensor x = away ? rand_away(s, rng) : rand_tensor(s, rng, lo, hi);
    Tensor w = weights_like(s, rng);
    return check([=] { return wsum(op(x), w); }, {x});
}

std::map<std::string, CaseFn> cases() {
    std::map<std::string, CaseFn> c;
    c["add"] = [](Rng& rng) {
        Shape s{small(rng, 1, 4), small(rng, 1, 5)};
        Tensor a = rand_tensor(s, rng), b = rand_tensor(s, rng), w = weights_like(s, rng);
        return check_quadratic([=] { return wsum(ops::add(a, b), w); }, {a, b});
    };
    c["add_broadcast_trailing"] = [](Rng& rng) {
        Shape s{small(rng, 1, 4), small(rng, 1, 5)};
        Tensor a = rand_tensor(s, rng), b = rand_tensor({s[1]}, rng), w = weights_like(s, rng);
        return check_quadratic([=] { return wsum(ops::add(a, b), w); }, {a, b});
    };
    c["sub"] = [](Rng& rng) {
        Shape s{small(rng, 1, 4), small(rng, 1, 5)};
        Tensor a = rand_tensor(s, rng), b = rand_tensor({s[1]}, rng), w = weights_like(s, rng);
        return check_quadratic([=] { return wsum(ops::sub(a, b), w); }, {a, b});
    };
    c["mul"] = [](Rng& rng) {
        Shape s{small(rng, 1, 4), small(rng, 1, 5)};
        Tensor a = rand_away(s, rng), b = rand_away(s, rng), w = weights_like(s, rng);
        return check_quadratic([=] { return wsum(ops::mul(a, b), w); }, {a, b});
    };
    c["mul_broadcast_scalar"] = [](Rng& rng) {
        Shape s{small(rng, 1, 4), small(rng, 1, 5)};
        Tensor a = rand_away(s, rng), b = rand_away({1}, rng), w = weights_like(s, rng);
        return check_quadratic([=] { return wsum(ops::mul(a, b), w); }, {a, b});
    };
    c["scale"] = [](Rng& rng) { return unary(rng, [](const Tensor& x) { return ops::scale(x, Real(-1.7)); }); };
    c["add_scalar"] = [](Rng& rng) {
        return unary(rng, [](const Tensor& x) { return ops::add_scalar(x, Real(0.3)); });
    };
    c["neg"] = [](Rng& rng) { return unary(rng, [](const Tensor& x) { return ops::neg(x); }); };
    c["gelu"] = [](Rng& rng) { return unary(rng, [](const Tensor& x) { return ops::gelu(x); }, true); };
    c["relu"] = [](Rng& rng) { return unary(rng, [](const Tensor& x) { return ops::relu(x); }, true); };
    c["leaky_relu"] = [](Rng& rng) {
        return unary(rng, [](const Tensor& x) { return ops::leaky_relu(x, Real(0.2)); }, true);
    };
    c["tanh"] = [](Rng& rng) { return unary(rng, [](const Tensor& x) { return ops::tanh(x); }); };
    c["sigmoid"] = [](Rng& rng) { return unary(rng, [](const Tensor& x) { return ops::sigmoid(x); }); };
    c["exp"] = [](Rng& rng) { return unary(rng, [](const Tensor& x) { return ops::exp(x); }); };
    c["log"] = [](Rng& rng) {
        return unary(rng, [](const Tensor& x) { return ops::log(x); }, false, 0.5, 2.0);
    };
    c["square"] = [](Rng& rng) { return unary(rng, [](const Tensor& x) { return ops::square(x); }, true); };
    c["clamp"] = [](Rng& rng) {
        return unary(rng, [](const Tensor& x) { return ops::clamp(x, Real(-0.5), Real(0.6)); }, false, -0.45,
                     0.55);
    };
    c["sum"] = [](Rng& rng) {
        Shape s{small(rng, 1, 4), small(rng, 1, 5)};
        Tensor x = rand_tensor(s, rng);
        return check_quadratic([=] { return ops::square(ops::sum(x)); }, {x});
    };
    c["mean"] = [](Rng& rng) {
        Shape s{small(rng, 1, 4), small(rng, 1, 5)};
        Tensor x = rand_tensor(s, rng, 0.5, 1.5);
        return check_quadratic([=] { return ops::square(ops::mean(x)); }, {x});
    };
    c["row_mean"] = [](Rng& rng) {
        Shape s{small(rng, 1, 4), small(rng, 1, 5)};
        Tensor x = rand_tensor(s, rng), w = weights_like({s[0]}, rng);
        return check_quadratic([=] { return wsum(ops::row_mean(x), w); }, {x});
    };
    c["reshape"] = [](Rng& rng) {
        Shape s{small(rng, 1, 4), small(rng, 1, 5)};
        Tensor x = rand_tensor(s, rng), w = weights_like({s[1], s[0]}, rng);
        return check_quadratic([=] { return wsum(ops::reshape(x, {s[1], s[0]}), w); }, {x});
    };
    for (int t = 0; t < 4; ++t) {
        const bool ta = t & 1, tb = t & 2;
        c[std::string("matmul_t") + (ta ? "1" : "0") + (tb ? "1" : "0")] = [ta, tb](Rng& rng) {
            const std::size_t m = small(rng, 1, 4), k = small(rng, 1, 4), n = small(rng, 1, 4);
            Tensor a = rand_tensor(ta ? Shape{k, m} : Shape{m, k}, rng);
            Tensor b = rand_tensor(tb ? Shape{n, k} : Shape{k, n}, rng);
            Tensor w = weights_like({m, n}, rng);
            return check_quadratic([=] { return ops::sum(ops::square(ops::add(ops::matmul(a, b, ta, tb), w))); }, {a, b});
        };
    }
    c["linear"] = [](Rng& rng) {
        const std::size_t n = small(rng, 1, 4), in = small(rng, 1, 5), out = small(rng, 1, 4);
        Tensor x = rand_tensor({n, in}, rng), W = rand_tensor({in, out}, rng), b = rand_tensor({out}, rng);
        Tensor w = weights_like({n, out}, rng);
        return check_quadratic([=] { return ops::sum(ops::square(ops::add(ops::linear(x, W, b), w))); }, {x, W, b});
    };
    c["layer_norm"] = [](Rng& rng) {
        const std::size_t n = small(rng, 1, 4), d = small(rng, 2, 6);
        Tensor x = rand_tensor({n, d}, rng, -2, 2), g = rand_tensor({d}, rng, 0.5, 1.5),
               b = rand_tensor({d}, rng), w = weights_like({n, d}, rng);
        return check([=] { return wsum(ops::layer_norm(x, g, b), w); }, {x, g, b});
    };
    for (int variant = 0; variant < 3; ++variant) {
        c["attention_" + std::string(variant == 0 ? "full" : variant == 1 ? "causal" : "key_mask")] =
            [variant](Rng& rng) {
                ops::AttentionLayout lay{small(rng, 1, 2), small(rng, 2, 4), small(rng, 1, 2), small(rng, 1, 3),
                                         variant == 1};
                const std::size_t rows = lay.groups * lay.length, inner = lay.heads * lay.head_dim;
                std::vector<std::uint8_t> valid;
                if (variant == 2) {
                    valid.assign(rows, 1);
                    for (std::size_t g = 0; g < lay.groups; ++g) {
                        valid[g * lay.length + rng.below(lay.length)] = 0;
                    }
                }
                Tensor qkv = rand_tensor({rows, 3 * inner}, rng, -1.5, 1.5);
                Tensor w = weights_like({rows, inner}, rng);
                return check([=] { return wsum(ops::attention(qkv, lay, valid), w); }, {qkv});
            };
    }
    c["embedding"] = [](Rng& rng) {
        const std::size_t V = small(rng, 2, 5), D = small(rng, 1, 4), n = small(rng, 1, 6);
        std::vector<std::uint32_t> idx(n);
        for (auto& i : idx) {
            i = static_cast<std::uint32_t>(rng.below(V));
        }
        Tensor table = rand_tensor({V, D}, rng), w = weights_like({n, D}, rng);
        return check_quadratic([=] { return ops::sum(ops::square(ops::add(ops::embedding(table, idx), w))); }, {table});
    };
    c["gather"] = [](Rng& rng) {
        const std::size_t n = small(rng, 2, 8), m = small(rng, 1, 10);
        std::vector<std::size_t> idx(m);
        for (auto& i : idx) {
            i = rng.below(n);
        }
        Tensor x = rand_tensor({n}, rng), w = weights_like({m}, rng);
        return check_quadratic([=] { return ops::sum(ops::square(ops::add(ops::gather(x, idx, {m}), w))); }, {x});
    };
    c["concat_rows"] = [](Rng& rng) {
        const std::size_t d = small(rng, 1, 4), r1 = small(rng, 1, 3), r2 = small(rng, 1, 3);
        Tensor a = rand_tensor({r1, d}, rng), b = rand_tensor({r2, d}, rng), w = weights_like({r1 + r2, d}, rng);
        return check_quadratic([=] {
            std::vector<Tensor> parts{a, b};
            return ops::sum(ops::square(ops::add(ops::concat_rows(parts), w)));
        },
                     {a, b});
    };
    c["slice_rows"] = [](Rng& rng) {
        const std::size_t n = small(rng, 2, 5), d = small(rng, 1, 4);
        const std::size_t b = rng.below(n), e = b + 1 + rng.below(n - b);
        Tensor x = rand_tensor({n, d}, rng), w = weights_like({e - b, d}, rng);
        return check_quadratic([=] { return ops::sum(ops::square(ops::add(ops::slice_rows(x, b, e), w))); }, {x});
    };
    c["masked_nll"] = [](Rng& rng) {
        const std::size_t n = small(rng, 1, 5), V = small(rng, 2, 6);
        std::vector<std::uint32_t> tgt(n);
        std::vector<std::uint8_t> mask(n);
        for (std::size_t i = 0; i < n; ++i) {
            tgt[i] = static_cast<std::uint32_t>(rng.below(V));
            mask[i] = i == 0 || rng.bernoulli(0.6);
        }
        Tensor logits = rand_tensor({n, V}, rng, -2, 2);
        return check([=] { return ops::masked_nll(logits, tgt, mask, Real(2)); }, {logits});
    };
    c["binary_cross_entropy"] = [](Rng& rng) {
        const std::size_t n = small(rng, 1, 6);
        std::vector<Real> labels(n);
        for (auto& l : labels) {
            l = rng.bernoulli(0.5) ? Real(1) : Real(0);
        }
        Tensor p = rand_tensor({n}, rng, 0.3, 0.7);
        // -log p has relative third-derivative error eps^2 / (3 p^2); keep it small.
        return check([=] { return ops::binary_cross_entropy(p, labels); }, {p}, kEps * Real(0.3));
    };
    c["mse"] = [](Rng& rng) {
        Shape s{small(rng, 1, 4), small(rng, 1, 5)};
        Tensor a = rand_tensor(s, rng), b = rand_tensor(s, rng);
        return check_quadratic([=] { return ops::mse(a, b); }, {a, b});
    };
    c["lora_linear"] = [](Rng& rng) {
        ParamStore ps;
        const std::size_t in = small(rng, 2, 4), out = small(rng, 2, 4), n = small(rng, 1, 3);
        auto lin = std::make_shared<nn::Linear>(ps, "l", in, out, rng);
        auto ad = std::make_shared<nn::LoraAdapter>(nn::make_lora("l", in, out, 2, Real(4), rng));
        for (auto& v : ad->B.mutable_data()) {
            v = static_cast<Real>(rng.uniform(-1, 1));
        }
        std::vector<nn::Linear*> ls{lin.get()};
        std::vector<std::shared_ptr<const nn::LoraAdapter>> ads{ad};
        nn::apply_lora(ls, ads, false);
        Tensor x = rand_tensor({n, in}, rng), w = weights_like({n, out}, rng);
        return check_quadratic([=] { return ops::sum(ops::square(ops::add(lin->forward(x), w))); }, {x, ad->A, ad->B});
    };
    // One transformer block at D = 8, two heads: the composite the tokenizer stacks.
    for (int causal = 0; causal < 2; ++causal) {
        c[causal ? "transformer_block_causal" : "transformer_block"] = [causal](Rng& rng) {
            ParamStore ps;
            nn::BlockConfig bc{8, 2, 4, 2, 2};
            auto block = std::make_shared<nn::TransformerBlock>(ps, "b", bc, rng);
            const std::size_t groups = 2, length = 3;
            Tensor x = rand_tensor({groups * length, 8}, rng, -1.5, 1.5);
            Tensor w = weights_like({groups * length, 8}, rng);
            std::vector<Tensor> inputs{x};
            for (auto& e : ps.entries()) {
                inputs.push_back(e.tensor);
            }
            // Randomise the norm offsets and gains away from their identity initialisation.
            for (auto& e : ps.entries()) {
                if (e.name.find(".ln") != std::string::npos) {
                    for (auto& v : e.tensor.mutable_data()) {
                        v += static_cast<Real>(rng.uniform(-0.3, 0.3));
                    }
                }
            }
            return check([=] { return wsum(block->forward(x, groups, length, causal != 0), w); }, inputs);
        };
    }
    return c;
}

}  // namespace

TEST_CASE("every differentiable op passes the gradient check") {
    const auto all = cases();
    double strict_worst = 0.0, gated_worst = 0.0;
    for (const auto& [name, fn] : all) {
        double strict = 0.0, gated = 0.0;
        GradCheckReport at;
        for (int seed = 0; seed < kSeeds; ++seed) {
            Rng rng(mix_seed(static_cast<std::uint64_t>(seed), std::hash<std::string>{}(name)));
            const auto r = fn(rng);
            if (r.max_relative_error >= strict) {
                strict = r.max_relative_error;
                at = r;
            }
            gated = std::max(gated, max_relative_error(r, kGateFloor));
        }
        strict_worst = std::max(strict_worst, strict);
        std::printf("[%s] %-26s strict=%.3e gated=%.3e (input %zu coord %zu analytic %.6g numeric %.6g)\n",
                    kPrecision, name.c_str(), strict, gated, at.input, at.coordinate, at.analytic, at.numeric);
#if !defined(CARDIOGEN_DOUBLE)
        // Composite blocks accumulate too much float rounding for any fixed
        // floor; the double build gates them.
        if (name.rfind("transformer_block", 0) == 0) {
            continue;
        }
#endif
        gated_worst = std::max(gated_worst, gated);
        CHECK_MESSAGE(gated < kTolerance, name << " max relative error " << gated);
    }
    std::printf("GRADCHECK precision=%s ops=%zu seeds=%d strict_worst=%.6e gated_worst=%.6e floor=%g tolerance=%g\n",
                kPrecision, all.size(), kSeeds, strict_worst, gated_worst, kGateFloor, kTolerance);
}

TEST_CASE("straight-through passes the gradient unchanged") {
    Tensor z = Tensor::from({3}, {Real(0.2), Real(-0.4), Real(1.5)}, true);
    Tensor q = ops::straight_through(z, {1, -1, 1});
    CHECK(q.at(1) == Real(-1));
    ops::sum(ops::mul(q, Tensor::from({3}, {2, 3, 4}))).backward();
    CHECK(z.grad()[0] == Real(2));
    CHECK(z.grad()[1] == Real(3));
    CHECK(z.grad()[2] == Real(4));
}
