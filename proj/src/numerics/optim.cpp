#include "cardiogen/numerics/optim.hpp"

#include <cmath>

namespace cardiogen {

void adam_step(std::span<NamedParam> params, AdamState& state) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.tensor.numel(), Real(0));
            state.v.emplace_back(p.tensor.numel(), Real(0));
        }
    }
    if (state.m.size() != params.size()) {
        throw ShapeError("adam_step: optimiser state tracks " + std::to_string(state.m.size()) +
                         " parameters, got " + std::to_string(params.size()));
    }
    double norm_sq = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (state.m[k].size() != params[k].tensor.numel()) {
            throw ShapeError("adam_step: moment shape mismatch for '" + params[k].name + "'");
        }
        if (!params[k].tensor.has_grad()) {
            continue;
        }
        for (auto g : params[k].tensor.grad()) {
            if (!std::isfinite(g)) {
                throw NumericError("non-finite gradient in parameter '" + params[k].name + "'");
            }
            norm_sq += static_cast<double>(g) * g;
        }
    }
    Real clip = Real(1);
    if (state.clip_norm > 0) {
        const double norm = std::sqrt(norm_sq);
        if (norm > state.clip_norm) {
            clip = static_cast<Real>(state.clip_norm / norm);
        }
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const Real bc1 = static_cast<Real>(1.0 - std::pow(static_cast<double>(state.beta1), t));
    const Real bc2 = static_cast<Real>(1.0 - std::pow(static_cast<double>(state.beta2), t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& tensor = params[k].tensor;
        if (!tensor.has_grad()) {
            continue;
        }
        auto g = tensor.grad();
        auto w = tensor.mutable_data();
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const Real gi = g[i] * clip;
            m[i] = state.beta1 * m[i] + (Real(1) - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (Real(1) - state.beta2) * gi * gi;
            const Real mhat = m[i] / bc1;
            const Real vhat = v[i] / bc2;
            w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

EmaState ema_init(std::span<const NamedParam> params, Real decay, std::uint64_t update_every) {
    if (!(decay > 0 && decay < 1)) {
        throw ConfigError("EMA decay must lie in (0, 1)");
    }
    if (update_every == 0) {
        throw ConfigError("EMA update interval must be positive");
    }
    EmaState ema;
    ema.decay = decay;
    ema.update_every = update_every;
    for (const auto& p : params) {
        ema.shadow.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    }
    return ema;
}

void ema_update(EmaState& ema, std::span<const NamedParam> params) {
    if (ema.shadow.size() != params.size()) {
        throw ShapeError("ema_update: shadow count mismatch");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto w = params[k].tensor.data();
        auto& s = ema.shadow[k];
        if (s.size() != w.size()) {
            throw ShapeError("ema_update: shadow shape mismatch for '" + params[k].name + "'");
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            s[i] = ema.decay * s[i] + (Real(1) - ema.decay) * w[i];
        }
    }
}

bool ema_maybe_update(EmaState& ema, std::span<const NamedParam> params, std::uint64_t step) {
    if (step % ema.update_every != 0) {
        return false;
    }
    ema_update(ema, params);
    return true;
}

}  // namespace cardiogen
