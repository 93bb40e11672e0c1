#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cardiogen/numerics/params.hpp"

namespace cardiogen {

struct AdamState {
    std::uint64_t step = 0;
    Real lr = Real(1e-4);
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.99);
    Real eps = Real(1e-8);
    // Global gradient-norm clip; 0 disables.
    Real clip_norm = Real(0);
    std::vector<std::vector<Real>> m;
    std::vector<std::vector<Real>> v;
};

// Bias-corrected adaptive-moment update using each parameter's accumulated
// gradient. Checks every gradient before touching any parameter; a non-finite
// gradient throws NumericError naming the parameter and nothing is updated.
void adam_step(std::span<NamedParam> params, AdamState& state);

struct EmaState {
    Real decay = Real(0.995);
    std::uint64_t update_every = 10;
    std::vector<std::vector<Real>> shadow;
};

// Shadows start as copies of the current parameter values.
EmaState ema_init(std::span<const NamedParam> params, Real decay, std::uint64_t update_every);
// shadow <- decay * shadow + (1 - decay) * param.
void ema_update(EmaState& ema, std::span<const NamedParam> params);
// Calls ema_update when step is a multiple of update_every.
bool ema_maybe_update(EmaState& ema, std::span<const NamedParam> params, std::uint64_t step);

}  // namespace cardiogen
