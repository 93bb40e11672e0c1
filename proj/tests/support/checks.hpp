#pragma once

// Property and oracle checks shared by the unit tests (small case counts)
// and the acceptance binary (full counts).

#include <cstdint>
#include <string>
#include <vector>

#include "cardiogen/generator/generator.hpp"
#include "cardiogen/sampler/sampler.hpp"
#include "cardiogen/tokenizer/tokenizer.hpp"

namespace cardiogen::checks {

struct Tally {
    std::size_t cases = 0;
    std::size_t failures = 0;
    std::string first_failure;

    void record(bool ok, const std::string& what);
    bool passed() const { return cases > 0 && failures == 0; }
    std::string summary() const;
};

// 16x16x5 frames, 8x8x2 patches, 6 bits: 3 x 2 x 2 token grid.
TokenizerConfig tiny_tokenizer_config();
GeneratorConfig tiny_generator_config(const TokenizerConfig& tok);
VideoClip random_clip(const TokenizerConfig& cfg, Rng& rng);
// Single-lead synthetic ECG that fills the generator conditioning prefix.
ECGSignal random_ecg(const GeneratorConfig& cfg, Rng& rng);

// Encoder output at temporal index i is bit-identical after perturbing any
// frame of a later block; decoder frames of blocks < j are bit-identical
// after changing tokens at temporal index j.
Tally tokenizer_causality(std::size_t cases, std::uint64_t seed);
// Frame-0 latents and tokens depend on frame 0 only.
Tally first_frame_independence(std::size_t cases, std::uint64_t seed);
// Pinned conditioning tokens survive generation bit-identically in both
// image+ECG and continuation modes.
Tally pinned_immutability(std::size_t cases, std::uint64_t seed);
// Masked sets strictly shrink and are nested across decode steps.
Tally monotone_unmasking(std::size_t cases, std::uint64_t seed);

// dequantize then quantize is the identity for every code, K = 1..max_bits.
Tally lfq_exhaustive(std::size_t max_bits);
// Nearest-row search agrees with a literal scan, K = 1..max_bits.
Tally vq_brute_force(std::size_t max_bits, std::size_t queries, std::uint64_t seed);

struct ClosedForm {
    double uniform_mvtm_rel_err = 0;
    double bce_half_abs_err = 0;
    double gamma_half_abs_err = 0;
    double adaptive_product_rel_err = 0;
};
ClosedForm closed_form_losses(std::uint64_t seed);

// Guided generation at lambda 1 (resp. 0) against a single-branch decode with
// the conditional (resp. null) prefix and the same seed: tokens and pixels
// must match bitwise, with one forward pass per step.
Tally cfg_identities(std::size_t cases, std::uint64_t seed);

}  // namespace cardiogen::checks
