#pragma once

#include <optional>
#include <span>
#include <vector>

#include "cardiogen/generator/generator.hpp"
#include "cardiogen/tokenizer/tokenizer.hpp"

namespace cardiogen {

enum class GenerationMode { EcgOnly, ImagePlusEcg, Continuation };

const char* mode_name(GenerationMode m);
GenerationMode parse_mode(const std::string& s);

struct GenerationRequest {
    GenerationMode mode = GenerationMode::EcgOnly;
    ECGSignal ecg;
    std::optional<VideoClip> first_frame;  // one frame
    std::optional<VideoClip> prev_clip;
    double lambda_cfg = 1.5;
    std::size_t steps = 12;
    double temperature = 1.0;
    // Scale of the Gumbel noise added to confidences, decayed linearly to 0
    // at the last step.
    double choice_temperature = 4.5;
    std::size_t k_overlap = 3;
    bool critic_remask = false;
    std::uint64_t seed = 0;

    void validate() const;
};

struct DecodeState {
    std::vector<std::uint32_t> tokens;  // mask id where masked
    std::vector<std::uint8_t> fixed;
    std::vector<std::uint8_t> masked;
    std::size_t step = 0;

    std::size_t masked_count() const;
    std::size_t free_count() const;
};

DecodeState init_state(const GenerationRequest& req, const VideoTokenizer& tok, const GeneratorConfig& gcfg);

// Token rows of the first `frames` frames, which must be 1 + m * P_t.
// Causality makes them independent of what follows, so the clip is padded
// by repeating its last frame.
std::vector<std::uint32_t> encode_prefix(const VideoTokenizer& tok, const VideoClip& frames);

// uncond + lambda (cond - uncond); lambda 1 and 0 return an operand exactly.
std::vector<Real> guided_logits(std::span<const Real> cond, std::span<const Real> uncond, double lambda);

// Masked count left after step t (0-based) of S.
std::size_t remaining_after_step(std::size_t t, std::size_t steps, std::size_t n_free, std::size_t masked_now);

// Fills masked positions of `state` using logits [seq, vocab]. When
// critic_scores is non-empty, samples are ranked by it instead of by the
// noisy confidence.
void decode_step(DecodeState& state, std::span<const Real> logits, std::size_t vocab, std::size_t t,
                 std::size_t steps, double temperature, double choice_temperature, Rng& rng,
                 const std::function<std::vector<Real>(const std::vector<std::uint32_t>&)>& critic = {});

struct GenerationResult {
    VideoClip clip;
    TokenGrid tokens;
    std::vector<std::uint32_t> pinned_tokens;  // values at fixed positions
    std::vector<std::size_t> masked_trace;     // masked count before each step, then after the last
    std::size_t forward_passes = 0;
    double sample_seconds = 0;
    double decode_seconds = 0;
    double tokenize_seconds = 0;
};

GenerationResult generate(const GenerationRequest& req, const VideoTokenizer& tok, const MvtmGenerator& gen,
                          const TokenCritic* critic = nullptr);

// Next chunk conditioned on ecg_next, pinned to the tokens of the last
// k_overlap frames of prev_clip. The returned clip includes the overlapped
// frames; stitch() drops them.
GenerationResult extrapolate(const VideoClip& prev_clip, const ECGSignal& ecg_next, const GenerationRequest& base,
                             const VideoTokenizer& tok, const MvtmGenerator& gen, const TokenCritic* critic = nullptr);

VideoClip stitch(const VideoClip& head, const VideoClip& next, std::size_t k_overlap);

struct LongGeneration {
    VideoClip video;
    std::vector<GenerationResult> chunks;
};
// One chunk per ECG; chunk i > 0 continues from chunk i - 1.
LongGeneration generate_long(const GenerationRequest& first, std::span<const ECGSignal> ecgs,
                             const VideoTokenizer& tok, const MvtmGenerator& gen, const TokenCritic* critic = nullptr);

}  // namespace cardiogen
