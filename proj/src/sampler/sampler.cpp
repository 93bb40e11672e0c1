#include "cardiogen/sampler/sampler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace cardiogen {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

}  // namespace

const char* mode_name(GenerationMode m) {
    switch (m) {
        case GenerationMode::EcgOnly:
            return "ecg_only";
        case GenerationMode::ImagePlusEcg:
            return "image_plus_ecg";
        case GenerationMode::Continuation:
            return "continuation";
    }
    return "?";
}

GenerationMode parse_mode(const std::string& s) {
    for (auto m : {GenerationMode::EcgOnly, GenerationMode::ImagePlusEcg, GenerationMode::Continuation}) {
        if (s == mode_name(m)) {
            return m;
        }
    }
    throw ConfigError("unknown generation mode '" + s + "' (ecg_only, image_plus_ecg, continuation)");
}

void GenerationRequest::validate() const {
    if (steps == 0) {
        throw ConfigError("generation needs at least one decode step");
    }
    if (!(lambda_cfg >= 0)) {
        throw ConfigError("lambda_cfg must be non-negative");
    }
    if (!(temperature > 0) || !(choice_temperature >= 0)) {
        throw ConfigError("temperature must be positive and choice_temperature non-negative");
    }
    if (mode == GenerationMode::ImagePlusEcg && (!first_frame || first_frame->frames != 1)) {
        throw ConfigError("image_plus_ecg generation needs a single first frame");
    }
    if (mode == GenerationMode::Continuation && (!prev_clip || prev_clip->frames < k_overlap)) {
        throw ConfigError("continuation needs a previous clip with at least k_overlap=" + std::to_string(k_overlap) +
                          " frames");
    }
}

std::size_t DecodeState::masked_count() const {
    return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), std::uint8_t{1}));
}

std::size_t DecodeState::free_count() const {
    return static_cast<std::size_t>(std::count(fixed.begin(), fixed.end(), std::uint8_t{0}));
}

std::vector<std::uint32_t> encode_prefix(const VideoTokenizer& tok, const VideoClip& frames) {
    const auto& cfg = tok.config();
    const std::size_t k = frames.frames;
    if (k == 0 || (k - 1) % cfg.patch_t != 0 || k > cfg.frames) {
        throw ConfigError("a prefix of " + std::to_string(k) + " frames does not align with temporal patch " +
                          std::to_string(cfg.patch_t) + " in a " + std::to_string(cfg.frames) + "-frame clip");
    }
    if (frames.height != cfg.height || frames.width != cfg.width || frames.channels != cfg.channels) {
        throw ShapeError("frame extents " + std::to_string(frames.height) + "x" + std::to_string(frames.width) + "x" +
                         std::to_string(frames.channels) + " do not match the tokenizer's " +
                         std::to_string(cfg.height) + "x" + std::to_string(cfg.width) + "x" +
                         std::to_string(cfg.channels));
    }
    VideoClip padded(cfg.frames, cfg.height, cfg.width, cfg.channels);
    for (std::size_t f = 0; f < cfg.frames; ++f) {
        auto src = frames.frame(std::min(f, k - 1));
        std::copy(src.begin(), src.end(), padded.frame(f).begin());
    }
    const TokenGrid grid = tok.tokenize(padded);
    const std::size_t rows = 1 + (k - 1) / cfg.patch_t;
    return {grid.codes.begin(), grid.codes.begin() + static_cast<std::ptrdiff_t>(rows * grid.sites())};
}

DecodeState init_state(const GenerationRequest& req, const VideoTokenizer& tok, const GeneratorConfig& gcfg) {
    const auto& tc = tok.config();
    if (gcfg.seq_len() != tc.token_count() || gcfg.vocab != tc.vocab()) {
        throw ConfigError("generator grid (" + std::to_string(gcfg.seq_len()) + " tokens, vocab " +
                          std::to_string(gcfg.vocab) + ") does not match the tokenizer (" +
                          std::to_string(tc.token_count()) + ", " + std::to_string(tc.vocab()) + ")");
    }
    DecodeState s;
    const std::size_t n = gcfg.seq_len();
    s.tokens.assign(n, gcfg.mask_token_id());
    s.fixed.assign(n, 0);
    s.masked.assign(n, 1);
    std::vector<std::uint32_t> pinned;
    if (req.mode == GenerationMode::ImagePlusEcg) {
        pinned = encode_prefix(tok, *req.first_frame);
    } else if (req.mode == GenerationMode::Continuation) {
        if (req.k_overlap >= tc.frames) {
            throw ConfigError("k_overlap " + std::to_string(req.k_overlap) + " leaves nothing to generate in a " +
                              std::to_string(tc.frames) + "-frame clip");
        }
        const auto& prev = *req.prev_clip;
        pinned = encode_prefix(tok, prev.slice(prev.frames - req.k_overlap, prev.frames));
    }
    for (std::size_t i = 0; i < pinned.size(); ++i) {
        s.tokens[i] = pinned[i];
        s.fixed[i] = 1;
        s.masked[i] = 0;
    }
    return s;
}

std::vector<Real> guided_logits(std::span<const Real> cond, std::span<const Real> uncond, double lambda) {
    if (cond.size() != uncond.size()) {
        throw ShapeError("guided_logits: branch sizes differ");
    }
    if (lambda == 1.0) {
        return {cond.begin(), cond.end()};
    }
    if (lambda == 0.0) {
        return {uncond.begin(), uncond.end()};
    }
    std::vector<Real> out(cond.size());
    const Real l = static_cast<Real>(lambda);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = uncond[i] + l * (cond[i] - uncond[i]);
    }
    return out;
}

std::size_t remaining_after_step(std::size_t t, std::size_t steps, std::size_t n_free, std::size_t masked_now) {
    if (masked_now == 0) {
        return 0;
    }
    const double gamma = mask_schedule(static_cast<double>(t + 1), static_cast<double>(steps));
    return std::min(masked_count(gamma, n_free), masked_now - 1);
}

void decode_step(DecodeState& state, std::span<const Real> logits, std::size_t vocab, std::size_t t,
                 std::size_t steps, double temperature, double choice_temperature, Rng& rng,
                 const std::function<std::vector<Real>(const std::vector<std::uint32_t>&)>& critic) {
    const std::size_t n = state.tokens.size();
    if (logits.size() != n * vocab) {
        throw ShapeError("decode_step: logits do not cover the sequence");
    }
    std::vector<std::size_t> masked;
    for (std::size_t i = 0; i < n; ++i) {
        if (state.masked[i]) {
            masked.push_back(i);
        }
    }
    if (masked.empty()) {
        throw ConfigError("decode_step on a fully decoded state");
    }
    const double noise_scale = choice_temperature * (1.0 - static_cast<double>(t + 1) / static_cast<double>(steps));
    std::vector<std::uint32_t> sampled(masked.size());
    std::vector<double> confidence(masked.size());
    for (std::size_t k = 0; k < masked.size(); ++k) {
        const Real* row = logits.data() + masked[k] * vocab;
        double mx = -INFINITY;
        for (std::size_t v = 0; v < vocab; ++v) {
            mx = std::max(mx, static_cast<double>(row[v]) / temperature);
        }
        double sum = 0, best = -INFINITY;
        std::uint32_t arg = 0;
        for (std::size_t v = 0; v < vocab; ++v) {
            const double z = static_cast<double>(row[v]) / temperature;
            sum += std::exp(z - mx);
            const double g = z + rng.gumbel();
            if (g > best) {
                best = g;
                arg = static_cast<std::uint32_t>(v);
            }
        }
        sampled[k] = arg;
        const double logp = static_cast<double>(row[arg]) / temperature - mx - std::log(sum);
        confidence[k] = logp + noise_scale * rng.gumbel();
    }
    if (critic) {
        std::vector<std::uint32_t> filled = state.tokens;
        for (std::size_t k = 0; k < masked.size(); ++k) {
            filled[masked[k]] = sampled[k];
        }
        const auto real = critic(filled);
        for (std::size_t k = 0; k < masked.size(); ++k) {
            confidence[k] = static_cast<double>(real.at(masked[k]));
        }
    }
    const std::size_t keep_masked = remaining_after_step(t, steps, state.free_count(), masked.size());
    std::vector<std::size_t> order(masked.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return confidence[a] > confidence[b]; });
    for (std::size_t r = 0; r < masked.size() - keep_masked; ++r) {
        const std::size_t k = order[r];
        state.tokens[masked[k]] = sampled[k];
        state.masked[masked[k]] = 0;
    }
    ++state.step;
}

GenerationResult generate(const GenerationRequest& req, const VideoTokenizer& tok, const MvtmGenerator& gen,
                          const TokenCritic* critic) {
    req.validate();
    NoGradGuard no_grad;
    const auto& gc = gen.config();
    GenerationResult out;
    auto t0 = Clock::now();
    DecodeState state = init_state(req, tok, gc);
    out.tokenize_seconds = seconds_since(t0);
    for (std::size_t i = 0; i < state.fixed.size(); ++i) {
        if (state.fixed[i]) {
            out.pinned_tokens.push_back(state.tokens[i]);
        }
    }

    t0 = Clock::now();
    const Condition cond = gen.encode_ecg(req.ecg);
    const Condition null = gen.null_condition();
    const bool need_cond = req.lambda_cfg != 0.0, need_uncond = req.lambda_cfg != 1.0;
    auto branch = [&](const Condition& c) {
        std::vector<std::vector<std::uint32_t>> seq{state.tokens};
        std::vector<Condition> cs{c};
        ++out.forward_passes;
        Tensor l = gen.forward_logits(seq, cs);
        return std::vector<Real>(l.data().begin(), l.data().end());
    };
    std::function<std::vector<Real>(const std::vector<std::uint32_t>&)> critic_fn;
    if (req.critic_remask) {
        if (!critic) {
            throw MissingArtifactError("critic re-masking requested but no critic is loaded");
        }
        critic_fn = [critic](const std::vector<std::uint32_t>& tokens) {
            std::vector<std::vector<std::uint32_t>> seq{tokens};
            Tensor p = critic->forward(seq);
            return std::vector<Real>(p.data().begin(), p.data().end());
        };
    }
    Rng rng(req.seed);
    for (std::size_t t = 0; t < req.steps && state.masked_count() > 0; ++t) {
        out.masked_trace.push_back(state.masked_count());
        std::vector<Real> c, u;
        if (need_cond) {
            c = branch(cond);
        }
        if (need_uncond) {
            u = branch(null);
        }
        const auto logits = !need_uncond ? c : !need_cond ? u : guided_logits(c, u, req.lambda_cfg);
        decode_step(state, logits, gc.vocab, t, req.steps, req.temperature, req.choice_temperature, rng, critic_fn);
    }
    out.masked_trace.push_back(state.masked_count());
    if (state.masked_count() != 0) {
        throw NumericError("decoding finished with " + std::to_string(state.masked_count()) + " masked tokens");
    }
    std::size_t k = 0;
    for (std::size_t i = 0; i < state.fixed.size(); ++i) {
        if (state.fixed[i] && state.tokens[i] != out.pinned_tokens[k++]) {
            throw NumericError("pinned token " + std::to_string(i) + " changed during decoding");
        }
    }
    out.sample_seconds = seconds_since(t0);

    const auto& tc = tok.config();
    out.tokens = TokenGrid(tc.grid_t(), tc.grid_h(), tc.grid_w());
    out.tokens.codes = state.tokens;
    t0 = Clock::now();
    out.clip = tok.decode(out.tokens);
    out.decode_seconds = seconds_since(t0);
    return out;
}

GenerationResult extrapolate(const VideoClip& prev_clip, const ECGSignal& ecg_next, const GenerationRequest& base,
                             const VideoTokenizer& tok, const MvtmGenerator& gen, const TokenCritic* critic) {
    GenerationRequest req = base;
    req.mode = GenerationMode::Continuation;
    req.ecg = ecg_next;
    req.prev_clip = prev_clip;
    req.first_frame.reset();
    return generate(req, tok, gen, critic);
}

VideoClip stitch(const VideoClip& head, const VideoClip& next, std::size_t k_overlap) {
    if (head.height != next.height || head.width != next.width || head.channels != next.channels) {
        throw ShapeError("stitch: clips of different frame size");
    }
    if (k_overlap >= next.frames) {
        throw ConfigError("stitch: overlap " + std::to_string(k_overlap) + " covers the whole next chunk");
    }
    VideoClip out(head.frames + next.frames - k_overlap, head.height, head.width, head.channels);
    std::copy(head.pixels.begin(), head.pixels.end(), out.pixels.begin());
    std::copy(next.pixels.begin() + static_cast<std::ptrdiff_t>(k_overlap * next.frame_size()), next.pixels.end(),
              out.pixels.begin() + static_cast<std::ptrdiff_t>(head.pixels.size()));
    return out;
}

LongGeneration generate_long(const GenerationRequest& first, std::span<const ECGSignal> ecgs,
                             const VideoTokenizer& tok, const MvtmGenerator& gen, const TokenCritic* critic) {
    if (ecgs.empty()) {
        throw ConfigError("generate_long needs at least one ECG chunk");
    }
    LongGeneration out;
    GenerationRequest req = first;
    req.ecg = ecgs[0];
    out.chunks.push_back(generate(req, tok, gen, critic));
    out.video = out.chunks.back().clip;
    for (std::size_t i = 1; i < ecgs.size(); ++i) {
        GenerationRequest next = first;
        next.seed = mix_seed(first.seed, i);
        out.chunks.push_back(extrapolate(out.chunks.back().clip, ecgs[i], next, tok, gen, critic));
        out.video = stitch(out.video, out.chunks.back().clip, first.k_overlap);
    }
    return out;
}

}  // namespace cardiogen
