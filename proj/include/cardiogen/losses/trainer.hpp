#pragma once

#include <fstream>
#include <memory>
#include <span>

#include "cardiogen/losses/losses.hpp"
#include "cardiogen/numerics/optim.hpp"
#include "cardiogen/tokenizer/tokenizer.hpp"

namespace cardiogen {

struct DiscriminatorConfig {
    std::size_t patch = 4;      // first layer: non-overlapping patch x patch tiles
    std::size_t width1 = 32;
    std::size_t width2 = 64;    // second layer: 2x2 groups of first-layer tiles
    Real slope = Real(0.2);     // leaky ReLU
};

// Per-frame strided patch scorer; scores of all tiles and frames are
// mean-pooled to one scalar per video.
class Discriminator {
public:
    Discriminator(const DiscriminatorConfig& cfg, std::size_t height, std::size_t width, std::size_t channels,
                  std::uint64_t seed);

    // videos [B, F, H, W, C] -> scores [B]
    Tensor score(const Tensor& videos) const;
    ParamStore& params() { return params_; }
    const DiscriminatorConfig& config() const { return cfg_; }

private:
    DiscriminatorConfig cfg_;
    std::size_t h_, w_, c_;
    ParamStore params_;
    nn::Linear l1_, l2_, out_;
    std::vector<std::size_t> tile_index_, group_index_;
};

struct TokenizerTrainConfig {
    std::size_t steps = 1000;
    std::size_t batch = 8;
    Real lr = Real(1e-3);
    Real disc_lr = Real(2e-4);
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.99);
    Real clip_norm = Real(1.0);
    double gan_warmup_frac = 0.2;
    std::size_t percep_frames = 2;
    double adaptive_eps = 1e-6;
    double adaptive_clamp = 1e4;
    // Floor on the cosine learning-rate decay, as a fraction of lr.
    double lr_min_frac = 0.1;
    std::uint64_t seed = 0;
};

class TokenizerTrainer {
public:
    TokenizerTrainer(VideoTokenizer& tokenizer, Discriminator& disc, const FeatureExtractor& phi,
                     const TokenizerTrainConfig& cfg);

    // One generator step and (after warm-up) one discriminator step.
    LossBreakdown step(std::span<const VideoClip> batch);
    std::size_t step_count() const { return step_; }
    std::size_t warmup_steps() const { return warmup_; }

    // One CSV row per step: step,recon,percep,vq,gan_gen,lambda_adaptive,total,disc_loss
    static std::string csv_header();
    static std::string csv_row(std::size_t step, const LossBreakdown& b);

private:
    VideoTokenizer& tok_;
    Discriminator& disc_;
    const FeatureExtractor& phi_;
    TokenizerTrainConfig cfg_;
    AdamState opt_, disc_opt_;
    Rng rng_;
    std::size_t step_ = 0;
    std::size_t warmup_ = 0;
};

// Stacks clips into [B, T+1, H, W, C].
Tensor stack_clips(std::span<const VideoClip> clips);

}  // namespace cardiogen
