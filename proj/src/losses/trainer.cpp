#include "cardiogen/losses/trainer.hpp"

#include <cmath>
#include <cstdio>

namespace cardiogen {

Tensor stack_clips(std::span<const VideoClip> clips) {
    if (clips.empty()) {
        throw ShapeError("stack_clips on an empty batch");
    }
    const auto& c0 = clips.front();
    std::vector<Real> v;
    v.reserve(clips.size() * c0.pixels.size());
    for (const auto& c : clips) {
        if (c.frames != c0.frames || c.height != c0.height || c.width != c0.width || c.channels != c0.channels) {
            throw ShapeError("stack_clips: clips of different extents");
        }
        v.insert(v.end(), c.pixels.begin(), c.pixels.end());
    }
    return Tensor::from({clips.size(), c0.frames, c0.height, c0.width, c0.channels}, std::move(v));
}

Discriminator::Discriminator(const DiscriminatorConfig& cfg, std::size_t height, std::size_t width,
                             std::size_t channels, std::uint64_t seed)
    : cfg_(cfg), h_(height), w_(width), c_(channels) {
    const std::size_t p = cfg.patch;
    if (p == 0 || height % (2 * p) != 0 || width % (2 * p) != 0) {
        throw ConfigError("discriminator patch " + std::to_string(p) + " needs frame extents divisible by " +
                          std::to_string(2 * p));
    }
    Rng rng(seed);
    l1_ = nn::Linear(params_, "disc.l1", p * p * channels, cfg.width1, rng);
    l2_ = nn::Linear(params_, "disc.l2", 4 * cfg.width1, cfg.width2, rng);
    out_ = nn::Linear(params_, "disc.out", cfg.width2, 1, rng);
    // Tile order is (gy, gx, dy, dx): the four tiles of each 2x2 group are
    // adjacent rows, so the second layer reads them as one contiguous row.
    const std::size_t gh = height / (2 * p), gw = width / (2 * p);
    for (std::size_t gy = 0; gy < gh; ++gy) {
        for (std::size_t gx = 0; gx < gw; ++gx) {
            for (std::size_t dy = 0; dy < 2; ++dy) {
                for (std::size_t dx = 0; dx < 2; ++dx) {
                    const std::size_t ty = 2 * gy + dy, tx = 2 * gx + dx;
                    for (std::size_t y = 0; y < p; ++y) {
                        for (std::size_t x = 0; x < p; ++x) {
                            for (std::size_t c = 0; c < channels; ++c) {
                                tile_index_.push_back(((ty * p + y) * width + tx * p + x) * channels + c);
                            }
                        }
                    }
                }
            }
        }
    }
}

Tensor Discriminator::score(const Tensor& videos) const {
    if (videos.rank() != 5 || videos.dim(2) != h_ || videos.dim(3) != w_ || videos.dim(4) != c_) {
        throw ShapeError("discriminator expects [B, F, " + std::to_string(h_) + ", " + std::to_string(w_) + ", " +
                         std::to_string(c_) + "], got " + shape_str(videos.shape()));
    }
    const std::size_t B = videos.dim(0), F = videos.dim(1), frame = h_ * w_ * c_;
    const std::size_t p = cfg_.patch, tiles = (h_ / p) * (w_ / p), in = p * p * c_;
    std::vector<std::size_t> index;
    index.reserve(B * F * tile_index_.size());
    for (std::size_t i = 0; i < B * F; ++i) {
        for (auto k : tile_index_) {
            index.push_back(i * frame + k);
        }
    }
    Tensor t = ops::gather(videos, std::move(index), {B * F * tiles, in});
    Tensor h1 = ops::leaky_relu(l1_.forward(t), cfg_.slope);
    Tensor g = ops::reshape(h1, {B * F * tiles / 4, 4 * cfg_.width1});
    Tensor h2 = ops::leaky_relu(l2_.forward(g), cfg_.slope);
    Tensor s = out_.forward(h2);
    return ops::row_mean(ops::reshape(s, {B, F * tiles / 4}));
}

TokenizerTrainer::TokenizerTrainer(VideoTokenizer& tokenizer, Discriminator& disc, const FeatureExtractor& phi,
                                   const TokenizerTrainConfig& cfg)
    : tok_(tokenizer), disc_(disc), phi_(phi), cfg_(cfg), rng_(mix_seed(cfg.seed, 0x7472)) {
    if (cfg.steps == 0 || cfg.batch == 0) {
        throw ConfigError("tokenizer training needs positive steps and batch");
    }
    if (cfg.gan_warmup_frac < 0 || cfg.gan_warmup_frac > 1) {
        throw ConfigError("gan_warmup_frac must be in [0, 1]");
    }
    warmup_ = static_cast<std::size_t>(std::floor(cfg.gan_warmup_frac * static_cast<double>(cfg.steps)));
    for (AdamState* s : {&opt_, &disc_opt_}) {
        s->beta1 = cfg.beta1;
        s->beta2 = cfg.beta2;
        s->clip_norm = cfg.clip_norm;
    }
    opt_.lr = cfg.lr;
    disc_opt_.lr = cfg.disc_lr;
}

LossBreakdown TokenizerTrainer::step(std::span<const VideoClip> batch) {
    ++step_;
    const double progress = static_cast<double>(step_ - 1) / static_cast<double>(cfg_.steps);
    const double decay = cfg_.lr_min_frac + (1.0 - cfg_.lr_min_frac) * 0.5 * (1.0 + std::cos(M_PI * std::min(progress, 1.0)));
    opt_.lr = static_cast<Real>(cfg_.lr * decay);

    const auto& tc = tok_.config();
    TokenizerForward fwd = tok_.forward(batch);
    Tensor target = stack_clips(batch);
    Tensor recon = recon_loss(target, fwd.recon);

    const std::size_t B = batch.size(), F = tc.frames, fs = tc.height * tc.width * tc.channels;
    std::vector<std::size_t> frames;
    for (std::size_t b = 0; b < B; ++b) {
        for (auto f : sample_frames(F, std::min(cfg_.percep_frames, F), rng_)) {
            frames.push_back(b * F + f);
        }
    }
    Tensor percep = perceptual_loss(ops::reshape(target, {B * F, fs}), ops::reshape(fwd.recon, {B * F, fs}), phi_,
                                    frames);

    LossBreakdown out;
    Tensor gan;
    const bool adversarial = step_ > warmup_;
    if (adversarial) {
        gan = gan_generator_loss(disc_.score(fwd.recon));
        const auto theta = tok_.last_layer_params();
        const double gp = l2_norm(autograd::grad(percep, theta));
        const double gg = l2_norm(autograd::grad(gan, theta));
        out.lambda_adaptive = adaptive_weight(gp, gg, cfg_.adaptive_eps, cfg_.adaptive_clamp, &out.lambda_degenerate);
        out.gan_gen = gan.item();
    }
    Tensor total = total_loss(recon, percep, fwd.quant_loss, gan, out.lambda_adaptive);
    out.recon = recon.item();
    out.percep = percep.item();
    out.vq = fwd.quant_loss.item();
    out.total = total.item();
    if (!std::isfinite(out.total)) {
        throw NumericError("tokenizer step " + std::to_string(step_) + ": non-finite total loss");
    }

    tok_.params().zero_grad();
    total.backward();
    adam_step(tok_.params().entries(), opt_);

    if (adversarial) {
        disc_.params().zero_grad();
        Tensor d = discriminator_loss(disc_.score(target), disc_.score(fwd.recon.detach()));
        out.disc_loss = d.item();
        d.backward();
        adam_step(disc_.params().entries(), disc_opt_);
    }
    return out;
}

std::string TokenizerTrainer::csv_header() { return "step,recon,percep,vq,gan_gen,lambda_adaptive,total,disc_loss"; }

std::string TokenizerTrainer::csv_row(std::size_t step, const LossBreakdown& b) {
    char buf[320];
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", step, b.recon, b.percep, b.vq,
                  b.gan_gen, b.lambda_adaptive, b.total, b.disc_loss);
    return buf;
}

}  // namespace cardiogen
