#include "cardiogen/losses/losses.hpp"

#include <algorithm>
#include <cmath>

namespace cardiogen {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " differ");
    }
}

void require_finite(const Tensor& t, const char* what) {
    for (auto v : t.data()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(what) + ": non-finite score");
        }
    }
}

}  // namespace

Tensor recon_loss(const Tensor& v, const Tensor& v_hat) {
    require_same(v, v_hat, "recon_loss");
    return ops::mse(v, v_hat);
}

Tensor LinearExtractor::features(const Tensor& frames) const { return ops::matmul(frames, projection_); }

RandomPatchExtractor::RandomPatchExtractor(std::size_t height, std::size_t width_px, std::size_t channels,
                                           std::size_t patch, std::size_t width, std::uint64_t seed)
    : h_(height), w_(width_px), c_(channels), patch_(patch), width_(width) {
    if (patch == 0 || height % patch != 0 || width_px % patch != 0) {
        throw ConfigError("feature patch " + std::to_string(patch) + " must divide " + std::to_string(height) +
                          "x" + std::to_string(width_px));
    }
    const std::size_t in = patch * patch * channels;
    Rng rng(seed);
    std::vector<Real> p(in * width);
    const double sd = 2.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : p) {
        v = static_cast<Real>(rng.normal() * sd);
    }
    projection_ = Tensor::from({in, width}, std::move(p));
    const std::size_t gh = height / patch, gw = width_px / patch;
    for (std::size_t ty = 0; ty < gh; ++ty) {
        for (std::size_t tx = 0; tx < gw; ++tx) {
            for (std::size_t y = 0; y < patch; ++y) {
                for (std::size_t x = 0; x < patch; ++x) {
                    for (std::size_t c = 0; c < channels; ++c) {
                        tile_index_.push_back(((ty * patch + y) * width_px + tx * patch + x) * channels + c);
                    }
                }
            }
        }
    }
}

Tensor RandomPatchExtractor::features(const Tensor& frames) const {
    const std::size_t frame_size = h_ * w_ * c_;
    if (frames.rank() != 2 || frames.dim(1) != frame_size) {
        throw ShapeError("random patch features expect [M, " + std::to_string(frame_size) + "], got " +
                         shape_str(frames.shape()));
    }
    const std::size_t m = frames.dim(0);
    const std::size_t tiles = (h_ / patch_) * (w_ / patch_), in = patch_ * patch_ * c_;
    std::vector<std::size_t> index;
    index.reserve(m * tile_index_.size());
    for (std::size_t i = 0; i < m; ++i) {
        for (auto k : tile_index_) {
            index.push_back(i * frame_size + k);
        }
    }
    Tensor t = ops::gather(frames, std::move(index), {m * tiles, in});
    Tensor f = ops::tanh(ops::matmul(t, projection_));
    return ops::reshape(f, {m, tiles * width_});
}

std::vector<std::size_t> sample_frames(std::size_t frame_count, std::size_t m, Rng& rng) {
    if (m == 0 || m > frame_count) {
        throw ConfigError("cannot sample " + std::to_string(m) + " frames of " + std::to_string(frame_count));
    }
    return rng.sample_without_replacement(frame_count, m);
}

Tensor perceptual_loss(const Tensor& v, const Tensor& v_hat, const FeatureExtractor& phi,
                       std::span<const std::size_t> frames) {
    require_same(v, v_hat, "perceptual_loss");
    if (v.rank() != 2) {
        throw ShapeError("perceptual_loss expects frame matrices [F, H*W*C], got " + shape_str(v.shape()));
    }
    if (frames.empty()) {
        throw ConfigError("perceptual_loss needs at least one frame");
    }
    const std::size_t fs = v.dim(1);
    std::vector<std::size_t> index;
    index.reserve(frames.size() * fs);
    for (auto f : frames) {
        if (f >= v.dim(0)) {
            throw ShapeError("perceptual_loss frame " + std::to_string(f) + " of " + std::to_string(v.dim(0)));
        }
        for (std::size_t j = 0; j < fs; ++j) {
            index.push_back(f * fs + j);
        }
    }
    Tensor a = phi.features(ops::gather(v, index, {frames.size(), fs}));
    Tensor b = phi.features(ops::gather(v_hat, std::move(index), {frames.size(), fs}));
    for (const Tensor* t : {&a, &b}) {
        const std::size_t per = t->numel() / frames.size();
        auto d = t->data();
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (!std::isfinite(d[i])) {
                throw NumericError("feature extractor '" + phi.name() + "' returned a non-finite feature for frame " +
                                   std::to_string(frames[i / per]));
            }
        }
    }
    return ops::mse(a, b);
}

Tensor vq_loss(const Tensor& z_e, const Tensor& e, Real beta) {
    if (!(beta >= 0)) {
        throw ConfigError("vq_loss: beta must be non-negative");
    }
    require_same(z_e, e, "vq_loss");
    const std::size_t rows = z_e.rank() >= 2 ? z_e.dim(0) : 1;
    Tensor diff = ops::sub(z_e.detach(), e);
    return ops::scale(ops::sum(ops::square(diff)), beta / static_cast<Real>(rows));
}

Tensor gan_generator_loss(const Tensor& scores) {
    require_finite(scores, "gan_generator_loss");
    return ops::neg(ops::mean(scores));
}

Tensor discriminator_loss(const Tensor& real_scores, const Tensor& fake_scores) {
    require_finite(real_scores, "discriminator_loss");
    require_finite(fake_scores, "discriminator_loss");
    Tensor r = ops::mean(ops::relu(ops::add_scalar(ops::neg(real_scores), Real(1))));
    Tensor f = ops::mean(ops::relu(ops::add_scalar(fake_scores, Real(1))));
    return ops::add(r, f);
}

double adaptive_weight(double percep_grad_norm, double gan_grad_norm, double eps, double clamp_max,
                       bool* degenerate) {
    if (!(eps > 0)) {
        throw ConfigError("adaptive_weight: eps must be positive");
    }
    const double w = percep_grad_norm / (gan_grad_norm + eps);
    const bool bad = !std::isfinite(percep_grad_norm) || !std::isfinite(gan_grad_norm) || !std::isfinite(w);
    if (degenerate) {
        *degenerate = bad;
    }
    if (bad) {
        return 0.0;
    }
    return std::clamp(w, 0.0, clamp_max);
}

Tensor total_loss(const Tensor& recon, const Tensor& percep, const Tensor& vq, const Tensor& gan_gen,
                  double lambda_adaptive) {
    Tensor t = ops::add(ops::add(recon, percep), vq);
    if (gan_gen.defined() && lambda_adaptive != 0.0) {
        t = ops::add(t, ops::scale(gan_gen, static_cast<Real>(lambda_adaptive)));
    }
    return t;
}

double total_loss(const LossBreakdown& p) { return p.recon + p.percep + p.vq + p.lambda_adaptive * p.gan_gen; }

double l2_norm(const std::vector<std::vector<Real>>& grads) {
    double s = 0;
    for (const auto& g : grads) {
        for (auto v : g) {
            s += static_cast<double>(v) * v;
        }
    }
    return std::sqrt(s);
}

}  // namespace cardiogen
