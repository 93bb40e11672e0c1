#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cardiogen/numerics/ops.hpp"
#include "cardiogen/numerics/rng.hpp"

namespace cardiogen {

// Named scalars of one tokenizer training step.
struct LossBreakdown {
    double recon = 0;
    double percep = 0;
    double vq = 0;
    double gan_gen = 0;
    double lambda_adaptive = 0;
    double total = 0;
    double disc_loss = 0;
    bool lambda_degenerate = false;
};

// (1/N) sum (V - V_hat)^2.
Tensor recon_loss(const Tensor& v, const Tensor& v_hat);

// Maps frames [M, H*W*C] to features [M, F]. Implementations must be
// differentiable in their input; their own weights are fixed.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual Tensor features(const Tensor& frames) const = 0;
    virtual std::string name() const = 0;
};

class IdentityExtractor final : public FeatureExtractor {
public:
    Tensor features(const Tensor& frames) const override { return frames; }
    std::string name() const override { return "identity"; }
};

// Fixed linear map x -> x P with P[in, F].
class LinearExtractor final : public FeatureExtractor {
public:
    explicit LinearExtractor(Tensor projection) : projection_(std::move(projection)) {}
    Tensor features(const Tensor& frames) const override;
    std::string name() const override { return "linear"; }

private:
    Tensor projection_;
};

// Fixed random patch features: each non-overlapping patch x patch tile is
// projected to `width` channels and passed through tanh.
class RandomPatchExtractor final : public FeatureExtractor {
public:
    RandomPatchExtractor(std::size_t height, std::size_t width_px, std::size_t channels, std::size_t patch,
                         std::size_t width, std::uint64_t seed);
    Tensor features(const Tensor& frames) const override;
    std::string name() const override { return "random_patch"; }

private:
    std::size_t h_, w_, c_, patch_, width_;
    std::vector<std::size_t> tile_index_;
    Tensor projection_;
};

// Frame indices for the perceptual loss, without replacement.
std::vector<std::size_t> sample_frames(std::size_t frame_count, std::size_t m, Rng& rng);

// Mean over feature elements of (phi(V_f) - phi(V_hat_f))^2 on the selected
// rows of frame matrices v, v_hat [F, H*W*C].
Tensor perceptual_loss(const Tensor& v, const Tensor& v_hat, const FeatureExtractor& phi,
                       std::span<const std::size_t> frames);

// beta * mean over rows of ||sg[z_e] - e||^2; gradient reaches e only.
Tensor vq_loss(const Tensor& z_e, const Tensor& e, Real beta);

// -mean(scores).
Tensor gan_generator_loss(const Tensor& scores);

// mean(max(0, 1 - real)) + mean(max(0, 1 + fake)).
Tensor discriminator_loss(const Tensor& real_scores, const Tensor& fake_scores);

// ||grad percep|| / (||grad gan|| + eps), clamped to [0, clamp_max]. A
// non-finite norm yields 0 and sets *degenerate.
double adaptive_weight(double percep_grad_norm, double gan_grad_norm, double eps = 1e-6,
                       double clamp_max = 1e4, bool* degenerate = nullptr);

// recon + percep + vq + lambda * gan_gen, with lambda a constant.
Tensor total_loss(const Tensor& recon, const Tensor& percep, const Tensor& vq, const Tensor& gan_gen,
                  double lambda_adaptive);
double total_loss(const LossBreakdown& parts);

double l2_norm(const std::vector<std::vector<Real>>& grads);

}  // namespace cardiogen
