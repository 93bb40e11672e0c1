#include <doctest.h>

#include <cmath>

#include "../support/checks.hpp"
#include "cardiogen/losses/losses.hpp"
#include "cardiogen/losses/trainer.hpp"
#include "cardiogen/numerics/ops.hpp"

using namespace cardiogen;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    std::vector<Real> v(n);
    for (auto& x : v) {
        x = static_cast<Real>(rng.uniform());
    }
    return Tensor::from(shape, v);
}

}  // namespace

TEST_CASE("recon loss examples") {
    const auto a = Tensor::full({2, 3}, Real(0.5));
    CHECK(recon_loss(a, a).item() == 0);
    CHECK(recon_loss(a, Tensor::full({2, 3}, Real(0.25))).item() == doctest::Approx(0.0625));
    Rng rng(1);
    const auto v = random_tensor({2, 2, 2, 1}, rng), w = random_tensor({2, 2, 2, 1}, rng);
    double s = 0;
    for (std::size_t i = 0; i < 8; ++i) {
        const double d = static_cast<double>(v.data()[i]) - w.data()[i];
        s += d * d;
    }
    CHECK(recon_loss(v, w).item() == doctest::Approx(s / 8).epsilon(1e-6));
    CHECK_THROWS_AS(recon_loss(a, Tensor::zeros({3, 2})), ShapeError);
}

TEST_CASE("perceptual loss: identity reduces to recon on chosen frames, linear map by hand") {
    Rng rng(2);
    const auto v = random_tensor({4, 6}, rng), w = random_tensor({4, 6}, rng);
    IdentityExtractor id;
    CHECK(perceptual_loss(v, v, id, std::vector<std::size_t>{0, 2}).item() == 0);
    const std::vector<std::size_t> frames{1, 3};
    double s = 0;
    for (auto f : frames) {
        for (std::size_t k = 0; k < 6; ++k) {
            const double d = static_cast<double>(v.data()[f * 6 + k]) - w.data()[f * 6 + k];
            s += d * d;
        }
    }
    CHECK(perceptual_loss(v, w, id, frames).item() == doctest::Approx(s / 12).epsilon(1e-6));

    // 1x2x2 frames through P = [[1, 0], [0, 2], [1, 1], [0, -1]].
    LinearExtractor lin(Tensor::from({4, 2}, {1, 0, 0, 2, 1, 1, 0, -1}));
    const auto a = Tensor::from({1, 4}, {1, 0, 0, 0});
    const auto b = Tensor::from({1, 4}, {0, 0, 1, 1});
    // phi(a) = (1, 0); phi(b) = (1, 0); identical features despite different pixels.
    CHECK(perceptual_loss(a, b, lin, std::vector<std::size_t>{0}).item() == doctest::Approx(0));
    const auto c = Tensor::from({1, 4}, {0, 1, 0, 0});  // phi(c) = (0, 2)
    CHECK(perceptual_loss(a, c, lin, std::vector<std::size_t>{0}).item() == doctest::Approx((1.0 + 4.0) / 2));
}

TEST_CASE("sample_frames draws distinct indices") {
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        auto f = sample_frames(5, 2, rng);
        REQUIRE(f.size() == 2);
        CHECK(f[0] != f[1]);
        CHECK(f[0] < 5);
        CHECK(f[1] < 5);
    }
}

TEST_CASE("vq loss examples and stop-gradient routing") {
    auto ze = Tensor::from({1, 2}, {1, 0}, true);
    auto e = Tensor::from({1, 2}, {0, 0}, true);
    CHECK(vq_loss(ze, e, Real(0.25)).item() == doctest::Approx(0.25));
    CHECK(vq_loss(e, e, Real(0.25)).item() == 0);
    CHECK_THROWS_AS(vq_loss(ze, e, Real(-1)), ConfigError);
    vq_loss(ze, e, Real(0.25)).backward();
    CHECK(ze.grad()[0] == 0);
    CHECK(ze.grad()[1] == 0);
    CHECK(e.grad()[0] == doctest::Approx(-0.5));
}

TEST_CASE("hinge losses") {
    CHECK(gan_generator_loss(Tensor::from({1}, {Real(0.3)})).item() == doctest::Approx(-0.3));
    CHECK(gan_generator_loss(Tensor::from({2}, {1, -1})).item() == doctest::Approx(0));
    CHECK(discriminator_loss(Tensor::from({1}, {1}), Tensor::from({1}, {-1})).item() == 0);
    CHECK(discriminator_loss(Tensor::from({1}, {0}), Tensor::from({1}, {0})).item() == doctest::Approx(2));
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
        std::vector<Real> r(4), f(4);
        double want = 0, gen = 0;
        for (std::size_t k = 0; k < 4; ++k) {
            r[k] = static_cast<Real>(3 * rng.normal());
            f[k] = static_cast<Real>(3 * rng.normal());
            want += std::max(0.0, 1.0 - r[k]) / 4 + std::max(0.0, 1.0 + f[k]) / 4;
            gen -= f[k] / 4.0;
        }
        const double got = discriminator_loss(Tensor::from({4}, r), Tensor::from({4}, f)).item();
        CHECK(got == doctest::Approx(want).epsilon(1e-5));
        CHECK(got >= 0);
        CHECK(gan_generator_loss(Tensor::from({4}, f)).item() == doctest::Approx(gen).epsilon(1e-5));
    }
}

TEST_CASE("adaptive weight ratio, clamp and degenerate input") {
    CHECK(adaptive_weight(2, 4) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(adaptive_weight(2, 0) == doctest::Approx(1e4));
    bool degenerate = false;
    CHECK(adaptive_weight(NAN, 1, 1e-6, 1e4, &degenerate) == 0);
    CHECK(degenerate);
    // Rescaling the GAN norm by c scales the weight by 1/c.
    for (double c : {0.1, 10.0}) {
        const double p1 = adaptive_weight(3, 2) * 2, pc = adaptive_weight(3, 2 * c) * 2 * c;
        CHECK(std::abs(pc - p1) / p1 < 1e-5);
    }
}

TEST_CASE("closed-form loss identities") {
    const auto cf = checks::closed_form_losses(5);
    CHECK(cf.uniform_mvtm_rel_err < 1e-4);
    CHECK(cf.bce_half_abs_err < 1e-6);
    CHECK(cf.gamma_half_abs_err < 1e-7);
    CHECK(cf.adaptive_product_rel_err < 1e-5);
}

TEST_CASE("total loss is a weighted sum and linear in its parts") {
    LossBreakdown b;
    b.recon = 0.1;
    b.percep = 0.2;
    b.vq = 0.3;
    b.gan_gen = 0.4;
    b.lambda_adaptive = 0.5;
    CHECK(total_loss(b) == doctest::Approx(0.8));
    b.gan_gen = 0;
    CHECK(total_loss(b) == doctest::Approx(0.6));
    const auto t = total_loss(Tensor::scalar(Real(0.1)), Tensor::scalar(Real(0.2)), Tensor::scalar(Real(0.3)),
                              Tensor::scalar(Real(0.4)), 0.5);
    const auto t2 = total_loss(Tensor::scalar(Real(0.2)), Tensor::scalar(Real(0.4)), Tensor::scalar(Real(0.6)),
                               Tensor::scalar(Real(0.8)), 0.5);
    CHECK(t.item() == doctest::Approx(0.8));
    CHECK(t2.item() == doctest::Approx(2 * t.item()));
}

TEST_CASE("discriminator emits one score per video") {
    Discriminator d({}, 16, 16, 1, 1);
    Rng rng(6);
    const auto s = d.score(random_tensor({3, 5, 16, 16, 1}, rng));
    CHECK(s.shape() == Shape{3});
}

TEST_CASE("tokenizer training is deterministic and logs finite breakdowns") {
    const auto cfg = checks::tiny_tokenizer_config();
    auto run = [&] {
        VideoTokenizer tok(cfg, 1);
        Discriminator disc({}, cfg.height, cfg.width, 1, 2);
        RandomPatchExtractor phi(cfg.height, cfg.width, 1, 4, 8, 3);
        TokenizerTrainConfig tc;
        tc.steps = 6;
        tc.batch = 2;
        tc.seed = 4;
        TokenizerTrainer tr(tok, disc, phi, tc);
        Rng rng(7);
        std::string log;
        for (std::size_t s = 1; s <= tc.steps; ++s) {
            std::vector<VideoClip> b{checks::random_clip(cfg, rng), checks::random_clip(cfg, rng)};
            const auto lb = tr.step(b);
            CHECK(std::isfinite(lb.total));
            CHECK(lb.total == doctest::Approx(total_loss(lb)).epsilon(1e-5));
            log += TokenizerTrainer::csv_row(s, lb) + "\n";
        }
        return log;
    };
    const auto a = run();
    CHECK(a == run());
    CHECK(TokenizerTrainer::csv_header() == "step,recon,percep,vq,gan_gen,lambda_adaptive,total,disc_loss");
}
