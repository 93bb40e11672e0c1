#include <doctest.h>

#include <cmath>
#include <numbers>

#include "../support/checks.hpp"
#include "cardiogen/numerics/ops.hpp"

using namespace cardiogen;

namespace {

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("cardiogen_unit_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

GeneratorConfig tiny() { return checks::tiny_generator_config(checks::tiny_tokenizer_config()); }

std::vector<std::uint32_t> random_tokens(const GeneratorConfig& g, Rng& rng) {
    std::vector<std::uint32_t> t(g.seq_len());
    for (auto& v : t) {
        v = static_cast<std::uint32_t>(rng.below(g.vocab));
    }
    return t;
}

bool same(const Tensor& a, const Tensor& b) {
    return a.numel() == b.numel() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST_CASE("mask schedule examples and monotonicity") {
    CHECK(mask_schedule(0, 12) == 1.0);
    CHECK(std::abs(mask_schedule(12, 12)) < 1e-15);
    CHECK(mask_schedule(6, 12) == doctest::Approx(std::sqrt(2.0) / 2).epsilon(1e-12));
    double prev = 2;
    for (int i = 0; i <= 100; ++i) {
        const double g = mask_schedule(i, 100);
        CHECK(g < prev);
        prev = g;
    }
    CHECK_THROWS_AS(mask_schedule(-0.1, 4), ConfigError);
    CHECK_THROWS_AS(mask_schedule(5, 4), ConfigError);
    CHECK_THROWS_AS(mask_schedule(0, 0), ConfigError);
}

TEST_CASE("mask_tokens uses the ceiling rule without replacement") {
    Rng rng(1);
    const std::vector<std::uint32_t> t{0, 1, 2, 3, 4, 5, 6};
    const auto none = mask_tokens(t, 0, 99, rng);
    CHECK(none.tokens == t);
    CHECK(none.masked == 0);
    CHECK(std::count(none.mask.begin(), none.mask.end(), 1) == 0);
    const auto all = mask_tokens(t, 1, 99, rng);
    CHECK(std::count(all.tokens.begin(), all.tokens.end(), 99u) == 7);
    for (int k = 0; k < 20; ++k) {
        const auto half = mask_tokens(t, 0.5, 99, rng);
        CHECK(half.masked == 4);
        CHECK(std::count(half.tokens.begin(), half.tokens.end(), 99u) == 4);
        for (std::size_t i = 0; i < 7; ++i) {
            CHECK((half.mask[i] ? half.tokens[i] == 99u : half.tokens[i] == t[i]));
        }
    }
    CHECK(masked_count(0.5, 7) == 4);
    CHECK(masked_count(0.01, 48) == 1);
    CHECK_THROWS_AS(masked_count(1.5, 7), ConfigError);
}

TEST_CASE("mvtm loss examples, oracle and gradient routing") {
    const std::size_t V = 8192;
    auto uniform = Tensor::zeros({4, V});
    const std::vector<std::uint32_t> targets{1, 2, 3, 4};
    const std::vector<std::uint8_t> mask{1, 0, 1, 1};
    CHECK(mvtm_loss(uniform, targets, mask, 1).item() == doctest::Approx(3 * std::log(8192.0)).epsilon(1e-6));
    CHECK(mvtm_loss(uniform, targets, std::vector<std::uint8_t>(4, 0), 1).item() == 0);
    CHECK(mvtm_loss(uniform, targets, mask, 3).item() == doctest::Approx(std::log(8192.0)).epsilon(1e-6));
    CHECK_THROWS_AS(mvtm_loss(uniform, targets, mask, 0), ConfigError);

    Rng rng(2);
    std::vector<Real> lv(4 * 5);
    for (auto& v : lv) {
        v = static_cast<Real>(rng.normal());
    }
    auto logits = Tensor::from({4, 5}, lv, true);
    const std::vector<std::uint32_t> tg{0, 4, 2, 1};
    const std::vector<std::uint8_t> m{1, 1, 0, 1};
    double want = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        if (!m[i]) {
            continue;
        }
        double z = 0;
        for (std::size_t k = 0; k < 5; ++k) {
            z += std::exp(static_cast<double>(lv[i * 5 + k]));
        }
        want -= static_cast<double>(lv[i * 5 + tg[i]]) - std::log(z);
    }
    auto loss = mvtm_loss(logits, tg, m, 1);
    CHECK(loss.item() == doctest::Approx(want).epsilon(1e-5));
    loss.backward();
    for (std::size_t k = 0; k < 5; ++k) {
        CHECK(logits.grad()[2 * 5 + k] == 0);
    }
    CHECK(logits.grad()[0] != 0);
}

TEST_CASE("condition dropout: degenerate probabilities and frequency") {
    const auto g = tiny();
    MvtmGenerator gen(g, 1);
    Rng rng(3);
    const auto cond = gen.encode_ecg(checks::random_ecg(g, rng));
    for (int k = 0; k < 20; ++k) {
        CHECK(condition_dropout(cond, gen, 1, 0, rng).is_null);
        const auto same_c = condition_dropout(cond, gen, 0, 0, rng);
        CHECK_FALSE(same_c.is_null);
        CHECK(same(same_c.rows, cond.rows));
    }
    std::size_t dropped = 0;
    Rng mc(4);
    for (int k = 0; k < 10000; ++k) {
        dropped += condition_dropout(cond, gen, 0.1, 0, mc).is_null ? 1 : 0;
    }
    CHECK(dropped >= 800);
    CHECK(dropped <= 1200);
    // With patch masking every row is either the original or the mask embedding.
    const auto masked = condition_dropout(cond, gen, 0, 1, rng);
    const auto me = gen.ecg_mask_embedding().data();
    for (std::size_t r = 0; r < g.cond_len; ++r) {
        CHECK(std::equal(me.begin(), me.end(), masked.rows.data().begin() + static_cast<std::ptrdiff_t>(r * g.dim)));
    }
    CHECK_THROWS_AS(condition_dropout(cond, gen, 1.5, 0, rng), ConfigError);
}

TEST_CASE("forward logits: null path, padding, symmetry, determinism") {
    NoGradGuard ng;
    const auto g = tiny();
    MvtmGenerator gen(g, 5);
    Rng rng(6);
    std::vector<std::vector<std::uint32_t>> seq{random_tokens(g, rng)};
    const std::vector<Condition> null{gen.null_condition()};
    const auto a = gen.forward_logits(seq, null);
    CHECK(a.shape() == Shape{g.seq_len(), g.vocab});

    // Dropout with p = 1 yields the null prefix exactly.
    Rng d(7);
    const std::vector<Condition> dropped{
        condition_dropout(gen.encode_ecg(checks::random_ecg(g, rng)), gen, 1, 0, d)};
    CHECK(same(gen.forward_logits(seq, dropped), a));

    MvtmGenerator gen2(g, 5);
    CHECK(same(gen2.forward_logits(seq, null), a));

    // Padded rows of a short ECG are never attended.
    ECGSignal shortecg(1, 3 * g.ecg_patch, 100);
    for (auto& v : shortecg.samples) {
        v = static_cast<float>(rng.normal());
    }
    auto c = gen.encode_ecg(shortecg);
    CHECK(c.valid == std::vector<std::uint8_t>{1, 1, 1, 0, 0});
    const std::vector<Condition> c1{c};
    const auto before = gen.forward_logits(seq, c1);
    auto rows = c.rows.data();
    std::vector<Real> junk(rows.begin(), rows.end());
    for (std::size_t k = 3 * g.dim; k < junk.size(); ++k) {
        junk[k] = static_cast<Real>(5 * rng.normal());
    }
    c.rows = Tensor::from({g.cond_len, g.dim}, junk);
    const std::vector<Condition> c2{c};
    CHECK(same(gen.forward_logits(seq, c2), before));

    // Without position embeddings, swapping two positions swaps their logits.
    gen.zero_positions();
    auto s = random_tokens(g, rng);
    s[3] = g.mask_token_id();
    s[8] = g.mask_token_id();
    std::vector<std::vector<std::uint32_t>> one{s};
    const auto l1 = gen.forward_logits(one, null);
    for (std::size_t k = 0; k < g.vocab; ++k) {
        CHECK(l1.data()[3 * g.vocab + k] == doctest::Approx(l1.data()[8 * g.vocab + k]).epsilon(1e-5));
    }
    std::swap(one[0][1], one[0][5]);
    const auto l2 = gen.forward_logits(one, null);
    for (std::size_t k = 0; k < g.vocab; ++k) {
        CHECK(l2.data()[1 * g.vocab + k] == doctest::Approx(l1.data()[5 * g.vocab + k]).epsilon(1e-4));
    }

    std::vector<std::vector<std::uint32_t>> bad{std::vector<std::uint32_t>(g.seq_len() - 1, 0)};
    CHECK_THROWS_AS(gen.forward_logits(bad, null), ShapeError);
    bad[0].assign(g.seq_len(), g.mask_token_id() + 1);
    CHECK_THROWS_AS(gen.forward_logits(bad, null), ShapeError);
    CHECK_THROWS_AS(gen.encode_ecg(ECGSignal(1, 6 * g.ecg_patch, 100)), ShapeError);
}

TEST_CASE("critic BCE closed forms and oracle") {
    CHECK(critic_loss(Tensor::from({1}, {Real(0.5)}), Tensor::from({1}, {Real(0.5)})).item() ==
          doctest::Approx(std::numbers::ln2).epsilon(1e-6));
    CHECK(critic_loss(Tensor::from({2}, {1, 1}), Tensor::from({2}, {0, 0})).item() <= 1e-6);
    Rng rng(8);
    std::vector<Real> r(3), f(3);
    double want = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        r[i] = static_cast<Real>(rng.uniform(0.05, 0.95));
        f[i] = static_cast<Real>(rng.uniform(0.05, 0.95));
        want -= std::log(static_cast<double>(r[i])) + std::log(1.0 - f[i]);
    }
    const double got = critic_loss(Tensor::from({3}, r), Tensor::from({3}, f)).item();
    CHECK(got == doctest::Approx(want / 6).epsilon(1e-5));
    CHECK(got >= 0);

    const auto g = tiny();
    TokenCritic critic(g, 1);
    std::vector<std::vector<std::uint32_t>> seq{random_tokens(g, rng), random_tokens(g, rng)};
    const auto p = critic.forward(seq);
    CHECK(p.numel() == 2 * g.seq_len());
    for (Real v : p.data()) {
        CHECK((v >= 0 && v <= 1));
    }
}

TEST_CASE("generator training: initial loss near ln V and determinism") {
    const auto g = tiny();
    auto run = [&](std::size_t steps) {
        MvtmGenerator gen(g, 9);
        TokenCritic critic(g, 10);
        GeneratorTrainConfig tc;
        tc.steps = steps;
        tc.batch = 2;
        tc.warmup_steps = 1;
        tc.seed = 11;
        GeneratorTrainer tr(gen, critic, tc);
        Rng rng(12);
        std::vector<GeneratorStepRecord> out;
        for (std::size_t s = 0; s < steps; ++s) {
            std::vector<GeneratorSample> batch;
            for (int b = 0; b < 2; ++b) {
                batch.push_back({random_tokens(g, rng), patchify_ecg(normalize(checks::random_ecg(g, rng)), 20)});
            }
            out.push_back(tr.step(batch));
        }
        return out;
    };
    const auto a = run(4), b = run(4);
    REQUIRE(a.size() == 4);
    CHECK(std::abs(a[0].per_token - std::log(static_cast<double>(g.vocab))) < 0.2 * std::log(double(g.vocab)));
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(a[i].mvtm == b[i].mvtm);
        CHECK(a[i].critic == b[i].critic);
        CHECK(std::isfinite(a[i].mvtm));
        CHECK(GeneratorTrainer::csv_row(a[i]) == GeneratorTrainer::csv_row(b[i]));
    }
    CHECK(GeneratorTrainer::csv_header() == "step,mask_ratio,masked,mvtm,per_token,critic,lr");
}

TEST_CASE("generator checkpoints round trip, with and without EMA") {
    const auto g = tiny();
    MvtmGenerator gen(g, 13);
    TokenCritic critic(g, 14);
    GeneratorTrainConfig tc;
    tc.steps = 2;
    tc.batch = 1;
    tc.ema_every = 1;
    GeneratorTrainer tr(gen, critic, tc);
    Rng rng(15);
    for (int s = 0; s < 2; ++s) {
        std::vector<GeneratorSample> batch{
            {random_tokens(g, rng), patchify_ecg(normalize(checks::random_ecg(g, rng)), 20)}};
        tr.step(batch);
    }
    const auto dir = scratch("gen_ckpt");
    save_generator(dir / "with", gen, critic, &tr.ema(), 13, 2);
    save_generator(dir / "without", gen, critic, nullptr, 13, 2);

    NoGradGuard ng;
    std::vector<std::vector<std::uint32_t>> seq{random_tokens(g, rng)};
    const std::vector<Condition> null{gen.null_condition()};
    const auto want = gen.forward_logits(seq, null);
    auto live = load_generator(dir / "with", false);
    CHECK(live.step == 2);
    CHECK(live.seed == 13);
    CHECK(live.has_ema);
    const std::vector<Condition> ln{live.gen.null_condition()};
    CHECK(same(live.gen.forward_logits(seq, ln), want));
    CHECK(same(live.critic.forward(seq), critic.forward(seq)));
    auto ema = load_generator(dir / "with", true);
    const std::vector<Condition> en{ema.gen.null_condition()};
    CHECK_FALSE(same(ema.gen.forward_logits(seq, en), want));

    CHECK_FALSE(load_generator(dir / "without", false).has_ema);
    CHECK_THROWS_AS(load_generator(dir / "without", true), MissingArtifactError);
    CHECK_THROWS_AS(load_generator(dir / "nothing", false), Error);
}
