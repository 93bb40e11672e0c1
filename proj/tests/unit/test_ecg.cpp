#include <doctest.h>

#include <cmath>

#include "cardiogen/ecg/ecg.hpp"
#include "cardiogen/numerics/io.hpp"

using namespace cardiogen;

namespace {

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("cardiogen_unit_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ECGSignal ramp(std::size_t leads, std::size_t t) {
    ECGSignal s(leads, t, 100);
    for (std::size_t i = 0; i < s.samples.size(); ++i) {
        s.samples[i] = static_cast<float>(i) * 0.25f - 3.0f;
    }
    return s;
}

void zero(Tensor t) {
    auto d = t.mutable_data();
    std::fill(d.begin(), d.end(), Real(0));
}

}  // namespace

TEST_CASE("normalize examples") {
    ECGSignal c(1, 10, 100);
    std::fill(c.samples.begin(), c.samples.end(), 3.0f);
    for (float v : normalize(c).samples) {
        CHECK(v == 0.0f);
    }
    ECGSignal pm(1, 2, 100);
    pm.samples = {-1.0f, 1.0f};
    const auto n = normalize(pm);
    CHECK(n.samples[0] == doctest::Approx(-1));
    CHECK(n.samples[1] == doctest::Approx(1));

    Rng rng(1);
    ECGSignal r(2, 300, 250);
    for (auto& v : r.samples) {
        v = static_cast<float>(5 + 2 * rng.normal());
    }
    const auto z = normalize(r);
    for (std::size_t l = 0; l < 2; ++l) {
        double m = 0, s = 0;
        for (std::size_t i = 0; i < 300; ++i) {
            m += z.at(l, i);
        }
        m /= 300;
        for (std::size_t i = 0; i < 300; ++i) {
            s += (z.at(l, i) - m) * (z.at(l, i) - m);
        }
        CHECK(std::abs(m) < 1e-5);
        CHECK(std::sqrt(s / 300) == doctest::Approx(1).epsilon(1e-4));
    }
    // Idempotent within 1e-5 relative.
    const auto zz = normalize(z);
    for (std::size_t i = 0; i < z.samples.size(); ++i) {
        CHECK(zz.samples[i] == doctest::Approx(z.samples[i]).epsilon(1e-5));
    }
}

TEST_CASE("normalize rejects short or non-finite signals, naming the position") {
    CHECK_THROWS_AS(normalize(ECGSignal(1, 1, 100)), ShapeError);
    ECGSignal bad(2, 5, 100);
    bad.at(1, 3) = NAN;
    try {
        normalize(bad);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("3") != std::string::npos);
    }
}

TEST_CASE("patchify counts and padding") {
    CHECK(patchify_ecg(ramp(1, 768), 64).count == 12);
    const auto p = patchify_ecg(ramp(1, 100), 64);
    CHECK(p.count == 2);
    CHECK(p.valid == std::vector<std::uint8_t>{1, 0});
    for (std::size_t k = 36; k < 64; ++k) {
        CHECK(p.values[64 + k] == 0);
    }
    CHECK_THROWS_AS(patchify_ecg(ramp(1, 10), 11), ConfigError);
    CHECK_THROWS_AS(patchify_ecg(ramp(1, 10), 0), ConfigError);
}

TEST_CASE("patch count is ceil(T / p) and unpadded patches rebuild the signal") {
    Rng rng(2);
    for (int i = 0; i < 50; ++i) {
        const std::size_t t = 1 + rng.below(200), p = 1 + rng.below(t), leads = 1 + rng.below(3);
        const auto sig = ramp(leads, t);
        const auto ps = patchify_ecg(sig, p);
        CHECK(ps.count == (t + p - 1) / p);
        bool same = true;
        for (std::size_t l = 0; l < leads; ++l) {
            for (std::size_t k = 0; k < t; ++k) {
                same = same && ps.values[(l * ps.count + k / p) * p + k % p] == sig.at(l, k);
            }
        }
        CHECK(same);
    }
}

TEST_CASE("embedder examples") {
    ParamStore ps;
    Rng rng(3);
    EcgEmbedder emb(ps, "ecg", 4, 6, 5, 2, rng);
    auto patches = patchify_ecg(ramp(2, 12), 4);

    // Zero weights, zero patches: position plus lead embeddings alone.
    {
        ParamStore ps0;
        Rng r0(3);
        EcgEmbedder e0(ps0, "ecg", 4, 6, 5, 2, r0);
        zero(ps0.get("ecg.proj.weight"));
        zero(ps0.get("ecg.proj.bias"));
        auto zp = patches;
        std::fill(zp.values.begin(), zp.values.end(), Real(0));
        const auto out = e0.embed(zp);
        const auto& pos = ps0.get("ecg.pos");
        const auto& lead = ps0.get("ecg.lead");
        for (std::size_t l = 0; l < 2; ++l) {
            for (std::size_t n = 0; n < 3; ++n) {
                for (std::size_t d = 0; d < 6; ++d) {
                    CHECK(out.data()[(l * 3 + n) * 6 + d] ==
                          doctest::Approx(pos.data()[n * 6 + d] + lead.data()[l * 6 + d]));
                }
            }
        }
    }
    // Identical patches at positions 0 and 2 differ by the position difference.
    auto same = patches;
    for (std::size_t k = 0; k < 4; ++k) {
        same.values[2 * 4 + k] = same.values[k];
    }
    const auto out = emb.embed(same);
    const auto& pos = ps.get("ecg.pos");
    for (std::size_t d = 0; d < 6; ++d) {
        CHECK(out.data()[2 * 6 + d] - out.data()[d] ==
              doctest::Approx(pos.data()[2 * 6 + d] - pos.data()[d]).epsilon(1e-5));
    }
    // Determinism.
    ParamStore ps2;
    Rng rng2(3);
    EcgEmbedder emb2(ps2, "ecg", 4, 6, 5, 2, rng2);
    const auto a = emb.embed(patches), b = emb2.embed(patches);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));

    CHECK_THROWS_AS(emb.embed(patchify_ecg(ramp(1, 12), 3)), ShapeError);
    CHECK_THROWS_AS(emb.embed(patchify_ecg(ramp(1, 40), 4)), ShapeError);  // 10 patches > 5
    CHECK_THROWS_AS(emb.embed(patchify_ecg(ramp(3, 12), 4)), ShapeError);  // 3 leads > 2
}

TEST_CASE("ECG files round trip with the sidecar manifest") {
    const auto dir = scratch("ecg_io");
    ECGSignal s = ramp(2, 7);
    s.sample_rate_hz = 250;
    s.lead_names = {"I", "II"};
    save_ecg(dir / "x.ept", s);
    CHECK(read_text_file(dir / "x.manifest").find("sample_rate_hz=250;leads=I,II") != std::string::npos);
    const auto back = load_ecg(dir / "x.ept");
    CHECK(back.samples == s.samples);
    CHECK(back.lead_names == s.lead_names);
    CHECK(back.sample_rate_hz == 250);
    fs::remove(dir / "x.manifest");
    CHECK_THROWS_AS(load_ecg(dir / "x.ept"), MissingArtifactError);
}

TEST_CASE("CSV import, with and without a header") {
    const auto dir = scratch("ecg_csv");
    write_text_file(dir / "h.csv", "I,II\n0.1,1\n0.2,2\n0.3,3\n");
    const auto h = import_ecg_csv(dir / "h.csv", 500);
    CHECK(h.leads == 2);
    CHECK(h.length == 3);
    CHECK(h.lead_names == std::vector<std::string>{"I", "II"});
    CHECK(h.at(1, 2) == doctest::Approx(3));
    write_text_file(dir / "n.csv", "0.5\n-0.5\n");
    const auto n = import_ecg_csv(dir / "n.csv", 100);
    CHECK(n.leads == 1);
    CHECK(n.at(0, 1) == doctest::Approx(-0.5));
    write_text_file(dir / "bad.csv", "1,2\n3\n");
    try {
        import_ecg_csv(dir / "bad.csv", 100);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("row") != std::string::npos);
    }
}
