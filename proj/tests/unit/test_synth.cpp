#include <doctest.h>

#include <chrono>
#include <cmath>
#include <map>

#include "cardiogen/eval/eval.hpp"
#include "cardiogen/numerics/io.hpp"
#include "cardiogen/synth/synth.hpp"

using namespace cardiogen;

namespace {

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("cardiogen_unit_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Pixels brighter than halfway between background and disc.
std::size_t disc_area(const VideoClip& clip, std::size_t f) {
    std::size_t n = 0;
    for (float v : clip.frame(f)) {
        n += v > 0.475f ? 1 : 0;
    }
    return n;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) {
            out[fs::relative(e.path(), root).string()] = read_text_file(e.path());
        }
    }
    return out;
}

}  // namespace

TEST_CASE("ECG phantom: peak count, length and validation") {
    SyntheticECGParams p;
    p.bpm = 60;
    p.duration_s = 10;
    p.sample_rate_hz = 100;
    const auto e = gen_ecg(p, 1);
    CHECK(e.signal.length == 1000);
    CHECK(e.r_peaks.size() == 10);

    p.duration_s = 0.5;
    CHECK_THROWS_AS(gen_ecg(p, 1), ConfigError);
    p = {};
    p.bpm = 0;
    CHECK_THROWS_AS(gen_ecg(p, 1), ConfigError);
    p = {};
    p.waves[kWaveT].amplitude = 1.5;
    CHECK_THROWS_AS(gen_ecg(p, 1), ConfigError);
}

TEST_CASE("noise-free ECG is periodic and peaks at the recorded R indices") {
    SyntheticECGParams p;
    p.bpm = 60;
    p.duration_s = 6;
    p.noise_std = 0;
    const auto e = gen_ecg(p, 2);
    const std::size_t period = 100;
    for (std::size_t i = 0; i + period < e.signal.length; ++i) {
        REQUIRE(std::abs(e.signal.at(0, i) - e.signal.at(0, i + period)) < 1e-6);
    }

    SyntheticECGParams q;
    q.bpm = 72;
    q.duration_s = 8;
    q.noise_std = 0.01;
    const auto n = gen_ecg(q, 3);
    const auto half = static_cast<long>(0.5 * q.rr_s() * q.sample_rate_hz);
    for (auto r : n.r_peaks) {
        const long lo = std::max<long>(0, static_cast<long>(r) - half);
        const long hi = std::min<long>(static_cast<long>(n.signal.length), static_cast<long>(r) + half);
        long best = lo;
        for (long i = lo; i < hi; ++i) {
            if (n.signal.at(0, i) > n.signal.at(0, best)) {
                best = i;
            }
        }
        CHECK(best == static_cast<long>(r));
    }
    // T follows each R within the same beat.
    for (auto t : n.t_peaks) {
        bool after = false;
        for (auto r : n.r_peaks) {
            after = after || (t > r && static_cast<long>(t - r) < 2 * half);
        }
        CHECK((after || t < n.r_peaks.front()));
    }
}

TEST_CASE("disc video: analytic EF, degenerate motion, bounds") {
    CHECK(ef_from_radii(10, 8) == doctest::Approx(0.36));
    CHECK(ef_from_radii(10, 10) == 0);

    SyntheticECGParams p;
    p.bpm = 60;
    p.duration_s = 3;
    const auto e = gen_ecg(p, 4);
    SyntheticHeartParams h;
    h.r_ed = 10;
    h.r_es = 10;
    const std::vector<double> times{0.1, 0.5, 0.9, 1.3, 1.7};
    const auto flat = gen_video(e, h, times, 32, 32);
    CHECK(flat.ef_truth == 0);
    for (std::size_t f = 1; f < 5; ++f) {
        CHECK(std::equal(flat.clip.frame(f).begin(), flat.clip.frame(f).end(), flat.clip.frame(0).begin()));
    }

    h.r_es = 8;
    CHECK(gen_video(e, h, times, 32, 32).ef_truth == doctest::Approx(0.36));
    h.r_ed = 15.8;
    CHECK_THROWS_AS(gen_video(e, h, times, 32, 32), ConfigError);
    h.r_ed = 10;
    h.center_x = 4;
    CHECK_THROWS_AS(gen_video(e, h, times, 32, 32), ConfigError);
    h.center_x = -1;
    const std::vector<double> late{5.0};
    CHECK_THROWS_AS(gen_video(e, h, late, 32, 32), ConfigError);
}

TEST_CASE("frames at R peaks carry the largest disc area") {
    SyntheticECGParams p;
    p.bpm = 60;
    p.duration_s = 4;
    const auto e = gen_ecg(p, 5);
    SyntheticHeartParams h;
    h.r_ed = 11;
    h.r_es = 8;
    h.texture_seed = 9;
    std::vector<double> times;
    for (int i = 0; i < 36; ++i) {
        times.push_back(0.1 * i);
    }
    for (auto r : e.r_peaks) {
        times.push_back(static_cast<double>(r) / p.sample_rate_hz);
    }
    const auto v = gen_video(e, h, times, 32, 32);
    std::size_t best = 0;
    for (std::size_t f = 0; f < v.clip.frames; ++f) {
        best = std::max(best, disc_area(v.clip, f));
    }
    for (std::size_t k = 36; k < times.size(); ++k) {
        CHECK(disc_area(v.clip, k) == best);
        CHECK(v.radii[k] == doctest::Approx(11));
    }
}

TEST_CASE("corpus samples: phase lock, pixel range, EF consistency") {
    DatasetRanges ranges;
    std::size_t ed_locked = 0, es_locked = 0;
    const std::size_t n = 60;
    for (std::size_t i = 0; i < n; ++i) {
        const auto s = make_sample(ranges, 11, i);
        REQUIRE(s.clip.frames == ranges.frames);
        for (float v : s.clip.pixels) {
            REQUIRE((v >= 0.0f && v <= 1.0f));
        }
        CHECK(s.row.ef_truth == doctest::Approx(ef_from_radii(s.row.r_ed, s.row.r_es)));
        CHECK((s.row.ef_truth > 0 && s.row.ef_truth < 1));
        CHECK(s.ecg.length == ranges.frames * 20);
        const auto est = estimate_ef(s.clip);
        ed_locked += within_frames(est.ed_frame, s.row.r_frames) ? 1 : 0;
        es_locked += within_frames(est.es_frame, s.row.t_frames) ? 1 : 0;
    }
    CHECK(ed_locked == n);
    CHECK(es_locked == n);
}

TEST_CASE("corpus generation is deterministic, consistent and within budget") {
    const auto a = scratch("corpus_a"), b = scratch("corpus_b");
    DatasetRanges ranges;
    const auto t0 = std::chrono::steady_clock::now();
    gen_dataset(a, 200, ranges, 42);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(seconds < 60);
    gen_dataset(b, 200, ranges, 42);
    const auto ta = tree_bytes(a), tb = tree_bytes(b);
    CHECK(ta == tb);
    std::size_t bytes = 0;
    for (const auto& [k, v] : ta) {
        bytes += v.size();
    }
    CHECK(bytes < 100u * 1024 * 1024);

    const auto rows = read_manifest(a);
    REQUIRE(rows.size() == 200);
    for (const auto& r : rows) {
        CHECK(r.ef_truth == doctest::Approx(1 - (r.r_es / r.r_ed) * (r.r_es / r.r_ed)).epsilon(1e-6));
    }
    const auto s = load_sample(a, rows[3]);
    const auto m = make_sample(ranges, 42, 3);
    CHECK(s.ecg.samples == m.ecg.samples);
    CHECK(clip_mae(s.clip, m.clip) < 1.0 / 255);

    CHECK_THROWS_AS(read_manifest(a / "nowhere"), Error);
    CHECK_THROWS_AS(gen_dataset(a, 0, ranges, 1), ConfigError);
    ranges.ef_lo = 0.7;
    CHECK_THROWS_AS(gen_dataset(a, 1, ranges, 1), ConfigError);
}
