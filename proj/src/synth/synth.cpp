#include "cardiogen/synth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "cardiogen/numerics/io.hpp"
#include "cardiogen/numerics/rng.hpp"

namespace cardiogen {

void SyntheticECGParams::validate() const {
    if (!(bpm > 0) || sample_rate_hz <= 0 || leads == 0) {
        throw ConfigError("synthetic ECG needs bpm > 0, a positive sample rate and at least one lead");
    }
    if (noise_std < 0) {
        throw ConfigError("synthetic ECG noise_std must be non-negative");
    }
    if (duration_s < rr_s()) {
        throw ConfigError("synthetic ECG duration " + std::to_string(duration_s) + " s is shorter than one beat (" +
                          std::to_string(rr_s()) + " s)");
    }
    const double r = waves[kWaveR].amplitude;
    for (int w = 0; w < 5; ++w) {
        if (w != kWaveR && std::abs(waves[w].amplitude) >= r) {
            throw ConfigError("synthetic ECG R amplitude must exceed every other wave amplitude");
        }
        if (!(waves[w].width_s > 0)) {
            throw ConfigError("synthetic ECG wave widths must be positive");
        }
    }
    const double t = waves[kWaveT].offset_frac;
    if (!(t > 0 && t < 1)) {
        throw ConfigError("synthetic ECG T wave must follow R within the beat");
    }
    if (first_r_frac < 0 || first_r_frac >= 1) {
        throw ConfigError("first_r_frac must be in [0, 1)");
    }
}

SyntheticECG gen_ecg(const SyntheticECGParams& p, std::uint64_t seed) {
    p.validate();
    const double fs = p.sample_rate_hz, rr = p.rr_s();
    const auto n = static_cast<std::size_t>(std::llround(p.duration_s * fs));
    SyntheticECG out;
    out.signal = ECGSignal(p.leads, n, p.sample_rate_hz);
    // Beats are anchored on whole samples so the recorded R index is the
    // exact peak of its bump.
    const long t_shift = std::lround(p.waves[kWaveT].offset_frac * rr * fs);
    std::vector<long> beats;
    for (long k = -1;; ++k) {
        const long r = std::lround((p.first_r_frac + static_cast<double>(k)) * rr * fs);
        if (r >= static_cast<long>(n) + static_cast<long>(rr * fs)) {
            break;
        }
        beats.push_back(r);
        if (r >= 0 && r < static_cast<long>(n)) {
            out.r_peaks.push_back(static_cast<std::size_t>(r));
        }
        if (r + t_shift >= 0 && r + t_shift < static_cast<long>(n)) {
            out.t_peaks.push_back(static_cast<std::size_t>(r + t_shift));
        }
    }
    std::vector<double> clean(n, 0.0);
    for (long r : beats) {
        for (int w = 0; w < 5; ++w) {
            const auto& wave = p.waves[w];
            const double centre = w == kWaveT ? static_cast<double>(r + t_shift) / fs
                                              : static_cast<double>(r) / fs + wave.offset_frac * rr;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = (static_cast<double>(i) / fs - centre) / wave.width_s;
                if (std::abs(d) < 8) {
                    clean[i] += wave.amplitude * std::exp(-0.5 * d * d);
                }
            }
        }
    }
    Rng rng(seed);
    for (std::size_t l = 0; l < p.leads; ++l) {
        const double gain = 1.0 - 0.15 * static_cast<double>(l);
        for (std::size_t i = 0; i < n; ++i) {
            const double noise = p.noise_std > 0 ? p.noise_std * rng.normal() : 0.0;
            out.signal.at(l, i) = static_cast<float>(gain * clean[i] + noise);
        }
    }
    return out;
}

SyntheticECG crop_ecg(const SyntheticECG& ecg, std::size_t begin, std::size_t length) {
    const auto& s = ecg.signal;
    if (length == 0 || begin + length > s.length) {
        throw ShapeError("ECG crop [" + std::to_string(begin) + ", " + std::to_string(begin + length) +
                         ") of a " + std::to_string(s.length) + "-sample signal");
    }
    SyntheticECG out;
    out.signal = ECGSignal(s.leads, length, s.sample_rate_hz);
    out.signal.lead_names = s.lead_names;
    for (std::size_t l = 0; l < s.leads; ++l) {
        for (std::size_t i = 0; i < length; ++i) {
            out.signal.at(l, i) = s.at(l, begin + i);
        }
    }
    for (auto r : ecg.r_peaks) {
        if (r >= begin && r < begin + length) {
            out.r_peaks.push_back(r - begin);
        }
    }
    for (auto t : ecg.t_peaks) {
        if (t >= begin && t < begin + length) {
            out.t_peaks.push_back(t - begin);
        }
    }
    return out;
}

double ef_from_radii(double r_ed, double r_es) { return 1.0 - (r_es / r_ed) * (r_es / r_ed); }

double disc_radius(const SyntheticECG& ecg, const SyntheticHeartParams& heart, double t) {
    const double fs = ecg.signal.sample_rate_hz;
    std::vector<std::pair<double, double>> keys;
    for (auto r : ecg.r_peaks) {
        keys.emplace_back(static_cast<double>(r) / fs, heart.r_ed);
    }
    for (auto s : ecg.t_peaks) {
        keys.emplace_back(static_cast<double>(s) / fs, heart.r_es);
    }
    if (keys.empty()) {
        throw ConfigError("ECG has no R or T peaks to drive the disc");
    }
    std::sort(keys.begin(), keys.end());
    if (t <= keys.front().first) {
        return keys.front().second;
    }
    for (std::size_t k = 0; k + 1 < keys.size(); ++k) {
        const auto [t0, r0] = keys[k];
        const auto [t1, r1] = keys[k + 1];
        if (t <= t1) {
            const double u = (t - t0) / (t1 - t0);
            return r0 + (r1 - r0) * 0.5 * (1.0 - std::cos(M_PI * u));
        }
    }
    return keys.back().second;
}

SyntheticVideo gen_video(const SyntheticECG& ecg, const SyntheticHeartParams& heart,
                         std::span<const double> frame_times_s, std::size_t height, std::size_t width) {
    if (frame_times_s.empty() || height == 0 || width == 0) {
        throw ConfigError("gen_video needs at least one frame and a non-empty frame size");
    }
    if (!(heart.r_es > 0 && heart.r_es <= heart.r_ed &&
          heart.r_ed < 0.5 * static_cast<double>(std::min(height, width)))) {
        throw ConfigError("heart radii need 0 < r_ES <= r_ED < min(H, W) / 2, got r_ED=" +
                          std::to_string(heart.r_ed) + " r_ES=" + std::to_string(heart.r_es));
    }
    if (!(heart.edge_softness > 0) || heart.contrast_jitter < 0 || heart.contrast_jitter >= 1) {
        throw ConfigError("edge_softness must be positive and contrast_jitter in [0, 1)");
    }
    const double duration = static_cast<double>(ecg.signal.length) / ecg.signal.sample_rate_hz;
    for (double t : frame_times_s) {
        if (t < 0 || t >= duration) {
            throw ConfigError("frame time " + std::to_string(t) + " s is outside the ECG duration " +
                              std::to_string(duration) + " s");
        }
    }
    const double cy = heart.center_y < 0 ? 0.5 * static_cast<double>(height) : heart.center_y;
    const double cx = heart.center_x < 0 ? 0.5 * static_cast<double>(width) : heart.center_x;
    const double reach = heart.r_ed + 0.5 * heart.edge_softness;
    if (cy - reach < 0 || cx - reach < 0 || cy + reach > static_cast<double>(height) ||
        cx + reach > static_cast<double>(width)) {
        throw ConfigError("disc of radius " + std::to_string(heart.r_ed) + " at (" + std::to_string(cy) + ", " +
                          std::to_string(cx) + ") exceeds the " + std::to_string(height) + "x" +
                          std::to_string(width) + " frame");
    }

    Rng rng(heart.texture_seed);
    SyntheticVideo out;
    out.contrast = 1.0 + heart.contrast_jitter * (2.0 * rng.uniform() - 1.0);
    // Static low-frequency texture: three random plane waves.
    struct Wave {
        double fy, fx, phase;
    };
    std::array<Wave, 3> waves{};
    for (auto& w : waves) {
        w.fy = static_cast<double>(1 + rng.below(3));
        w.fx = static_cast<double>(1 + rng.below(3));
        w.phase = 2 * M_PI * rng.uniform();
    }
    std::vector<double> bg(height * width);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            double v = heart.background;
            for (const auto& w : waves) {
                v += heart.texture_amplitude *
                     std::cos(2 * M_PI * (w.fy * static_cast<double>(y) / static_cast<double>(height) +
                                          w.fx * static_cast<double>(x) / static_cast<double>(width)) +
                              w.phase);
            }
            bg[y * width + x] = v;
        }
    }

    out.clip = VideoClip(frame_times_s.size(), height, width, 1);
    for (std::size_t f = 0; f < frame_times_s.size(); ++f) {
        const double r = disc_radius(ecg, heart, frame_times_s[f]);
        out.radii.push_back(r);
        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
                const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
                const double cover = std::clamp((r - std::sqrt(dy * dy + dx * dx)) / heart.edge_softness + 0.5, 0.0, 1.0);
                const double b = bg[y * width + x];
                const double v = b + cover * out.contrast * (heart.disc_intensity - b);
                out.clip.at(f, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    out.ef_truth = ef_from_radii(heart.r_ed, heart.r_es);
    return out;
}

void DatasetRanges::validate() const {
    auto range = [](double lo, double hi, const char* name) {
        if (!(lo <= hi)) {
            throw ConfigError(std::string("dataset range ") + name + " has lo > hi");
        }
    };
    range(bpm_lo, bpm_hi, "bpm");
    range(ef_lo, ef_hi, "ef");
    range(r_ed_lo, r_ed_hi, "r_ed");
    if (!(bpm_lo > 0) || !(ef_lo >= 0) || !(ef_hi < 1) || !(r_ed_lo > 0)) {
        throw ConfigError("dataset ranges need bpm > 0, 0 <= ef < 1 and r_ed > 0");
    }
    if (frames == 0 || phases == 0 || height == 0 || width == 0 || leads == 0 || sample_rate_hz <= 0) {
        throw ConfigError("dataset extents must be positive");
    }
    if (r_ed_hi + 1 >= 0.5 * static_cast<double>(std::min(height, width))) {
        throw ConfigError("r_ed range does not fit inside the frame");
    }
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        s += (i ? ";" : "") + std::to_string(v[i]);
    }
    return s;
}

std::vector<std::size_t> split_indices(const std::string& s) {
    std::vector<std::size_t> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ';')) {
        if (!tok.empty()) {
            out.push_back(std::stoul(tok));
        }
    }
    return out;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string clip_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "clip_%05zu", index);
    return buf;
}

// Frame index nearest to a sample, or npos when it lies outside the clip.
std::size_t frame_of(std::size_t sample, std::size_t spf, std::size_t frames) {
    const double f = (static_cast<double>(sample) - 0.5 * static_cast<double>(spf)) / static_cast<double>(spf);
    const long k = std::lround(f);
    if (k < 0 || k >= static_cast<long>(frames) || std::abs(f - static_cast<double>(k)) > 0.5) {
        return static_cast<std::size_t>(-1);
    }
    return static_cast<std::size_t>(k);
}

}  // namespace

std::string manifest_header() {
    return "clip_id,seed,bpm,r_ed,r_es,ef_truth,frames_dir,ecg_path,phase,r_frames,t_frames";
}

std::string manifest_line(const ManifestRow& r) {
    return r.clip_id + "," + std::to_string(r.seed) + "," + fmt(r.bpm) + "," + fmt(r.r_ed) + "," + fmt(r.r_es) +
           "," + fmt(r.ef_truth) + "," + r.frames_dir + "," + r.ecg_path + "," + std::to_string(r.phase) + "," +
           join(r.r_frames) + "," + join(r.t_frames);
}

std::vector<ManifestRow> read_manifest(const fs::path& root) {
    const auto path = root / "manifest.csv";
    if (!fs::exists(path)) {
        throw MissingArtifactError("corpus manifest not found: '" + path.string() + "'");
    }
    std::istringstream is(read_text_file(path));
    std::string line;
    std::getline(is, line);
    if (line != manifest_header()) {
        throw IoError("'" + path.string() + "' has an unexpected header: " + line);
    }
    std::vector<ManifestRow> rows;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            cells.push_back(cell);
        }
        if (!line.empty() && line.back() == ',') {
            cells.emplace_back();
        }
        if (cells.size() != 11) {
            throw IoError("'" + path.string() + "' line " + std::to_string(lineno) + " has " +
                          std::to_string(cells.size()) + " fields, expected 11");
        }
        ManifestRow r;
        try {
            r.clip_id = cells[0];
            r.seed = std::stoull(cells[1]);
            r.bpm = std::stod(cells[2]);
            r.r_ed = std::stod(cells[3]);
            r.r_es = std::stod(cells[4]);
            r.ef_truth = std::stod(cells[5]);
            r.frames_dir = cells[6];
            r.ecg_path = cells[7];
            r.phase = std::stoul(cells[8]);
            r.r_frames = split_indices(cells[9]);
            r.t_frames = split_indices(cells[10]);
        } catch (const std::logic_error&) {
            throw IoError("'" + path.string() + "' line " + std::to_string(lineno) + " is malformed");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

CorpusSample make_sample(const DatasetRanges& ranges, std::uint64_t corpus_seed, std::size_t index) {
    ranges.validate();
    const std::uint64_t seed = mix_seed(corpus_seed, index);
    Rng rng(seed);
    const double bpm = rng.uniform(ranges.bpm_lo, ranges.bpm_hi);
    const double ef = rng.uniform(ranges.ef_lo, ranges.ef_hi);
    const double r_ed = rng.uniform(ranges.r_ed_lo, ranges.r_ed_hi);
    const std::size_t phase = static_cast<std::size_t>(rng.below(ranges.phases));
    const std::uint64_t ecg_seed = rng.next_u64(), texture_seed = rng.next_u64();

    SyntheticECGParams ep;
    ep.bpm = bpm;
    ep.sample_rate_hz = ranges.sample_rate_hz;
    ep.noise_std = ranges.noise_std;
    ep.leads = ranges.leads;
    ep.waves[kWaveR].amplitude = 1.0 + ranges.r_amp_ef_slope * (ef - ranges.ef_lo);
    const double rr = ep.rr_s(), fs = ranges.sample_rate_hz;
    const auto spf = static_cast<std::size_t>(std::max<long>(1, std::lround(rr * fs / 4.0)));
    ep.duration_s = ep.first_r_frac * rr + rr * (2.0 + static_cast<double>(ranges.phases + ranges.frames) / 4.0);
    const SyntheticECG full = gen_ecg(ep, ecg_seed);

    // The clip starts `phase` quarter beats after the second R peak; ECG
    // patch f is centred on frame f.
    const std::size_t r1 = full.r_peaks.at(1);
    const std::size_t first_frame = r1 + phase * spf;
    const std::size_t window_begin = first_frame - spf / 2;
    std::vector<double> times;
    for (std::size_t f = 0; f < ranges.frames; ++f) {
        times.push_back(static_cast<double>(first_frame + f * spf) / fs);
    }
    SyntheticHeartParams heart;
    heart.r_ed = r_ed;
    heart.r_es = r_ed * std::sqrt(1.0 - ef);
    heart.texture_seed = texture_seed;
    heart.contrast_jitter = ranges.contrast_jitter;
    SyntheticVideo video = gen_video(full, heart, times, ranges.height, ranges.width);
    SyntheticECG window = crop_ecg(full, window_begin, ranges.frames * spf);

    CorpusSample s;
    s.row.clip_id = clip_name(index);
    s.row.seed = seed;
    s.row.bpm = bpm;
    s.row.r_ed = heart.r_ed;
    s.row.r_es = heart.r_es;
    s.row.ef_truth = ef_from_radii(heart.r_ed, heart.r_es);
    s.row.frames_dir = "clips/" + s.row.clip_id + "/frames";
    s.row.ecg_path = "clips/" + s.row.clip_id + "/ecg.ept";
    s.row.phase = phase;
    for (auto r : window.r_peaks) {
        if (auto f = frame_of(r, spf, ranges.frames); f != static_cast<std::size_t>(-1)) {
            s.row.r_frames.push_back(f);
        }
    }
    for (auto t : window.t_peaks) {
        if (auto f = frame_of(t, spf, ranges.frames); f != static_cast<std::size_t>(-1)) {
            s.row.t_frames.push_back(f);
        }
    }
    s.clip = std::move(video.clip);
    s.ecg = std::move(window.signal);
    return s;
}

void gen_dataset(const fs::path& root, std::size_t n_clips, const DatasetRanges& ranges, std::uint64_t seed) {
    if (n_clips == 0) {
        throw ConfigError("gen_dataset needs at least one clip");
    }
    ranges.validate();
    std::error_code ec;
    fs::create_directories(root / "clips", ec);
    if (ec) {
        throw IoError("cannot create corpus directory '" + (root / "clips").string() + "': " + ec.message());
    }
    std::string manifest = manifest_header() + "\n";
    for (std::size_t i = 0; i < n_clips; ++i) {
        CorpusSample s = make_sample(ranges, seed, i);
        save_clip_pgm(root / s.row.frames_dir, s.clip);
        save_ecg(root / s.row.ecg_path, s.ecg);
        manifest += manifest_line(s.row) + "\n";
    }
    write_text_file(root / "manifest.csv", manifest);
}

CorpusSample load_sample(const fs::path& root, const ManifestRow& row) {
    CorpusSample s;
    s.row = row;
    s.clip = load_clip_pgm(root / row.frames_dir);
    s.ecg = load_ecg(root / row.ecg_path);
    return s;
}

}  // namespace cardiogen
