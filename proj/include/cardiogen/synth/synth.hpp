#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cardiogen/ecg/ecg.hpp"
#include "cardiogen/media.hpp"

namespace cardiogen {

// One Gaussian bump of the phantom beat. offset is a fraction of the RR
// interval relative to the R peak; width is the std in seconds.
struct EcgWave {
    double amplitude = 0;
    double width_s = 0.01;
    double offset_frac = 0;
};

enum EcgWaveIndex { kWaveP = 0, kWaveQ, kWaveR, kWaveS, kWaveT };

struct SyntheticECGParams {
    double bpm = 75;
    double duration_s = 3.0;
    int sample_rate_hz = 100;
    // First R peak, as a fraction of one RR interval after t = 0.
    double first_r_frac = 0.5;
    std::array<EcgWave, 5> waves{{
        {0.15, 0.025, -0.20},
        {-0.10, 0.010, -0.04},
        {1.00, 0.012, 0.00},
        {-0.20, 0.010, 0.04},
        {0.35, 0.040, 0.25},
    }};
    double noise_std = 0.01;
    std::size_t leads = 1;

    double rr_s() const { return 60.0 / bpm; }
    void validate() const;
};

struct SyntheticECG {
    ECGSignal signal;
    std::vector<std::size_t> r_peaks;  // sample indices
    std::vector<std::size_t> t_peaks;
};

SyntheticECG gen_ecg(const SyntheticECGParams& params, std::uint64_t seed);
// Samples [begin, begin + length) with peak indices rebased and filtered.
SyntheticECG crop_ecg(const SyntheticECG& ecg, std::size_t begin, std::size_t length);

struct SyntheticHeartParams {
    // Disc centre in pixel coordinates; negative means the frame centre.
    double center_y = -1;
    double center_x = -1;
    double r_ed = 11;
    double r_es = 9;
    double edge_softness = 1.0;
    std::uint64_t texture_seed = 0;
    double contrast_jitter = 0.15;
    double background = 0.15;
    double texture_amplitude = 0.01;
    double disc_intensity = 0.8;
};

struct SyntheticVideo {
    VideoClip clip;
    double ef_truth = 0;
    double contrast = 1;
    std::vector<double> radii;  // per frame
};

// Disc radius at time t: cosine easing between r_ED at R peaks and r_ES at
// T peaks, held constant outside the first and last keypoint.
double disc_radius(const SyntheticECG& ecg, const SyntheticHeartParams& heart, double t);
double ef_from_radii(double r_ed, double r_es);

SyntheticVideo gen_video(const SyntheticECG& ecg, const SyntheticHeartParams& heart,
                         std::span<const double> frame_times_s, std::size_t height, std::size_t width);

struct DatasetRanges {
    double bpm_lo = 75, bpm_hi = 75;
    double ef_lo = 0.2, ef_hi = 0.6;
    double r_ed_lo = 10, r_ed_hi = 12;
    double noise_std = 0.01;
    // R amplitude = 1 + slope * (ef - ef_lo); 0 makes the ECG carry no EF
    // information.
    double r_amp_ef_slope = 2.5;
    double contrast_jitter = 0.15;
    std::size_t height = 32, width = 32;
    std::size_t frames = 5;
    // Frames sample one beat at quarter-RR steps starting from a random
    // quarter phase after an R peak.
    std::size_t phases = 4;
    std::size_t leads = 1;
    int sample_rate_hz = 100;

    void validate() const;
};

struct ManifestRow {
    std::string clip_id;
    std::uint64_t seed = 0;
    double bpm = 0;
    double r_ed = 0;
    double r_es = 0;
    double ef_truth = 0;
    std::string frames_dir;  // relative to the corpus root
    std::string ecg_path;
    std::size_t phase = 0;
    std::vector<std::size_t> r_frames;  // frames nearest an R peak
    std::vector<std::size_t> t_frames;
};

std::string manifest_header();
std::string manifest_line(const ManifestRow& row);
std::vector<ManifestRow> read_manifest(const fs::path& root);

struct CorpusSample {
    ManifestRow row;
    VideoClip clip;
    ECGSignal ecg;
};

// Builds one sample in memory; gen_dataset writes these to disk.
CorpusSample make_sample(const DatasetRanges& ranges, std::uint64_t corpus_seed, std::size_t index);
void gen_dataset(const fs::path& root, std::size_t n_clips, const DatasetRanges& ranges, std::uint64_t seed);
CorpusSample load_sample(const fs::path& root, const ManifestRow& row);

}  // namespace cardiogen
