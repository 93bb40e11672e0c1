#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cardiogen/media.hpp"

namespace cardiogen {

double clip_mse(const VideoClip& a, const VideoClip& b);
double clip_mae(const VideoClip& a, const VideoClip& b);

struct SsimOptions {
    std::size_t window = 7;
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;
};

// Frames are [H, W, C]; channels are scored separately and averaged.
double ssim_frame(std::span<const float> a, std::span<const float> b, std::size_t height, std::size_t width,
                  std::size_t channels = 1, const SsimOptions& opt = {});
double ssim_clip(const VideoClip& a, const VideoClip& b, const SsimOptions& opt = {});

// 256-bin Otsu threshold on [0, 1] intensities; foreground is v > threshold.
double otsu_threshold(std::span<const float> values);
// Binary foreground mask of one single-channel frame.
using Segmenter = std::function<std::vector<std::uint8_t>(std::span<const float>, std::size_t, std::size_t)>;
std::vector<std::uint8_t> otsu_segment(std::span<const float> frame, std::size_t height, std::size_t width);
// Pixel count of the largest 4-connected foreground component.
std::size_t largest_component(std::span<const std::uint8_t> mask, std::size_t height, std::size_t width);

struct EfEstimate {
    double ef = 0;
    std::size_t ed_frame = 0;
    std::size_t es_frame = 0;
    std::vector<std::size_t> areas;
};

EfEstimate estimate_ef(const VideoClip& clip, const Segmenter& seg = otsu_segment);

// True when `frame` lies within `tolerance` frames of any reference frame.
bool within_frames(std::size_t frame, std::span<const std::size_t> reference, std::size_t tolerance = 1);

struct EfPair {
    std::string id;
    double estimated = 0;
    double reference = 0;
};

struct EfReport {
    std::vector<EfPair> rows;
    double r2 = 0;
    bool r2_defined = true;
    double mae = 0;
    double rmse = 0;
    // EF is a fraction in [0, 1], not percentage points.
    std::string unit = "fraction";
};

EfReport ef_agreement(std::span<const EfPair> pairs);

}  // namespace cardiogen
