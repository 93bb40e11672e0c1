#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cardiogen/error.hpp"

namespace cardiogen {

namespace fs = std::filesystem;

// Dense (T+1) x H x W x C frame tensor with intensities in [0, 1].
struct VideoClip {
    std::size_t frames = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;
    std::vector<float> pixels;

    VideoClip() = default;
    VideoClip(std::size_t t, std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
        : frames(t), height(h), width(w), channels(c), pixels(t * h * w * c, fill) {}

    std::size_t frame_size() const { return height * width * channels; }
    std::size_t index(std::size_t f, std::size_t y, std::size_t x, std::size_t c = 0) const {
        return ((f * height + y) * width + x) * channels + c;
    }
    float& at(std::size_t f, std::size_t y, std::size_t x, std::size_t c = 0) { return pixels[index(f, y, x, c)]; }
    float at(std::size_t f, std::size_t y, std::size_t x, std::size_t c = 0) const {
        return pixels[index(f, y, x, c)];
    }
    std::span<const float> frame(std::size_t f) const {
        return std::span<const float>(pixels).subspan(f * frame_size(), frame_size());
    }
    std::span<float> frame(std::size_t f) { return std::span<float>(pixels).subspan(f * frame_size(), frame_size()); }

    // Frames [begin, end) as a new clip.
    VideoClip slice(std::size_t begin, std::size_t end) const;

    // Throws ShapeError on inconsistent extents and NumericError on values that
    // are non-finite or outside [0, 1].
    void validate() const;
};

// Discrete codes laid out (T'+1) x H' x W'.
struct TokenGrid {
    std::size_t t = 0;
    std::size_t h = 0;
    std::size_t w = 0;
    std::vector<std::uint32_t> codes;

    TokenGrid() = default;
    TokenGrid(std::size_t t_, std::size_t h_, std::size_t w_) : t(t_), h(h_), w(w_), codes(t_ * h_ * w_, 0) {}
    std::size_t size() const { return codes.size(); }
    std::size_t sites() const { return h * w; }
    bool operator==(const TokenGrid& o) const = default;
};

// Clips as EPTENSR1 f32 [T+1, H, W, C].
void save_clip(const fs::path& path, const VideoClip& clip);
VideoClip load_clip(const fs::path& path);

// Clips as a directory of P5 PGM frames frame_000.pgm, ..., stored as
// round(255 v). Single channel only.
void save_clip_pgm(const fs::path& dir, const VideoClip& clip);
VideoClip load_clip_pgm(const fs::path& dir);
void write_pgm(const fs::path& path, std::size_t height, std::size_t width, std::span<const float> values);
std::vector<float> read_pgm(const fs::path& path, std::size_t& height, std::size_t& width);

// Token grids as EPTENSR1 u16 [T'+1, H', W'].
void save_tokens(const fs::path& path, const TokenGrid& grid);
TokenGrid load_tokens(const fs::path& path);

}  // namespace cardiogen
