#include "cardiogen/media.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cardiogen/numerics/io.hpp"

namespace cardiogen {

VideoClip VideoClip::slice(std::size_t begin, std::size_t end) const {
    if (begin >= end || end > frames) {
        throw ShapeError("clip slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") of a " +
                         std::to_string(frames) + "-frame clip");
    }
    VideoClip out(end - begin, height, width, channels);
    std::copy(pixels.begin() + static_cast<std::ptrdiff_t>(begin * frame_size()),
              pixels.begin() + static_cast<std::ptrdiff_t>(end * frame_size()), out.pixels.begin());
    return out;
}

void VideoClip::validate() const {
    if (frames == 0 || height == 0 || width == 0 || channels == 0 ||
        pixels.size() != frames * height * width * channels) {
        throw ShapeError("video clip extents " + std::to_string(frames) + "x" + std::to_string(height) + "x" +
                         std::to_string(width) + "x" + std::to_string(channels) + " do not match " +
                         std::to_string(pixels.size()) + " values");
    }
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const float v = pixels[i];
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
            throw NumericError("video clip value " + std::to_string(v) + " at frame " +
                               std::to_string(i / frame_size()) + " is outside [0, 1]");
        }
    }
}

void save_clip(const fs::path& path, const VideoClip& clip) {
    write_ept(path, {clip.frames, clip.height, clip.width, clip.channels}, std::span<const float>(clip.pixels));
}

VideoClip load_clip(const fs::path& path) {
    auto t = read_ept(path);
    if (t.shape.size() != 4) {
        throw IoError("'" + path.string() + "' is not a rank-4 clip tensor");
    }
    VideoClip clip(t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
    clip.pixels = t.as_f32();
    return clip;
}

void write_pgm(const fs::path& path, std::size_t height, std::size_t width, std::span<const float> values) {
    if (values.size() != height * width) {
        throw ShapeError("PGM frame has " + std::to_string(values.size()) + " values for " +
                         std::to_string(height) + "x" + std::to_string(width));
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    os << "P5\n" << width << " " << height << "\n255\n";
    std::vector<unsigned char> bytes(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const float v = std::clamp(values[i], 0.0f, 1.0f);
        bytes[i] = static_cast<unsigned char>(std::lround(255.0f * v));
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<float> read_pgm(const fs::path& path, std::size_t& height, std::size_t& width) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    auto token = [&]() {
        std::string tok;
        char ch;
        while (is.get(ch)) {
            if (ch == '#') {
                std::string skip;
                std::getline(is, skip);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(ch))) {
                if (!tok.empty()) {
                    break;
                }
                continue;
            }
            tok.push_back(ch);
        }
        return tok;
    };
    if (token() != "P5") {
        throw IoError("'" + path.string() + "' is not a binary PGM (P5)");
    }
    width = std::stoul(token());
    height = std::stoul(token());
    const auto maxval = std::stoul(token());
    if (maxval != 255) {
        throw IoError("'" + path.string() + "' has maxval " + std::to_string(maxval) + "; only 255 is supported");
    }
    std::vector<unsigned char> bytes(width * height);
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<std::size_t>(is.gcount()) != bytes.size()) {
        throw IoError("'" + path.string() + "' is truncated");
    }
    std::vector<float> out(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        out[i] = static_cast<float>(bytes[i]) / 255.0f;
    }
    return out;
}

namespace {

fs::path frame_path(const fs::path& dir, std::size_t f) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%03zu.pgm", f);
    return dir / name;
}

}  // namespace

void save_clip_pgm(const fs::path& dir, const VideoClip& clip) {
    if (clip.channels != 1) {
        throw ShapeError("PGM output needs a single-channel clip, got " + std::to_string(clip.channels));
    }
    fs::create_directories(dir);
    for (std::size_t f = 0; f < clip.frames; ++f) {
        write_pgm(frame_path(dir, f), clip.height, clip.width, clip.frame(f));
    }
}

VideoClip load_clip_pgm(const fs::path& dir) {
    std::vector<std::vector<float>> frames;
    std::size_t h = 0, w = 0;
    for (std::size_t f = 0;; ++f) {
        const auto p = frame_path(dir, f);
        if (!fs::exists(p)) {
            break;
        }
        std::size_t fh = 0, fw = 0;
        frames.push_back(read_pgm(p, fh, fw));
        if (f == 0) {
            h = fh;
            w = fw;
        } else if (fh != h || fw != w) {
            throw IoError("'" + p.string() + "' is " + std::to_string(fh) + "x" + std::to_string(fw) +
                          ", earlier frames are " + std::to_string(h) + "x" + std::to_string(w));
        }
    }
    if (frames.empty()) {
        throw MissingArtifactError("no frame_000.pgm in '" + dir.string() + "'");
    }
    VideoClip clip(frames.size(), h, w, 1);
    for (std::size_t f = 0; f < frames.size(); ++f) {
        std::copy(frames[f].begin(), frames[f].end(), clip.frame(f).begin());
    }
    return clip;
}

void save_tokens(const fs::path& path, const TokenGrid& grid) {
    std::vector<std::uint16_t> codes(grid.codes.size());
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (grid.codes[i] > 0xFFFF) {
            throw IoError("token code " + std::to_string(grid.codes[i]) + " does not fit in u16");
        }
        codes[i] = static_cast<std::uint16_t>(grid.codes[i]);
    }
    write_ept(path, {grid.t, grid.h, grid.w}, std::span<const std::uint16_t>(codes));
}

TokenGrid load_tokens(const fs::path& path) {
    auto t = read_ept(path);
    if (t.shape.size() != 3) {
        throw IoError("'" + path.string() + "' is not a rank-3 token grid");
    }
    TokenGrid g(t.shape[0], t.shape[1], t.shape[2]);
    auto codes = t.as_u16();
    std::copy(codes.begin(), codes.end(), g.codes.begin());
    return g;
}

}  // namespace cardiogen
