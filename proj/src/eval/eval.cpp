#include "cardiogen/eval/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace cardiogen {

namespace {

void require_same(const VideoClip& a, const VideoClip& b, const char* what) {
    if (a.frames != b.frames || a.height != b.height || a.width != b.width || a.channels != b.channels ||
        a.pixels.size() != b.pixels.size()) {
        throw ShapeError(std::string(what) + ": clips " + std::to_string(a.frames) + "x" + std::to_string(a.height) +
                         "x" + std::to_string(a.width) + "x" + std::to_string(a.channels) + " and " +
                         std::to_string(b.frames) + "x" + std::to_string(b.height) + "x" + std::to_string(b.width) +
                         "x" + std::to_string(b.channels) + " differ");
    }
}

}  // namespace

double clip_mse(const VideoClip& a, const VideoClip& b) {
    require_same(a, b, "mse");
    double s = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
        s += d * d;
    }
    return s / static_cast<double>(a.pixels.size());
}

double clip_mae(const VideoClip& a, const VideoClip& b) {
    require_same(a, b, "mae");
    double s = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        s += std::abs(static_cast<double>(a.pixels[i]) - b.pixels[i]);
    }
    return s / static_cast<double>(a.pixels.size());
}

double ssim_frame(std::span<const float> a, std::span<const float> b, std::size_t height, std::size_t width,
                  std::size_t channels, const SsimOptions& opt) {
    const std::size_t w = opt.window;
    if (w == 0 || w % 2 == 0) {
        throw ConfigError("SSIM window must be odd, got " + std::to_string(w));
    }
    if (a.size() != height * width * channels || b.size() != a.size()) {
        throw ShapeError("SSIM frames must both hold " + std::to_string(height * width * channels) + " values");
    }
    if (height < w || width < w) {
        throw ShapeError("frame " + std::to_string(height) + "x" + std::to_string(width) + " is smaller than the " +
                         std::to_string(w) + "x" + std::to_string(w) + " SSIM window");
    }
    const double n = static_cast<double>(w * w);
    double total = 0;
    std::size_t count = 0;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t y0 = 0; y0 + w <= height; ++y0) {
            for (std::size_t x0 = 0; x0 + w <= width; ++x0) {
                double sa = 0, sb = 0;
                for (std::size_t y = y0; y < y0 + w; ++y) {
                    for (std::size_t x = x0; x < x0 + w; ++x) {
                        sa += a[(y * width + x) * channels + c];
                        sb += b[(y * width + x) * channels + c];
                    }
                }
                const double ma = sa / n, mb = sb / n;
                double va = 0, vb = 0, cov = 0;
                for (std::size_t y = y0; y < y0 + w; ++y) {
                    for (std::size_t x = x0; x < x0 + w; ++x) {
                        const double da = a[(y * width + x) * channels + c] - ma;
                        const double db = b[(y * width + x) * channels + c] - mb;
                        va += da * da;
                        vb += db * db;
                        cov += da * db;
                    }
                }
                va /= n;
                vb /= n;
                cov /= n;
                total += ((2 * ma * mb + opt.c1) * (2 * cov + opt.c2)) /
                         ((ma * ma + mb * mb + opt.c1) * (va + vb + opt.c2));
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

double ssim_clip(const VideoClip& a, const VideoClip& b, const SsimOptions& opt) {
    require_same(a, b, "ssim");
    double s = 0;
    for (std::size_t f = 0; f < a.frames; ++f) {
        s += ssim_frame(a.frame(f), b.frame(f), a.height, a.width, a.channels, opt);
    }
    return s / static_cast<double>(a.frames);
}

double otsu_threshold(std::span<const float> values) {
    if (values.empty()) {
        throw ShapeError("otsu_threshold on an empty frame");
    }
    std::array<double, 256> hist{};
    for (float v : values) {
        const auto bin = static_cast<std::size_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        hist[bin] += 1;
    }
    const double n = static_cast<double>(values.size());
    double sum_all = 0;
    for (std::size_t i = 0; i < 256; ++i) {
        sum_all += static_cast<double>(i) * hist[i];
    }
    double w0 = 0, sum0 = 0, best = -1;
    std::size_t best_t = 0;
    bool split = false;
    for (std::size_t t = 0; t < 255; ++t) {
        w0 += hist[t];
        sum0 += static_cast<double>(t) * hist[t];
        const double w1 = n - w0;
        if (w0 == 0 || w1 == 0) {
            continue;
        }
        const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            best_t = t;
            split = true;
        }
    }
    if (!split) {
        // Single intensity level: everything at or above it is foreground
        // unless the frame is black.
        for (std::size_t i = 0; i < 256; ++i) {
            if (hist[i] > 0) {
                return i == 0 ? 0.0 : (static_cast<double>(i) - 0.5) / 255.0;
            }
        }
    }
    return (static_cast<double>(best_t) + 0.5) / 255.0;
}

std::vector<std::uint8_t> otsu_segment(std::span<const float> frame, std::size_t height, std::size_t width) {
    if (frame.size() != height * width) {
        throw ShapeError("otsu_segment needs a single-channel frame");
    }
    const double t = otsu_threshold(frame);
    std::vector<std::uint8_t> mask(frame.size());
    for (std::size_t i = 0; i < frame.size(); ++i) {
        mask[i] = static_cast<double>(frame[i]) > t ? 1 : 0;
    }
    return mask;
}

std::size_t largest_component(std::span<const std::uint8_t> mask, std::size_t height, std::size_t width) {
    if (mask.size() != height * width) {
        throw ShapeError("largest_component: mask size does not match extents");
    }
    std::vector<std::uint8_t> seen(mask.size(), 0);
    std::vector<std::size_t> stack;
    std::size_t best = 0;
    for (std::size_t start = 0; start < mask.size(); ++start) {
        if (!mask[start] || seen[start]) {
            continue;
        }
        std::size_t size = 0;
        stack.push_back(start);
        seen[start] = 1;
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            ++size;
            const std::size_t y = p / width, x = p % width;
            auto visit = [&](std::size_t q) {
                if (mask[q] && !seen[q]) {
                    seen[q] = 1;
                    stack.push_back(q);
                }
            };
            if (y > 0) visit(p - width);
            if (y + 1 < height) visit(p + width);
            if (x > 0) visit(p - 1);
            if (x + 1 < width) visit(p + 1);
        }
        best = std::max(best, size);
    }
    return best;
}

EfEstimate estimate_ef(const VideoClip& clip, const Segmenter& seg) {
    if (clip.frames == 0 || clip.pixels.empty()) {
        throw ShapeError("estimate_ef on an empty clip");
    }
    if (clip.channels != 1) {
        throw ShapeError("estimate_ef needs a single-channel clip");
    }
    EfEstimate out;
    for (std::size_t f = 0; f < clip.frames; ++f) {
        const auto mask = seg(clip.frame(f), clip.height, clip.width);
        const std::size_t area = largest_component(mask, clip.height, clip.width);
        if (area == 0) {
            throw NumericError("frame " + std::to_string(f) + " has an empty foreground");
        }
        out.areas.push_back(area);
    }
    // Ties resolve to the earliest frame.
    out.ed_frame = static_cast<std::size_t>(std::max_element(out.areas.begin(), out.areas.end()) - out.areas.begin());
    out.es_frame = static_cast<std::size_t>(std::min_element(out.areas.begin(), out.areas.end()) - out.areas.begin());
    const double ed = static_cast<double>(out.areas[out.ed_frame]), es = static_cast<double>(out.areas[out.es_frame]);
    out.ef = (ed - es) / ed;
    return out;
}

bool within_frames(std::size_t frame, std::span<const std::size_t> reference, std::size_t tolerance) {
    for (auto r : reference) {
        const std::size_t d = frame > r ? frame - r : r - frame;
        if (d <= tolerance) {
            return true;
        }
    }
    return false;
}

EfReport ef_agreement(std::span<const EfPair> pairs) {
    if (pairs.size() < 2) {
        throw ConfigError("ef_agreement needs at least two pairs, got " + std::to_string(pairs.size()));
    }
    EfReport r;
    r.rows.assign(pairs.begin(), pairs.end());
    const double n = static_cast<double>(pairs.size());
    double mean_ref = 0;
    for (const auto& p : pairs) {
        mean_ref += p.reference;
    }
    mean_ref /= n;
    double ss_res = 0, ss_tot = 0, abs_sum = 0;
    for (const auto& p : pairs) {
        const double e = p.estimated - p.reference;
        ss_res += e * e;
        abs_sum += std::abs(e);
        ss_tot += (p.reference - mean_ref) * (p.reference - mean_ref);
    }
    r.mae = abs_sum / n;
    r.rmse = std::sqrt(ss_res / n);
    // Rounding can put rmse a few ulps under mae when all errors are equal.
    r.rmse = std::max(r.rmse, r.mae);
    if (ss_tot == 0) {
        r.r2_defined = false;
        r.r2 = std::numeric_limits<double>::quiet_NaN();
    } else {
        r.r2 = 1.0 - ss_res / ss_tot;
    }
    return r;
}

}  // namespace cardiogen
