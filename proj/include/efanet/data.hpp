#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "efanet/errors.hpp"
#include "efanet/image.hpp"
#include "efanet/image_io.hpp"

namespace efanet {

struct SegSample {
    std::string id;
    Image image;
    Mask mask;
    Mask edge;
};

inline void require_binary_mask(const std::string& what, const Mask& m) {
    for (auto v : m.values)
        if (v > 1) throw DataError(what + " must be binary (0/1), found value " + std::to_string(int(v)));
}

// ---------------------------------------------------------------------------
// Edge ground truth
// ---------------------------------------------------------------------------

// Square (Chebyshev) dilation, separable.
inline Mask dilate(const Mask& m, int radius) {
    if (radius <= 0) return m;
    Mask tmp(m.height, m.width), out(m.height, m.width);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            std::uint8_t v = 0;
            for (int d = std::max(0, x - radius); d <= std::min(m.width - 1, x + radius) && !v; ++d) v = m.at(y, d);
            tmp.at(y, x) = v;
        }
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            std::uint8_t v = 0;
            for (int d = std::max(0, y - radius); d <= std::min(m.height - 1, y + radius) && !v; ++d) v = tmp.at(d, x);
            out.at(y, x) = v;
        }
    return out;
}

// Sobel gradient magnitude > 0 with replicate borders, then dilation.
inline Mask sobel_edge_gt(const Mask& g, int dilation_radius = 1) {
    require_binary_mask("sobel_edge_gt input", g);
    if (dilation_radius < 0) throw DataError("sobel_edge_gt: dilation radius must be non-negative");
    const int H = g.height, W = g.width;
    auto px = [&](int y, int x) { return int(g.at(std::clamp(y, 0, H - 1), std::clamp(x, 0, W - 1))); };
    Mask e(H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const int gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                           (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
            const int gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                           (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
            e.at(y, x) = (gx != 0 || gy != 0) ? 1 : 0;
        }
    return dilate(e, dilation_radius);
}

// ---------------------------------------------------------------------------
// Scale buckets
// ---------------------------------------------------------------------------

enum class ScaleBucket { small, medium, large };
inline constexpr int kScaleBuckets = 3;
inline constexpr double kSmallRatio = 0.025;
inline constexpr double kLargeRatio = 0.2;

inline const char* to_string(ScaleBucket b) {
    switch (b) {
        case ScaleBucket::small: return "small";
        case ScaleBucket::medium: return "medium";
        case ScaleBucket::large: return "large";
    }
    return "?";
}

struct ScaleRatio {
    double r = 0;
    ScaleBucket bucket = ScaleBucket::small;
};

inline ScaleBucket bucket_for_ratio(double r) {
    if (r < kSmallRatio) return ScaleBucket::small;
    if (r > kLargeRatio) return ScaleBucket::large;
    return ScaleBucket::medium;
}

inline ScaleRatio polyp_scale_ratio(const Mask& g) {
    require_binary_mask("polyp_scale_ratio input", g);
    if (g.size() == 0) return {};
    std::size_t fg = 0;
    for (auto v : g.values) fg += v;
    const double r = static_cast<double>(fg) / static_cast<double>(g.size());
    return {r, bucket_for_ratio(r)};
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

namespace detail {

// Half-pixel source coordinate for output index i over a window [start, start + len).
inline double src_coord(int i, int out, double start, double len) { return start + (i + 0.5) * len / out - 0.5; }

inline float sample_bilinear(const Image& img, int c, double sy, double sx) {
    sy = std::clamp(sy, 0.0, double(img.height - 1));
    sx = std::clamp(sx, 0.0, double(img.width - 1));
    const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
    const int y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
    const double fy = sy - y0, fx = sx - x0;
    const double top = img.at(c, y0, x0) * (1 - fx) + img.at(c, y0, x1) * fx;
    const double bot = img.at(c, y1, x0) * (1 - fx) + img.at(c, y1, x1) * fx;
    return static_cast<float>(top * (1 - fy) + bot * fy);
}

}  // namespace detail

// Bilinear resample of the window (top, left, h, w) to out_h x out_w.
inline Image resample_bilinear(const Image& img, double top, double left, double h, double w, int out_h, int out_w) {
    Image out(img.channels, out_h, out_w);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < out_h; ++y) {
            const double sy = detail::src_coord(y, out_h, top, h);
            for (int x = 0; x < out_w; ++x) out.at(c, y, x) = detail::sample_bilinear(img, c, sy, detail::src_coord(x, out_w, left, w));
        }
    return out;
}

inline Image resize_bilinear(const Image& img, int out_h, int out_w) {
    if (out_h == img.height && out_w == img.width) return img;
    return resample_bilinear(img, 0, 0, img.height, img.width, out_h, out_w);
}

template <typename T>
Grid<T> resample_nearest(const Grid<T>& m, int top, int left, int h, int w, int out_h, int out_w) {
    Grid<T> out(out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        const int sy = top + std::min(h - 1, static_cast<int>(std::floor((y + 0.5) * h / out_h)));
        for (int x = 0; x < out_w; ++x) {
            const int sx = left + std::min(w - 1, static_cast<int>(std::floor((x + 0.5) * w / out_w)));
            out.at(y, x) = m.at(sy, sx);
        }
    }
    return out;
}

template <typename T>
Grid<T> resize_nearest(const Grid<T>& m, int out_h, int out_w) {
    if (out_h == m.height && out_w == m.width) return m;
    return resample_nearest(m, 0, 0, m.height, m.width, out_h, out_w);
}

// Bilinear resize of a probability map, half-pixel centres.
inline ProbMap resize_prob_map(const ProbMap& p, int out_h, int out_w) {
    if (out_h == p.height && out_w == p.width) return p;
    ProbMap out(out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        const double sy = std::clamp(detail::src_coord(y, out_h, 0, p.height), 0.0, double(p.height - 1));
        const int y0 = static_cast<int>(sy), y1 = std::min(y0 + 1, p.height - 1);
        const double fy = sy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double sx = std::clamp(detail::src_coord(x, out_w, 0, p.width), 0.0, double(p.width - 1));
            const int x0 = static_cast<int>(sx), x1 = std::min(x0 + 1, p.width - 1);
            const double fx = sx - x0;
            out.at(y, x) = (p.at(y0, x0) * (1 - fx) + p.at(y0, x1) * fx) * (1 - fy) +
                           (p.at(y1, x0) * (1 - fx) + p.at(y1, x1) * fx) * fy;
        }
    }
    return out;
}

inline constexpr int kSizeMultiple = 32;

// ratio * base rounded to the nearest multiple of 32 (at least 32). Exact
// ties move away from the base size so every ratio != 1 changes the scale.
inline int scaled_size(int base, double ratio) {
    if (!(ratio > 0)) throw DataError("scale ratio must be positive");
    const double v = ratio * base / kSizeMultiple;
    double lo = std::floor(v), hi = std::ceil(v);
    double q;
    if (v - lo < hi - v) q = lo;
    else if (v - lo > hi - v) q = hi;
    else q = ratio < 1 ? lo : hi;
    return std::max(1, static_cast<int>(q)) * kSizeMultiple;
}

inline void check_target_size(int h, int w) {
    if (h <= 0 || w <= 0 || h % kSizeMultiple || w % kSizeMultiple) {
        throw DataError("target size " + std::to_string(h) + "x" + std::to_string(w) + " must be a positive multiple of " +
                        std::to_string(kSizeMultiple));
    }
}

inline SegSample rescale(const SegSample& s, int out_h, int out_w, int edge_radius = 1) {
    check_target_size(out_h, out_w);
    if (out_h == s.image.height && out_w == s.image.width) return s;
    SegSample out{s.id, resize_bilinear(s.image, out_h, out_w), resize_nearest(s.mask, out_h, out_w), {}};
    out.edge = sobel_edge_gt(out.mask, edge_radius);
    return out;
}

inline SegSample rescale(const SegSample& s, double ratio, int edge_radius = 1) {
    if (ratio == 1.0) return s;
    return rescale(s, scaled_size(s.image.height, ratio), scaled_size(s.image.width, ratio), edge_radius);
}

// ---------------------------------------------------------------------------
// Geometric transforms
// ---------------------------------------------------------------------------

inline Image flip(const Image& img, bool horizontal) {
    Image out(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                out.at(c, y, x) = horizontal ? img.at(c, y, img.width - 1 - x) : img.at(c, img.height - 1 - y, x);
    return out;
}

inline Mask flip(const Mask& m, bool horizontal) {
    Mask out(m.height, m.width);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            out.at(y, x) = horizontal ? m.at(y, m.width - 1 - x) : m.at(m.height - 1 - y, x);
    return out;
}

// Counter-clockwise by 90 degrees: input (y, x) lands at (W-1-x, y).
inline Image rotate90(const Image& img) {
    Image out(img.channels, img.width, img.height);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < out.height; ++y)
            for (int x = 0; x < out.width; ++x) out.at(c, y, x) = img.at(c, x, img.width - 1 - y);
    return out;
}

inline Mask rotate90(const Mask& m) {
    Mask out(m.width, m.height);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) out.at(y, x) = m.at(x, m.width - 1 - y);
    return out;
}

inline SegSample flip(const SegSample& s, bool horizontal) {
    return {s.id, flip(s.image, horizontal), flip(s.mask, horizontal), flip(s.edge, horizontal)};
}

inline SegSample rotate90(const SegSample& s, int quarter_turns) {
    SegSample out = s;
    for (int k = ((quarter_turns % 4) + 4) % 4; k > 0; --k) {
        out.image = rotate90(out.image);
        out.mask = rotate90(out.mask);
        out.edge = rotate90(out.edge);
    }
    return out;
}

// Crops a centred-or-offset window of the given fraction and resizes back.
inline SegSample crop_resize(const SegSample& s, double fraction, double offset_y, double offset_x, int edge_radius) {
    const int H = s.image.height, W = s.image.width;
    const int ch = std::clamp(static_cast<int>(std::lround(fraction * H)), 1, H);
    const int cw = std::clamp(static_cast<int>(std::lround(fraction * W)), 1, W);
    if (ch == H && cw == W) return s;
    const int top = static_cast<int>(std::lround(offset_y * (H - ch)));
    const int left = static_cast<int>(std::lround(offset_x * (W - cw)));
    SegSample out{s.id, resample_bilinear(s.image, top, left, ch, cw, H, W), resample_nearest(s.mask, top, left, ch, cw, H, W),
                  {}};
    out.edge = sobel_edge_gt(out.mask, edge_radius);
    return out;
}

// Rotation by an arbitrary angle in degrees about the image centre. Borders replicate; the mask is interpolated then thresholded at 0.5.
inline SegSample rotate_free(const SegSample& s, double degrees, int edge_radius) {
    const int H = s.image.height, W = s.image.width;
    const double a = degrees * std::numbers::pi / 180.0, ca = std::cos(a), sa = std::sin(a);
    const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    Image mask_f(1, H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) mask_f.at(0, y, x) = s.mask.at(y, x);
    SegSample out{s.id, Image(s.image.channels, H, W), Mask(H, W), {}};
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            // inverse map: output pixel back into the source frame
            const double dy = y - cy, dx = x - cx;
            const double sx = cx + ca * dx - sa * dy;
            const double sy = cy + sa * dx + ca * dy;
            for (int c = 0; c < s.image.channels; ++c) out.image.at(c, y, x) = detail::sample_bilinear(s.image, c, sy, sx);
            const bool inside = sy >= -0.5 && sy <= H - 0.5 && sx >= -0.5 && sx <= W - 0.5;
            out.mask.at(y, x) = inside && detail::sample_bilinear(mask_f, 0, sy, sx) >= 0.5f ? 1 : 0;
        }
    out.edge = sobel_edge_gt(out.mask, edge_radius);
    return out;
}

struct AugConfig {
    double flip_prob = 0.5;
    std::vector<int> rotations{0, 90, 180, 270};
    double max_free_rotation = 0.0;  // degrees; 0 disables
    double crop_min = 0.8;
    double crop_max = 1.0;
    std::vector<double> scale_ratios{0.75, 1.0, 1.25};
    int target_size = 64;
    int edge_radius = 1;

    void validate() const {
        if (!(flip_prob >= 0 && flip_prob <= 1)) throw ConfigError("aug.flip_prob must be in [0, 1]");
        if (rotations.empty()) throw ConfigError("aug.rotations must not be empty");
        for (int r : rotations)
            if (r % 90 != 0) throw ConfigError("aug.rotations entries must be multiples of 90");
        if (!(max_free_rotation >= 0 && max_free_rotation <= 180))
            throw ConfigError("aug.max_free_rotation must be in [0, 180]");
        if (!(crop_min > 0 && crop_min <= crop_max && crop_max <= 1)) {
            throw ConfigError("aug.crop_min/crop_max must satisfy 0 < min <= max <= 1");
        }
        if (scale_ratios.empty()) throw ConfigError("aug.scale_ratios must not be empty");
        for (double r : scale_ratios)
            if (!(r > 0)) throw ConfigError("aug.scale_ratios must be positive");
        if (target_size <= 0 || target_size % kSizeMultiple) {
            throw ConfigError("data.target_size must be a positive multiple of 32");
        }
        if (edge_radius < 0) throw ConfigError("data.edge_radius must be non-negative");
    }

    friend bool operator==(const AugConfig&, const AugConfig&) = default;
};

// Random flips, a quarter-turn rotation, an optional free rotation and a
// random crop, applied identically to image and labels.
template <typename Rng>
SegSample augment(const SegSample& s, Rng& rng, const AugConfig& cfg) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    SegSample out = s;
    if (u01(rng) < cfg.flip_prob) out = flip(out, true);
    if (u01(rng) < cfg.flip_prob) out = flip(out, false);
    const int deg = cfg.rotations[std::uniform_int_distribution<std::size_t>(0, cfg.rotations.size() - 1)(rng)];
    out = rotate90(out, deg / 90);
    if (cfg.max_free_rotation > 0) {
        const double angle = std::uniform_real_distribution<double>(-cfg.max_free_rotation, cfg.max_free_rotation)(rng);
        out = rotate_free(out, angle, cfg.edge_radius);
    }
    const double frac = std::uniform_real_distribution<double>(cfg.crop_min, cfg.crop_max)(rng);
    const double oy = u01(rng), ox = u01(rng);
    return crop_resize(out, frac, oy, ox, cfg.edge_radius);
}

// ---------------------------------------------------------------------------
// Synthetic blob dataset
// ---------------------------------------------------------------------------

struct SynthStats {
    static constexpr double kSmallShare = 0.25;
    static constexpr double kMediumShare = 0.45;
    static constexpr double kContrastMargin = 0.2;  // min foreground minus max background, before noise
    static constexpr double kNoiseSigma = 0.05;
};

namespace detail {

struct Blob {
    double cy, cx, ry, rx, theta, amp, phase;
    int freq;

    bool contains(double y, double x, double* rho = nullptr) const {
        const double dy = y - cy, dx = x - cx;
        const double u = (dx * std::cos(theta) + dy * std::sin(theta)) / rx;
        const double v = (-dx * std::sin(theta) + dy * std::cos(theta)) / ry;
        const double r = std::hypot(u, v);
        const double limit = 1.0 + amp * std::sin(freq * std::atan2(v, u) + phase);
        if (rho) *rho = r / limit;
        return r <= limit;
    }
    double extent() const { return std::max(rx, ry) * (1.0 + amp); }
};

// rho <= 1 is foreground (normalized blob radius), anything larger is background.
inline Image render_synth(std::mt19937_64& rng, const Grid<double>& rho) {
    auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
    auto pick = [&](int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); };
    const int H = rho.height, W = rho.width;
    const double S = W;
    const double bg_level = uni(0.25, 0.32), fg_level = uni(0.64, 0.72);
    const double f1y = pick(1, 3), f1x = pick(1, 3), p1 = uni(0, 2 * std::numbers::pi);
    const double f2y = pick(2, 6), f2x = pick(2, 6), p2 = uni(0, 2 * std::numbers::pi);
    std::normal_distribution<double> noise(0.0, SynthStats::kNoiseSigma);

    Image img(1, H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double yc = y + 0.5, xc = x + 0.5, r = rho.at(y, x);
            double v;
            if (r <= 1.0) {
                v = fg_level + 0.06 * (1.0 - r * r);
            } else {
                v = bg_level + 0.05 * std::sin(2 * std::numbers::pi * (f1y * yc + f1x * xc) / S + p1) +
                    0.03 * std::sin(2 * std::numbers::pi * (f2y * yc - f2x * xc) / S + p2);
            }
            img.at(0, y, x) = static_cast<float>(std::clamp(v + noise(rng), 0.0, 1.0));
        }
    return img;
}

}  // namespace detail

// One grayscale sample: smooth textured background plus 1-3 brighter
// ellipses with wavy boundaries and additive Gaussian noise.
inline SegSample synth_sample(std::uint64_t seed, std::uint64_t index, int size, std::string id,
                              ScaleBucket* drawn_bucket = nullptr) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    std::mt19937_64 rng(seq);
    auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
    auto pick = [&](int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); };

    const double S = size, S2 = S * S;
    const double bucket_draw = uni(0, 1);
    double target;
    int nblobs;
    if (bucket_draw < SynthStats::kSmallShare) {
        target = uni(0.01, 0.021);
        nblobs = 1;
    } else if (bucket_draw < SynthStats::kSmallShare + SynthStats::kMediumShare) {
        target = uni(0.04, 0.16);
        nblobs = pick(1, 2);
    } else {
        target = uni(0.26, 0.40);
        nblobs = pick(1, 3);
    }
    const ScaleBucket wanted = bucket_draw < SynthStats::kSmallShare ? ScaleBucket::small
                               : bucket_draw < SynthStats::kSmallShare + SynthStats::kMediumShare
                                   ? ScaleBucket::medium
                                   : ScaleBucket::large;
    if (drawn_bucket) *drawn_bucket = wanted;

    auto place = [&] {
        std::vector<double> share(nblobs);
        for (auto& w : share) w = uni(0.5, 1.5);
        double total = 0;
        for (double w : share) total += w;
        std::vector<detail::Blob> blobs;
        for (int b = 0; b < nblobs; ++b) {
            const double area = target * S2 * share[b] / total;
            const double aspect = uni(0.75, 1.33);
            detail::Blob blob{};
            blob.rx = std::sqrt(area / (std::numbers::pi * aspect));
            blob.ry = aspect * blob.rx;
            blob.theta = uni(0, std::numbers::pi);
            blob.amp = uni(0.0, 0.12);
            blob.freq = pick(2, 5);
            blob.phase = uni(0, 2 * std::numbers::pi);
            const double max_extent = S / 2 - 1.0;
            if (blob.extent() > max_extent) {
                const double k = max_extent / blob.extent();
                blob.rx *= k;
                blob.ry *= k;
            }
            const double e = blob.extent() + 1.0;
            blob.cy = uni(e, S - e);
            blob.cx = uni(e, S - e);
            blobs.push_back(blob);
        }
        return blobs;
    };
    Grid<double> rho(size, size, 2.0);
    auto rasterize = [&](const std::vector<detail::Blob>& blobs) {
        Mask m(size, size);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double best = 2.0;
                for (const auto& b : blobs) {
                    double r;
                    if (b.contains(y + 0.5, x + 0.5, &r)) best = std::min(best, r);
                }
                rho.at(y, x) = best;
                m.at(y, x) = best <= 1.0;
            }
        return m;
    };

    // overlapping or clipped blobs can land in a neighbouring bucket; redraw the layout
    Mask mask = rasterize(place());
    for (int attempt = 0; attempt < 32 && polyp_scale_ratio(mask).bucket != wanted; ++attempt)
        mask = rasterize(place());

    SegSample s{std::move(id), detail::render_synth(rng, rho), std::move(mask), {}};
    return s;
}

// Same texture and noise as synth_sample with no blobs at all.
inline SegSample synth_background(std::uint64_t seed, std::uint64_t index, int size, std::string id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    std::mt19937_64 rng(seq);
    return SegSample{std::move(id), detail::render_synth(rng, Grid<double>(size, size, 2.0)), Mask(size, size), {}};
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct ManifestEntry {
    std::string id;
    std::string image;
    std::string mask;
    std::string split;
    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
    std::filesystem::path base_dir;
    std::vector<ManifestEntry> entries;

    std::vector<ManifestEntry> split(const std::string& tag) const {
        std::vector<ManifestEntry> out;
        for (const auto& e : entries)
            if (e.split == tag) out.push_back(e);
        return out;
    }
    std::filesystem::path resolve(const std::string& p) const {
        const std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    }
};

inline std::string manifest_text(const DatasetManifest& m) {
    std::string out;
    for (const auto& e : m.entries) out += e.id + "\t" + e.image + "\t" + e.mask + "\t" + e.split + "\n";
    return out;
}

inline void write_manifest(const std::string& path, const DatasetManifest& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest '" + path + "'");
    out << manifest_text(m);
    if (!out) throw DataError("short write to manifest '" + path + "'");
}

// Parses and validates a manifest; relative paths resolve against its directory.
inline DatasetManifest read_manifest(const std::string& path, bool check_files = true) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open manifest '" + path + "'");
    DatasetManifest m;
    m.base_dir = std::filesystem::path(path).parent_path();
    std::string line;
    int lineno = 0;
    std::vector<std::string> ids;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, '\t')) fields.push_back(f);
        if (fields.size() != 4 || fields[0].empty() || fields[3].empty()) {
            throw DataError(path + ":" + std::to_string(lineno) + ": expected 4 tab-separated fields");
        }
        m.entries.push_back({fields[0], fields[1], fields[2], fields[3]});
        ids.push_back(fields[0]);
    }
    std::sort(ids.begin(), ids.end());
    if (auto it = std::adjacent_find(ids.begin(), ids.end()); it != ids.end()) {
        throw DataError(path + ": duplicate sample id '" + *it + "'");
    }
    if (m.entries.empty()) throw DataError(path + ": manifest has no entries");
    if (check_files) {
        for (const auto& e : m.entries)
            for (const auto& p : {e.image, e.mask})
                if (!std::filesystem::exists(m.resolve(p))) {
                    throw DataError(path + ": sample '" + e.id + "' references missing file '" + p + "'");
                }
    }
    return m;
}

// Converts the decoded image to the requested channel count.
inline Image match_channels(Image img, int channels) {
    if (img.channels == channels) return img;
    Image out(channels, img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double mean = 0;
            for (int c = 0; c < img.channels; ++c) mean += img.at(c, y, x);
            mean /= img.channels;
            for (int c = 0; c < channels; ++c) out.at(c, y, x) = img.channels == 1 ? img.at(0, y, x) : float(mean);
        }
    return out;
}

inline SegSample load_sample(const DatasetManifest& m, const ManifestEntry& e, int channels, int edge_radius) {
    SegSample s;
    s.id = e.id;
    s.image = match_channels(read_pnm(m.resolve(e.image).string()), channels);
    s.mask = read_mask(m.resolve(e.mask).string());
    if (s.mask.height != s.image.height || s.mask.width != s.image.width) {
        throw DataError("sample '" + e.id + "': mask size differs from image size");
    }
    s.edge = sobel_edge_gt(s.mask, edge_radius);
    return s;
}

inline constexpr double kTrainFraction = 0.8;

// Writes images/, masks/ and manifest.tsv under out_dir. The 80/20 split is a
// seeded permutation; manifest rows stay in id order.
inline DatasetManifest synth_blob_dataset(int n, int size, std::uint64_t seed, const std::string& out_dir) {
    if (n <= 0) throw DataError("synth: n must be positive");
    check_target_size(size, size);
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "images", ec);
    fs::create_directories(fs::path(out_dir) / "masks", ec);
    if (ec) throw DataError("cannot create dataset directory '" + out_dir + "': " + ec.message());

    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 split_rng(seed ^ 0x9E3779B97F4A7C15ull);
    std::shuffle(order.begin(), order.end(), split_rng);
    const int n_train = static_cast<int>(std::lround(kTrainFraction * n));
    std::vector<std::string> split(n);
    for (int i = 0; i < n; ++i) split[order[i]] = i < n_train ? "train" : "test";

    DatasetManifest m;
    m.base_dir = out_dir;
    const int digits = std::max(4, static_cast<int>(std::to_string(n - 1).size()));
    for (int i = 0; i < n; ++i) {
        std::string num = std::to_string(i);
        const std::string id = "blob_" + std::string(digits - num.size(), '0') + num;
        const SegSample s = synth_sample(seed, static_cast<std::uint64_t>(i), size, id);
        const std::string img = "images/" + id + ".pgm", msk = "masks/" + id + ".pgm";
        write_pnm((fs::path(out_dir) / img).string(), s.image);
        write_mask((fs::path(out_dir) / msk).string(), s.mask);
        m.entries.push_back({id, img, msk, split[i]});
    }
    write_manifest((fs::path(out_dir) / "manifest.tsv").string(), m);
    return m;
}

}  // namespace efanet
