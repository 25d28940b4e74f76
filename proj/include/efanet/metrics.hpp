#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "efanet/data.hpp"
#include "efanet/errors.hpp"
#include "efanet/image.hpp"

namespace efanet {

inline constexpr double kEps = std::numeric_limits<double>::epsilon();
inline constexpr int kCurveThresholds = 256;

inline double curve_threshold(int i) { return i / 255.0; }

template <typename A, typename B>
void require_same_size(const Grid<A>& p, const Grid<B>& g) {
    if (p.height != g.height || p.width != g.width) {
        throw ShapeError("metric inputs differ in size: prediction " + std::to_string(p.height) + "x" +
                         std::to_string(p.width) + " vs mask " + std::to_string(g.height) + "x" + std::to_string(g.width));
    }
}

inline Mask binarize(const ProbMap& p, double threshold) {
    Mask b(p.height, p.width);
    for (std::size_t i = 0; i < p.size(); ++i) b.values[i] = p.values[i] >= threshold ? 1 : 0;
    return b;
}

// ---------------------------------------------------------------------------
// Dice / IoU
// ---------------------------------------------------------------------------

struct DiceIou {
    double dice = 0;
    double iou = 0;
};

inline DiceIou dice_iou(const ProbMap& p, const Mask& g, double threshold = 0.5) {
    require_same_size(p, g);
    std::size_t inter = 0, nb = 0, ng = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const bool b = p.values[i] >= threshold, t = g.values[i] != 0;
        nb += b;
        ng += t;
        inter += b && t;
    }
    if (nb + ng == 0) return {1.0, 1.0};
    return {2.0 * inter / double(nb + ng), double(inter) / double(nb + ng - inter)};
}

// ---------------------------------------------------------------------------
// Structure measure
// ---------------------------------------------------------------------------

namespace detail {

inline double object_score(const ProbMap& p, const Mask& region, bool fg) {
    // mean and sample std of the masked values
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if ((region.values[i] != 0) == fg) {
            sum += p.values[i];
            ++n;
        }
    if (n == 0) return 0.0;
    const double mean = sum / n;
    double ss = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if ((region.values[i] != 0) == fg) ss += (p.values[i] - mean) * (p.values[i] - mean);
    const double sd = n > 1 ? std::sqrt(ss / double(n - 1)) : 0.0;
    return 2.0 * mean / (mean * mean + 1.0 + sd + kEps);
}

inline double s_object(const ProbMap& p, const Mask& g) {
    ProbMap fg(p.height, p.width), bg(p.height, p.width);
    double u = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        fg.values[i] = g.values[i] ? p.values[i] : 0.0;
        bg.values[i] = g.values[i] ? 0.0 : 1.0 - p.values[i];
        u += g.values[i];
    }
    u /= double(p.size());
    return u * object_score(fg, g, true) + (1 - u) * object_score(bg, g, false);
}

// SSIM-style similarity on a rectangular block [y0, y1) x [x0, x1).
inline double block_ssim(const ProbMap& p, const Mask& g, int y0, int y1, int x0, int x1) {
    const double n = double(y1 - y0) * double(x1 - x0);
    if (n <= 0) return 0.0;
    double mx = 0, my = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            mx += p.at(y, x);
            my += g.at(y, x);
        }
    mx /= n;
    my /= n;
    double sxx = 0, syy = 0, sxy = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            const double dx = p.at(y, x) - mx, dy = g.at(y, x) - my;
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
    const double denom = n - 1 + kEps;
    sxx /= denom;
    syy /= denom;
    sxy /= denom;
    const double alpha = 4 * mx * my * sxy;
    const double beta = (mx * mx + my * my) * (sxx + syy);
    if (alpha != 0) return alpha / (beta + kEps);
    if (beta == 0) return 1.0;
    return 0.0;
}

inline double s_region(const ProbMap& p, const Mask& g) {
    const int H = g.height, W = g.width;
    double total = 0, sx = 0, sy = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (g.at(y, x)) {
                total += 1;
                sx += x + 1;
                sy += y + 1;
            }
    // 1-based centroid, rounded half away from zero; it splits after column X and row Y
    const int X = total > 0 ? static_cast<int>(std::lround(sx / total)) : static_cast<int>(std::lround(W / 2.0));
    const int Y = total > 0 ? static_cast<int>(std::lround(sy / total)) : static_cast<int>(std::lround(H / 2.0));
    const double area = double(H) * W;
    const double w1 = double(X) * Y / area;
    const double w2 = double(W - X) * Y / area;
    const double w3 = double(X) * (H - Y) / area;
    const double w4 = 1.0 - w1 - w2 - w3;
    return w1 * block_ssim(p, g, 0, Y, 0, X) + w2 * block_ssim(p, g, 0, Y, X, W) +
           w3 * block_ssim(p, g, Y, H, 0, X) + w4 * block_ssim(p, g, Y, H, X, W);
}

}  // namespace detail

inline double s_measure(const ProbMap& p, const Mask& g, double alpha = 0.5) {
    require_same_size(p, g);
    require_binary_mask("s_measure mask", g);
    double y = 0, x = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        y += g.values[i];
        x += p.values[i];
    }
    y /= double(g.size());
    x /= double(p.size());
    if (y == 0) return 1.0 - x;
    if (y == 1) return x;
    const double q = alpha * detail::s_object(p, g) + (1 - alpha) * detail::s_region(p, g);
    return std::max(0.0, q);
}

// ---------------------------------------------------------------------------
// Euclidean distance transform
// ---------------------------------------------------------------------------

struct DistanceTransform {
    Grid<double> distance;  // to the nearest foreground pixel
    Grid<int> nearest;      // flat index y * W + x of that pixel, -1 if none
};

namespace detail {

// Lower envelope of parabolas over the finite entries of f.
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& arg) {
    const int n = static_cast<int>(f.size());
    std::vector<int> v(n);
    std::vector<double> z(n + 1);
    auto cross = [&](int r, int q) { return ((f[q] + double(q) * q) - (f[r] + double(r) * r)) / (2.0 * (q - r)); };
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (!std::isfinite(f[q])) continue;
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -std::numeric_limits<double>::infinity();
            z[1] = std::numeric_limits<double>::infinity();
            continue;
        }
        double s = cross(v[k], q);
        while (s <= z[k]) s = cross(v[--k], q);  // z[0] is -inf, so k stays >= 0
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    d.assign(n, std::numeric_limits<double>::infinity());
    arg.assign(n, -1);
    if (k < 0) return;
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q) ++j;
        const double dq = double(q - v[j]);
        d[q] = dq * dq + f[v[j]];
        arg[q] = v[j];
    }
}

}  // namespace detail

// Exact separable squared EDT with nearest-pixel indices.
inline DistanceTransform distance_transform(const Mask& fg) {
    const int H = fg.height, W = fg.width;
    const double inf = std::numeric_limits<double>::infinity();
    Grid<double> col_d(H, W);
    Grid<int> col_row(H, W, -1);
    std::vector<double> f(H), d;
    std::vector<int> arg;
    for (int x = 0; x < W; ++x) {
        for (int y = 0; y < H; ++y) f[y] = fg.at(y, x) ? 0.0 : inf;
        detail::edt_1d(f, d, arg);
        for (int y = 0; y < H; ++y) {
            col_d.at(y, x) = d[y];
            col_row.at(y, x) = arg[y];
        }
    }
    DistanceTransform out{Grid<double>(H, W, inf), Grid<int>(H, W, -1)};
    f.resize(W);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) f[x] = col_d.at(y, x);
        detail::edt_1d(f, d, arg);
        for (int x = 0; x < W; ++x) {
            if (arg[x] < 0) continue;
            out.distance.at(y, x) = std::sqrt(d[x]);
            out.nearest.at(y, x) = col_row.at(y, arg[x]) * W + arg[x];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Weighted F-measure
// ---------------------------------------------------------------------------

// Normalized 7x7 Gaussian, sigma 5.
inline std::array<double, 49> wf_gaussian_kernel() {
    std::array<double, 49> k{};
    double sum = 0;
    for (int i = -3; i <= 3; ++i)
        for (int j = -3; j <= 3; ++j) {
            const double v = std::exp(-(i * i + j * j) / (2.0 * 25.0));
            k[(i + 3) * 7 + (j + 3)] = v;
            sum += v;
        }
    for (auto& v : k) v /= sum;
    return k;
}

// Empty foreground leaves the measure undefined and yields nullopt.
inline std::optional<double> weighted_fmeasure(const ProbMap& p, const Mask& g, double beta2 = 1.0) {
    require_same_size(p, g);
    require_binary_mask("weighted_fmeasure mask", g);
    const int H = g.height, W = g.width;
    std::size_t ng = 0;
    for (auto v : g.values) ng += v;
    if (ng == 0) return std::nullopt;

    const auto dt = distance_transform(g);
    ProbMap e(H, W), et(H, W);
    for (std::size_t i = 0; i < p.size(); ++i) e.values[i] = std::abs(p.values[i] - g.values[i]);
    // background errors borrow the error at their nearest foreground pixel
    for (std::size_t i = 0; i < p.size(); ++i) et.values[i] = g.values[i] ? e.values[i] : e.values[dt.nearest.values[i]];

    static const auto K = wf_gaussian_kernel();
    double sum_fg = 0, sum_bg = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double ew;
            if (g.at(y, x)) {
                double ea = 0;
                for (int i = -3; i <= 3; ++i)
                    for (int j = -3; j <= 3; ++j) {
                        const int yy = y + i, xx = x + j;
                        if (yy >= 0 && yy < H && xx >= 0 && xx < W) ea += K[(i + 3) * 7 + (j + 3)] * et.at(yy, xx);
                    }
                ew = std::min(e.at(y, x), ea);
                sum_fg += ew;
            } else {
                const double b = 2.0 - std::exp(std::log(0.5) / 5.0 * dt.distance.at(y, x));
                ew = e.at(y, x) * b;
                sum_bg += ew;
            }
        }
    const double tpw = double(ng) - sum_fg;
    const double fpw = sum_bg;
    const double recall = 1.0 - sum_fg / double(ng);
    const double precision = tpw / (kEps + tpw + fpw);
    return (1 + beta2) * recall * precision / (kEps + recall + beta2 * precision);
}

// ---------------------------------------------------------------------------
// Enhanced-alignment measure
// ---------------------------------------------------------------------------

// Single binarized map against the mask; the enhanced matrix is averaged
// over all pixels.
inline double e_measure_binary(const Mask& b, const Mask& g) {
    require_same_size(b, g);
    const double n = double(g.size());
    double mg = 0, mb = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        mg += g.values[i];
        mb += b.values[i];
    }
    double total = 0;
    if (mg == 0) {
        total = n - mb;
    } else if (mg == n) {
        total = mb;
    } else {
        mg /= n;
        mb /= n;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double ag = g.values[i] - mg, ab = b.values[i] - mb;
            const double align = 2.0 * ag * ab / (ag * ag + ab * ab + kEps);
            total += (align + 1) * (align + 1) / 4.0;
        }
    }
    return total / n;
}

inline double e_measure_mean(const ProbMap& p, const Mask& g) {
    require_same_size(p, g);
    require_binary_mask("e_measure_mean mask", g);
    double acc = 0;
    for (int t = 0; t < kCurveThresholds; ++t) acc += e_measure_binary(binarize(p, curve_threshold(t)), g);
    return acc / kCurveThresholds;
}

// ---------------------------------------------------------------------------
// Precision-recall curves
// ---------------------------------------------------------------------------

struct CurvePoint {
    double threshold = 0;
    double precision = 0;
    double recall = 0;
    double f = 0;
};

struct CurveSet {
    double beta2 = 0.3;
    std::vector<CurvePoint> points;  // 256 entries
};

struct PrCounts {
    std::array<double, kCurveThresholds> precision{};
    std::array<double, kCurveThresholds> recall{};
};

// Per-image precision/recall at every threshold; an empty prediction has
// precision 1, an empty mask has recall 1.
inline PrCounts pr_counts(const ProbMap& p, const Mask& g) {
    require_same_size(p, g);
    // histogram by the largest threshold index each pixel still passes
    std::array<std::size_t, kCurveThresholds> hist_fg{}, hist_all{};
    std::size_t ng = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double v = std::clamp(p.values[i], 0.0, 1.0);
        int t = static_cast<int>(std::floor(v * 255.0));
        if (t < 255 && v >= curve_threshold(t + 1)) ++t;
        while (t > 0 && v < curve_threshold(t)) --t;
        ++hist_all[t];
        if (g.values[i]) {
            ++hist_fg[t];
            ++ng;
        }
    }
    PrCounts out;
    std::size_t tp = 0, nb = 0;
    for (int t = kCurveThresholds - 1; t >= 0; --t) {
        tp += hist_fg[t];
        nb += hist_all[t];
        out.precision[t] = nb == 0 ? 1.0 : double(tp) / double(nb);
        out.recall[t] = ng == 0 ? 1.0 : double(tp) / double(ng);
    }
    return out;
}

inline double f_beta(double precision, double recall, double beta2) {
    const double den = beta2 * precision + recall;
    return den > 0 ? (1 + beta2) * precision * recall / den : 0.0;
}

class CurveAccumulator {
public:
    explicit CurveAccumulator(double beta2 = 0.3) : beta2_(beta2) {}

    void add(const ProbMap& p, const Mask& g) { add(pr_counts(p, g)); }
    void add(const PrCounts& c) {
        for (int t = 0; t < kCurveThresholds; ++t) {
            precision_[t] += c.precision[t];
            recall_[t] += c.recall[t];
        }
        ++count_;
    }
    std::size_t count() const { return count_; }

    CurveSet finish() const {
        if (count_ == 0) throw ShapeError("pr_curves: empty sample list");
        CurveSet cs{beta2_, {}};
        for (int t = 0; t < kCurveThresholds; ++t) {
            const double pr = precision_[t] / double(count_), rc = recall_[t] / double(count_);
            cs.points.push_back({curve_threshold(t), pr, rc, f_beta(pr, rc, beta2_)});
        }
        return cs;
    }

private:
    double beta2_;
    std::array<double, kCurveThresholds> precision_{}, recall_{};
    std::size_t count_ = 0;
};

inline CurveSet pr_curves(const std::vector<std::pair<ProbMap, Mask>>& samples, double beta2 = 0.3) {
    CurveAccumulator acc(beta2);
    for (const auto& [p, g] : samples) acc.add(p, g);
    return acc.finish();
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct MetricRecord {
    std::string id;
    double dice = 0;
    double iou = 0;
    double s_alpha = 0;
    double f_w = 0;
    bool f_w_defined = true;
    double e_mean = 0;
    double ratio = 0;
    ScaleBucket bucket = ScaleBucket::small;
};

struct EvalSettings {
    double threshold = 0.5;
    double curve_beta2 = 0.3;
    double wf_beta2 = 1.0;
    double s_alpha = 0.5;
    friend bool operator==(const EvalSettings&, const EvalSettings&) = default;
};

// Every metric for one image; an undefined weighted F-measure counts as 0.
inline MetricRecord evaluate_image(const std::string& id, const ProbMap& p, const Mask& g, const EvalSettings& s = {}) {
    MetricRecord r;
    r.id = id;
    const auto di = dice_iou(p, g, s.threshold);
    r.dice = di.dice;
    r.iou = di.iou;
    r.s_alpha = s_measure(p, g, s.s_alpha);
    const auto fw = weighted_fmeasure(p, g, s.wf_beta2);
    r.f_w = fw.value_or(0.0);
    r.f_w_defined = fw.has_value();
    r.e_mean = e_measure_mean(p, g);
    const auto sr = polyp_scale_ratio(g);
    r.ratio = sr.r;
    r.bucket = sr.bucket;
    return r;
}

struct BucketStats {
    std::size_t count = 0;
    double share = 0;
    double dice = 0;
    double iou = 0;
    double s_alpha = 0;
};

struct BucketReport {
    std::array<BucketStats, kScaleBuckets> buckets{};
    std::size_t total = 0;
    double dice = 0;
    double iou = 0;
    double s_alpha = 0;

    const BucketStats& operator[](ScaleBucket b) const { return buckets[static_cast<int>(b)]; }
};

inline BucketReport scale_bucket_report(const std::vector<MetricRecord>& records) {
    BucketReport rep;
    for (const auto& r : records) {
        auto& b = rep.buckets[static_cast<int>(r.bucket)];
        ++b.count;
        b.dice += r.dice;
        b.iou += r.iou;
        b.s_alpha += r.s_alpha;
        rep.dice += r.dice;
        rep.iou += r.iou;
        rep.s_alpha += r.s_alpha;
    }
    rep.total = records.size();
    for (auto& b : rep.buckets) {
        if (b.count == 0) continue;
        b.dice /= double(b.count);
        b.iou /= double(b.count);
        b.s_alpha /= double(b.count);
        b.share = double(b.count) / double(rep.total);
    }
    if (rep.total) {
        rep.dice /= double(rep.total);
        rep.iou /= double(rep.total);
        rep.s_alpha /= double(rep.total);
    }
    return rep;
}

struct MetricReport {
    EvalSettings settings;
    std::vector<MetricRecord> records;
    BucketReport buckets;
    double mean_dice = 0, mean_iou = 0, mean_s_alpha = 0, mean_f_w = 0, mean_e = 0;
    std::size_t f_w_undefined = 0;

    static MetricReport build(std::vector<MetricRecord> records, const EvalSettings& s) {
        MetricReport rep;
        rep.settings = s;
        rep.records = std::move(records);
        rep.buckets = scale_bucket_report(rep.records);
        for (const auto& r : rep.records) {
            rep.mean_dice += r.dice;
            rep.mean_iou += r.iou;
            rep.mean_s_alpha += r.s_alpha;
            rep.mean_f_w += r.f_w;
            rep.mean_e += r.e_mean;
            rep.f_w_undefined += !r.f_w_defined;
        }
        if (const double n = double(rep.records.size()); n > 0) {
            rep.mean_dice /= n;
            rep.mean_iou /= n;
            rep.mean_s_alpha /= n;
            rep.mean_f_w /= n;
            rep.mean_e /= n;
        }
        return rep;
    }
};

}  // namespace efanet
