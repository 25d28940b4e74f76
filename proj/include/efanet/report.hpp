#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "efanet/errors.hpp"
#include "efanet/metrics.hpp"

namespace efanet {

namespace detail {

inline std::string fmt(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw DataError("cannot write '" + path + "'");
}

}  // namespace detail

// One row per image, then one aggregate row per bucket and an overall mean.
inline std::string report_tsv(const MetricReport& rep) {
    std::string out = "id\tdice\tiou\ts_alpha\tf_w\te_mean\tscale_ratio\tbucket\n";
    for (const auto& r : rep.records) {
        out += r.id + '\t' + detail::fmt(r.dice) + '\t' + detail::fmt(r.iou) + '\t' + detail::fmt(r.s_alpha) + '\t' +
               (r.f_w_defined ? detail::fmt(r.f_w) : "undefined") + '\t' + detail::fmt(r.e_mean) + '\t' +
               detail::fmt(r.ratio) + '\t' + to_string(r.bucket) + '\n';
    }
    for (int b = 0; b < kScaleBuckets; ++b) {
        const auto& s = rep.buckets.buckets[b];
        out += std::string("#bucket:") + to_string(static_cast<ScaleBucket>(b)) + '\t' + detail::fmt(s.dice) + '\t' +
               detail::fmt(s.iou) + '\t' + detail::fmt(s.s_alpha) + "\t-\t-\t" + detail::fmt(s.share) + '\t' +
               std::to_string(s.count) + '\n';
    }
    out += "#mean\t" + detail::fmt(rep.mean_dice) + '\t' + detail::fmt(rep.mean_iou) + '\t' +
           detail::fmt(rep.mean_s_alpha) + '\t' + detail::fmt(rep.mean_f_w) + '\t' + detail::fmt(rep.mean_e) + "\t-\t" +
           std::to_string(rep.records.size()) + '\n';
    return out;
}

inline std::string curves_tsv(const CurveSet& cs) {
    std::string out = "threshold\tprecision\trecall\tf\n";
    for (const auto& p : cs.points) {
        out += detail::fmt(p.threshold) + '\t' + detail::fmt(p.precision) + '\t' + detail::fmt(p.recall) + '\t' +
               detail::fmt(p.f) + '\n';
    }
    return out;
}

inline nlohmann::json report_summary(const MetricReport& rep, const CurveSet* curves = nullptr, int edge_radius = 1) {
    nlohmann::json j;
    j["metadata"] = {
        {"binarization_threshold", rep.settings.threshold},
        {"curve_f_beta2", rep.settings.curve_beta2},
        {"weighted_f_beta2", rep.settings.wf_beta2},
        {"s_measure_alpha", rep.settings.s_alpha},
        {"curve_thresholds", kCurveThresholds},
        {"empty_prediction_precision", 1.0},
        {"undefined_weighted_f_counts_as", 0.0},
        {"edge_dilation_radius", edge_radius},
        {"scale_buckets", {{"small_below", kSmallRatio}, {"large_above", kLargeRatio}}},
    };
    j["count"] = rep.records.size();
    j["mean"] = {{"dice", rep.mean_dice},         {"iou", rep.mean_iou}, {"s_alpha", rep.mean_s_alpha},
                 {"f_w", rep.mean_f_w},           {"e_mean", rep.mean_e}};
    j["f_w_undefined_images"] = rep.f_w_undefined;
    for (int b = 0; b < kScaleBuckets; ++b) {
        const auto& s = rep.buckets.buckets[b];
        j["buckets"][to_string(static_cast<ScaleBucket>(b))] = {
            {"count", s.count}, {"share", s.share}, {"dice", s.dice}, {"iou", s.iou}, {"s_alpha", s.s_alpha}};
    }
    if (curves) {
        double best = 0;
        for (const auto& p : curves->points) best = std::max(best, p.f);
        j["curves"] = {{"max_f", best}, {"beta2", curves->beta2}};
    }
    return j;
}

struct ReportPaths {
    std::string report, summary, curves;
};

inline ReportPaths write_report(const std::string& dir, const MetricReport& rep, const CurveSet& curves, int edge_radius) {
    ReportPaths p{dir + "/report.tsv", dir + "/summary.json", dir + "/curves.tsv"};
    detail::write_text(p.report, report_tsv(rep));
    detail::write_text(p.summary, report_summary(rep, &curves, edge_radius).dump(2) + "\n");
    detail::write_text(p.curves, curves_tsv(curves));
    return p;
}

}  // namespace efanet
