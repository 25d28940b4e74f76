#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "efanet/data.hpp"
#include "efanet/efa_net.hpp"
#include "efanet/errors.hpp"
#include "efanet/metrics.hpp"

namespace efanet {

struct TrainConfig {
    double lr = 1e-4;
    double lr_decay = 1.0;  // multiplied into lr once per epoch
    int epochs = 25;
    int batch_size = 8;
    std::int64_t max_steps = 0;         // 0: no cap
    std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
    std::string output_dir = "runs/desk";

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct RunConfig {
    std::uint64_t seed = 7;
    std::string manifest = "data/manifest.tsv";
    std::string train_split = "train";
    std::string eval_split = "test";
    ModelConfig model;
    AugConfig aug;
    TrainConfig train;
    EvalSettings eval;

    void validate() const {
        model.validate();
        aug.validate();
        if (!(train.lr >= 0) || !std::isfinite(train.lr)) throw ConfigError("train.lr must be a finite value >= 0");
        if (!(train.lr_decay > 0 && train.lr_decay <= 1)) throw ConfigError("train.lr_decay must be in (0, 1]");
        if (train.epochs < 1) throw ConfigError("train.epochs must be positive");
        if (train.batch_size < 1) throw ConfigError("train.batch_size must be positive");
        if (train.max_steps < 0) throw ConfigError("train.max_steps must be >= 0");
        if (train.checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
        if (!(eval.threshold >= 0 && eval.threshold <= 1)) throw ConfigError("eval.threshold must be in [0, 1]");
        if (!(eval.curve_beta2 > 0) || !(eval.wf_beta2 > 0)) throw ConfigError("eval beta^2 values must be positive");
        if (!(eval.s_alpha >= 0 && eval.s_alpha <= 1)) throw ConfigError("eval.s_alpha must be in [0, 1]");
    }

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::string format_value(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}
template <typename I>
    requires std::is_integral_v<I>
std::string format_value(I v) {
    return std::to_string(v);
}
inline std::string format_value(const std::string& v) { return v; }
template <typename V>
std::string format_value(const V& list)
    requires requires { list.begin(); }
{
    std::string out;
    for (const auto& v : list) {
        if (!out.empty()) out += ", ";
        out += format_value(v);
    }
    return out;
}

template <typename V>
void parse_value(const std::string& key, std::string_view text, V& out) {
    text = trim(text);
    const auto r = std::from_chars(text.data(), text.data() + text.size(), out);
    if (text.empty() || r.ec != std::errc{} || r.ptr != text.data() + text.size()) {
        throw ConfigError("config key '" + key + "': cannot parse '" + std::string(text) + "'");
    }
}
inline void parse_value(const std::string&, std::string_view text, std::string& out) { out = trim(text); }

template <typename List>
void parse_list(const std::string& key, std::string_view text, List& out, std::size_t fixed = 0) {
    std::vector<typename List::value_type> items;
    text = trim(text);
    while (!text.empty()) {
        const auto comma = text.find(',');
        typename List::value_type v{};
        parse_value(key, text.substr(0, comma), v);
        items.push_back(v);
        if (comma == std::string_view::npos) break;
        text = text.substr(comma + 1);
    }
    if (fixed && items.size() != fixed) {
        throw ConfigError("config key '" + key + "' needs " + std::to_string(fixed) + " values, got " +
                          std::to_string(items.size()));
    }
    if constexpr (requires { out.assign(items.begin(), items.end()); }) {
        out.assign(items.begin(), items.end());
    } else {
        std::copy(items.begin(), items.end(), out.begin());
    }
}

struct ConfigField {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view)> set;
};

template <typename M>
ConfigField scalar_field(std::string key, M RunConfig::*outer) {
    return {key, [outer](const RunConfig& c) { return format_value(c.*outer); },
            [outer, key](RunConfig& c, std::string_view t) { parse_value(key, t, c.*outer); }};
}

template <typename Proj>
ConfigField nested_field(std::string key, Proj proj) {
    using V = std::remove_cvref_t<decltype(proj(std::declval<RunConfig&>()))>;
    return {key, [proj](const RunConfig& c) { return format_value(proj(const_cast<RunConfig&>(c))); },
            [proj, key](RunConfig& c, std::string_view t) {
                auto& dst = proj(c);
                if constexpr (requires { dst.begin(); } && !std::is_same_v<V, std::string>) {
                    parse_list(key, t, dst, std::tuple_size_v<V>);
                } else {
                    parse_value(key, t, dst);
                }
            }};
}

template <typename Proj>
ConfigField vector_field(std::string key, Proj proj) {
    return {key, [proj](const RunConfig& c) { return format_value(proj(const_cast<RunConfig&>(c))); },
            [proj, key](RunConfig& c, std::string_view t) { parse_list(key, t, proj(c)); }};
}

}  // namespace detail

// Every key in serialization order.
inline const std::vector<detail::ConfigField>& config_fields() {
    using detail::nested_field;
    using detail::scalar_field;
    using detail::vector_field;
    static const std::vector<detail::ConfigField> fields{
        scalar_field("seed", &RunConfig::seed),
        scalar_field("data.manifest", &RunConfig::manifest),
        scalar_field("data.train_split", &RunConfig::train_split),
        scalar_field("data.eval_split", &RunConfig::eval_split),
        nested_field("data.target_size", [](RunConfig& c) -> int& { return c.aug.target_size; }),
        nested_field("data.edge_radius", [](RunConfig& c) -> int& { return c.aug.edge_radius; }),
        nested_field("model.common_width", [](RunConfig& c) -> int& { return c.model.common_width; }),
        nested_field("model.dilation_rates", [](RunConfig& c) -> auto& { return c.model.dilation_rates; }),
        nested_field("model.cfm_reduction", [](RunConfig& c) -> int& { return c.model.cfm_reduction; }),
        nested_field("model.beta_edge", [](RunConfig& c) -> double& { return c.model.beta_edge; }),
        nested_field("model.backbone.input_channels",
                     [](RunConfig& c) -> int& { return c.model.backbone.input_channels; }),
        nested_field("model.backbone.stem_channels",
                     [](RunConfig& c) -> int& { return c.model.backbone.stem_channels; }),
        nested_field("model.backbone.channels", [](RunConfig& c) -> auto& { return c.model.backbone.channels; }),
        nested_field("model.backbone.blocks", [](RunConfig& c) -> auto& { return c.model.backbone.blocks; }),
        nested_field("aug.flip_prob", [](RunConfig& c) -> double& { return c.aug.flip_prob; }),
        vector_field("aug.rotations", [](RunConfig& c) -> auto& { return c.aug.rotations; }),
        nested_field("aug.max_free_rotation", [](RunConfig& c) -> double& { return c.aug.max_free_rotation; }),
        nested_field("aug.crop_min", [](RunConfig& c) -> double& { return c.aug.crop_min; }),
        nested_field("aug.crop_max", [](RunConfig& c) -> double& { return c.aug.crop_max; }),
        vector_field("aug.scale_ratios", [](RunConfig& c) -> auto& { return c.aug.scale_ratios; }),
        nested_field("train.lr", [](RunConfig& c) -> double& { return c.train.lr; }),
        nested_field("train.lr_decay", [](RunConfig& c) -> double& { return c.train.lr_decay; }),
        nested_field("train.epochs", [](RunConfig& c) -> int& { return c.train.epochs; }),
        nested_field("train.batch_size", [](RunConfig& c) -> int& { return c.train.batch_size; }),
        nested_field("train.max_steps", [](RunConfig& c) -> std::int64_t& { return c.train.max_steps; }),
        nested_field("train.checkpoint_every",
                     [](RunConfig& c) -> std::int64_t& { return c.train.checkpoint_every; }),
        nested_field("train.output_dir", [](RunConfig& c) -> std::string& { return c.train.output_dir; }),
        nested_field("eval.threshold", [](RunConfig& c) -> double& { return c.eval.threshold; }),
        nested_field("eval.curve_beta2", [](RunConfig& c) -> double& { return c.eval.curve_beta2; }),
        nested_field("eval.wf_beta2", [](RunConfig& c) -> double& { return c.eval.wf_beta2; }),
        nested_field("eval.s_alpha", [](RunConfig& c) -> double& { return c.eval.s_alpha; }),
    };
    return fields;
}

// Flat `key = value` text, every key present, in a fixed order.
inline std::string serialize_config(const RunConfig& c) {
    std::string out;
    for (const auto& f : config_fields()) out += f.key + " = " + f.get(c) + "\n";
    return out;
}

// Keys not mentioned keep their defaults; unknown or repeated keys are errors.
inline RunConfig parse_config(std::string_view text, RunConfig base = {}) {
    std::set<std::string> seen;
    int line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const auto raw = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        const auto line = detail::trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key(detail::trim(line.substr(0, eq)));
        const auto& fields = config_fields();
        const auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.key == key; });
        if (it == fields.end()) throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        if (!seen.insert(key).second) throw ConfigError("config key '" + key + "' given twice");
        it->set(base, line.substr(eq + 1));
    }
    base.validate();
    return base;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

inline void save_config(const std::string& path, const RunConfig& c) {
    std::ofstream out(path, std::ios::binary);
    out << serialize_config(c);
    if (!out) throw ConfigError("cannot write config file '" + path + "'");
}

struct ConfigDifference {
    std::string key;
    std::string left;
    std::string right;
};

// Keys whose serialized values differ, restricted to those starting with prefix.
inline std::vector<ConfigDifference> config_diff(const RunConfig& a, const RunConfig& b, std::string_view prefix = "") {
    std::vector<ConfigDifference> out;
    for (const auto& f : config_fields()) {
        if (!f.key.starts_with(prefix)) continue;
        auto va = f.get(a), vb = f.get(b);
        if (va != vb) out.push_back({f.key, std::move(va), std::move(vb)});
    }
    return out;
}

inline std::string describe(const std::vector<ConfigDifference>& diff) {
    std::string out;
    for (const auto& d : diff) out += "\n  " + d.key + ": " + d.left + " vs " + d.right;
    return out;
}

}  // namespace efanet
