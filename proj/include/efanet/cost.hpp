#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "efanet/efa_net.hpp"

namespace efanet {

// Counting rules:
//   conv      params Cout*Cin*k*k + Cout, FLOPs 2*Cout*Cin*k*k*Hout*Wout (one MAC = 2 FLOPs)
//   bn        params 2*C, FLOPs one per output element
//   relu, sigmoid, add, mul, resize, pool: one FLOP per output element
//   concat and same-size resize: free
// A parameter shared by several call sites is counted once; its FLOPs at every call.
inline constexpr const char* kFlopConvention =
    "FLOPs: multiply-accumulate = 2 FLOPs; elementwise, batch-norm, resize and pooling ops = 1 FLOP per output "
    "element; concatenation = 0; batch size 1";

struct FeatureDims {
    int c, h, w;
    std::int64_t elements() const { return std::int64_t(c) * h * w; }
    friend bool operator==(const FeatureDims&, const FeatureDims&) = default;
};

struct LayerCost {
    std::string module;
    std::string name;
    std::string kind;
    FeatureDims out;
    std::int64_t params = 0;
    std::int64_t flops = 0;
};

struct ModuleCost {
    std::string module;
    std::int64_t params = 0;
    std::int64_t flops = 0;
};

struct CostReport {
    int height = 0, width = 0;
    std::vector<LayerCost> layers;
    std::vector<ModuleCost> modules;  // first-appearance order
    std::int64_t total_params = 0;
    std::int64_t total_flops = 0;

    const ModuleCost* module(const std::string& name) const {
        for (const auto& m : modules)
            if (m.module == name) return &m;
        return nullptr;
    }

    std::string table() const {
        std::ostringstream os;
        os << "# cost at " << height << "x" << width << "\n# " << kFlopConvention << "\n";
        os << "module\tlayer\tkind\tout\tparams\tflops\n";
        for (const auto& l : layers) {
            os << l.module << '\t' << l.name << '\t' << l.kind << '\t' << l.out.c << 'x' << l.out.h << 'x' << l.out.w
               << '\t' << l.params << '\t' << l.flops << '\n';
        }
        os << "# per module\n";
        for (const auto& m : modules) os << m.module << "\t*\ttotal\t-\t" << m.params << '\t' << m.flops << '\n';
        os << "total\t*\ttotal\t-\t" << total_params << '\t' << total_flops << '\n';
        return os.str();
    }
};

// Records layer costs while walking an architecture by shape only.
class CostTracer {
   public:
    std::string module = "model";

    FeatureDims conv(const std::string& name, FeatureDims in, ConvSpec spec) {
        const int k = spec.kernel;
        const int pad = spec.padding();
        const Conv2dOptions o{spec.stride, pad, spec.dilation};
        FeatureDims out{spec.out_channels, conv_out_extent(in.h, k, o), conv_out_extent(in.w, k, o)};
        const std::int64_t macs_per_out = std::int64_t(in.c) * k * k;
        const std::int64_t params = first_use(name) ? spec.out_channels * macs_per_out + spec.out_channels : 0;
        push(name, "conv", out, params, 2 * macs_per_out * out.elements());
        return out;
    }
    FeatureDims bn(const std::string& name, FeatureDims in) {
        push(name, "bn", in, first_use(name) ? 2 * in.c : 0, in.elements());
        return in;
    }
    FeatureDims unary(const std::string& name, const char* kind, FeatureDims in) {
        push(name, kind, in, 0, in.elements());
        return in;
    }
    FeatureDims binary(const std::string& name, const char* kind, FeatureDims out) {
        push(name, kind, out, 0, out.elements());
        return out;
    }
    FeatureDims resize(const std::string& name, FeatureDims in, int h, int w) {
        const FeatureDims out{in.c, h, w};
        push(name, "resize", out, 0, (in.h == h && in.w == w) ? 0 : out.elements());
        return out;
    }
    FeatureDims global_pool(const std::string& name, FeatureDims in) {
        const FeatureDims out{in.c, 1, 1};
        push(name, "pool", out, 0, out.elements());
        return out;
    }
    FeatureDims concat(const std::string& name, const std::vector<FeatureDims>& xs) {
        FeatureDims out{0, xs.front().h, xs.front().w};
        for (const auto& x : xs) out.c += x.c;
        push(name, "concat", out, 0, 0);
        return out;
    }
    FeatureDims conv_bn_relu(const std::string& name, FeatureDims in, ConvSpec spec) {
        auto y = conv(name + ".conv", in, spec);
        y = bn(name + ".bn", y);
        return unary(name + ".relu", "relu", y);
    }

    CostReport finish(int h, int w) && {
        CostReport r;
        r.height = h;
        r.width = w;
        r.layers = std::move(layers_);
        for (const auto& l : r.layers) {
            auto it = std::find_if(r.modules.begin(), r.modules.end(), [&](const auto& m) { return m.module == l.module; });
            if (it == r.modules.end()) it = r.modules.insert(r.modules.end(), ModuleCost{l.module, 0, 0});
            it->params += l.params;
            it->flops += l.flops;
            r.total_params += l.params;
            r.total_flops += l.flops;
        }
        return r;
    }

   private:
    bool first_use(const std::string& name) { return seen_.insert(name).second; }
    void push(const std::string& name, const char* kind, FeatureDims out, std::int64_t params, std::int64_t flops) {
        layers_.push_back({module, name, kind, out, params, flops});
    }

    std::vector<LayerCost> layers_;
    std::set<std::string> seen_;
};

namespace detail {

inline FeatureDims cost_scm(CostTracer& t, const std::string& name, FeatureDims x, const ModelConfig& cfg) {
    const int K = cfg.common_width;
    const auto a = t.conv(name + ".proj_a", x, ConvSpec{K, 1});
    const auto b = t.conv(name + ".proj_b", x, ConvSpec{K, 1});
    std::vector<FeatureDims> dil;
    for (std::size_t l = 0; l < 3; ++l)
        dil.push_back(t.conv_bn_relu(name + ".dilated" + std::to_string(l + 1), a, ConvSpec{K, 3, 1, cfg.dilation_rates[l]}));
    const auto agg = t.conv_bn_relu(name + ".aggregate", t.concat(name + ".cat", dil), ConvSpec{K, 3});
    t.conv_bn_relu(name + ".residual", b, ConvSpec{K, 3});
    return t.conv_bn_relu(name + ".out", t.binary(name + ".sum", "add", agg), ConvSpec{K, 3});
}

inline FeatureDims cost_attention(CostTracer& t, const std::string& name, FeatureDims x, const ModelConfig& cfg) {
    auto h = t.unary(name + ".relu", "relu", t.conv(name + ".pwc1", x, ConvSpec{cfg.cfm_hidden(), 1}));
    return t.unary(name + ".sigmoid", "sigmoid", t.conv(name + ".pwc2", h, ConvSpec{cfg.cfm_width(), 1}));
}

inline FeatureDims cost_cfm(CostTracer& t, const std::string& name, FeatureDims a, FeatureDims b, const ModelConfig& cfg) {
    const int C = cfg.cfm_width();
    const auto cat = t.concat(name + ".cat", {a, b});
    std::array<FeatureDims, 3> br;
    for (std::size_t i = 0; i < 3; ++i) br[i] = t.conv_bn_relu(name + ".branch" + std::to_string(i + 1), cat, ConvSpec{C, 3});
    cost_attention(t, name + ".local", br[0], cfg);
    cost_attention(t, name + ".global", t.global_pool(name + ".gap", br[1]), cfg);
    const auto le = t.binary(name + ".local_add", "add", t.binary(name + ".local_mul", "mul", br[0]));
    const auto ge = t.binary(name + ".global_add", "add", t.binary(name + ".global_mul", "mul", br[1]));
    return t.conv_bn_relu(name + ".out", t.concat(name + ".fuse", {le, ge, br[2]}), ConvSpec{cfg.common_width, 3});
}

}  // namespace detail

// Parameter and FLOP count of the full network on a single image of h x w.
inline CostReport analyze_cost(const ModelConfig& cfg, int h, int w) {
    cfg.validate();
    check_input_size(h, w);
    const auto& bb = cfg.backbone;
    const int K = cfg.common_width;
    CostTracer t;

    t.module = "backbone";
    std::array<FeatureDims, kPyramidLevels> f{};
    auto x = t.conv_bn_relu("backbone.stem", FeatureDims{bb.input_channels, h, w}, ConvSpec{bb.stem_channels, 3, 2});
    for (int l = 1; l <= kPyramidLevels; ++l) {
        const auto li = static_cast<std::size_t>(l - 1);
        const std::string name = "backbone.level" + std::to_string(l);
        x = t.conv_bn_relu(name + ".down", x, ConvSpec{bb.channels[li], 3, l == 1 ? 1 : 2});
        for (int b = 0; b < bb.blocks[li]; ++b) {
            const std::string bn = name + ".block" + std::to_string(b);
            auto y = t.conv_bn_relu(bn + ".conv1", x, ConvSpec{x.c, 3});
            y = t.bn(bn + ".conv2.bn", t.conv(bn + ".conv2.conv", y, ConvSpec{x.c, 3}));
            x = t.unary(bn + ".relu", "relu", t.binary(bn + ".add", "add", y));
        }
        f[li] = x;
    }

    t.module = "scm";
    std::array<FeatureDims, kPyramidLevels> T{};
    for (int i = 1; i <= kPyramidLevels; ++i)
        T[static_cast<std::size_t>(i - 1)] = detail::cost_scm(t, "scm" + std::to_string(i), f[static_cast<std::size_t>(i - 1)], cfg);

    t.module = "cfm";
    std::array<FeatureDims, kSideOutputs> D{};
    FeatureDims upper = T[4];
    for (int i = kSideOutputs; i >= 1; --i) {
        const auto& lat = T[static_cast<std::size_t>(i - 1)];
        const auto up = t.resize("cfm" + std::to_string(i) + ".up", upper, lat.h, lat.w);
        upper = detail::cost_cfm(t, "cfm" + std::to_string(i), up, lat, cfg);
        D[static_cast<std::size_t>(i - 1)] = upper;
    }

    t.module = "egm";
    const auto& f1 = f[0];
    auto f2p = t.resize("egm.reduce2.up", t.conv("egm.reduce2", f[1], ConvSpec{K, 1}), f1.h, f1.w);
    auto f5p = t.conv("egm.reduce5", f[4], ConvSpec{K, 1});
    auto f12 = t.conv_bn_relu("egm.fuse12", t.concat("egm.cat12", {f1, f2p}), ConvSpec{K, 3});
    auto fe = t.conv_bn_relu("egm.fuse", t.concat("egm.cat", {f12, t.resize("egm.reduce5.up", f5p, f1.h, f1.w)}),
                             ConvSpec{K, 3});
    t.resize("egm.edge_head.up", t.conv("egm.edge_head", fe, ConvSpec{1, 1}), h, w);

    t.module = "heads";
    for (int i = 1; i <= kSideOutputs; ++i) {
        const auto& d = D[static_cast<std::size_t>(i - 1)];
        const std::string hn = "head" + std::to_string(i);
        auto att = t.unary(hn + ".edge_att.sigmoid", "sigmoid", t.conv("edge_att", fe, ConvSpec{1, 1}));
        t.resize(hn + ".edge_att.up", att, d.h, d.w);
        auto wgt = t.binary(hn + ".edge_add", "add", t.binary(hn + ".edge_mul", "mul", d));
        auto y = t.conv_bn_relu(hn + ".conv1", wgt, ConvSpec{K, 3});
        y = t.conv_bn_relu(hn + ".conv2", y, ConvSpec{K, 3});
        t.resize(hn + ".up", t.conv(hn + ".out", y, ConvSpec{1, 1}), h, w);
    }
    return std::move(t).finish(h, w);
}

}  // namespace efanet
