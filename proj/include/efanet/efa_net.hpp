#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "efanet/backbone.hpp"
#include "efanet/losses.hpp"

namespace efanet {

inline constexpr int kSideOutputs = 4;

struct ModelConfig {
    int common_width = 32;                    // K
    std::array<int, 3> dilation_rates{2, 4, 8};
    int cfm_reduction = 4;                    // t, divides 2K
    double beta_edge = 5.0;                   // weight of the edge loss
    BackboneConfig backbone;

    // Channel width of a CFM's concatenated input.
    int cfm_width() const { return 2 * common_width; }
    int cfm_hidden() const { return cfm_width() / cfm_reduction; }

    void validate() const {
        if (common_width < 1) throw ConfigError("model.common_width must be positive");
        for (int r : dilation_rates)
            if (r < 1) throw ConfigError("model.dilation_rates entries must be positive");
        if (cfm_reduction < 1 || cfm_width() % cfm_reduction != 0) {
            throw ConfigError("model.cfm_reduction (" + std::to_string(cfm_reduction) +
                              ") must divide the CFM width 2*common_width (" + std::to_string(cfm_width()) + ")");
        }
        if (!(beta_edge >= 0.0) || !std::isfinite(beta_edge)) throw ConfigError("model.beta_edge must be >= 0");
        backbone.validate();
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct ModelOutput {
    std::array<Tensor<T>, kSideOutputs> side;  // S1..S4 logits at input resolution
    Tensor<T> edge;                            // Se logits at input resolution
    Tensor<T> edge_feature;                    // Fe at F1 resolution
};

template <typename T>
struct EgmOutput {
    Tensor<T> feature;  // Fe
    Tensor<T> logits;   // Se, upsampled to the requested size
};

// Edge-aware guidance: fuses F1, F2 and F5 into Fe and an edge logit map.
template <typename T>
EgmOutput<T> egm_forward(Context<T>& ctx, const Tensor<T>& f1, const Tensor<T>& f2, const Tensor<T>& f5,
                         const ModelConfig& cfg, int out_h, int out_w) {
    if (f1.shape().n != f2.shape().n || f1.shape().n != f5.shape().n) {
        throw ShapeError("egm: pyramid levels disagree on batch size (" + std::to_string(f1.shape().n) + ", " +
                         std::to_string(f2.shape().n) + ", " + std::to_string(f5.shape().n) + ")");
    }
    const int K = cfg.common_width;
    const int h = f1.shape().h;
    const int w = f1.shape().w;
    auto& tape = ctx.tape;
    auto f2p = bilinear_resize(tape, conv(ctx, "egm.reduce2", f2, ConvSpec{K, 1}), h, w);
    auto f5p = conv(ctx, "egm.reduce5", f5, ConvSpec{K, 1});
    auto f12 = conv_bn_relu(ctx, "egm.fuse12", concat_channels(tape, {f1, f2p}), ConvSpec{K, 3});
    auto fe = conv_bn_relu(ctx, "egm.fuse", concat_channels(tape, {f12, bilinear_resize(tape, f5p, h, w)}),
                           ConvSpec{K, 3});
    auto se = bilinear_resize(tape, conv(ctx, "egm.edge_head", fe, ConvSpec{1, 1}), out_h, out_w);
    return {fe, se};
}

template <typename T>
struct ScmBranches {
    Tensor<T> dilated_input;   // first 1x1 projection
    Tensor<T> residual_input;  // second 1x1 projection
    std::array<Tensor<T>, 3> dilated;  // E_1..E_3
};

template <typename T>
ScmBranches<T> scm_branches(Context<T>& ctx, const std::string& name, const Tensor<T>& x, const ModelConfig& cfg) {
    const int K = cfg.common_width;
    ScmBranches<T> b;
    b.dilated_input = conv(ctx, name + ".proj_a", x, ConvSpec{K, 1});
    b.residual_input = conv(ctx, name + ".proj_b", x, ConvSpec{K, 1});
    for (std::size_t l = 0; l < 3; ++l) {
        b.dilated[l] = conv_bn_relu(ctx, name + ".dilated" + std::to_string(l + 1), b.dilated_input,
                                    ConvSpec{K, 3, 1, cfg.dilation_rates[l]});
    }
    return b;
}

// Scale-aware convolution: three dilated branches aggregated and added to a
// plain 3x3 path. Output has K channels at the input's resolution.
template <typename T>
Tensor<T> scm_forward(Context<T>& ctx, const std::string& name, const Tensor<T>& x, const ModelConfig& cfg) {
    const int K = cfg.common_width;
    auto b = scm_branches(ctx, name, x, cfg);
    auto& tape = ctx.tape;
    auto agg = conv_bn_relu(ctx, name + ".aggregate",
                            concat_channels(tape, {b.dilated[0], b.dilated[1], b.dilated[2]}), ConvSpec{K, 3});
    auto res = conv_bn_relu(ctx, name + ".residual", b.residual_input, ConvSpec{K, 3});
    return conv_bn_relu(ctx, name + ".out", add(tape, agg, res), ConvSpec{K, 3});
}

template <typename T>
struct CfmTrace {
    std::array<Tensor<T>, 3> branches;  // F_cat^1..3
    Tensor<T> local_weights;            // N x 2K x H x W
    Tensor<T> global_weights;           // N x 2K x 1 x 1
    Tensor<T> local_enhanced;
    Tensor<T> global_enhanced;
    Tensor<T> output;
};

template <typename T>
Tensor<T> pointwise_attention(Context<T>& ctx, const std::string& name, const Tensor<T>& x, const ModelConfig& cfg) {
    auto h = relu(ctx.tape, conv(ctx, name + ".pwc1", x, ConvSpec{cfg.cfm_hidden(), 1}));
    return sigmoid(ctx.tape, conv(ctx, name + ".pwc2", h, ConvSpec{cfg.cfm_width(), 1}));
}

// Cross-level fusion with local (per-pixel) and global (pooled) attention.
// fa and fb must already share a spatial size.
template <typename T>
CfmTrace<T> cfm_trace(Context<T>& ctx, const std::string& name, const Tensor<T>& fa, const Tensor<T>& fb,
                      const ModelConfig& cfg) {
    if (fa.shape().h != fb.shape().h || fa.shape().w != fb.shape().w || fa.shape().n != fb.shape().n) {
        throw ShapeError("cfm: inputs " + to_string(fa.shape()) + " and " + to_string(fb.shape()) +
                         " differ in N/H/W");
    }
    auto& tape = ctx.tape;
    const int C = cfg.cfm_width();
    auto cat = concat_channels(tape, {fa, fb});
    if (cat.shape().c != C) {
        throw ShapeError("cfm: concatenated width " + std::to_string(cat.shape().c) + " != 2*common_width " +
                         std::to_string(C));
    }
    CfmTrace<T> t;
    for (std::size_t i = 0; i < 3; ++i) {
        t.branches[i] = conv_bn_relu(ctx, name + ".branch" + std::to_string(i + 1), cat, ConvSpec{C, 3});
    }
    t.local_weights = pointwise_attention(ctx, name + ".local", t.branches[0], cfg);
    t.global_weights = pointwise_attention(ctx, name + ".global", global_avg_pool(tape, t.branches[1]), cfg);
    t.local_enhanced = add(tape, mul(tape, t.branches[0], t.local_weights), t.branches[0]);
    t.global_enhanced = add(tape, mul(tape, t.branches[1], t.global_weights), t.branches[1]);
    t.output = conv_bn_relu(ctx, name + ".out",
                            concat_channels(tape, {t.local_enhanced, t.global_enhanced, t.branches[2]}),
                            ConvSpec{cfg.common_width, 3});
    return t;
}

template <typename T>
Tensor<T> cfm_forward(Context<T>& ctx, const std::string& name, const Tensor<T>& fa, const Tensor<T>& fb,
                      const ModelConfig& cfg) {
    return cfm_trace(ctx, name, fa, fb, cfg).output;
}

// F * A + F with a single-channel attention map A broadcast over channels.
template <typename T>
Tensor<T> apply_edge_attention(Tape<T>& tape, const Tensor<T>& features, const Tensor<T>& attention) {
    return add(tape, mul(tape, features, attention), features);
}

// Projects Fe to one channel, squashes it, resizes to the decoder feature and
// applies it residually.
template <typename T>
Tensor<T> edge_weight(Context<T>& ctx, const Tensor<T>& features, const Tensor<T>& edge_feature) {
    auto att = sigmoid(ctx.tape, conv(ctx, "edge_att", edge_feature, ConvSpec{1, 1}));
    att = bilinear_resize(ctx.tape, att, features.shape().h, features.shape().w);
    return apply_edge_attention(ctx.tape, features, att);
}

template <typename T>
Tensor<T> side_head(Context<T>& ctx, const std::string& name, const Tensor<T>& x, const ModelConfig& cfg, int out_h,
                    int out_w) {
    const int K = cfg.common_width;
    auto y = conv_bn_relu(ctx, name + ".conv1", x, ConvSpec{K, 3});
    y = conv_bn_relu(ctx, name + ".conv2", y, ConvSpec{K, 3});
    y = conv(ctx, name + ".out", y, ConvSpec{1, 1});
    return bilinear_resize(ctx.tape, y, out_h, out_w);
}

// Full network over any encoder satisfying FeatureExtractor.
template <typename Encoder = ResidualPyramid>
class EfaNet {
   public:
    explicit EfaNet(ModelConfig cfg) : cfg_(std::move(cfg)), encoder_(cfg_.backbone) { cfg_.validate(); }
    EfaNet(ModelConfig cfg, Encoder encoder) : cfg_(std::move(cfg)), encoder_(std::move(encoder)) {
        cfg_.validate();
    }

    const ModelConfig& config() const { return cfg_; }
    const Encoder& encoder() const { return encoder_; }

    template <typename T>
    ModelOutput<T> forward(Context<T>& ctx, const Tensor<T>& image) const {
        static_assert(FeatureExtractor<Encoder, T>);
        const int H = image.shape().h;
        const int W = image.shape().w;
        check_input_size(H, W);
        auto& tape = ctx.tape;
        const auto pyramid = encoder_.extract(ctx, image);

        std::array<Tensor<T>, kPyramidLevels> scm;
        for (int i = 1; i <= kPyramidLevels; ++i) {
            scm[static_cast<std::size_t>(i - 1)] =
                scm_forward(ctx, "scm" + std::to_string(i), pyramid.level(i), cfg_);
        }

        // Top-down cascade: D5 = T5, D_i = CFM(Up(D_{i+1}), T_i).
        std::array<Tensor<T>, kSideOutputs> decoded;
        Tensor<T> upper = scm[4];
        for (int i = kSideOutputs; i >= 1; --i) {
            const auto& lateral = scm[static_cast<std::size_t>(i - 1)];
            auto up = bilinear_resize(tape, upper, lateral.shape().h, lateral.shape().w);
            upper = cfm_forward(ctx, "cfm" + std::to_string(i), up, lateral, cfg_);
            decoded[static_cast<std::size_t>(i - 1)] = upper;
        }

        auto egm = egm_forward(ctx, pyramid.level(1), pyramid.level(2), pyramid.level(5), cfg_, H, W);

        ModelOutput<T> out;
        for (int i = 1; i <= kSideOutputs; ++i) {
            const auto idx = static_cast<std::size_t>(i - 1);
            auto weighted = edge_weight(ctx, decoded[idx], egm.feature);
            out.side[idx] = side_head(ctx, "head" + std::to_string(i), weighted, cfg_, H, W);
        }
        out.edge = egm.logits;
        out.edge_feature = egm.feature;
        return out;
    }

   private:
    ModelConfig cfg_;
    Encoder encoder_;
};

template <typename T>
ModelOutput<T> forward(Context<T>& ctx, const Tensor<T>& image, const ModelConfig& cfg) {
    return EfaNet<>(cfg).forward(ctx, image);
}

// Creates all parameters by tracing a forward pass on a minimal input.
template <typename T>
ParamStore<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamStore<T> store(seed);
    Tape<T> tape(false);
    Context<T> ctx{tape, store, Mode::eval};
    forward(ctx, Tensor<T>(Shape{1, cfg.backbone.input_channels, kInputMultiple, kInputMultiple}), cfg);
    store.freeze();
    return store;
}

template <typename T>
struct LossBreakdown {
    std::array<double, kSideOutputs> seg{};
    double edge = 0;
    double total = 0;
    Tensor<T> total_tensor;  // differentiable total
};

// sum_i seg_loss(S_i, G) + beta * BCE(Se, Ge).
template <typename T>
LossBreakdown<T> total_loss(Tape<T>& tape, const ModelOutput<T>& out, const Tensor<T>& mask, const Tensor<T>& edge,
                            const ModelConfig& cfg) {
    require_binary("total_loss: edge target", edge);
    LossBreakdown<T> lb;
    Tensor<T> acc;
    for (std::size_t i = 0; i < kSideOutputs; ++i) {
        auto li = seg_loss(tape, out.side[i], mask);
        lb.seg[i] = static_cast<double>(li.item());
        acc = acc.defined() ? add(tape, acc, li) : li;
    }
    auto le = weighted_bce(tape, out.edge, edge, Tensor<T>::ones(edge.shape()));
    lb.edge = static_cast<double>(le.item());
    lb.total_tensor = add(tape, acc, scale(tape, le, static_cast<T>(cfg.beta_edge)));
    lb.total = static_cast<double>(lb.total_tensor.item());
    return lb;
}

}  // namespace efanet
