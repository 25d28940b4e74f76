#pragma once

#include <array>
#include <concepts>
#include <cstdint>
#include <string>

#include "efanet/params.hpp"

namespace efanet {

inline constexpr int kPyramidLevels = 5;
inline constexpr int kInputMultiple = 32;

struct BackboneConfig {
    int input_channels = 1;
    int stem_channels = 16;
    std::array<int, kPyramidLevels> channels{16, 24, 32, 48, 64};
    std::array<int, kPyramidLevels> blocks{1, 1, 1, 1, 1};

    void validate() const {
        if (input_channels < 1) throw ConfigError("backbone.input_channels must be positive");
        if (stem_channels < 1) throw ConfigError("backbone.stem_channels must be positive");
        for (int i = 0; i < kPyramidLevels; ++i) {
            if (channels[static_cast<std::size_t>(i)] < 1)
                throw ConfigError("backbone.channels[" + std::to_string(i) + "] must be positive");
            if (blocks[static_cast<std::size_t>(i)] < 1)
                throw ConfigError("backbone.blocks[" + std::to_string(i) + "] must be positive");
        }
    }

    friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

// F1..F5 at strides 2, 4, 8, 16, 32 (index 0 holds F1).
template <typename T>
struct FeaturePyramid {
    std::array<Tensor<T>, kPyramidLevels> levels;

    const Tensor<T>& level(int i) const { return levels[static_cast<std::size_t>(i - 1)]; }
};

inline void check_input_size(int h, int w) {
    if (h < kInputMultiple || w < kInputMultiple || h % kInputMultiple != 0 || w % kInputMultiple != 0) {
        throw ShapeError("input spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                         " must be a positive multiple of " + std::to_string(kInputMultiple));
    }
}

// Anything that can stand in for the encoder: produces the five-level
// pyramid and reports its per-level widths.
template <typename E, typename T>
concept FeatureExtractor = requires(const E& e, Context<T>& ctx, const Tensor<T>& image) {
    { e.extract(ctx, image) } -> std::same_as<FeaturePyramid<T>>;
    { e.level_channels() } -> std::same_as<std::array<int, kPyramidLevels>>;
};

// Small residual CNN: a stride-2 stem, then per level a 3x3 transition conv
// (stride 1 for level 1, stride 2 otherwise) and `blocks` basic residual
// blocks.
class ResidualPyramid {
   public:
    explicit ResidualPyramid(BackboneConfig config, std::string prefix = "backbone")
        : config_(std::move(config)), prefix_(std::move(prefix)) {
        config_.validate();
    }

    const BackboneConfig& config() const { return config_; }
    std::array<int, kPyramidLevels> level_channels() const { return config_.channels; }

    template <typename T>
    FeaturePyramid<T> extract(Context<T>& ctx, const Tensor<T>& image) const {
        const Shape s = image.shape();
        if (s.c != config_.input_channels) {
            throw ShapeError("backbone: image has " + std::to_string(s.c) + " channels, config expects " +
                             std::to_string(config_.input_channels));
        }
        check_input_size(s.h, s.w);

        FeaturePyramid<T> pyramid;
        auto x = conv_bn_relu(ctx, prefix_ + ".stem", image, ConvSpec{config_.stem_channels, 3, 2});
        for (int l = 1; l <= kPyramidLevels; ++l) {
            const auto li = static_cast<std::size_t>(l - 1);
            const std::string name = prefix_ + ".level" + std::to_string(l);
            x = conv_bn_relu(ctx, name + ".down", x, ConvSpec{config_.channels[li], 3, l == 1 ? 1 : 2});
            for (int b = 0; b < config_.blocks[li]; ++b) {
                x = residual_block(ctx, name + ".block" + std::to_string(b), x);
            }
            pyramid.levels[li] = x;
        }
        return pyramid;
    }

   private:
    template <typename T>
    static Tensor<T> residual_block(Context<T>& ctx, const std::string& name, const Tensor<T>& x) {
        const int c = x.shape().c;
        auto y = conv_bn_relu(ctx, name + ".conv1", x, ConvSpec{c, 3});
        y = conv(ctx, name + ".conv2.conv", y, ConvSpec{c, 3});
        y = bn(ctx, name + ".conv2.bn", y);
        return relu(ctx.tape, add(ctx.tape, x, y));
    }

    BackboneConfig config_;
    std::string prefix_;
};

static_assert(FeatureExtractor<ResidualPyramid, double>);
static_assert(FeatureExtractor<ResidualPyramid, float>);

template <typename T>
FeaturePyramid<T> extract_features(Context<T>& ctx, const Tensor<T>& image, const BackboneConfig& config) {
    return ResidualPyramid(config).extract(ctx, image);
}

// Creates every backbone parameter by tracing one forward pass on a minimal
// input; the returned store is frozen.
template <typename T>
ParamStore<T> init_backbone_params(const BackboneConfig& config, std::uint64_t seed) {
    ParamStore<T> store(seed);
    Tape<T> tape(false);
    Context<T> ctx{tape, store, Mode::eval};
    extract_features(ctx, Tensor<T>(Shape{1, config.input_channels, kInputMultiple, kInputMultiple}), config);
    store.freeze();
    return store;
}

}  // namespace efanet
