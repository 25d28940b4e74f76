#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <unordered_map>
#include <vector>

#include "efanet/config.hpp"
#include "efanet/errors.hpp"
#include "efanet/image_io.hpp"
#include "efanet/optim.hpp"
#include "efanet/params.hpp"

namespace efanet {

// "EFAC", u32 version, u32 length + UTF-8 config echo, then records until
// end of file: u32 length + name, u32 rank, rank x u32 extents, float32 LE.
inline constexpr std::array<char, 4> kCheckpointMagic{'E', 'F', 'A', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kAdamFirstPrefix = "adam.m:";
inline constexpr const char* kAdamSecondPrefix = "adam.v:";

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> extents;
    std::vector<float> values;
    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    RunConfig config;
    std::int64_t step = 0;
    std::vector<NamedTensor> tensors;  // parameters, buffers, then optional Adam moments

    const NamedTensor* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }
    bool has_optimizer_state() const {
        for (const auto& t : tensors)
            if (t.name.starts_with(kAdamFirstPrefix)) return true;
        return false;
    }
};

inline std::string checkpoint_echo(const RunConfig& c, std::int64_t step) {
    return "checkpoint.step = " + std::to_string(step) + "\n" + serialize_config(c);
}

namespace detail {

inline NamedTensor to_named(const std::string& name, const Tensor<float>& t) {
    const Shape s = t.shape();
    NamedTensor out{name,
                    {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
                     static_cast<std::uint32_t>(s.w)},
                    {}};
    out.values.assign(t.data().begin(), t.data().end());
    return out;
}

inline NamedTensor moment(const std::string& prefix, const std::string& name, const Tensor<float>& like,
                          const std::vector<float>& values) {
    NamedTensor out = to_named(prefix + name, like);
    out.values = values;
    return out;
}

inline Shape shape_of(const NamedTensor& t) {
    if (t.extents.size() != 4) throw CheckpointError("tensor '" + t.name + "' has rank " + std::to_string(t.extents.size()));
    return Shape{static_cast<int>(t.extents[0]), static_cast<int>(t.extents[1]), static_cast<int>(t.extents[2]),
                 static_cast<int>(t.extents[3])};
}

}  // namespace detail

inline Checkpoint make_checkpoint(const RunConfig& config, std::int64_t step, const ParamStore<float>& store,
                                  const AdamState<float>* adam = nullptr) {
    Checkpoint ck;
    ck.config = config;
    ck.step = step;
    for (const auto& e : store.named_parameters()) ck.tensors.push_back(detail::to_named(e.name, e.tensor));
    for (const auto& e : store.named_buffers()) ck.tensors.push_back(detail::to_named(e.name, e.tensor));
    if (adam && !adam->m.empty()) {
        const auto& ps = store.named_parameters();
        for (std::size_t i = 0; i < ps.size(); ++i)
            ck.tensors.push_back(detail::moment(kAdamFirstPrefix, ps[i].name, ps[i].tensor, adam->m[i]));
        for (std::size_t i = 0; i < ps.size(); ++i)
            ck.tensors.push_back(detail::moment(kAdamSecondPrefix, ps[i].name, ps[i].tensor, adam->v[i]));
    }
    return ck;
}

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
    std::vector<unsigned char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    auto put_string = [&](const std::string& s) {
        detail::put_u32(out, static_cast<std::uint32_t>(s.size()));
        out.insert(out.end(), s.begin(), s.end());
    };
    detail::put_u32(out, ck.version);
    put_string(checkpoint_echo(ck.config, ck.step));
    for (const auto& t : ck.tensors) {
        put_string(t.name);
        detail::put_u32(out, static_cast<std::uint32_t>(t.extents.size()));
        for (auto e : t.extents) detail::put_u32(out, e);
        for (float v : t.values) detail::put_f32(out, v);
    }
    return out;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    try {
        detail::write_file(path, encode_checkpoint(ck));
    } catch (const DataError& e) {
        throw CheckpointError(e.what());
    }
}

inline Checkpoint decode_checkpoint(std::span<const unsigned char> buf, const std::string& origin = "checkpoint") {
    auto fail = [&](const std::string& why) { return CheckpointError(origin + ": " + why); };
    if (buf.size() < 8 || std::memcmp(buf.data(), kCheckpointMagic.data(), 4) != 0) throw fail("not an EFAC checkpoint");
    Checkpoint ck;
    ck.version = detail::get_u32(buf, 4);
    if (ck.version != kCheckpointVersion) {
        throw fail("format version " + std::to_string(ck.version) + " is not supported (expected " +
                   std::to_string(kCheckpointVersion) + ")");
    }
    std::size_t pos = 8;
    auto need = [&](std::size_t n) {
        if (buf.size() - pos < n) throw fail("truncated at byte " + std::to_string(pos));
    };
    auto get_u32 = [&] {
        need(4);
        const auto v = detail::get_u32(buf, pos);
        pos += 4;
        return v;
    };
    auto get_string = [&] {
        const std::uint32_t n = get_u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    };

    std::string echo = get_string();
    const std::string step_key = "checkpoint.step = ";
    if (!echo.starts_with(step_key)) throw fail("config echo lacks the step counter");
    const auto nl = echo.find('\n');
    detail::parse_value("checkpoint.step", std::string_view(echo).substr(step_key.size(), nl - step_key.size()), ck.step);
    try {
        ck.config = parse_config(std::string_view(echo).substr(nl + 1));
    } catch (const ConfigError& e) {
        throw fail(std::string("config echo: ") + e.what());
    }

    while (pos < buf.size()) {
        NamedTensor t;
        t.name = get_string();
        const std::uint32_t rank = get_u32();
        if (rank > 8) throw fail("tensor '" + t.name + "' has implausible rank " + std::to_string(rank));
        std::size_t count = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            t.extents.push_back(get_u32());
            count *= t.extents.back();
        }
        need(4 * count);
        t.values.resize(count);
        for (std::size_t i = 0; i < count; ++i) t.values[i] = detail::get_f32(buf, pos + 4 * i);
        pos += 4 * count;
        ck.tensors.push_back(std::move(t));
    }
    return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::vector<unsigned char> buf;
    try {
        buf = detail::read_file(path);
    } catch (const DataError& e) {
        throw CheckpointError(e.what());
    }
    return decode_checkpoint(buf, path);
}

// Copies every parameter and buffer of the store from the checkpoint, and
// the Adam moments when requested and present.
inline void restore(const Checkpoint& ck, ParamStore<float>& store, AdamState<float>* adam = nullptr) {
    auto copy_into = [&](const std::string& name, Tensor<float>& dst) {
        const NamedTensor* src = ck.find(name);
        if (!src) throw CheckpointError("checkpoint has no tensor '" + name + "'");
        if (detail::shape_of(*src) != dst.shape()) {
            throw CheckpointError("checkpoint tensor '" + name + "' has shape " + to_string(detail::shape_of(*src)) +
                                  ", model expects " + to_string(dst.shape()));
        }
        std::copy(src->values.begin(), src->values.end(), dst.data().begin());
    };
    for (auto& e : store.named_parameters()) copy_into(e.name, e.tensor);
    for (auto& e : store.named_buffers()) copy_into(e.name, e.tensor);
    if (adam && ck.has_optimizer_state()) {
        const auto& ps = store.named_parameters();
        adam->m.assign(ps.size(), {});
        adam->v.assign(ps.size(), {});
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const auto* m = ck.find(kAdamFirstPrefix + ps[i].name);
            const auto* v = ck.find(kAdamSecondPrefix + ps[i].name);
            if (!m || !v || m->values.size() != ps[i].tensor.numel() || v->values.size() != ps[i].tensor.numel()) {
                throw CheckpointError("checkpoint optimizer state incomplete for '" + ps[i].name + "'");
            }
            adam->m[i] = m->values;
            adam->v[i] = v->values;
        }
        adam->step = ck.step;
    }
}

// Rebuilds the model described by the checkpoint's own config echo.
inline ParamStore<float> model_from_checkpoint(const Checkpoint& ck) {
    auto store = init_params<float>(ck.config.model, 0);
    restore(ck, store);
    return store;
}

// Rejects a checkpoint whose model differs from the expected config.
inline void require_same_model(const Checkpoint& ck, const RunConfig& expected) {
    const auto diff = config_diff(ck.config, expected, "model.");
    if (!diff.empty()) throw CheckpointError("checkpoint model does not match config (checkpoint vs config):" + describe(diff));
}

}  // namespace efanet
