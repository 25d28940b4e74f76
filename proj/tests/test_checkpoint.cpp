#include <gtest/gtest.h>

#include <filesystem>

#include "efanet/checkpoint.hpp"
#include "support/model_fixtures.hpp"

using namespace efanet;

namespace {

std::string temp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "efanet_test_checkpoint";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

RunConfig tiny_run() {
    RunConfig c;
    c.model = efanet::testing::tiny_config();
    c.seed = 3;
    return c;
}

// A store with non-trivial BN statistics and Adam moments after two steps.
struct Trained {
    RunConfig cfg = tiny_run();
    ParamStore<float> store = init_params<float>(cfg.model, 3);
    AdamState<float> adam{AdamOptions{1e-3}};

    Trained() {
        const auto samples = efanet::testing::toy_samples(2, 32, 1, 4);
        const auto b = make_batch<float>(samples);
        auto params = store.parameters();
        for (int i = 0; i < 2; ++i) {
            Tape<float> tape;
            Context<float> ctx{tape, store, Mode::train};
            auto lb = total_loss(tape, forward(ctx, b.image, cfg.model), b.mask, b.edge, cfg.model);
            backward(lb.total_tensor, tape);
            adam_step(std::span<Tensor<float>>(params), adam);
        }
    }
};

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    Trained t;
    const auto path = temp_path("a.efac");
    save_checkpoint(path, make_checkpoint(t.cfg, 2, t.store, &t.adam));
    const auto loaded = load_checkpoint(path);
    const auto again = temp_path("b.efac");
    save_checkpoint(again, loaded);
    EXPECT_EQ(detail::read_file(path), detail::read_file(again));

    // and through a freshly restored store
    auto fresh = init_params<float>(loaded.config.model, 99);
    AdamState<float> adam2;
    restore(loaded, fresh, &adam2);
    const auto third = temp_path("c.efac");
    save_checkpoint(third, make_checkpoint(loaded.config, loaded.step, fresh, &adam2));
    EXPECT_EQ(detail::read_file(path), detail::read_file(third));
}

TEST(Checkpoint, RestoresExactValues) {
    Trained t;
    const auto path = temp_path("exact.efac");
    save_checkpoint(path, make_checkpoint(t.cfg, 2, t.store, &t.adam));
    const auto ck = load_checkpoint(path);
    EXPECT_EQ(ck.version, kCheckpointVersion);
    EXPECT_EQ(ck.step, 2);
    EXPECT_EQ(ck.config, t.cfg);
    EXPECT_TRUE(ck.has_optimizer_state());

    auto fresh = init_params<float>(ck.config.model, 42);
    AdamState<float> adam;
    restore(ck, fresh, &adam);
    auto same = [](const auto& a, const auto& b) {
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_EQ(a[i].name, b[i].name);
            for (std::size_t k = 0; k < a[i].tensor.numel(); ++k)
                ASSERT_EQ(a[i].tensor.data()[k], b[i].tensor.data()[k]) << a[i].name;
        }
    };
    same(t.store.named_parameters(), fresh.named_parameters());
    same(t.store.named_buffers(), fresh.named_buffers());
    EXPECT_EQ(adam.m, t.adam.m);
    EXPECT_EQ(adam.v, t.adam.v);
    EXPECT_EQ(adam.step, 2);
    // running statistics moved away from their initial values
    EXPECT_NE(fresh.named_buffers().front().tensor.data()[0], 0.0f);
}

TEST(Checkpoint, WithoutOptimizerState) {
    Trained t;
    const auto ck = decode_checkpoint(encode_checkpoint(make_checkpoint(t.cfg, 0, t.store)));
    EXPECT_FALSE(ck.has_optimizer_state());
    EXPECT_EQ(ck.tensors.size(), t.store.named_parameters().size() + t.store.named_buffers().size());
}

TEST(Checkpoint, VersionCheckedBeforeTensors) {
    Trained t;
    auto bytes = encode_checkpoint(make_checkpoint(t.cfg, 1, t.store));
    bytes[4] = 2;  // version field
    bytes.resize(40);  // garbage from here on would fail later checks
    try {
        decode_checkpoint(bytes);
        FAIL() << "version 2 accepted";
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos) << e.what();
    }
}

TEST(Checkpoint, RejectsCorruptFiles) {
    Trained t;
    const auto bytes = encode_checkpoint(make_checkpoint(t.cfg, 1, t.store));
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bad_magic), CheckpointError);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    EXPECT_THROW(decode_checkpoint(truncated), CheckpointError);
    EXPECT_THROW(load_checkpoint(temp_path("missing.efac") + ".nope"), CheckpointError);
}

TEST(Checkpoint, ModelMismatchReportsFields) {
    Trained t;
    const auto ck = decode_checkpoint(encode_checkpoint(make_checkpoint(t.cfg, 1, t.store)));
    RunConfig other = t.cfg;
    other.model.backbone.channels[4] = 16;
    try {
        require_same_model(ck, other);
        FAIL() << "mismatch accepted";
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("model.backbone.channels: 4, 6, 8, 8, 8 vs 4, 6, 8, 8, 16"),
                  std::string::npos)
            << e.what();
    }
    auto wrong = init_params<float>(other.model, 1);
    EXPECT_THROW(restore(ck, wrong), CheckpointError);
    other = t.cfg;
    other.train.lr = 0.5;  // training settings do not matter for the model
    EXPECT_NO_THROW(require_same_model(ck, other));
}
