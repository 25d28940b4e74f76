#pragma once

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "efanet/batch.hpp"
#include "efanet/checkpoint.hpp"
#include "efanet/config.hpp"
#include "efanet/data.hpp"
#include "efanet/efa_net.hpp"
#include "efanet/image_io.hpp"
#include "efanet/metrics.hpp"
#include "efanet/optim.hpp"
#include "efanet/report.hpp"

namespace efanet {

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainLogRow {
    std::int64_t step = 0;
    int epoch = 0;
    int size = 0;
    double lr = 0;
    double total = 0;
    std::array<double, kSideOutputs> seg{};
    double edge = 0;
};

inline std::string train_log_header() { return "step\tepoch\tsize\tlr\ttotal\tseg1\tseg2\tseg3\tseg4\tedge\n"; }

inline std::string train_log_line(const TrainLogRow& r) {
    std::string s = std::to_string(r.step) + '\t' + std::to_string(r.epoch) + '\t' + std::to_string(r.size) + '\t' +
                    detail::fmt(r.lr) + '\t' + detail::fmt(r.total);
    for (double v : r.seg) s += '\t' + detail::fmt(v);
    return s + '\t' + detail::fmt(r.edge) + '\n';
}

struct TrainResult {
    std::int64_t steps = 0;
    std::vector<TrainLogRow> log;
    std::string log_path;
    std::string final_checkpoint;
    ParamStore<float> params;
};

inline std::vector<SegSample> load_split(const DatasetManifest& m, const std::string& split, int channels, int edge_radius) {
    std::vector<SegSample> out;
    for (const auto& e : m.split(split)) out.push_back(load_sample(m, e, channels, edge_radius));
    if (out.empty()) throw ConfigError("manifest has no '" + split + "' rows");
    return out;
}

inline std::string checkpoint_path(const std::string& dir, std::int64_t step) {
    return (std::filesystem::path(dir) / ("step_" + std::to_string(step) + ".efac")).string();
}

// Seeded training run. Everything the run needs is validated before the
// first optimizer step; a non-finite loss aborts with NumericError.
inline TrainResult train(const RunConfig& cfg, const std::function<void(const TrainLogRow&)>& on_step = {}) {
    cfg.validate();
    DatasetManifest manifest;
    std::vector<SegSample> samples;
    try {
        manifest = read_manifest(cfg.manifest);
        samples = load_split(manifest, cfg.train_split, cfg.model.backbone.input_channels, cfg.aug.edge_radius);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }

    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(cfg.train.output_dir, ec);
    TrainResult result;
    result.log_path = (fs::path(cfg.train.output_dir) / "train_log.tsv").string();
    std::ofstream log(result.log_path, std::ios::binary);
    if (ec || !log) throw ConfigError("output directory '" + cfg.train.output_dir + "' is not writable");
    log << train_log_header();
    save_config((fs::path(cfg.train.output_dir) / "config.txt").string(), cfg);

    auto store = init_params<float>(cfg.model, cfg.seed);
    auto params = store.parameters();
    AdamState<float> adam{AdamOptions{cfg.train.lr}};
    std::mt19937_64 rng(cfg.seed ^ 0xD1B54A32D192ED03ull);
    std::vector<std::size_t> order(samples.size());
    std::string last_good = "none";

    auto save = [&](std::int64_t step, const std::string& path) {
        save_checkpoint(path, make_checkpoint(cfg, step, store, &adam));
        last_good = path;
    };

    std::int64_t step = 0;
    bool done = false;
    for (int epoch = 0; epoch < cfg.train.epochs && !done; ++epoch) {
        adam.options.lr = cfg.train.lr * std::pow(cfg.train.lr_decay, epoch);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size() && !done; start += cfg.train.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.train.batch_size));
            const double ratio = cfg.aug.scale_ratios[std::uniform_int_distribution<std::size_t>(
                0, cfg.aug.scale_ratios.size() - 1)(rng)];
            const int size = scaled_size(cfg.aug.target_size, ratio);
            std::vector<SegSample> batch;
            for (std::size_t k = start; k < end; ++k)
                batch.push_back(rescale(augment(samples[order[k]], rng, cfg.aug), size, size, cfg.aug.edge_radius));
            const auto b = make_batch<float>(batch);

            Tape<float> tape;
            Context<float> ctx{tape, store, Mode::train};
            auto lb = total_loss(tape, forward(ctx, b.image, cfg.model), b.mask, b.edge, cfg.model);
            if (!std::isfinite(lb.total)) {
                throw NumericError("non-finite loss at step " + std::to_string(step + 1) +
                                   "; last good checkpoint: " + last_good);
            }
            backward(lb.total_tensor, tape);
            adam_step(std::span<Tensor<float>>(params), adam);
            ++step;

            TrainLogRow row{step, epoch, size, adam.options.lr, lb.total, lb.seg, lb.edge};
            log << train_log_line(row) << std::flush;
            result.log.push_back(row);
            if (on_step) on_step(row);
            if (cfg.train.checkpoint_every > 0 && step % cfg.train.checkpoint_every == 0)
                save(step, checkpoint_path(cfg.train.output_dir, step));
            done = cfg.train.max_steps > 0 && step >= cfg.train.max_steps;
        }
    }
    result.steps = step;
    result.final_checkpoint = (fs::path(cfg.train.output_dir) / "final.efac").string();
    save(step, result.final_checkpoint);
    result.params = std::move(store);
    return result;
}

// ---------------------------------------------------------------------------
// Inference and evaluation
// ---------------------------------------------------------------------------

// sigmoid(S1) for one image: resized to target, eval-mode forward, resized back.
inline ProbMap predict_map(const ParamStore<float>& store, const RunConfig& cfg, const Image& image) {
    const int t = cfg.aug.target_size;
    const Image in = resize_bilinear(match_channels(image, cfg.model.backbone.input_channels), t, t);
    Tensor<float> x(Shape{1, in.channels, t, t});
    std::copy(in.pixels.begin(), in.pixels.end(), x.data().begin());
    Tape<float> tape(false);
    Context<float> ctx{tape, const_cast<ParamStore<float>&>(store), Mode::eval};
    const auto out = forward(ctx, x, cfg.model);
    return resize_prob_map(probability_map(out.side[0]), image.height, image.width);
}

inline int worker_count(int requested = 0) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("EFANET_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return 1;
}

struct EvalOptions {
    std::string split = "test";
    bool oracle = false;  // score each ground truth as its own prediction
    int threads = 0;      // 0: EFANET_THREADS or 1
};

struct EvalResult {
    MetricReport report;
    CurveSet curves;
};

inline EvalResult evaluate(const ParamStore<float>* store, const RunConfig& cfg, const DatasetManifest& m,
                           const EvalOptions& opt = {}) {
    if (!store && !opt.oracle) throw CheckpointError("evaluation needs model parameters");
    const auto entries = m.split(opt.split);
    if (entries.empty()) throw ConfigError("manifest has no '" + opt.split + "' rows");
    std::vector<MetricRecord> records(entries.size());
    std::vector<PrCounts> counts(entries.size());
    std::vector<std::string> errors(entries.size());
    std::atomic<std::size_t> next{0};

    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < entries.size();) {
            try {
                const auto s = load_sample(m, entries[i], cfg.model.backbone.input_channels, cfg.aug.edge_radius);
                ProbMap p(s.mask.height, s.mask.width);
                if (opt.oracle) {
                    for (std::size_t k = 0; k < p.size(); ++k) p.values[k] = s.mask.values[k];
                } else {
                    p = predict_map(*store, cfg, s.image);
                }
                records[i] = evaluate_image(s.id, p, s.mask, cfg.eval);
                counts[i] = pr_counts(p, s.mask);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    const int n = std::min<int>(worker_count(opt.threads), static_cast<int>(entries.size()));
    {
        std::vector<std::jthread> pool;
        for (int k = 1; k < n; ++k) pool.emplace_back(work);
        work();
    }
    for (const auto& e : errors)
        if (!e.empty()) throw DataError(e);

    CurveAccumulator acc(cfg.eval.curve_beta2);
    for (const auto& c : counts) acc.add(c);
    return {MetricReport::build(std::move(records), cfg.eval), acc.finish()};
}

}  // namespace efanet
