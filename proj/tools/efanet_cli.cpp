#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "efanet/efanet.hpp"

namespace {

using namespace efanet;

enum ExitCode : int { kOk = 0, kOther = 1, kConfig = 2, kCheckpoint = 3, kNumeric = 4 };

int cmd_train(const std::string& config_path, bool quiet) {
    const RunConfig cfg = load_config(config_path);
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = train(cfg, [&](const TrainLogRow& r) {
        if (!quiet && (r.step == 1 || r.step % 25 == 0)) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::fprintf(stderr, "step %lld epoch %d size %d loss %.4f (%.0fs)\n", static_cast<long long>(r.step),
                         r.epoch, r.size, r.total, secs);
        }
    });
    std::cout << "steps\t" << result.steps << "\nlog\t" << result.log_path << "\ncheckpoint\t" << result.final_checkpoint
              << "\n";
    return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest_path, const std::string& split, bool oracle,
             const std::string& config_path, const std::string& out_dir, int threads) {
    std::optional<Checkpoint> ck;
    RunConfig cfg;
    if (!checkpoint.empty()) {
        ck = load_checkpoint(checkpoint);
        cfg = ck->config;
    } else if (!oracle) {
        throw CheckpointError("eval needs --checkpoint unless --oracle is given");
    }
    if (!config_path.empty()) {
        const RunConfig given = load_config(config_path);
        if (ck) require_same_model(*ck, given);
        cfg = given;
    }
    DatasetManifest manifest;
    try {
        manifest = read_manifest(manifest_path);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    std::optional<ParamStore<float>> store;
    if (ck) store = model_from_checkpoint(*ck);
    const auto res = evaluate(store ? &*store : nullptr, cfg, manifest, EvalOptions{split, oracle, threads});
    std::filesystem::create_directories(out_dir);
    const auto paths = write_report(out_dir, res.report, res.curves, cfg.aug.edge_radius);
    const auto& r = res.report;
    std::cout << "images\t" << r.records.size() << "\nmDice\t" << r.mean_dice << "\nmIoU\t" << r.mean_iou
              << "\nS_alpha\t" << r.mean_s_alpha << "\nF_w\t" << r.mean_f_w << "\nE_mean\t" << r.mean_e << "\n";
    for (int b = 0; b < kScaleBuckets; ++b) {
        const auto& s = r.buckets.buckets[b];
        std::cout << "bucket_" << to_string(static_cast<ScaleBucket>(b)) << "\tn=" << s.count << "\tdice=" << s.dice
                  << "\tiou=" << s.iou << "\ts_alpha=" << s.s_alpha << "\n";
    }
    std::cout << "report\t" << paths.report << "\nsummary\t" << paths.summary << "\ncurves\t" << paths.curves << "\n";
    return kOk;
}

int cmd_predict(const std::string& checkpoint, const std::string& image_path, const std::string& out_path,
                const std::string& raw_path) {
    const auto ck = load_checkpoint(checkpoint);
    const auto store = model_from_checkpoint(ck);
    const Image img = read_pnm(image_path);
    const ProbMap p = predict_map(store, ck.config, img);
    Grid<std::uint8_t> bytes(p.height, p.width);
    for (std::size_t i = 0; i < p.size(); ++i) bytes.values[i] = to_byte(p.values[i]);
    write_pgm(out_path, bytes);
    if (!raw_path.empty()) {
        RawTensor t{{static_cast<std::uint32_t>(p.height), static_cast<std::uint32_t>(p.width)}, {}};
        t.values.assign(p.values.begin(), p.values.end());
        write_efat(raw_path, t);
    }
    return kOk;
}

int cmd_analyze(const std::string& config_path, int res) {
    const RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    try {
        std::cout << analyze_cost(cfg.model, res, res).table();
    } catch (const ShapeError& e) {
        throw ConfigError(e.what());
    }
    return kOk;
}

int cmd_synth(int n, int size, std::uint64_t seed, const std::string& out) {
    const auto m = synth_blob_dataset(n, size, seed, out);
    std::cout << "train\t" << m.split("train").size() << "\ntest\t" << m.split("test").size() << "\nmanifest\t"
              << (std::filesystem::path(out) / "manifest.tsv").string() << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"efanet polyp segmentation: train, evaluate, predict, analyze and synthesize data"};
    app.require_subcommand(1);

    std::string config, checkpoint, manifest, split = "test", image, out, raw, eval_out = "eval_out";
    bool oracle = false, quiet = false;
    int threads = 0, res = 352, n = 200, size = 64;
    std::uint64_t seed = 7;

    auto* train_cmd = app.add_subcommand("train", "train from a run config");
    train_cmd->add_option("--config", config, "run config file")->required();
    train_cmd->add_flag("--quiet", quiet, "suppress progress lines");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest split");
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file");
    eval_cmd->add_option("--manifest", manifest, "dataset manifest")->required();
    eval_cmd->add_option("--split", split, "manifest split to evaluate")->capture_default_str();
    eval_cmd->add_flag("--oracle", oracle, "score the ground truth as its own prediction");
    eval_cmd->add_option("--config", config, "run config; its model must match the checkpoint");
    eval_cmd->add_option("--out", eval_out, "report directory")->capture_default_str();
    eval_cmd->add_option("--threads", threads, "worker threads (default: EFANET_THREADS or 1)");

    auto* predict_cmd = app.add_subcommand("predict", "write the probability map of one image");
    predict_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    predict_cmd->add_option("--image", image, "input PGM/PPM image")->required();
    predict_cmd->add_option("--out", out, "output PGM path")->required();
    predict_cmd->add_option("--raw", raw, "optional float32 EFAT output path");

    auto* analyze_cmd = app.add_subcommand("analyze", "parameter and FLOP counts");
    analyze_cmd->add_option("--config", config, "run config (default model if omitted)");
    analyze_cmd->add_option("--res", res, "square input resolution")->capture_default_str();

    auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic blob dataset");
    synth_cmd->add_option("--n", n, "number of samples")->capture_default_str();
    synth_cmd->add_option("--size", size, "image side length")->capture_default_str();
    synth_cmd->add_option("--seed", seed, "generator seed")->capture_default_str();
    synth_cmd->add_option("--out", out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*train_cmd) return cmd_train(config, quiet);
        if (*eval_cmd) return cmd_eval(checkpoint, manifest, split, oracle, config, eval_out, threads);
        if (*predict_cmd) return cmd_predict(checkpoint, image, out, raw);
        if (*analyze_cmd) return cmd_analyze(config, res);
        if (*synth_cmd) return cmd_synth(n, size, seed, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kCheckpoint;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kOther;
    }
    return kOther;
}
