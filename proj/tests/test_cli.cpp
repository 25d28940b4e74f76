#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "efanet/efanet.hpp"

#ifndef EFANET_CLI_PATH
#error "EFANET_CLI_PATH must name the built command-line tool"
#endif

using namespace efanet;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
};

Run run(const std::string& args) {
    const std::string cmd = std::string(EFANET_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    std::string out;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
    const int status = pclose(pipe);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "efanet_test_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Tiny model, 32x32 data, two optimizer steps.
fs::path write_tiny_config(const fs::path& dir, const fs::path& manifest, const std::string& extra = "") {
    const auto path = dir / "run.cfg";
    std::ofstream(path) << "# tiny\n"
                        << "data.manifest = " << manifest.string() << "\n"
                        << "data.target_size = 32\n"
                        << "aug.scale_ratios = 1\n"
                        << "model.common_width = 8\n"
                        << "model.backbone.stem_channels = 4\n"
                        << "model.backbone.channels = 4, 6, 8, 8, 8\n"
                        << "train.batch_size = 4\n"
                        << "train.max_steps = 2\n"
                        << "train.output_dir = " << (dir / "run").string() << "\n"
                        << extra;
    return path;
}

}  // namespace

TEST(Cli, SynthSplitAndDeterminism) {
    const auto a = scratch("synth_a"), b = scratch("synth_b");
    const auto ra = run("synth --n 100 --size 32 --seed 3 --out " + a.string());
    ASSERT_EQ(ra.code, 0) << ra.out;
    EXPECT_NE(ra.out.find("train\t80"), std::string::npos);
    EXPECT_NE(ra.out.find("test\t20"), std::string::npos);
    ASSERT_EQ(run("synth --n 100 --size 32 --seed 3 --out " + b.string()).code, 0);
    EXPECT_EQ(slurp(a / "manifest.tsv"), slurp(b / "manifest.tsv"));
    const auto m = read_manifest((a / "manifest.tsv").string());
    EXPECT_EQ(m.split("train").size(), 80u);
    EXPECT_EQ(m.split("test").size(), 20u);
}

TEST(Cli, TrainEvalPredictRoundTrip) {
    const auto dir = scratch("flow");
    ASSERT_EQ(run("synth --n 10 --size 32 --seed 1 --out " + (dir / "data").string()).code, 0);
    const auto cfg = write_tiny_config(dir, dir / "data" / "manifest.tsv");
    const auto tr = run("train --quiet --config " + cfg.string());
    ASSERT_EQ(tr.code, 0) << tr.out;
    const auto ck = dir / "run" / "final.efac";
    ASSERT_TRUE(fs::exists(ck));

    const auto ev = run("eval --checkpoint " + ck.string() + " --manifest " + (dir / "data" / "manifest.tsv").string() +
                        " --split test --out " + (dir / "eval").string());
    ASSERT_EQ(ev.code, 0) << ev.out;
    const auto report = slurp(dir / "eval" / "report.tsv");
    EXPECT_EQ(std::count(report.begin(), report.end(), '\n'), 1 + 2 + 3 + 1);

    const auto pr = run("predict --checkpoint " + ck.string() + " --image " +
                        (dir / "data" / "images" / "blob_0000.pgm").string() + " --out " + (dir / "p.pgm").string() +
                        " --raw " + (dir / "p.efat").string());
    ASSERT_EQ(pr.code, 0) << pr.out;
    const auto p = read_pnm((dir / "p.pgm").string());
    EXPECT_EQ(p.height, 32);
    EXPECT_EQ(p.width, 32);
    const auto raw = read_efat((dir / "p.efat").string());
    EXPECT_EQ(raw.extents, (std::vector<std::uint32_t>{32, 32}));

    // eval with a config whose model differs from the checkpoint
    const auto other = scratch("flow_other");
    const auto bad_cfg = write_tiny_config(other, dir / "data" / "manifest.tsv", "model.common_width = 12\n");
    std::string text = slurp(bad_cfg);
    text.replace(text.find("model.common_width = 8\n"), 23, "");
    std::ofstream(bad_cfg) << text;
    const auto mismatch = run("eval --checkpoint " + ck.string() + " --manifest " +
                              (dir / "data" / "manifest.tsv").string() + " --config " + bad_cfg.string() +
                              " --out " + (other / "eval").string());
    EXPECT_EQ(mismatch.code, 3) << mismatch.out;
    EXPECT_NE(mismatch.out.find("model.common_width: 8 vs 12"), std::string::npos) << mismatch.out;
}

TEST(Cli, OracleEval) {
    const auto dir = scratch("oracle");
    ASSERT_EQ(run("synth --n 10 --size 32 --seed 2 --out " + (dir / "data").string()).code, 0);
    const auto r = run("eval --oracle --manifest " + (dir / "data" / "manifest.tsv").string() + " --out " +
                       (dir / "eval").string());
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("mDice\t1\n"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("mIoU\t1\n"), std::string::npos) << r.out;
}

TEST(Cli, ExitCodes) {
    const auto dir = scratch("codes");
    EXPECT_EQ(run("train --config " + (dir / "missing.cfg").string()).code, 2);
    std::ofstream(dir / "bad.cfg") << "model.common_width = wide\n";
    EXPECT_EQ(run("train --config " + (dir / "bad.cfg").string()).code, 2);
    EXPECT_EQ(run("eval --oracle --manifest " + (dir / "none.tsv").string()).code, 2);

    std::ofstream(dir / "junk.efac") << "EFAC-not-really";
    ASSERT_EQ(run("synth --n 5 --size 32 --seed 2 --out " + (dir / "data").string()).code, 0);
    EXPECT_EQ(run("eval --checkpoint " + (dir / "junk.efac").string() + " --manifest " +
                  (dir / "data" / "manifest.tsv").string())
                  .code,
              3);
    EXPECT_EQ(run("predict --checkpoint " + (dir / "junk.efac").string() + " --image x.pgm --out y.pgm").code, 3);

    const auto nan_cfg = write_tiny_config(dir, dir / "data" / "manifest.tsv", "train.lr = 1e38\n");
    std::string nan_text = slurp(nan_cfg);
    nan_text.replace(nan_text.find("train.max_steps = 2\n"), 20, "train.max_steps = 40\n");
    std::ofstream(nan_cfg) << nan_text;
    const auto nan = run("train --quiet --config " + nan_cfg.string());
    EXPECT_EQ(nan.code, 4) << nan.out;
    EXPECT_NE(nan.out.find("last good checkpoint"), std::string::npos);
    EXPECT_EQ(run("frobnicate").code, 2);
}

TEST(Cli, AnalyzeSingleResolution) {
    const auto r = run("analyze --res 64");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("total\t*\ttotal\t-\t1381502\t"), std::string::npos) << r.out.substr(r.out.size() - 300);
    EXPECT_EQ(run("analyze --res 50").code, 2);
}
