#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>

#include "knotforge/cli.hpp"
#include "knotforge/error.hpp"
#include "knotforge/io.hpp"
#include "knotforge/kernels.hpp"

using namespace knotforge;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::path(testing::TempDir()) / name;
    fs::remove_all(p);
    return p;
}

int run_cli(std::vector<std::string> args, std::string* err_text = nullptr) {
    std::ostringstream log, err;
    const int code = cli::main_entry(args, log, err);
    if (err_text != nullptr) *err_text = err.str();
    return code;
}

std::vector<std::string> read_lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

}  // namespace

TEST(Cli, ModeNames) {
    for (auto m : {cli::Mode::Rollout, cli::Mode::Baseline, cli::Mode::Iou, cli::Mode::Contribution,
                   cli::Mode::Bench}) {
        EXPECT_EQ(cli::parse_mode(cli::to_string(m)), m);
    }
    EXPECT_THROW(cli::parse_mode("train"), ConfigError);
}

TEST(Cli, IouWritesOneRowPerBoundary) {
    const auto dir = fresh_dir("kf_iou");
    ASSERT_EQ(run_cli({"--mode", "iou", "--c", "3", "--L", "6", "--k", "1", "--frames", "30",
                       "--out", dir.string()}),
              0);
    for (const char* name : {"GrowingCache", "SinkWindow", "KnotForcing"}) {
        const auto lines = read_lines(dir / (std::string("iou_") + name + ".csv"));
        ASSERT_EQ(lines.size(), 31u) << name;
        EXPECT_EQ(lines[0].rfind("# config_hash=", 0), 0u);
        EXPECT_EQ(lines[1], "design,t,iou");
        EXPECT_EQ(lines[2].rfind(std::string(name) + ",0,", 0), 0u);
    }
    const auto knot = read_lines(dir / "iou_KnotForcing.csv");
    EXPECT_EQ(knot[2 + 8], "KnotForcing,8,0.571428571");
}

TEST(Cli, RolloutDefaultsWriteFramesAndTraces) {
    const auto dir = fresh_dir("kf_rollout");
    ASSERT_EQ(run_cli({"--mode", "rollout", "--out", dir.string()}), 0);
    EXPECT_EQ(io::read_frames(dir / "frames").size(), 12u);
    const auto trace = read_lines(dir / "trace.jsonl");
    ASSERT_EQ(trace.size(), 5u);
    EXPECT_TRUE(nlohmann::json::parse(trace[0]).contains("config_hash"));
    EXPECT_EQ(nlohmann::json::parse(trace[4])["ref_pos"], 17);
    EXPECT_EQ(read_lines(dir / "cache_trace.jsonl").size(), 5u);
}

TEST(Cli, BaselineReferenceDefaultsPastLastFrame) {
    const auto spec = cli::parse_args({"--mode", "baseline", "--frames", "18"}, nullptr);
    EXPECT_EQ(spec.rollout.n0, 18);
    EXPECT_EQ(spec.rollout.k, 0u);
    EXPECT_FALSE(spec.rollout.running_ahead);
    const auto dir = fresh_dir("kf_baseline");
    EXPECT_EQ(run_cli({"--mode", "baseline", "--out", dir.string()}), 0);
    EXPECT_EQ(io::read_frames(dir / "frames").size(), 12u);
}

TEST(Cli, RolloutDefaultsFollowChunkSize) {
    const auto spec = cli::parse_args({"--c", "4", "--k", "2", "--frames", "16"}, nullptr);
    EXPECT_EQ(spec.rollout.n0, 7);
    EXPECT_EQ(spec.rollout.s, 8u);
}

TEST(Cli, MissingConfigExitsTwo) {
    std::string err;
    EXPECT_EQ(run_cli({"--config", "/nonexistent/knotforge.json"}, &err), 2);
    EXPECT_NE(err.find("config"), std::string::npos);
}

TEST(Cli, BadValuesExitTwo) {
    EXPECT_EQ(run_cli({"--frames", "10"}), 2);
    EXPECT_EQ(run_cli({"--mode", "nope"}), 2);
    EXPECT_EQ(run_cli({"--no-such-flag"}), 2);
    EXPECT_EQ(run_cli({"--ahead-interleave", "2"}), 2);
    const auto dir = fresh_dir("kf_badjson");
    fs::create_directories(dir);
    std::ofstream(dir / "c.json") << "{\"frames\": \"twelve\"}";
    EXPECT_EQ(run_cli({"--config", (dir / "c.json").string()}), 2);
}

TEST(Cli, NumericAbortExitsThree) {
    const auto dir = fresh_dir("kf_nan");
    fs::create_directories(dir);
    model::ModelConfig cfg;
    auto w = model::Weights::init(cfg);
    w.out_proj.data()[3] = std::numeric_limits<float>::infinity();
    io::save_weights(model::ToyDiT(cfg, w), dir / "w");
    std::string err;
    EXPECT_EQ(run_cli({"--load-weights", (dir / "w").string(), "--out", dir.string()}, &err), 3);
    EXPECT_NE(err.find("chunk 0"), std::string::npos);
}

TEST(Cli, DumpConfigRoundTrip) {
    const auto dir = fresh_dir("kf_dump");
    fs::create_directories(dir);
    const auto path = (dir / "resolved.json").string();
    const std::vector<std::string> args{"--mode", "contribution", "--frames", "21", "--c", "3",
                                        "--L", "7", "--seed", "9", "--model-seed", "4",
                                        "--anchor", "11", "--zero-drive", "--dump-config", path};
    std::optional<std::string> dump;
    const auto original = cli::parse_args(args, &dump);
    ASSERT_EQ(dump, path);
    ASSERT_EQ(run_cli(args), 0);
    auto reloaded = cli::parse_args({"--config", path}, nullptr);
    EXPECT_EQ(reloaded.config_path, path);
    reloaded.config_path.clear();
    EXPECT_TRUE(reloaded == original);
    EXPECT_EQ(cli::config_hash(reloaded), cli::config_hash(original));
}

TEST(Cli, FlagsOverrideConfigFile) {
    const auto dir = fresh_dir("kf_override");
    fs::create_directories(dir);
    std::ofstream(dir / "c.json") << R"({"frames": 24, "window": 8, "seed": 3})";
    const auto spec = cli::parse_args({"--config", (dir / "c.json").string(), "--seed", "5"}, nullptr);
    EXPECT_EQ(spec.rollout.frames, 24u);
    EXPECT_EQ(spec.rollout.L, 8u);
    EXPECT_EQ(spec.rollout.seed, 5u);
}

TEST(Cli, ContributionCsv) {
    const auto dir = fresh_dir("kf_contrib");
    ASSERT_EQ(run_cli({"--mode", "contribution", "--contribution-seeds", "2", "--out",
                       dir.string()}),
              0);
    const auto lines = read_lines(dir / "contribution.csv");
    ASSERT_GT(lines.size(), 2u);
    EXPECT_EQ(lines[1], "anchor,frame,score");
    EXPECT_EQ(lines[2].rfind("9,-1,", 0), 0u);
    EXPECT_EQ(read_lines(dir / "contribution_per_seed.csv").size(), 2 + 2 * (lines.size() - 2));
}

TEST(Cli, BenchReportsMatchingCounts) {
    const auto dir = fresh_dir("kf_bench");
    ASSERT_EQ(run_cli({"--mode", "bench", "--frames", "24", "--bench-repeats", "1", "--out",
                       dir.string()}),
              0);
    std::ifstream in(dir / "bench.json");
    const auto j = nlohmann::json::parse(in);
    EXPECT_TRUE(j["score_elements_match"].get<bool>());
    EXPECT_GT(j["fps"].get<double>(), 0.0);
    EXPECT_GT(j["chunk_ms"]["samples"].get<int>(), 0);
}

TEST(Cli, ThreadEnvironmentVariable) {
    const int before = kernels::max_threads();
    ::setenv("KNOTFORGE_THREADS", "2", 1);
    const auto dir = fresh_dir("kf_threads");
    EXPECT_EQ(run_cli({"--mode", "iou", "--frames", "6", "--out", dir.string()}), 0);
    EXPECT_EQ(kernels::max_threads(), 2);
    ::unsetenv("KNOTFORGE_THREADS");
    kernels::set_max_threads(before);
}

TEST(SynthDriving, ClosedFormAndDeterminism) {
    const auto a = cli::synth_driving(20, 8, 3);
    const auto b = cli::synth_driving(20, 8, 3);
    EXPECT_TRUE(a.per_frame.bit_equal(b.per_frame));
    EXPECT_FALSE(a.per_frame.bit_equal(cli::synth_driving(20, 8, 4).per_frame));
    const auto freq = cli::driving_frequencies(8, 3);
    for (std::size_t f = 0; f < 20; ++f) {
        for (std::size_t d = 0; d < 8; ++d) {
            const double expect = std::sin(2 * std::numbers::pi * f * freq[d].first + freq[d].second);
            EXPECT_NEAR(a.per_frame.at(f, d), expect, 1e-6);
        }
    }
    const auto z = cli::synth_driving(20, 8, 3, true);
    for (float x : z.per_frame.values()) EXPECT_EQ(x, 0.0f);
}
