#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = EIGENLEN_CLI_PATH;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("eigenlen_cli_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& sub) const { return (path / sub).string(); }
};

int run(const std::string& args) {
    const std::string cmd = kCli + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string run_capture(const std::string& args, const std::string& stdout_path) {
    const std::string cmd = kCli + " " + args + " > " + stdout_path + " 2>&1";
    const int status = std::system(cmd.c_str());
    EXPECT_EQ(WEXITSTATUS(status), 0) << "command failed: " << cmd;
    std::ifstream in(stdout_path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Cli, GenIsDeterministic) {
    TempDir dir;
    ASSERT_EQ(run("gen --task sphere --n 60 --env-points 24 --obj-points 24 --seed 7 --out " +
                  (dir / "a")),
              0);
    ASSERT_EQ(run("gen --task sphere --n 60 --env-points 24 --obj-points 24 --seed 7 --out " +
                  (dir / "b")),
              0);
    EXPECT_EQ(file_bytes(dir / "a/dataset.jsonl"), file_bytes(dir / "b/dataset.jsonl"));
    EXPECT_TRUE(fs::exists(dir / "a/manifest.json"));
}

TEST(Cli, TrainEvalPipeline) {
    TempDir dir;
    ASSERT_EQ(run("gen --task sphere --n 120 --env-points 24 --obj-points 24 --seed 3 --out " +
                  (dir / "data")),
              0);
    const std::string data = dir / "data/dataset.jsonl";
    const std::string before = file_bytes(data);
    ASSERT_EQ(run("train --data " + data + " --family implicit --epochs 2 --seed 1 --out " +
                  (dir / "train")),
              0);
    const std::string out =
        run_capture("eval --checkpoint " + (dir / "train/checkpoint.json") + " --data " + data +
                        " --out " + (dir / "eval"),
                    dir / "eval_stdout.txt");
    // a single accuracy line with a value in [0, 1]
    ASSERT_EQ(out.rfind("accuracy ", 0), 0u) << out;
    const double acc = std::stod(out.substr(9));
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
    EXPECT_EQ(file_bytes(data), before);  // inputs never mutated

    const json manifest = json::parse(file_bytes(dir / "train/manifest.json"));
    EXPECT_EQ(manifest.at("command"), "train");
    EXPECT_TRUE(manifest.contains("seeds"));
    EXPECT_TRUE(manifest.contains("outputs"));
    EXPECT_TRUE(manifest.contains("wall_time_seconds"));
}

TEST(Cli, OracleAnalyzeGivesPerfectCorrelation) {
    TempDir dir;
    ASSERT_EQ(run("gen --task tube --n 80 --env-points 24 --obj-points 24 --seed 5 --out " +
                  (dir / "data")),
              0);
    ASSERT_EQ(run("analyze --oracle --data " + (dir / "data/dataset.jsonl") +
                  " --samples 64 --out " + (dir / "analyze")),
              0);
    const json rep = json::parse(file_bytes(dir / "analyze/correlation.json"));
    for (const auto& row : rep.at("r2")) {
        double best = 0.0;
        for (const auto& v : row) best = std::max(best, v.get<double>());
        EXPECT_NEAR(best, 1.0, 1e-9);
    }
    for (int m : rep.at("matching")) EXPECT_GE(m, 0);
    EXPECT_TRUE(fs::exists(dir / "analyze/scatter.csv"));
}

TEST(Cli, ExitCodes) {
    TempDir dir;
    EXPECT_EQ(run("definitely-not-a-command"), 1);
    EXPECT_EQ(run("train --data " + (dir / "missing.jsonl") + " --out " + (dir / "x")), 2);
    EXPECT_EQ(run("gen --out " + (dir / "x")), 1);  // --task missing
}

TEST(Cli, ConfigFileDrivesGen) {
    TempDir dir;
    {
        std::ofstream cfg(dir / "run.toml");
        cfg << "seed = 11\n"
            << "out = \"" << (dir / "from_config") << "\"\n\n"
            << "[dataset]\n"
            << "task = \"cylinder\"\n"
            << "n_samples = 40\n"
            << "env_points = 24\n"
            << "obj_points = 24\n";
    }
    ASSERT_EQ(run("gen --config " + (dir / "run.toml")), 0);
    EXPECT_TRUE(fs::exists(dir / "from_config/dataset.jsonl"));
    const json manifest = json::parse(file_bytes(dir / "from_config/manifest.json"));
    EXPECT_EQ(manifest.at("config").at("dataset").at("task"), "cylinder");
}
