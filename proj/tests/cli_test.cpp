#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "softsynth/container.hpp"
#include "softsynth/data.hpp"

namespace fs = std::filesystem;
using namespace softsynth;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "softsynth_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string at(const std::string& name) { return (workdir() / name).string(); }

int run(const std::string& args) {
  const std::string cmd = std::string(SOFTSYNTH_CLI) + " " + args + " > " + at("last.log") + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_log() {
  std::ifstream in(at("last.log"));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  return nlohmann::json::parse(in);
}

void write_text(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

// Builds the toy corpus, a tiny backbone and two representations once.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    ASSERT_EQ(run("toy --kind two-factor --vocab abcd --n 6 --seed 1 --out " + at("toy.jsonl")), 0) << last_log();
    ASSERT_EQ(run("toy --kind world --vocab abcd --chars 3000 --seed 2 --out " + at("world.jsonl")), 0) << last_log();
    write_text(at("pre.cfg"),
               "vocab = abcd\nd_model = 8\nn_layers = 1\nn_heads = 2\nmax_positions = 48\n"
               "max_steps = 20\nbatch_size = 4\nwindow = 16\neval_every = 10\n");
    ASSERT_EQ(run("pretrain --config " + at("pre.cfg") + " --corpus " + at("world.jsonl") + " --out " + at("bb.ckpt")), 0)
        << last_log();
    const std::string common = " --backbone " + at("bb.ckpt") + " --corpus " + at("toy.jsonl") +
                               " --k 2 --l 2 --steps 5 --batch-size 6 --max-len 8 --seed 3";
    ASSERT_EQ(run("train" + common + " --lambda 1 --out " + at("full.ckpt")), 0) << last_log();
    ASSERT_EQ(run("train" + common + " --lambda 0 --out " + at("base.ckpt")), 0) << last_log();
  }
};

}  // namespace

TEST_F(Pipeline, TrainWritesSidecarMetricsAndIsDeterministic) {
  const auto side = read_json(at("full.ckpt.config.json"));
  EXPECT_EQ(side["command"], "train");
  EXPECT_EQ(side.dump().find("\"k\":2") != std::string::npos || side.dump().find("\"k\": 2") != std::string::npos, true)
      << side.dump();
  EXPECT_TRUE(fs::exists(at("full.ckpt.metrics.jsonl")));
  const std::string common = " --backbone " + at("bb.ckpt") + " --corpus " + at("toy.jsonl") +
                             " --k 2 --l 2 --steps 5 --batch-size 6 --max-len 8 --seed 3";
  ASSERT_EQ(run("train" + common + " --lambda 1 --out " + at("again.ckpt")), 0) << last_log();
  EXPECT_EQ(file_digest(at("again.ckpt")), file_digest(at("full.ckpt")));
}

TEST_F(Pipeline, SynthesizeFilterPairDiagnose) {
  const std::string model = " --backbone " + at("bb.ckpt") + " --representation " + at("full.ckpt");
  ASSERT_EQ(run("synthesize" + model + " --count 20 --max-len 6 --seed 4 --out " + at("syn.jsonl")), 0) << last_log();
  ASSERT_EQ(run("synthesize" + model + " --count 20 --max-len 6 --seed 4 --out " + at("syn2.jsonl")), 0);
  EXPECT_EQ(file_digest(at("syn.jsonl")), file_digest(at("syn2.jsonl")));
  EXPECT_EQ(read_json(at("syn.jsonl.config.json"))["command"], "synthesize");

  ASSERT_EQ(run("filter --in " + at("syn.jsonl") + " --out " + at("kept.jsonl")), 0) << last_log();
  ASSERT_EQ(run("pair" + model + " --in " + at("kept.jsonl") + " --max-len 4 --out " + at("pairs.jsonl")), 0)
      << last_log();
  const Corpus pairs = load_corpus(at("pairs.jsonl"));
  EXPECT_GT(pairs.size(), 0u);
  EXPECT_TRUE(pairs[0].extra.contains("provenance"));

  ASSERT_EQ(run("diagnose --backbone " + at("bb.ckpt") + " --base " + at("base.ckpt") + " --full " + at("full.ckpt") +
                " --corpus " + at("toy.jsonl") + " --samples " + at("syn.jsonl") + " --epsilon 0.01 --epsilon 0.001" +
                " --max-len 3 --scatter " + at("scatter.tsv") + " --out " + at("diag.jsonl")),
            0)
      << last_log();
  std::ifstream in(at("diag.jsonl"));
  std::set<std::string> kinds;
  std::string line;
  while (std::getline(in, line)) kinds.insert(nlohmann::json::parse(line).value("record", ""));
  for (const char* k : {"summary", "support_expansion", "mi_proxy", "diversity"}) EXPECT_TRUE(kinds.contains(k)) << k;
  EXPECT_TRUE(fs::exists(at("scatter.tsv")));
}

TEST_F(Pipeline, SweepOverTemperature) {
  ASSERT_EQ(run("sweep --backbone " + at("bb.ckpt") + " --corpus " + at("toy.jsonl") +
                " --axis temperature --values 0.5,1.0 --k 2 --l 2 --steps 3 --max-len 8 --count 8 --toy-template --out " +
                at("sweep.jsonl")),
            0)
      << last_log();
  std::ifstream in(at("sweep.jsonl"));
  int rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["axis"], "temperature");
    ++rows;
  }
  EXPECT_EQ(rows, 2);
}

TEST_F(Pipeline, ValidationFailuresExitWithOne) {
  EXPECT_EQ(run("train --backbone " + at("bb.ckpt") + " --out " + at("x.ckpt")), 1);
  EXPECT_NE(last_log().find("--corpus"), std::string::npos) << last_log();
  EXPECT_EQ(run("sweep --backbone " + at("bb.ckpt") + " --corpus " + at("toy.jsonl") + " --axis beta"), 1);
  EXPECT_EQ(run("train --backbone " + at("bb.ckpt") + " --corpus " + at("toy.jsonl") + " --lambda -1"), 1);
  EXPECT_EQ(run("no-such-command"), 1);
  EXPECT_EQ(run("synthesize --backbone " + at("bb.ckpt") + " --representation " + at("full.ckpt") + " --count 0"), 1);
  write_text(at("bad.cfg"), "colour = blue\n");
  EXPECT_EQ(run("pretrain --config " + at("bad.cfg") + " --corpus " + at("world.jsonl")), 1);
  EXPECT_EQ(run("pretrain --config " + at("pre.cfg")), 1);
  write_text(at("corrupt.ckpt"), "not a checkpoint\n");
  EXPECT_EQ(run("synthesize --backbone " + at("corrupt.ckpt") + " --representation " + at("full.ckpt")), 1);
  write_text(at("empty.jsonl"), "\n");
  EXPECT_EQ(run("train --backbone " + at("bb.ckpt") + " --corpus " + at("empty.jsonl")), 1);
  EXPECT_NE(last_log().find("corpus empty"), std::string::npos) << last_log();
}

TEST_F(Pipeline, OutputDirectoryFromEnvironment) {
  const fs::path dir = workdir() / "envout";
  fs::create_directories(dir);
  const std::string cmd = "SOFTSYNTH_OUT_DIR=" + dir.string() + " " + std::string(SOFTSYNTH_CLI) +
                          " toy --vocab abcd --n 4 > /dev/null 2>&1";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(dir / "two-factor.jsonl"));
}
