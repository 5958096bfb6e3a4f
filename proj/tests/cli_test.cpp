#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "lincal/corpus.hpp"
#include "synthetic.hpp"

using namespace lincal;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("lincal_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Exit status of the binary; stdout+stderr land in output_.
  int run(const std::string& args) {
    const std::string log = path("last.log");
    const std::string cmd = std::string("\"") + LINCAL_CLI + "\" " + args + " > \"" + log + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::ostringstream ss;
    ss << in.rdbuf();
    output_ = ss.str();
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string slurp(const std::string& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path dir_;
  std::string output_;
};

}  // namespace

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("score --no-such-flag"), 1);
  EXPECT_EQ(run("ingest --out " + path("x.jsonl")), 1) << output_;
  EXPECT_EQ(run("score"), 1) << output_;
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, DataErrorsExitTwo) {
  EXPECT_EQ(run("--corpus " + path("missing.jsonl") + " --out " + path("o.jsonl") + " score"), 2) << output_;
  { std::ofstream(path("bad.jsonl")) << "{\"id\": 3}\n"; }
  EXPECT_EQ(run("--corpus " + path("bad.jsonl") + " --out " + path("o.jsonl") + " score"), 2) << output_;
  { std::ofstream(path("raw.json")) << "not json at all"; }
  EXPECT_EQ(run("--out " + path("o.jsonl") + " ingest --web " + path("raw.json")), 2) << output_;
}

TEST_F(Cli, IngestWritesSortedCorpus) {
  {
    std::ofstream(path("web.json")) << R"js({"Data": [
      {"Question": "Which metal?", "Answer": {"Value": "Steel", "Aliases": ["Steel (disambiguation)", "steel"]}},
      {"Question": "Which organ makes insulin?", "Answer": {"Value": "Pancreas", "Aliases": ["pancreas"]}}]})js";
  }
  ASSERT_EQ(run("--out " + path("c.jsonl") + " ingest --web " + path("web.json") + " --split test"), 0) << output_;
  const Corpus c = read_corpus(path("c.jsonl"));
  ASSERT_EQ(c.size(), 2u);
  EXPECT_LT(c[0].id, c[1].id);
  for (const auto& r : c) {
    EXPECT_EQ(r.split, Split::kTest);
    for (const auto& a : r.gold_aliases) EXPECT_EQ(a.find("disambiguation"), std::string::npos);
  }
}

TEST_F(Cli, FullPipelineRoundTrip) {
  synth::SyntheticOptions o;
  o.count = 240;
  o.seed = 12;
  Corpus train = synth::synthetic_corpus(o);
  o.count = 60;
  o.seed = 13;
  o.split = Split::kValid;
  Corpus valid = synth::synthetic_corpus(o);
  o.count = 120;
  o.seed = 14;
  o.split = Split::kTest;
  Corpus test = synth::synthetic_corpus(o);
  synth::annotate_simulated(&test, 3);
  Corpus all = train;
  all.insert(all.end(), valid.begin(), valid.end());
  write_corpus(path("all.jsonl"), all);
  write_corpus(path("test.jsonl"), test);

  ASSERT_EQ(run("--corpus " + path("all.jsonl") + " --out " + path("scored.jsonl") + " score"), 0) << output_;
  EXPECT_EQ(read_corpus(path("scored.jsonl")).size(), all.size());

  ASSERT_EQ(run("--corpus " + path("all.jsonl") + " --out " + path("ngram.json") +
                " train-ngram --target correctness --text question --labels automatic --lambda 0.001"),
            0)
      << output_;
  EXPECT_NE(output_.find("hard"), std::string::npos) << output_;

  ASSERT_EQ(run("--corpus " + path("all.jsonl") + " --out " + path("model.bin") +
                " train-calibrator --dim 8 --hidden 16 --epochs 5 --lr 0.01 --batch 32"),
            0)
      << output_;
  ASSERT_TRUE(fs::exists(path("model.bin")));

  ASSERT_EQ(run("--corpus " + path("test.jsonl") + " --model " + path("model.bin") + " --out " +
                path("rel.json") + " eval-calibration --bins 10"),
            0)
      << output_;
  const Json rel = Json::parse(slurp(path("rel.json")));
  EXPECT_TRUE(rel.contains("ece"));
  EXPECT_EQ(rel["bins"].size(), 10u);
  EXPECT_TRUE(fs::exists(path("rel.csv")));

  ASSERT_EQ(run("--corpus " + path("test.jsonl") + " --model " + path("model.bin") + " --out " +
                path("policy.json") + " tune-thresholds --tune-count 40"),
            0)
      << output_;
  const Json policy = Json::parse(slurp(path("policy.json")));
  EXPECT_LE(policy["t_dk"].get<double>(), policy["t_lo"].get<double>());

  ASSERT_EQ(run("--corpus " + path("test.jsonl") + " --model " + path("model.bin") + " --policy " +
                path("policy.json") + " --out " + path("recal.jsonl") + " recalibrate"),
            0)
      << output_;
  const Corpus recal = read_corpus(path("recal.jsonl"));
  ASSERT_EQ(recal.size(), test.size());
  EXPECT_TRUE(recal[0].extra.contains("p_correct"));

  ASSERT_EQ(run("--corpus " + path("test.jsonl") + " --out " + path("report.json") + " evaluate --recalibrated " +
                path("recal.jsonl") + " --labels automatic --tune-count 40 --table " + path("table.txt")),
            0)
      << output_;
  const Json report = Json::parse(slurp(path("report.json")));
  EXPECT_EQ(report["evaluated"], 80);
  EXPECT_NE(slurp(path("table.txt")).find("confusion"), std::string::npos);

  // mismatched ids are a data error
  ASSERT_EQ(run("--corpus " + path("all.jsonl") + " evaluate --recalibrated " + path("recal.jsonl")), 2);
}
