// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "bella/cli/commands.hpp"
#include "bella/cli/config.hpp"
#include "bella/langdata/dataset.hpp"

namespace bella::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int code = 0;
  std::string out, err;
};

Result bella(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r;
  r.code = run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

/// Last line of the error stream parsed as the JSON error record.
json error_record(const Result& r) {
  std::istringstream in(r.err);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  return json::parse(last);
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("bella_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    unsetenv("BELLA_SEED");
  }
  void TearDown() override {
    fs::remove_all(dir_);
    unsetenv("BELLA_SEED");
  }
  std::string at(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

TEST(Help, MatchesGoldenFile) {
  const auto golden = slurp(fs::path(BELLA_SOURCE_DIR) / "tests/golden/help.txt");
  EXPECT_EQ(help_text(), golden);
  EXPECT_EQ(bella({"--help"}).out, golden);
}

TEST(Help, ListsEveryConfigKeyWithItsDefault) {
  const auto h = help_text();
  for (const auto& k : schema()) {
    const auto pos = h.find(k.path + " ");
    ASSERT_NE(pos, std::string::npos) << k.path;
    const auto eol = h.find('\n', pos);
    EXPECT_NE(h.substr(pos, eol - pos).find("default " + k.default_value.dump()), std::string::npos) << k.path;
  }
}

TEST(Config, UnknownKeysAndSectionsAreRejected) {
  EXPECT_THROW(RunConfig::from_json(json{{"data", {{"seeed", 3}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json{{"extra", json::object()}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json(json{{"train", {{"epochs", "ten"}}}}), ConfigError);
  RunConfig c;
  EXPECT_THROW(c.set_text("model.width", "3", "flag"), ConfigError);
}

TEST(Config, DefaultsMatchTheTrainingSetup) {
  const auto t = RunConfig().train();
  EXPECT_EQ(t.epochs, 10);
  EXPECT_EQ(t.batch_size, 2);
  EXPECT_EQ(t.lr_projector, 1e-4);
  EXPECT_EQ(t.lr_lm, 2e-4);
  EXPECT_EQ(t.lora.r, 8u);
  EXPECT_EQ(t.lora.alpha, 16.0);
  EXPECT_EQ(t.lm.d, 128u);
  EXPECT_EQ(t.variant, projector::Variant::kDeepConv);
}

TEST(Config, RangeChecks) {
  RunConfig c;
  c.set_text("model.d", "30", "flag");
  EXPECT_THROW(c.train(), ConfigError);  // not divisible by 4 heads
  RunConfig v;
  v.set_text("model.variant", "huge_conv", "flag");
  EXPECT_THROW(v.train(), ConfigError);
}

TEST_F(Cli, GenIsByteIdentical) {
  ASSERT_EQ(bella({"gen", "--seed", "7", "--episodes", "50", "--test-episodes", "10", "--out", at("a")}).code, 0);
  ASSERT_EQ(bella({"gen", "--seed", "7", "--episodes", "50", "--test-episodes", "10", "--out", at("b")}).code, 0);
  for (const char* f : {"scenes.jsonl", "pretrain.jsonl", "qa.jsonl", "vocab.json"}) {
    const auto a = slurp(dir_ / "a" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, slurp(dir_ / "b" / f)) << f;
  }
}

TEST_F(Cli, GenWritesFiveDescriptionsPerEpisodeAndASummary) {
  const auto r = bella({"gen", "--episodes", "20", "--test-episodes", "4", "--out", at("d")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto summary = json::parse(r.out);
  EXPECT_EQ(summary.at("descriptions"), 100);
  EXPECT_EQ(summary.at("per_category").size(), 6u);
  std::ifstream in(dir_ / "d" / "pretrain.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, 100);
  EXPECT_TRUE(fs::exists(dir_ / "d" / "config.json"));
  EXPECT_TRUE(fs::exists(dir_ / "d" / "overrides.json"));
}

TEST_F(Cli, GenWithZeroEpisodesIsWellFormed) {
  const auto r = bella({"gen", "--episodes", "0", "--test-episodes", "0", "--out", at("z")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto corpus = langdata::read_corpus(dir_ / "z");
  EXPECT_TRUE(corpus.episodes.empty());
  EXPECT_TRUE(corpus.qa.empty());
  EXPECT_EQ(corpus.vocab, langdata::Vocab::standard());
}

TEST_F(Cli, NonEmptyOutputNeedsForce) {
  ASSERT_EQ(bella({"gen", "--episodes", "2", "--test-episodes", "1", "--out", at("o")}).code, 0);
  const auto r = bella({"gen", "--episodes", "2", "--test-episodes", "1", "--out", at("o")});
  EXPECT_EQ(r.code, kExitSchema);
  EXPECT_EQ(error_record(r).at("exit_code"), kExitSchema);
  EXPECT_EQ(bella({"gen", "--episodes", "2", "--test-episodes", "1", "--out", at("o"), "--force"}).code, 0);
}

TEST_F(Cli, SchemaViolationsExitTwo) {
  for (const auto& args : std::vector<std::vector<std::string>>{
           {"gen", "--set", "data.bogus=1", "--out", at("x")},
           {"gen", "--set", "data.episodes=many", "--out", at("x")},
           {"gen", "--set", "no_equals_sign", "--out", at("x")},
           {"gen", "--no-such-flag"},
           {"frobnicate"}}) {
    const auto r = bella(args);
    EXPECT_EQ(r.code, kExitSchema) << args[1];
    const auto e = error_record(r);
    EXPECT_TRUE(e.contains("error") && e.contains("message")) << r.err;
  }
  std::ofstream(at("bad.json")) << R"({"data": {"sed": 1}})";
  EXPECT_EQ(bella({"gen", "--config", at("bad.json"), "--out", at("x")}).code, kExitSchema);
}

TEST_F(Cli, MissingCheckpointsExitThree) {
  ASSERT_EQ(bella({"gen", "--episodes", "3", "--test-episodes", "1", "--out", at("data")}).code, 0);
  auto r = bella({"eval", "--data", at("data"), "--checkpoint", at("nope.ckpt"), "--out", at("e")});
  EXPECT_EQ(r.code, kExitMissingCheckpoint);
  EXPECT_EQ(error_record(r).at("error"), "missing_checkpoint");
  r = bella({"finetune", "--data", at("data"), "--out", at("f")});
  EXPECT_EQ(r.code, kExitMissingCheckpoint);
  std::ofstream(at("scene.json")) << "{}";
  r = bella({"ask", "--scene", at("scene.json"), "--question", "what is the ego vehicle doing ?"});
  EXPECT_EQ(r.code, kExitMissingCheckpoint);
}

TEST_F(Cli, RuntimeFailuresExitOne) {
  const auto r = bella({"eval", "--predictions", at("absent.jsonl"), "--out", at("e")});
  EXPECT_EQ(r.code, kExitRuntime);
  EXPECT_EQ(error_record(r).at("exit_code"), kExitRuntime);
}

TEST_F(Cli, EvalOfOraclePredictionsIsPerfect) {
  ASSERT_EQ(bella({"gen", "--episodes", "10", "--test-episodes", "2", "--out", at("data")}).code, 0);
  const auto corpus = langdata::read_corpus(dir_ / "data");
  {
    std::ofstream out(at("oracle.jsonl"));
    for (const auto& r : corpus.qa)
      out << json{{"category", scenesim::category_name(r.item.category)},
                  {"prediction", r.item.gold_answer},
                  {"answer", r.item.gold_answer}}
                 .dump()
          << '\n';
  }
  const auto r = bella({"eval", "--predictions", at("oracle.jsonl"), "--out", at("ev")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(slurp(dir_ / "ev" / "report.json"));
  EXPECT_EQ(report.at("overall").at("accuracy"), 100.0);
  for (const auto& [cat, row] : report.at("per_category").items()) EXPECT_EQ(row.at("accuracy"), 100.0) << cat;
}

TEST_F(Cli, RunStampedOutputDirectory) {
  std::ofstream(at("p.jsonl")) << R"({"category":"exist","prediction":"yes","answer":"yes"})" << '\n';
  const auto r = bella({"eval", "--predictions", at("p.jsonl"), "--set", "paths.runs_dir=" + at("runs")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir_ / "runs")) names.push_back(e.path().filename().string());
  ASSERT_EQ(names.size(), 1u);
  EXPECT_EQ(names[0].rfind("eval-", 0), 0u);
  EXPECT_EQ(names[0].substr(names[0].size() - 3), "-s7");
}

TEST_F(Cli, PrecedenceIsFileThenEnvThenFlags) {
  std::ofstream(at("cfg.json")) << R"({"data": {"seed": 3, "episodes": 2, "test_episodes": 1}})";
  setenv("BELLA_SEED", "5", 1);
  ASSERT_EQ(bella({"gen", "--config", at("cfg.json"), "--out", at("a")}).code, 0);
  EXPECT_EQ(json::parse(slurp(dir_ / "a" / "config.json")).at("data").at("seed"), 5);
  const auto r = bella({"gen", "--config", at("cfg.json"), "--seed", "9", "--out", at("b")});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(json::parse(slurp(dir_ / "b" / "config.json")).at("data").at("seed"), 9);
  const auto overrides = json::parse(slurp(dir_ / "b" / "overrides.json"));
  std::vector<std::string> sources;
  for (const auto& o : overrides)
    if (o.at("key") == "data.seed") sources.push_back(o.at("source"));
  EXPECT_EQ(sources, (std::vector<std::string>{"config", "env", "flag"}));
  EXPECT_NE(r.err.find("(env)"), std::string::npos);
}

TEST_F(Cli, GradcheckReportsEveryRequestedOperator) {
  auto r = bella({"gradcheck", "--op", "add", "--op", "layer_norm", "--seeds", "2"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("add"), std::string::npos);
  EXPECT_NE(r.out.find("layer_norm"), std::string::npos);
  EXPECT_NE(r.out.find("max_rel_err"), std::string::npos);
  r = bella({"gradcheck", "--op", "bogus"});
  EXPECT_EQ(r.code, kExitSchema);
}

TEST_F(Cli, TinyPipelineEndToEnd) {
  ASSERT_EQ(bella({"gen", "--episodes", "6", "--test-episodes", "1", "--out", at("data")}).code, 0);
  const std::vector<std::string> tiny = {"--set", "model.d=16", "--set", "model.layers=1", "--set", "model.heads=2",
                                         "--set", "model.ff=32", "--set", "train.lm_warmup_epochs=1",
                                         "--set", "model.variant=shallow_conv", "--epochs", "1"};
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.end(), tiny.begin(), tiny.end());
    return a;
  };
  auto r = bella(with({"pretrain", "--data", at("data"), "--out", at("pre")}));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"stage1.ckpt", "base_lm.ckpt", "train_log.jsonl", "warmup_log.jsonl", "config.json"})
    EXPECT_TRUE(fs::exists(dir_ / "pre" / f)) << f;
  r = bella(with({"finetune", "--data", at("data"), "--stage1", at("pre/stage1.ckpt"), "--out", at("fin")}));
  ASSERT_EQ(r.code, 0) << r.err;
  r = bella({"eval", "--data", at("data"), "--checkpoint", at("fin/model.ckpt"), "--out", at("ev")});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"predictions.jsonl", "report.json", "report.txt"}) EXPECT_TRUE(fs::exists(dir_ / "ev" / f)) << f;
  const auto corpus = langdata::read_corpus(dir_ / "data");
  std::ofstream(at("scene.json")) << langdata::scene_to_json(corpus.episodes[0].scenes[0]);
  r = bella({"ask", "--checkpoint", at("fin/model.ckpt"), "--scene", at("scene.json"), "--question",
             "what is the ego vehicle doing ?", "--set", "paths.data_dir=" + at("data")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_FALSE(r.out.empty());
  r = bella(with({"finetune", "--data", at("data"), "--stage1", at("pre/stage1.ckpt"), "--variant", "deep_conv",
                  "--out", at("fin2")}));
  EXPECT_EQ(r.code, kExitSchema) << r.err;
}

}  // namespace
}  // namespace bella::cli
