#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"
#include "valuelens/cli.hpp"
#include "valuelens/file_io.hpp"

using namespace valuelens;
using nlohmann::json;
namespace ts = testing_support;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

EnvLookup env_of(std::map<std::string, std::string> vars) {
  return [vars = std::move(vars)](const char* name) -> const char* {
    auto it = vars.find(name);
    return it == vars.end() ? nullptr : it->second.c_str();
  };
}

Run cli(const std::vector<std::string>& args, std::map<std::string, std::string> env = {}) {
  std::ostringstream out;
  std::ostringstream err;
  Run r;
  r.code = run_cli(args, out, err, env_of(std::move(env)));
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string fixture(const std::string& rel) { return ts::data_path(rel).string(); }

json without_timestamp(json metrics) {
  metrics.at("run_metadata").erase("generated_at");
  return metrics;
}

}  // namespace

TEST(Config, PrecedenceFlagOverEnvOverFileOverDefault) {
  ts::TempDir dir;
  write_file_atomically(dir / "cfg.json",
                        R"({"backends": {"default": {"temperature": 0.3, "seed": 7, "model": "file-model"}},
                            "sample_size": 5})");
  ConfigOverrides env;
  env.temperature = 0.6;
  env.sample_size = 6;
  ConfigOverrides flags;
  flags.temperature = 0.9;

  struct Case {
    bool file, use_env, use_flags;
    double temperature;
  };
  for (const auto& c : std::vector<Case>{{false, false, false, 0.0},
                                         {true, false, false, 0.3},
                                         {true, true, false, 0.6},
                                         {true, true, true, 0.9},
                                         {false, true, true, 0.9},
                                         {false, true, false, 0.6},
                                         {true, false, true, 0.9}}) {
    const auto cfg = resolve_config(c.file ? std::optional<fs::path>(dir / "cfg.json") : std::nullopt,
                                    c.use_env ? env : ConfigOverrides{},
                                    c.use_flags ? flags : ConfigOverrides{});
    for (const auto* stage : {&cfg.conceptualise, &cfg.detect, &cfg.rate}) {
      EXPECT_EQ(stage->temperature, c.temperature) << c.file << c.use_env << c.use_flags;
    }
    EXPECT_EQ(cfg.detect.seed, c.file ? 7 : 42);
    EXPECT_EQ(cfg.sample_size, c.use_env ? 6u : (c.file ? 5u : 0u));
  }
}

TEST(Config, EnvironmentVariablesAreParsed) {
  const auto o = overrides_from_env(env_of({{"VALUELENS_TEMPERATURE", "0.5"},
                                            {"VALUELENS_SEED", "123"},
                                            {"VALUELENS_RATE", "off"},
                                            {"VALUELENS_MODEL", "qwen3"}}));
  EXPECT_EQ(o.temperature, 0.5);
  EXPECT_EQ(o.seed, 123);
  EXPECT_EQ(o.rate, false);
  EXPECT_EQ(o.model, "qwen3");
  EXPECT_FALSE(o.backend_url);
  EXPECT_THROW(overrides_from_env(env_of({{"VALUELENS_SEED", "abc"}})), ConfigError);
  EXPECT_THROW(overrides_from_env(env_of({{"VALUELENS_RATE", "maybe"}})), ConfigError);
}

TEST(Config, FilePathsResolveAgainstTheFile) {
  const auto cfg = resolve_config(ts::data_path("fixtures/running_example/config.json"), {}, {});
  EXPECT_EQ(fs::weakly_canonical(cfg.theory), fs::weakly_canonical(ts::data_path("theories/schwartz.json")));
  EXPECT_EQ(cfg.detect.flavor, Flavor::scripted);
  EXPECT_EQ(fs::path(cfg.detect.script).parent_path(),
            ts::data_path("fixtures/running_example"));
  EXPECT_THROW(resolve_config(fs::path("/nonexistent/cfg.json"), {}, {}), Error);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(cli({"detect", "--bogus"}).code, kExitUsage);
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
  EXPECT_EQ(cli({"--temperature", "3", "--config", fixture("fixtures/running_example/config.json"),
                 "detect", "--text", "x"})
                .code,
            kExitUsage);
  const auto empty = cli({"--config", fixture("fixtures/running_example/config.json"), "detect",
                          "--text", "  "});
  EXPECT_EQ(empty.code, kExitUsage);
  EXPECT_NE(empty.err.find("empty"), std::string::npos);
}

TEST(Cli, DetectRunningExampleIsByteStable) {
  ts::TempDir dir;
  const std::vector<std::string> args = {
      "--config", fixture("fixtures/running_example/config.json"), "detect", "--file",
      fixture("fixtures/running_example/text.txt"), "--out", (dir / "report.json").string()};
  const auto a = cli(args);
  ASSERT_EQ(a.code, kExitOk) << a.err;
  const auto first = read_file(dir / "report.json");
  const auto b = cli(args);
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(first, read_file(dir / "report.json"));

  const auto doc = json::parse(first);
  EXPECT_EQ(doc.at("detected").size(), 2u);
  EXPECT_EQ(doc.at("run_config").at("backends").at("detect").at("temperature"), 0.0);
  EXPECT_EQ(doc.at("run_config").at("backends").at("detect").at("seed"), 42);
  EXPECT_NE(a.out.find("Achievement"), std::string::npos);
  EXPECT_NE(a.out.find("(--)"), std::string::npos);
  EXPECT_NE(a.out.find("(+ + +)"), std::string::npos);
}

TEST(Cli, FlagAndEnvReachTheReport) {
  ts::TempDir dir;
  const std::vector<std::string> base = {"--config", fixture("fixtures/running_example/config.json")};
  auto args = base;
  for (const auto& a : {"detect", "--file"}) args.push_back(a);
  args.push_back(fixture("fixtures/running_example/text.txt"));
  args.push_back("--out");
  args.push_back((dir / "r.json").string());

  ASSERT_EQ(cli(args, {{"VALUELENS_SEED", "123"}}).code, kExitOk);
  EXPECT_EQ(json::parse(read_file(dir / "r.json")).at("run_config").at("backends").at("rate").at("seed"),
            123);

  auto with_flag = args;
  with_flag.insert(with_flag.begin(), {"--seed", "7"});
  ASSERT_EQ(cli(with_flag, {{"VALUELENS_SEED", "123"}}).code, kExitOk);
  EXPECT_EQ(json::parse(read_file(dir / "r.json")).at("run_config").at("backends").at("rate").at("seed"),
            7);

  ASSERT_EQ(cli(args, {{"VALUELENS_RATE", "off"}}).code, kExitOk);
  EXPECT_FALSE(json::parse(read_file(dir / "r.json")).contains("ratings"));
}

TEST(Cli, EvaluateIsDeterministicApartFromTimestamp) {
  ts::TempDir dir;
  const std::vector<std::string> args = {"--config", fixture("fixtures/eval/config20.json"), "evaluate",
                                         "--dataset", fixture("fixtures/eval/dataset20.tsv"),
                                         "--sample-size", "12", "--parallelism", "3",
                                         "--out", (dir / "run").string()};
  const auto a = cli(args);
  ASSERT_EQ(a.code, kExitOk) << a.err;
  const auto metrics_a = json::parse(read_file(dir / "run" / "metrics.json"));
  const auto predictions_a = read_file(dir / "run" / "predictions.tsv");
  const auto b = cli(args);
  ASSERT_EQ(b.code, kExitOk) << b.err;
  EXPECT_EQ(without_timestamp(metrics_a),
            without_timestamp(json::parse(read_file(dir / "run" / "metrics.json"))));
  EXPECT_EQ(predictions_a, read_file(dir / "run" / "predictions.tsv"));
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(metrics_a.at("run_metadata").at("sample_size"), 12);
  EXPECT_EQ(metrics_a.at("run_metadata").at("sample_seed"), 42);
  EXPECT_EQ(metrics_a.at("run_metadata").at("config").at("parallelism"), 3);
}

TEST(Cli, EvaluateFullFixtureAndFailures) {
  ts::TempDir dir;
  const auto full = cli({"--config", fixture("fixtures/eval/config20.json"), "evaluate", "--dataset",
                         fixture("fixtures/eval/dataset20.tsv"), "--out", (dir / "a").string()});
  ASSERT_EQ(full.code, kExitOk) << full.err;
  EXPECT_NE(full.out.find("0.6818"), std::string::npos) << full.out;
  EXPECT_NE(full.out.find("TP=15 FP=8 FN=6"), std::string::npos);

  const auto partial = cli({"--config", fixture("fixtures/eval/config3.json"), "evaluate", "--dataset",
                            fixture("fixtures/eval/dataset3.tsv"), "--out", (dir / "b").string()});
  EXPECT_EQ(partial.code, kExitOk) << partial.err;
  EXPECT_NE(partial.err.find("failed: a2"), std::string::npos);

  const auto oversize = cli({"--config", fixture("fixtures/eval/config20.json"), "evaluate",
                             "--dataset", fixture("fixtures/eval/dataset20.tsv"), "--sample-size",
                             "25", "--out", (dir / "c").string()});
  EXPECT_NE(oversize.code, kExitOk);
  EXPECT_NE(oversize.err.find("20"), std::string::npos);
  EXPECT_NE(oversize.err.find("25"), std::string::npos);
}

TEST(Cli, ConceptualiseReproducesShippedTheory) {
  ts::TempDir dir;
  const auto out = (dir / "schwartz.json").string();
  const std::vector<std::string> args = {
      "--flavor", "scripted", "conceptualise", "--docs", fixture("docs/schwartz"), "--out", out,
      "--theory-id", "schwartz", "--name", ts::schwartz().name, "--if-changed"};
  const std::map<std::string, std::string> env = {
      {"VALUELENS_MODEL", "scripted-fixture"}};
  // Scripted backends take their script from the config file.
  write_file_atomically(dir / "cfg.json",
                        json{{"backends", {{"conceptualise", {{"script", fixture("fixtures/conceptualise_script.json")}}}}}}
                            .dump());
  auto with_config = args;
  with_config.insert(with_config.begin(), {"--config", (dir / "cfg.json").string()});
  const auto first = cli(with_config, env);
  ASSERT_EQ(first.code, kExitOk) << first.err;
  EXPECT_EQ(read_file(out), read_file(ts::data_path("theories/schwartz.json")));
  const auto second = cli(with_config, env);
  EXPECT_EQ(second.code, kExitOk);
  EXPECT_NE(second.out.find("no change"), std::string::npos);

  const auto missing = cli({"--config", (dir / "cfg.json").string(), "conceptualise", "--docs",
                            "/nonexistent/docs", "--out", out});
  EXPECT_NE(missing.code, kExitOk);
  EXPECT_NE(missing.err.find("/nonexistent/docs"), std::string::npos);
}

TEST(Cli, ValidateAndConvert) {
  EXPECT_EQ(cli({"validate", "--theory", fixture("theories/schwartz.json")}).code, kExitOk);
  ts::TempDir dir;
  auto broken = json::parse(read_file(ts::data_path("theories/schwartz.json")));
  broken["values"][0]["tags"] = json::array();
  write_file_atomically(dir / "broken.json", broken.dump());
  const auto bad = cli({"validate", "--theory", (dir / "broken.json").string()});
  EXPECT_EQ(bad.code, kExitFailure);
  EXPECT_NE(bad.out.find("values[0].tags"), std::string::npos) << bad.out;
  EXPECT_EQ(cli({"validate", "--theory", "/nonexistent.json"}).code, kExitFailure);

  write_file_atomically(dir / "s.tsv", "Text-ID\tSentence-ID\tText\nT\t1\tHello.\n");
  write_file_atomically(dir / "l.tsv", "Text-ID\tSentence-ID\tAchievement attained\nT\t1\t1\n");
  const auto conv = cli({"convert-valueeval", "--sentences", (dir / "s.tsv").string(), "--labels",
                         (dir / "l.tsv").string(), "--theory", fixture("theories/schwartz.json"),
                         "--out", (dir / "d.tsv").string()});
  ASSERT_EQ(conv.code, kExitOk) << conv.err;
  EXPECT_EQ(read_file(dir / "d.tsv"), "text_id\ttext\tACH\nT_1\tHello.\t1\n");
}

TEST(Cli, BinaryRunsEndToEnd) {
  const std::string cmd = std::string(VALUELENS_CLI_PATH) + " --config " +
                          fixture("fixtures/running_example/config.json") + " detect --file " +
                          fixture("fixtures/running_example/text.txt") + " > /dev/null";
  EXPECT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_NE(std::system((std::string(VALUELENS_CLI_PATH) + " 2> /dev/null").c_str()), 0);
}
