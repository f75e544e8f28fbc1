#include <gtest/gtest.h>

#include <random>

#include "test_support.hpp"
#include "valuelens/detection.hpp"
#include "valuelens/eval_harness.hpp"
#include "valuelens/file_io.hpp"

using namespace valuelens;
using nlohmann::json;
namespace ts = testing_support;

namespace {

std::vector<LabeledSample> dataset20() {
  return load_dataset(ts::data_path("fixtures/eval/dataset20.tsv"), ts::schwartz()).samples;
}

std::vector<LabeledSample> synthetic(std::size_t n) {
  std::vector<LabeledSample> samples;
  for (std::size_t i = 0; i < n; ++i) samples.push_back({"s" + std::to_string(i), "text", {}});
  return samples;
}

}  // namespace

TEST(Dataset, ParsesHeaderColumnsAndEscapes) {
  const auto theory = ts::schwartz();
  const auto ds = parse_dataset(
      "text_id\ttext\tACH\tSelf-Direction\tmood\n"
      "a\tline one\\nline two\\ttab\t1\t0\tx\n"
      "b\tplain\t0\t1\ty\n",
      theory);
  ASSERT_EQ(ds.samples.size(), 2u);
  EXPECT_EQ(ds.samples[0], (LabeledSample{"a", "line one\nline two\ttab", {"ACH"}}));
  EXPECT_EQ(ds.samples[1].gold, (std::set<std::string>{"SDI"}));
  ASSERT_EQ(ds.warnings.size(), 1u);
  EXPECT_NE(ds.warnings[0].find("mood"), std::string::npos);
}

TEST(Dataset, RejectsMalformedInput) {
  const auto theory = ts::schwartz();
  EXPECT_THROW(parse_dataset("", theory), DatasetError);
  EXPECT_THROW(parse_dataset("text\tACH\nx\t1\n", theory), DatasetError);
  EXPECT_THROW(parse_dataset("text_id\ttext\tmood\na\tx\t1\n", theory), DatasetError);
  EXPECT_THROW(parse_dataset("text_id\ttext\tACH\tAchievement\na\tx\t1\t1\n", theory),
               DatasetError);
  EXPECT_THROW(parse_dataset("text_id\ttext\tACH\na\tx\t2\n", theory), DatasetError);
  EXPECT_THROW(parse_dataset("text_id\ttext\tACH\na\tx\t1\na\ty\t0\n", theory), DatasetError);
  try {
    parse_dataset("text_id\ttext\tACH\na\tx\t1\nb\ty\n", theory);
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Dataset, ConvertsValueEvalLayout) {
  const std::string sentences =
      "Text-ID\tSentence-ID\tText\n"
      "T1\t1\tWe must protect the forests.\n"
      "T1\t2\tI decide for myself.\n";
  const std::string labels =
      "Text-ID\tSentence-ID\tSelf-direction: thought attained\tSelf-direction: thought constrained\t"
      "Universalism: nature attained\tUniversalism: nature constrained\tMystery attained\n"
      "T1\t1\t0\t0\t0\t1\t0\n"
      "T1\t2\t0.5\t0\t0\t0\t0\n"
      "T9\t1\t0\t0\t0\t0\t0\n";
  const auto theory = ts::schwartz();
  const auto converted = convert_valueeval(sentences, labels, theory);
  EXPECT_EQ(converted.rows, 2u);
  EXPECT_EQ(converted.tsv,
            "text_id\ttext\tSDI\tUNN\n"
            "T1_1\tWe must protect the forests.\t0\t1\n"
            "T1_2\tI decide for myself.\t1\t0\n");
  EXPECT_EQ(converted.warnings.size(), 2u);  // unknown column, orphan label row
  const auto ds = parse_dataset(converted.tsv, theory);
  EXPECT_EQ(ds.samples[0].gold, (std::set<std::string>{"UNN"}));
}

TEST(Metrics, AgreeWithBruteForceOracle) {
  std::mt19937_64 rng(2024);
  for (int round = 0; round < 1000; ++round) {
    const auto inst = ts::random_label_instance(rng, 8, 12);
    const auto report = compute_micro_metrics(inst.gold, inst.predicted, inst.universe);
    const auto c = ts::brute_force_counts(inst.gold, inst.predicted, inst.universe);
    ASSERT_EQ(report.counts.totals, c) << "round " << round;
    const double p = c.tp + c.fp == 0 ? 0.0 : double(c.tp) / double(c.tp + c.fp);
    const double r = c.tp + c.fn == 0 ? 0.0 : double(c.tp) / double(c.tp + c.fn);
    const double f = p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
    EXPECT_NEAR(report.micro_precision, p, 1e-12);
    EXPECT_NEAR(report.micro_recall, r, 1e-12);
    EXPECT_NEAR(report.micro_f1, f, 1e-12);
    Counts summed;
    for (const auto& [id, counts] : report.counts.per_value) {
      summed.tp += counts.tp;
      summed.fp += counts.fp;
      summed.fn += counts.fn;
    }
    EXPECT_EQ(summed, c);
  }
}

TEST(Metrics, SwappingGoldAndPredictionSwapsPrecisionAndRecall) {
  std::mt19937_64 rng(7);
  for (int round = 0; round < 200; ++round) {
    const auto inst = ts::random_label_instance(rng, 6, 10);
    const auto a = compute_micro_metrics(inst.gold, inst.predicted, inst.universe);
    const auto b = compute_micro_metrics(inst.predicted, inst.gold, inst.universe);
    EXPECT_DOUBLE_EQ(a.micro_precision, b.micro_recall);
    EXPECT_DOUBLE_EQ(a.micro_recall, b.micro_precision);
    EXPECT_NEAR(a.micro_f1, b.micro_f1, 1e-12);
  }
}

TEST(Metrics, AddingACorrectPredictionNeverLowersScores) {
  std::mt19937_64 rng(11);
  for (int round = 0; round < 200; ++round) {
    auto inst = ts::random_label_instance(rng, 6, 10);
    const auto before = compute_micro_metrics(inst.gold, inst.predicted, inst.universe);
    bool added = false;
    for (auto& [id, labels] : inst.gold) {
      for (const auto& v : labels) {
        if (!inst.predicted[id].count(v)) {
          inst.predicted[id].insert(v);
          added = true;
          break;
        }
      }
      if (added) break;
    }
    if (!added) continue;
    const auto after = compute_micro_metrics(inst.gold, inst.predicted, inst.universe);
    EXPECT_GE(after.micro_recall, before.micro_recall);
    EXPECT_GE(after.micro_precision, before.micro_precision);
    EXPECT_GT(after.micro_f1, before.micro_f1);
  }
}

TEST(Metrics, ZeroDenominatorsYieldZero) {
  EXPECT_EQ(safe_ratio(0, 0), 0.0);
  EXPECT_EQ(harmonic_mean(0.0, 0.0), 0.0);
  const auto report = compute_micro_metrics({{"a", {}}}, {{"a", {}}}, {"ACH"});
  EXPECT_EQ(report.micro_f1, 0.0);
  EXPECT_EQ(report.per_value.at("ACH").support, 0);
  EXPECT_THROW(compute_micro_metrics({{"a", {}}}, {{"b", {}}}), Error);
}

TEST(Metrics, JsonRoundTripAndTable) {
  std::mt19937_64 rng(3);
  const auto inst = ts::random_label_instance(rng, 5, 6);
  auto report = compute_micro_metrics(inst.gold, inst.predicted, inst.universe);
  report.run_metadata.model = "gemma3:27b";
  report.run_metadata.config = json{{"k", 1}};
  report.failed_samples = {"x"};
  EXPECT_EQ(metrics_from_json(metrics_to_json(report)), report);

  MetricsReport low;
  low.micro_f1 = 0.3216;
  low.micro_recall = 0.275;
  low.micro_precision = 0.391;
  low.run_metadata.model = "qwen3";
  MetricsReport high = low;
  high.micro_f1 = 0.3406;
  high.micro_recall = 0.448;
  high.micro_precision = 0.275;
  high.run_metadata.model = "gemma3";
  const auto table = render_metrics_table({low, high});
  EXPECT_LT(table.find("gemma3"), table.find("qwen3"));
  EXPECT_NE(table.find("0.3406"), std::string::npos);
  EXPECT_NE(table.find("44.8%"), std::string::npos);
  EXPECT_NE(table.find("39.1%"), std::string::npos);
}

TEST(Sampling, EngineMatchesIndependentImplementation) {
  ts::Mt64 reference(5489);
  std::uint64_t last = 0;
  for (int i = 0; i < 10000; ++i) last = reference.next();
  EXPECT_EQ(last, 9981545732273789042ULL);

  for (std::uint64_t seed : {0ULL, 42ULL, 123ULL, 0xFFFFFFFFFFFFFFFFULL}) {
    std::mt19937_64 lib(seed);
    ts::Mt64 mine(seed);
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(lib(), mine.next()) << seed;
  }
}

TEST(Sampling, SelectionMatchesOracle) {
  for (std::uint64_t seed : {1ULL, 42ULL, 123ULL, 9001ULL}) {
    for (auto [population, n] : std::vector<std::pair<std::size_t, std::size_t>>{
             {1, 1}, {10, 3}, {100, 20}, {100, 100}, {1000, 37}}) {
      SubsetSampler sampler(seed);
      const auto picked = sampler.select(population, n);
      EXPECT_EQ(picked, ts::oracle_select(seed, population, n)) << seed << " " << population;
      EXPECT_EQ(picked.size(), n);
      EXPECT_TRUE(std::is_sorted(picked.begin(), picked.end()));
    }
  }
}

TEST(Sampling, SameSeedSameSubsetDifferentSeedsDiffer) {
  const auto samples = synthetic(100);
  const auto a = sample_subset(samples, 20, 42);
  EXPECT_EQ(a, sample_subset(samples, 20, 42));
  EXPECT_NE(a, sample_subset(samples, 20, 123));
}

TEST(Sampling, OutOfRangeSizeNamesBothNumbers) {
  const auto samples = synthetic(20);
  try {
    sample_subset(samples, 21, 42);
    FAIL();
  } catch (const DatasetError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("20"), std::string::npos);
    EXPECT_NE(what.find("21"), std::string::npos);
  }
  EXPECT_THROW(sample_subset(samples, 0, 42), DatasetError);
}

TEST(Batch, TwentyRowFixtureHasKnownCounts) {
  const auto samples = dataset20();
  ASSERT_EQ(samples.size(), 20u);
  const auto backend = ts::scripted_file(ts::data_path("fixtures/eval/detect_script20.json"));
  const auto batch = run_batch(samples, ts::schwartz(), ts::templates().detect, *backend, {});
  EXPECT_TRUE(batch.failures.empty());
  const auto report = score_batch(samples, batch, ts::schwartz());
  EXPECT_EQ(report.counts.totals, (Counts{15, 8, 6}));
  EXPECT_NEAR(report.micro_precision, 15.0 / 23.0, 1e-12);
  EXPECT_NEAR(report.micro_recall, 15.0 / 21.0, 1e-12);
  EXPECT_NEAR(report.micro_f1, 15.0 / 22.0, 1e-12);
  EXPECT_EQ(report.per_value.size(), 19u);
}

TEST(Batch, ParallelismDoesNotChangeResults) {
  const auto samples = dataset20();
  const auto backend = ts::scripted_file(ts::data_path("fixtures/eval/detect_script20.json"));
  const auto serial = run_batch(samples, ts::schwartz(), ts::templates().detect, *backend, {1, 0.5});
  const auto parallel = run_batch(samples, ts::schwartz(), ts::templates().detect, *backend, {4, 0.5});
  EXPECT_EQ(serial.predictions, parallel.predictions);
  EXPECT_EQ(serial.warnings, parallel.warnings);
}

TEST(Batch, SingleFailureIsIsolated) {
  const auto theory = ts::schwartz();
  const auto samples = load_dataset(ts::data_path("fixtures/eval/dataset3.tsv"), theory).samples;
  const auto backend = ts::scripted_file(ts::data_path("fixtures/eval/detect_script3.json"));
  const auto batch = run_batch(samples, theory, ts::templates().detect, *backend, {});
  ASSERT_EQ(batch.failures.size(), 1u);
  EXPECT_EQ(batch.failures[0].text_id, "a2");
  EXPECT_EQ(batch.predictions.size(), 2u);
  const auto report = score_batch(samples, batch, theory);
  EXPECT_EQ(report.failed_samples, (std::vector<std::string>{"a2"}));
}

TEST(Batch, AbortsWhenFailuresExceedThreshold) {
  const auto samples = synthetic(10);
  const auto backend = ts::scripted({{"", std::nullopt, "down"}});
  EXPECT_THROW(run_batch(samples, ts::schwartz(), ts::templates().detect, *backend, {1, 0.5}),
               BatchAbortedError);
  EXPECT_NO_THROW(run_batch(samples, ts::schwartz(), ts::templates().detect, *backend, {1, 1.0}));
}

// Gold labels never reach the model: the prompt outside the theory block
// names no gold value, and changing gold labels leaves prompts unchanged.
TEST(Batch, GoldLabelsDoNotLeakIntoPrompts) {
  const auto theory = ts::schwartz();
  const auto theory_block = serialize_theory(theory);
  auto samples = dataset20();

  auto prompts_for = [&](const std::vector<LabeledSample>& s) {
    const auto backend = ts::scripted({}, R"({"values": []})");
    run_batch(s, theory, ts::templates().detect, *backend, {1, 0.5});
    return backend->captured_prompts();
  };

  const auto prompts = prompts_for(samples);
  ASSERT_EQ(prompts.size(), samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ASSERT_NE(prompts[i].find(theory_block), std::string::npos);
    const auto rest = ts::without(prompts[i], theory_block);
    for (const auto& id : samples[i].gold) {
      EXPECT_FALSE(ts::contains_word(rest, id)) << samples[i].text_id << " leaks " << id;
    }
  }

  std::mt19937_64 rng(99);
  for (auto& s : samples) {
    s.gold.clear();
    for (const auto& v : theory.values) {
      if (rng() % 3 == 0) s.gold.insert(v.value_id);
    }
  }
  EXPECT_EQ(prompts_for(samples), prompts);
}

TEST(Report, EmitWritesJsonAndTable) {
  ts::TempDir dir;
  MetricsReport report;
  report.micro_f1 = 0.5;
  report.run_metadata.model = "m";
  emit_report(report, dir / "nested");
  EXPECT_EQ(metrics_from_json(json::parse(read_file(dir / "nested" / "metrics.json"))), report);
  EXPECT_NE(read_file(dir / "nested" / "metrics.txt").find("0.5000"), std::string::npos);
}
