#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "valuelens/llm_gateway.hpp"
#include "valuelens/prompt_template.hpp"
#include "valuelens/value_spec.hpp"

namespace valuelens {

struct LabeledSample {
  std::string text_id;
  std::string text;
  std::set<std::string> gold;

  bool operator==(const LabeledSample&) const = default;
};

struct Dataset {
  std::vector<LabeledSample> samples;
  std::vector<std::string> warnings;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

/// Canonical TSV: a header row naming `text_id`, `text`, then one 0/1
/// column per value (column names are matched against the theory). In the
/// text field, \t, \n and \\ escapes are decoded.
Dataset parse_dataset(std::string_view tsv, const ValueTheory& theory);
Dataset load_dataset(const std::filesystem::path& path, const ValueTheory& theory);

/// Converts the published ValueEval layout (a sentences file with Text-ID,
/// Sentence-ID, Text and a labels file with Text-ID, Sentence-ID and one
/// "<value> attained" / "<value> constrained" column pair per value) into
/// the canonical TSV. A value is present when either column is > 0.
struct ConversionResult {
  std::string tsv;
  std::size_t rows = 0;
  std::vector<std::string> warnings;
};
ConversionResult convert_valueeval(std::string_view sentences_tsv, std::string_view labels_tsv,
                                   const ValueTheory& theory);

/// Deterministic subsampling generator.
///
/// Engine: std::mt19937_64 seeded with `seed` (its output sequence is fixed
/// by the C++ standard). Bounded draws: a 64-bit output r is rejected while
/// r < (2^64 - bound) mod bound, then r mod bound is returned. Selection:
/// Knuth's selection sampling (Algorithm S) walks the dataset once and keeps
/// record t with probability (n - kept) / (N - t), realised as
/// uniform_below(N - t) < n - kept. The result preserves dataset order.
class SubsetSampler {
 public:
  explicit SubsetSampler(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t uniform_below(std::uint64_t bound);
  std::vector<std::size_t> select(std::size_t population, std::size_t n);

 private:
  std::mt19937_64 engine_;
};

/// Throws DatasetError unless 0 < n <= samples.size().
std::vector<LabeledSample> sample_subset(const std::vector<LabeledSample>& samples, std::size_t n,
                                         std::uint64_t seed);

struct Prediction {
  std::string text_id;
  std::set<std::string> predicted;

  bool operator==(const Prediction&) const = default;
};

struct SampleFailure {
  std::string text_id;
  std::string message;
};

struct BatchResult {
  /// In sample order, successful samples only.
  std::vector<Prediction> predictions;
  std::vector<SampleFailure> failures;
  std::vector<std::string> warnings;
};

struct BatchOptions {
  std::size_t parallelism = 1;
  /// The batch aborts once failures exceed this fraction of the samples.
  double max_failure_rate = 0.5;
};

class BatchAbortedError : public Error {
 public:
  using Error::Error;
};

/// Runs detection (no rating) on every sample. Only the sample text reaches
/// the prompt; gold labels never do.
BatchResult run_batch(const std::vector<LabeledSample>& samples, const ValueTheory& theory,
                      const PromptTemplate& detect_prompt, const ChatBackend& backend,
                      const BatchOptions& options);

struct Counts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;

  bool operator==(const Counts&) const = default;
};

struct ConfusionCounts {
  std::map<std::string, Counts> per_value;
  Counts totals;

  bool operator==(const ConfusionCounts&) const = default;
};

struct ValueMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;

  bool operator==(const ValueMetrics&) const = default;
};

struct RunMetadata {
  std::string model;
  std::string flavor;
  double temperature = 0.0;
  std::int64_t seed = 42;
  std::string dataset;
  std::size_t dataset_size = 0;
  std::size_t sample_size = 0;
  std::uint64_t sample_seed = 0;
  std::string theory_id;
  std::int64_t theory_version = 0;
  /// Excluded from determinism comparisons.
  std::string generated_at;
  /// Resolved invocation settings; null when not produced by the CLI.
  nlohmann::json config;

  bool operator==(const RunMetadata&) const = default;
};

struct MetricsReport {
  double micro_precision = 0.0;
  double micro_recall = 0.0;
  double micro_f1 = 0.0;
  ConfusionCounts counts;
  std::map<std::string, ValueMetrics> per_value;
  RunMetadata run_metadata;
  std::vector<std::string> failed_samples;

  bool operator==(const MetricsReport&) const = default;
};

using LabelSets = std::map<std::string, std::set<std::string>>;

/// Ratio with the zero-denominator convention: 0/0 yields 0.
double safe_ratio(std::int64_t num, std::int64_t den);
/// Harmonic mean, 0 when both inputs are 0.
double harmonic_mean(double precision, double recall);

/// Pools tp/fp/fn over every sample and value. `value_universe` adds rows
/// for values that never occur. Throws Error if the text_id sets differ.
MetricsReport compute_micro_metrics(const LabelSets& gold, const LabelSets& predicted,
                                    const std::vector<std::string>& value_universe = {});

/// Micro metrics over the successful samples of a batch, with every value of
/// the theory in the universe and failed samples listed by id.
MetricsReport score_batch(const std::vector<LabeledSample>& samples, const BatchResult& batch,
                          const ValueTheory& theory);

nlohmann::json metrics_to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const nlohmann::json& doc);

/// Model comparison table (Model, Micro F1-score, Recall, Precision) in
/// descending micro F1 order, followed by the per-value breakdown when a
/// single report is given.
std::string render_metrics_table(std::vector<MetricsReport> reports);

/// Writes metrics.json and metrics.txt into `out_dir` (created if needed).
void emit_report(const MetricsReport& report, const std::filesystem::path& out_dir);

}  // namespace valuelens
