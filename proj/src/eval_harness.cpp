#include "valuelens/eval_harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "valuelens/detection.hpp"
#include "valuelens/file_io.hpp"

namespace valuelens {

using nlohmann::json;

namespace {

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.emplace_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos
                                                                          : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = nl + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::string unescape_field(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      const char next = s[i + 1];
      if (next == 't' || next == 'n' || next == '\\') {
        out.push_back(next == 't' ? '\t' : next == 'n' ? '\n' : '\\');
        ++i;
        continue;
      }
    }
    out.push_back(s[i]);
  }
  return out;
}

std::string escape_field(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\t':
        out += "\\t";
        break;
      case '\n':
        out += "\\n";
        break;
      case '\r':
        break;
      case '\\':
        out += "\\\\";
        break;
      default:
        out.push_back(c);
    }
  }
  return out;
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string line_prefix(std::size_t line_no) { return "line " + std::to_string(line_no) + ": "; }

}  // namespace

Dataset parse_dataset(std::string_view tsv, const ValueTheory& theory) {
  const auto lines = split_lines(tsv);
  if (lines.empty()) throw DatasetError("dataset has no header row");

  const auto header = split_tabs(lines.front());
  std::optional<std::size_t> id_col;
  std::optional<std::size_t> text_col;
  std::vector<std::pair<std::size_t, std::string>> value_cols;
  Dataset dataset;
  std::set<std::string> mapped;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto name = trim(header[c]);
    const auto folded = lower(name);
    if (folded == "text_id") {
      id_col = c;
    } else if (folded == "text") {
      text_col = c;
    } else if (auto id = canonicalize_label(name, theory)) {
      if (!mapped.insert(*id).second) {
        throw DatasetError("columns map to value " + *id + " more than once (\"" + name + "\")");
      }
      value_cols.emplace_back(c, *id);
    } else {
      dataset.warnings.push_back("column \"" + name + "\" is not a value of theory " +
                                 theory.theory_id + "; ignored");
    }
  }
  if (!id_col) throw DatasetError("header is missing the text_id column");
  if (!text_col) throw DatasetError("header is missing the text column");
  if (value_cols.empty()) throw DatasetError("header has no column matching a value of the theory");

  std::set<std::string> ids;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto line_no = i + 1;
    if (lines[i].empty()) continue;
    const auto fields = split_tabs(lines[i]);
    if (fields.size() != header.size()) {
      throw DatasetError(line_prefix(line_no) + "expected " + std::to_string(header.size()) +
                         " fields, found " + std::to_string(fields.size()));
    }
    LabeledSample sample;
    sample.text_id = trim(fields[*id_col]);
    sample.text = unescape_field(fields[*text_col]);
    if (sample.text_id.empty()) throw DatasetError(line_prefix(line_no) + "empty text_id");
    if (!ids.insert(sample.text_id).second) {
      throw DatasetError(line_prefix(line_no) + "duplicate text_id \"" + sample.text_id + "\"");
    }
    for (const auto& [col, value_id] : value_cols) {
      const auto cell = trim(fields[col]);
      if (cell == "1") {
        sample.gold.insert(value_id);
      } else if (cell != "0") {
        throw DatasetError(line_prefix(line_no) + "label column \"" + trim(header[col]) +
                           "\" must be 0 or 1, found \"" + cell + "\"");
      }
    }
    dataset.samples.push_back(std::move(sample));
  }
  return dataset;
}

Dataset load_dataset(const std::filesystem::path& path, const ValueTheory& theory) {
  std::string content;
  try {
    content = read_file(path);
  } catch (const Error&) {
    throw DatasetError("cannot read dataset " + path.string());
  }
  try {
    return parse_dataset(content, theory);
  } catch (const DatasetError& e) {
    throw DatasetError(path.string() + ": " + e.what());
  }
}

ConversionResult convert_valueeval(std::string_view sentences_tsv, std::string_view labels_tsv,
                                   const ValueTheory& theory) {
  ConversionResult result;
  auto key_columns = [](const std::vector<std::string>& header, const char* what) {
    std::optional<std::size_t> text_id;
    std::optional<std::size_t> sentence_id;
    for (std::size_t c = 0; c < header.size(); ++c) {
      const auto name = lower(trim(header[c]));
      if (name == "text-id") text_id = c;
      if (name == "sentence-id") sentence_id = c;
    }
    if (!text_id || !sentence_id) {
      throw DatasetError(std::string(what) + " file lacks Text-ID / Sentence-ID columns");
    }
    return std::pair{*text_id, *sentence_id};
  };

  const auto sentence_lines = split_lines(sentences_tsv);
  const auto label_lines = split_lines(labels_tsv);
  if (sentence_lines.empty() || label_lines.empty()) throw DatasetError("empty ValueEval input");

  const auto s_header = split_tabs(sentence_lines.front());
  const auto [s_text_id, s_sentence_id] = key_columns(s_header, "sentences");
  std::optional<std::size_t> s_text;
  for (std::size_t c = 0; c < s_header.size(); ++c) {
    if (lower(trim(s_header[c])) == "text") s_text = c;
  }
  if (!s_text) throw DatasetError("sentences file lacks a Text column");

  std::map<std::string, std::string> texts;
  for (std::size_t i = 1; i < sentence_lines.size(); ++i) {
    const auto f = split_tabs(sentence_lines[i]);
    if (f.size() != s_header.size()) {
      throw DatasetError("sentences " + line_prefix(i + 1) + "wrong field count");
    }
    texts[trim(f[s_text_id]) + "_" + trim(f[s_sentence_id])] = f[*s_text];
  }

  const auto l_header = split_tabs(label_lines.front());
  const auto [l_text_id, l_sentence_id] = key_columns(l_header, "labels");
  std::map<std::string, std::vector<std::size_t>> columns_by_value;
  for (std::size_t c = 0; c < l_header.size(); ++c) {
    if (c == l_text_id || c == l_sentence_id) continue;
    auto name = trim(l_header[c]);
    for (const std::string suffix : {" attained", " constrained"}) {
      if (name.size() > suffix.size() &&
          lower(name.substr(name.size() - suffix.size())) == suffix) {
        name.resize(name.size() - suffix.size());
        break;
      }
    }
    auto id = canonicalize_label(name, theory);
    // "Self-direction: thought" style headers: retry with the family name.
    if (!id && name.find(':') != std::string::npos) {
      id = canonicalize_label(name.substr(0, name.find(':')), theory);
    }
    if (id) {
      columns_by_value[*id].push_back(c);
    } else {
      result.warnings.push_back("ValueEval column \"" + trim(l_header[c]) +
                                "\" has no counterpart in theory " + theory.theory_id);
    }
  }
  if (columns_by_value.empty()) throw DatasetError("no ValueEval label column matches the theory");

  std::vector<std::string> value_ids;
  for (const auto& v : theory.values) {
    if (columns_by_value.count(v.value_id)) value_ids.push_back(v.value_id);
  }
  std::ostringstream out;
  out << "text_id\ttext";
  for (const auto& id : value_ids) out << '\t' << id;
  out << '\n';

  for (std::size_t i = 1; i < label_lines.size(); ++i) {
    const auto f = split_tabs(label_lines[i]);
    if (f.size() != l_header.size()) {
      throw DatasetError("labels " + line_prefix(i + 1) + "wrong field count");
    }
    const auto key = trim(f[l_text_id]) + "_" + trim(f[l_sentence_id]);
    const auto text = texts.find(key);
    if (text == texts.end()) {
      result.warnings.push_back("labels row " + key + " has no sentence; skipped");
      continue;
    }
    out << key << '\t' << escape_field(text->second);
    for (const auto& id : value_ids) {
      bool present = false;
      for (auto c : columns_by_value.at(id)) {
        try {
          present = present || std::stod(trim(f[c])) > 0.0;
        } catch (const std::exception&) {
          throw DatasetError("labels " + line_prefix(i + 1) + "non-numeric label \"" + f[c] + "\"");
        }
      }
      out << '\t' << (present ? '1' : '0');
    }
    out << '\n';
    ++result.rows;
  }
  result.tsv = out.str();
  return result;
}

std::uint64_t SubsetSampler::uniform_below(std::uint64_t bound) {
  if (bound == 0) throw Error("uniform_below needs a positive bound");
  const std::uint64_t threshold = (0 - bound) % bound;  // (2^64 - bound) mod bound
  std::uint64_t r = engine_();
  while (r < threshold) r = engine_();
  return r % bound;
}

std::vector<std::size_t> SubsetSampler::select(std::size_t population, std::size_t n) {
  std::vector<std::size_t> picked;
  picked.reserve(n);
  for (std::size_t t = 0; t < population && picked.size() < n; ++t) {
    const auto remaining = static_cast<std::uint64_t>(population - t);
    if (uniform_below(remaining) < n - picked.size()) picked.push_back(t);
  }
  return picked;
}

std::vector<LabeledSample> sample_subset(const std::vector<LabeledSample>& samples, std::size_t n,
                                         std::uint64_t seed) {
  if (n == 0 || n > samples.size()) {
    throw DatasetError("sample size must lie in [1, " + std::to_string(samples.size()) +
                       "], got " + std::to_string(n));
  }
  SubsetSampler sampler(seed);
  std::vector<LabeledSample> out;
  out.reserve(n);
  for (auto idx : sampler.select(samples.size(), n)) out.push_back(samples[idx]);
  return out;
}

BatchResult run_batch(const std::vector<LabeledSample>& samples, const ValueTheory& theory,
                      const PromptTemplate& detect_prompt, const ChatBackend& backend,
                      const BatchOptions& options) {
  struct Slot {
    std::optional<Prediction> prediction;
    std::optional<std::string> failure;
    std::vector<std::string> warnings;
  };
  std::vector<Slot> slots(samples.size());
  const auto allowed_failures =
      static_cast<std::size_t>(std::floor(options.max_failure_rate * static_cast<double>(samples.size())));

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> failures{0};
  std::atomic<bool> aborted{false};

  auto worker = [&] {
    while (!aborted.load()) {
      const auto i = next.fetch_add(1);
      if (i >= samples.size()) return;
      // Only the text is forwarded; the gold set stays here.
      const auto& text = samples[i].text;
      try {
        auto detection = detect_values(text, theory, detect_prompt, backend);
        Prediction p{samples[i].text_id, {}};
        for (const auto& item : detection.items) p.predicted.insert(item.value_id);
        slots[i].prediction = std::move(p);
        slots[i].warnings = std::move(detection.warnings);
      } catch (const std::exception& e) {
        slots[i].failure = e.what();
        if (failures.fetch_add(1) + 1 > allowed_failures) aborted.store(true);
      }
    }
  };

  const auto threads = std::max<std::size_t>(1, std::min(options.parallelism, samples.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  if (aborted.load()) {
    throw BatchAbortedError("batch aborted: " + std::to_string(failures.load()) +
                            " failed samples exceed the allowed failure rate of " +
                            std::to_string(options.max_failure_rate));
  }

  BatchResult result;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& slot = slots[i];
    if (slot.prediction) {
      result.predictions.push_back(std::move(*slot.prediction));
      for (auto& w : slot.warnings) result.warnings.push_back(samples[i].text_id + ": " + w);
    } else if (slot.failure) {
      result.failures.push_back({samples[i].text_id, *slot.failure});
    }
  }
  return result;
}

double safe_ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double harmonic_mean(double precision, double recall) {
  const double sum = precision + recall;
  return sum == 0.0 ? 0.0 : 2.0 * precision * recall / sum;
}

MetricsReport compute_micro_metrics(const LabelSets& gold, const LabelSets& predicted,
                                    const std::vector<std::string>& value_universe) {
  if (gold.size() != predicted.size() ||
      !std::equal(gold.begin(), gold.end(), predicted.begin(),
                  [](const auto& a, const auto& b) { return a.first == b.first; })) {
    for (const auto& [id, _] : gold) {
      if (!predicted.count(id)) throw Error("text_id \"" + id + "\" has no prediction");
    }
    for (const auto& [id, _] : predicted) {
      if (!gold.count(id)) throw Error("text_id \"" + id + "\" has no gold labels");
    }
  }

  MetricsReport report;
  auto& per_value = report.counts.per_value;
  for (const auto& id : value_universe) per_value[id];

  for (const auto& [text_id, gold_set] : gold) {
    const auto& predicted_set = predicted.at(text_id);
    for (const auto& v : gold_set) {
      if (predicted_set.count(v)) {
        ++per_value[v].tp;
      } else {
        ++per_value[v].fn;
      }
    }
    for (const auto& v : predicted_set) {
      if (!gold_set.count(v)) ++per_value[v].fp;
    }
  }

  auto& totals = report.counts.totals;
  for (const auto& [id, c] : per_value) {
    totals.tp += c.tp;
    totals.fp += c.fp;
    totals.fn += c.fn;
    const auto p = safe_ratio(c.tp, c.tp + c.fp);
    const auto r = safe_ratio(c.tp, c.tp + c.fn);
    report.per_value[id] = {p, r, harmonic_mean(p, r), c.tp + c.fn};
  }
  report.micro_precision = safe_ratio(totals.tp, totals.tp + totals.fp);
  report.micro_recall = safe_ratio(totals.tp, totals.tp + totals.fn);
  report.micro_f1 = harmonic_mean(report.micro_precision, report.micro_recall);
  return report;
}

MetricsReport score_batch(const std::vector<LabeledSample>& samples, const BatchResult& batch,
                          const ValueTheory& theory) {
  LabelSets gold;
  LabelSets predicted;
  for (const auto& p : batch.predictions) predicted[p.text_id] = p.predicted;
  for (const auto& s : samples) {
    if (predicted.count(s.text_id)) gold[s.text_id] = s.gold;
  }
  std::vector<std::string> universe;
  for (const auto& v : theory.values) universe.push_back(v.value_id);
  auto report = compute_micro_metrics(gold, predicted, universe);
  for (const auto& f : batch.failures) report.failed_samples.push_back(f.text_id);
  return report;
}

json metrics_to_json(const MetricsReport& report) {
  json per_value = json::object();
  for (const auto& [id, m] : report.per_value) {
    const auto& c = report.counts.per_value.at(id);
    per_value[id] = {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
                     {"support", m.support},     {"tp", c.tp},         {"fp", c.fp},
                     {"fn", c.fn}};
  }
  const auto& md = report.run_metadata;
  return {{"micro_precision", report.micro_precision},
          {"micro_recall", report.micro_recall},
          {"micro_f1", report.micro_f1},
          {"totals", {{"tp", report.counts.totals.tp},
                      {"fp", report.counts.totals.fp},
                      {"fn", report.counts.totals.fn}}},
          {"per_value", std::move(per_value)},
          {"failed_samples", report.failed_samples},
          {"run_metadata",
           {{"model", md.model},
            {"flavor", md.flavor},
            {"temperature", md.temperature},
            {"seed", md.seed},
            {"dataset", md.dataset},
            {"dataset_size", md.dataset_size},
            {"sample_size", md.sample_size},
            {"sample_seed", md.sample_seed},
            {"theory_id", md.theory_id},
            {"theory_version", md.theory_version},
            {"generated_at", md.generated_at},
            {"config", md.config}}}};
}

MetricsReport metrics_from_json(const json& doc) {
  MetricsReport report;
  try {
    report.micro_precision = doc.at("micro_precision").get<double>();
    report.micro_recall = doc.at("micro_recall").get<double>();
    report.micro_f1 = doc.at("micro_f1").get<double>();
    const auto& totals = doc.at("totals");
    report.counts.totals = {totals.at("tp").get<std::int64_t>(), totals.at("fp").get<std::int64_t>(),
                            totals.at("fn").get<std::int64_t>()};
    for (const auto& [id, m] : doc.at("per_value").items()) {
      report.per_value[id] = {m.at("precision").get<double>(), m.at("recall").get<double>(),
                              m.at("f1").get<double>(), m.at("support").get<std::int64_t>()};
      report.counts.per_value[id] = {m.at("tp").get<std::int64_t>(), m.at("fp").get<std::int64_t>(),
                                     m.at("fn").get<std::int64_t>()};
    }
    report.failed_samples = doc.at("failed_samples").get<std::vector<std::string>>();
    const auto& md = doc.at("run_metadata");
    auto& out = report.run_metadata;
    out.model = md.at("model").get<std::string>();
    out.flavor = md.at("flavor").get<std::string>();
    out.temperature = md.at("temperature").get<double>();
    out.seed = md.at("seed").get<std::int64_t>();
    out.dataset = md.at("dataset").get<std::string>();
    out.dataset_size = md.at("dataset_size").get<std::size_t>();
    out.sample_size = md.at("sample_size").get<std::size_t>();
    out.sample_seed = md.at("sample_seed").get<std::uint64_t>();
    out.theory_id = md.at("theory_id").get<std::string>();
    out.theory_version = md.at("theory_version").get<std::int64_t>();
    out.generated_at = md.at("generated_at").get<std::string>();
    out.config = md.value("config", json());
  } catch (const json::exception& e) {
    throw SchemaError("$", std::string("invalid metrics report: ") + e.what());
  }
  return report;
}

namespace {

std::string fixed(double v, int digits) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << v;
  return out.str();
}

std::string percent(double v) { return fixed(v * 100.0, 1) + "%"; }

std::string model_label(const RunMetadata& md) {
  std::string label = md.model.empty() ? "(unnamed model)" : md.model;
  if (md.temperature != 0.0) label += " (T=" + fixed(md.temperature, 1) + ")";
  return label;
}

void render_rows(std::ostringstream& out, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> widths;
  for (const auto& row : rows) {
    widths.resize(std::max(widths.size(), row.size()), 0);
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      if (c > 0) out << " | ";
      out << rows[r][c];
      if (c + 1 < rows[r].size()) out << std::string(widths[c] - rows[r][c].size(), ' ');
    }
    out << '\n';
    if (r == 0) {
      for (std::size_t c = 0; c < widths.size(); ++c) {
        if (c > 0) out << "-+-";
        out << std::string(widths[c], '-');
      }
      out << '\n';
    }
  }
}

}  // namespace

std::string render_metrics_table(std::vector<MetricsReport> reports) {
  std::stable_sort(reports.begin(), reports.end(),
                   [](const auto& a, const auto& b) { return a.micro_f1 > b.micro_f1; });
  std::ostringstream out;
  std::vector<std::vector<std::string>> rows{{"Model", "Micro F1-score", "Recall", "Precision"}};
  for (const auto& r : reports) {
    rows.push_back({model_label(r.run_metadata), fixed(r.micro_f1, 4), percent(r.micro_recall),
                    percent(r.micro_precision)});
  }
  render_rows(out, rows);

  if (reports.size() == 1) {
    const auto& r = reports.front();
    const auto& t = r.counts.totals;
    out << "\nTotals: TP=" << t.tp << " FP=" << t.fp << " FN=" << t.fn;
    if (!r.failed_samples.empty()) out << "  (failed samples excluded: " << r.failed_samples.size() << ")";
    out << '\n';
    if (!r.per_value.empty()) {
      std::vector<std::vector<std::string>> per{{"Value", "Precision", "Recall", "F1", "Support"}};
      for (const auto& [id, m] : r.per_value) {
        per.push_back({id, percent(m.precision), percent(m.recall), fixed(m.f1, 4),
                       std::to_string(m.support)});
      }
      out << '\n';
      render_rows(out, per);
    }
  }
  return out.str();
}

void emit_report(const MetricsReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create output directory " + out_dir.string() + ": " + ec.message());
  write_file_atomically(out_dir / "metrics.json", metrics_to_json(report).dump(2) + "\n");
  write_file_atomically(out_dir / "metrics.txt", render_metrics_table({report}));
}

}  // namespace valuelens
