#include "valuelens/detection.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>

#include "valuelens/structured_output.hpp"

namespace valuelens {

using nlohmann::json;

namespace {

struct LevelInfo {
  IntensityLevel level;
  std::string_view token;
  std::string_view glyph;
  std::string_view name;
  std::string_view definition;
};

// Definitions are handed verbatim to the rating model.
constexpr std::array<LevelInfo, 7> kLevels = {{
    {IntensityLevel::strong_support, "strong_support", "+ + +", "Strong support",
     "The text fervently promotes and defends the value, emphasising its importance. This value "
     "is central to the message, backed by emotional, moral, and logical urgency."},
    {IntensityLevel::mild_support, "mild_support", "+", "Mild support",
     "The text aligns with the value through positive mention or subtle endorsement, without "
     "significant detail, insistence, or emphasis."},
    {IntensityLevel::neutral, "neutral", "o", "Neutral",
     "The text presents the value neutrally without showing clear support or opposition. The "
     "tone is factual, balanced, and incidental."},
    {IntensityLevel::mild_resistance, "mild_resistance", "--", "Mild resistance",
     "The text subtly questions, downplays, or presents alternative perspectives on its value. "
     "This opposition is indirect, cautious, or expressed through mild scepticism."},
    {IntensityLevel::strong_resistance, "strong_resistance", "-- -- --", "Strong resistance",
     "The text challenges, criticises, or undermines its value directly and forcefully. This "
     "includes explicit arguments, a negative emotional tone, or repeated rejections."},
    {IntensityLevel::reframing, "reframing", "±", "Reframing",
     "The text acknowledges its value but shifts its meaning and context, introducing a new "
     "perspective that changes the emphasis without openly expressing support or opposition."},
    {IntensityLevel::no_values, "no_values", "∅", "No values",
     "The text is factual or technical in nature and does not contain evaluative statements."},
}};

const LevelInfo& info(IntensityLevel level) {
  return kLevels[static_cast<std::size_t>(level)];
}

std::string strip_spaces(std::string_view s) {
  std::string out;
  for (unsigned char c : s) {
    if (!std::isspace(c)) out.push_back(static_cast<char>(c));
  }
  return out;
}

std::string trim_lower(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Label of one reply entry: a bare string or an object with one of the
// usual keys.
std::optional<std::string> entry_label(const json& entry) {
  if (entry.is_string()) return entry.get<std::string>();
  if (!entry.is_object()) return std::nullopt;
  for (const char* key : {"value_id", "value", "label", "id", "name"}) {
    if (auto it = entry.find(key); it != entry.end() && it->is_string()) {
      return it->get<std::string>();
    }
  }
  return std::nullopt;
}

const json& entries_of(const json& reply, const char* key) {
  if (reply.is_array()) return reply;
  if (reply.is_object()) {
    if (auto it = reply.find(key); it != reply.end() && it->is_array()) return *it;
  }
  throw ReplyShapeError(std::string("reply has no \"") + key + "\" array");
}

std::string describe(const json& entry) {
  auto s = entry.dump();
  return s.size() > 80 ? s.substr(0, 80) + "..." : s;
}

json detected_to_prompt(const std::vector<DetectionItem>& detected, const ValueTheory& theory) {
  json out = json::array();
  for (const auto& item : detected) {
    const auto* spec = theory.find(item.value_id);
    out.push_back({{"value_id", item.value_id},
                   {"name", spec != nullptr ? spec->name : item.value_id},
                   {"evidence", item.evidence}});
  }
  return out;
}

}  // namespace

std::string_view token(IntensityLevel level) { return info(level).token; }
std::string_view glyph(IntensityLevel level) { return info(level).glyph; }
std::string_view display_name(IntensityLevel level) { return info(level).name; }
std::string_view definition(IntensityLevel level) { return info(level).definition; }

std::optional<IntensityLevel> parse_intensity(std::string_view raw) {
  const auto lowered = trim_lower(raw);
  for (const auto& l : kLevels) {
    if (lowered == l.token) return l.level;
  }
  const auto compact = strip_spaces(lowered);
  if (compact.empty()) return std::nullopt;
  for (const auto& l : kLevels) {
    if (compact == strip_spaces(l.glyph)) return l.level;
  }
  return std::nullopt;
}

std::string intensity_scale_text() {
  std::string out;
  for (const auto& l : kLevels) {
    out += "(";
    out += l.glyph;
    out += ") ";
    out += l.name;
    out += " [";
    out += l.token;
    out += "]: ";
    out += l.definition;
    out += "\n";
  }
  return out;
}

StageMetadata stage_metadata(const BackendConfig& config) {
  return {config.model_name, std::string(to_string(config.flavor)), config.temperature, config.seed};
}

std::string normalize_for_match(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

bool evidence_in_text(std::string_view evidence, std::string_view text) {
  const auto needle = normalize_for_match(evidence);
  return !needle.empty() && normalize_for_match(text).find(needle) != std::string::npos;
}

DetectionResult detect_values(std::string_view text, const ValueTheory& theory,
                              const PromptTemplate& prompt, const ChatBackend& backend) {
  if (normalize_for_match(text).empty()) throw Error("input text is empty");

  const auto messages =
      prompt.render({{"theory", serialize_theory(theory)}, {"text", std::string(text)}});
  const auto reply = extract_structured(backend.complete(messages).response_content);

  DetectionResult result;
  std::map<std::string, std::size_t> index;
  for (const auto& entry : entries_of(reply, "values")) {
    const auto label = entry_label(entry);
    if (!label) {
      result.warnings.push_back("detection entry without a value label ignored: " + describe(entry));
      continue;
    }
    const auto value_id = canonicalize_label(*label, theory);
    if (!value_id) {
      result.warnings.push_back("unmatched label \"" + *label + "\" dropped");
      continue;
    }

    std::vector<std::string> evidence;
    if (entry.is_object()) {
      if (auto it = entry.find("evidence"); it != entry.end() && !it->is_null()) {
        const json items = it->is_array() ? *it : json::array({*it});
        for (const auto& quote : items) {
          if (!quote.is_string()) {
            result.warnings.push_back("non-string evidence for " + *value_id + " ignored");
          } else if (!evidence_in_text(quote.get<std::string>(), text)) {
            result.warnings.push_back("evidence for " + *value_id + " not found in text: \"" +
                                      quote.get<std::string>() + "\"");
          } else {
            evidence.push_back(quote.get<std::string>());
          }
        }
      }
    }

    auto [it, inserted] = index.emplace(*value_id, result.items.size());
    if (inserted) {
      result.items.push_back({*value_id, std::move(evidence)});
      continue;
    }
    auto& merged = result.items[it->second].evidence;
    for (auto& quote : evidence) {
      if (std::find(merged.begin(), merged.end(), quote) == merged.end()) {
        merged.push_back(std::move(quote));
      }
    }
  }
  return result;
}

RatingResult rate_intensity(std::string_view text, const std::vector<DetectionItem>& detected,
                            const ValueTheory& theory, const PromptTemplate& prompt,
                            const ChatBackend& backend) {
  const auto messages = prompt.render({{"theory", serialize_theory(theory)},
                                       {"text", std::string(text)},
                                       {"detected", detected_to_prompt(detected, theory).dump(2)},
                                       {"scale", intensity_scale_text()}});
  const auto reply = extract_structured(backend.complete(messages).response_content);

  std::set<std::string> wanted;
  for (const auto& d : detected) wanted.insert(d.value_id);

  RatingResult result;
  std::map<std::string, RatedValue> rated;
  for (const auto& entry : entries_of(reply, "ratings")) {
    const auto label = entry_label(entry);
    if (!label || !entry.is_object()) {
      result.warnings.push_back("rating entry without a value label ignored: " + describe(entry));
      continue;
    }
    const auto value_id = canonicalize_label(*label, theory);
    if (!value_id || !wanted.count(*value_id)) {
      result.warnings.push_back("rating for undetected value \"" + *label + "\" dropped");
      continue;
    }
    if (rated.count(*value_id)) {
      result.warnings.push_back("duplicate rating for " + *value_id + " ignored");
      continue;
    }
    const auto raw_intensity = entry.value("intensity", json()).is_string()
                                   ? entry.at("intensity").get<std::string>()
                                   : std::string();
    const auto level = parse_intensity(raw_intensity);
    if (!level || *level == IntensityLevel::no_values) {
      result.warnings.push_back("invalid intensity \"" + raw_intensity + "\" for " + *value_id +
                                " ignored");
      continue;
    }
    const auto justification = entry.value("justification", json()).is_string()
                                   ? entry.at("justification").get<std::string>()
                                   : std::string();
    if (normalize_for_match(justification).empty()) {
      result.warnings.push_back("rating for " + *value_id + " has no justification; ignored");
      continue;
    }
    rated.emplace(*value_id, RatedValue{*value_id, *level, justification});
  }

  for (const auto& d : detected) {
    if (auto it = rated.find(d.value_id); it != rated.end()) {
      result.ratings.push_back(it->second);
    } else {
      result.warnings.push_back("no usable rating for " + d.value_id + "; defaulted to neutral");
      result.ratings.push_back({d.value_id, IntensityLevel::neutral, kMissingRatingJustification});
    }
  }
  return result;
}

AnalysisReport analyze(const std::string& text_id, const std::string& text,
                       const ValueTheory& theory, const TemplateSet& templates,
                       const ChatBackend& detect_backend, const ChatBackend* rate_backend) {
  AnalysisReport report;
  report.text_id = text_id;
  report.input_text = text;
  report.theory_id = theory.theory_id;
  report.theory_version = theory.version;
  report.detect_model = stage_metadata(detect_backend.config());
  if (rate_backend != nullptr) report.rate_model = stage_metadata(rate_backend->config());

  DetectionResult detection;
  try {
    detection = detect_values(text, theory, templates.detect, detect_backend);
  } catch (const std::exception& e) {
    throw StageError("detect", e.what());
  }
  report.detected = std::move(detection.items);
  report.warnings = std::move(detection.warnings);
  report.no_values_flag = report.detected.empty();

  if (rate_backend == nullptr) return report;
  report.ratings.emplace();
  if (report.detected.empty()) return report;

  RatingResult rating;
  try {
    rating = rate_intensity(text, report.detected, theory, templates.rate, *rate_backend);
  } catch (const std::exception& e) {
    throw StageError("rate", e.what());
  }
  report.ratings = std::move(rating.ratings);
  report.warnings.insert(report.warnings.end(), rating.warnings.begin(), rating.warnings.end());
  return report;
}

namespace {

json stage_to_json(const StageMetadata& s) {
  return {{"model", s.model}, {"flavor", s.flavor}, {"temperature", s.temperature}, {"seed", s.seed}};
}

StageMetadata stage_from_json(const json& doc) {
  return {doc.at("model").get<std::string>(), doc.at("flavor").get<std::string>(),
          doc.at("temperature").get<double>(), doc.at("seed").get<std::int64_t>()};
}

}  // namespace

json analysis_to_json(const AnalysisReport& report) {
  json detected = json::array();
  for (const auto& d : report.detected) {
    detected.push_back({{"value_id", d.value_id}, {"evidence", d.evidence}});
  }
  json metadata = {{"detect", stage_to_json(report.detect_model)}};
  if (report.rate_model) metadata["rate"] = stage_to_json(*report.rate_model);

  json out = {{"text_id", report.text_id},
              {"input_text", report.input_text},
              {"theory", {{"theory_id", report.theory_id}, {"version", report.theory_version}}},
              {"detected", std::move(detected)},
              {"no_values_flag", report.no_values_flag},
              {"model_metadata", std::move(metadata)},
              {"warnings", report.warnings}};
  if (report.ratings) {
    json ratings = json::array();
    for (const auto& r : *report.ratings) {
      ratings.push_back({{"value_id", r.value_id},
                         {"intensity", token(r.intensity)},
                         {"glyph", glyph(r.intensity)},
                         {"justification", r.justification}});
    }
    out["ratings"] = std::move(ratings);
  }
  return out;
}

AnalysisReport analysis_from_json(const json& doc) {
  AnalysisReport report;
  try {
    report.text_id = doc.at("text_id").get<std::string>();
    report.input_text = doc.at("input_text").get<std::string>();
    report.theory_id = doc.at("theory").at("theory_id").get<std::string>();
    report.theory_version = doc.at("theory").at("version").get<std::int64_t>();
    for (const auto& d : doc.at("detected")) {
      report.detected.push_back(
          {d.at("value_id").get<std::string>(), d.at("evidence").get<std::vector<std::string>>()});
    }
    if (doc.contains("ratings")) {
      report.ratings.emplace();
      for (const auto& r : doc.at("ratings")) {
        const auto raw = r.at("intensity").get<std::string>();
        const auto level = parse_intensity(raw);
        if (!level) throw SchemaError("ratings", "unknown intensity \"" + raw + "\"");
        report.ratings->push_back(
            {r.at("value_id").get<std::string>(), *level, r.at("justification").get<std::string>()});
      }
    }
    report.no_values_flag = doc.at("no_values_flag").get<bool>();
    report.detect_model = stage_from_json(doc.at("model_metadata").at("detect"));
    if (doc.at("model_metadata").contains("rate")) {
      report.rate_model = stage_from_json(doc.at("model_metadata").at("rate"));
    }
    report.warnings = doc.at("warnings").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw SchemaError("$", std::string("invalid analysis report: ") + e.what());
  }
  return report;
}

namespace {

std::string value_label(const std::string& value_id, const ValueTheory& theory) {
  const auto* spec = theory.find(value_id);
  return spec != nullptr ? spec->name + " (" + value_id + ")" : value_id;
}

// Display width in code points; glyphs like "±" are multi-byte.
std::size_t display_width(std::string_view s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; }));
}

std::string pad(const std::string& s, std::size_t width) {
  const auto w = display_width(s);
  return w >= width ? s : s + std::string(width - w, ' ');
}

}  // namespace

std::string render_analysis(const AnalysisReport& report, const ValueTheory& theory) {
  std::ostringstream out;
  out << "Text: " << report.text_id << "  (theory " << report.theory_id << " v"
      << report.theory_version << ")\n\n";

  if (report.no_values_flag) {
    const auto level = IntensityLevel::no_values;
    out << "(" << glyph(level) << ") " << display_name(level) << ": " << definition(level) << "\n";
  } else if (report.ratings) {
    std::vector<std::array<std::string, 3>> rows;
    rows.push_back({"Value", "Intensity", "Justification"});
    for (const auto& r : *report.ratings) {
      rows.push_back({value_label(r.value_id, theory),
                      std::string(display_name(r.intensity)) + " (" +
                          std::string(glyph(r.intensity)) + ")",
                      r.justification});
    }
    std::size_t w0 = 0;
    std::size_t w1 = 0;
    for (const auto& row : rows) {
      w0 = std::max(w0, display_width(row[0]));
      w1 = std::max(w1, display_width(row[1]));
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out << pad(rows[i][0], w0) << " | " << pad(rows[i][1], w1) << " | " << rows[i][2] << "\n";
      if (i == 0) out << std::string(w0, '-') << "-+-" << std::string(w1, '-') << "-+-" << "-------------\n";
    }
  }

  if (!report.detected.empty()) {
    out << "\nEvidence:\n";
    for (const auto& d : report.detected) {
      out << "  " << value_label(d.value_id, theory) << ":";
      if (d.evidence.empty()) out << " (none quoted)";
      for (std::size_t i = 0; i < d.evidence.size(); ++i) {
        out << (i == 0 ? " " : ", ") << "\"" << d.evidence[i] << "\"";
      }
      out << "\n";
    }
  }
  if (!report.warnings.empty()) {
    out << "\nWarnings:\n";
    for (const auto& w : report.warnings) out << "  - " << w << "\n";
  }
  return out.str();
}

}  // namespace valuelens
