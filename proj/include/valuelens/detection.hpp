#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "valuelens/llm_gateway.hpp"
#include "valuelens/prompt_template.hpp"
#include "valuelens/value_spec.hpp"

namespace valuelens {

/// The seven-level value intensity scale.
enum class IntensityLevel {
  strong_support,
  mild_support,
  neutral,
  mild_resistance,
  strong_resistance,
  reframing,
  no_values,
};

inline constexpr std::array<IntensityLevel, 7> kIntensityLevels = {
    IntensityLevel::strong_support,    IntensityLevel::mild_support,
    IntensityLevel::neutral,           IntensityLevel::mild_resistance,
    IntensityLevel::strong_resistance, IntensityLevel::reframing,
    IntensityLevel::no_values,
};

/// Serialization token, e.g. "mild_resistance".
std::string_view token(IntensityLevel level);
/// Display glyph, e.g. "--".
std::string_view glyph(IntensityLevel level);
/// Human name, e.g. "Mild resistance".
std::string_view display_name(IntensityLevel level);
/// Scale definition handed to the rating model.
std::string_view definition(IntensityLevel level);

/// Accepts exactly the seven tokens (case-insensitive) and the seven glyphs
/// (whitespace-insensitive). Everything else is rejected.
std::optional<IntensityLevel> parse_intensity(std::string_view raw);

/// The full scale as rendered into the rate prompt, one level per line.
std::string intensity_scale_text();

struct DetectionItem {
  std::string value_id;
  std::vector<std::string> evidence;

  bool operator==(const DetectionItem&) const = default;
};

struct RatedValue {
  std::string value_id;
  IntensityLevel intensity = IntensityLevel::neutral;
  std::string justification;

  bool operator==(const RatedValue&) const = default;
};

struct StageMetadata {
  std::string model;
  std::string flavor;
  double temperature = 0.0;
  std::int64_t seed = 42;

  bool operator==(const StageMetadata&) const = default;
};

StageMetadata stage_metadata(const BackendConfig& config);

struct AnalysisReport {
  std::string text_id;
  std::string input_text;
  std::string theory_id;
  std::int64_t theory_version = 0;
  std::vector<DetectionItem> detected;
  /// Absent when the rating stage was disabled for the run.
  std::optional<std::vector<RatedValue>> ratings;
  bool no_values_flag = false;
  StageMetadata detect_model;
  std::optional<StageMetadata> rate_model;
  std::vector<std::string> warnings;

  bool operator==(const AnalysisReport&) const = default;
};

struct DetectionResult {
  std::vector<DetectionItem> items;
  std::vector<std::string> warnings;
};

struct RatingResult {
  std::vector<RatedValue> ratings;
  std::vector<std::string> warnings;
};

/// The reply parsed but does not have the shape the stage asked for.
class ReplyShapeError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage failed; `stage()` is "detect" or "rate".
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message)
      : Error(stage + " stage failed: " + message), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// Collapses whitespace runs to one space, trims, and lowercases ASCII.
std::string normalize_for_match(std::string_view text);
/// True if `evidence` occurs in `text` after normalize_for_match on both.
bool evidence_in_text(std::string_view evidence, std::string_view text);

inline constexpr const char* kMissingRatingJustification = "rating missing from model reply";

DetectionResult detect_values(std::string_view text, const ValueTheory& theory,
                              const PromptTemplate& prompt, const ChatBackend& backend);

RatingResult rate_intensity(std::string_view text, const std::vector<DetectionItem>& detected,
                            const ValueTheory& theory, const PromptTemplate& prompt,
                            const ChatBackend& backend);

/// Detect, then rate unless `rate_backend` is null. Stage failures surface
/// as StageError; no partial report is returned.
AnalysisReport analyze(const std::string& text_id, const std::string& text,
                       const ValueTheory& theory, const TemplateSet& templates,
                       const ChatBackend& detect_backend, const ChatBackend* rate_backend);

nlohmann::json analysis_to_json(const AnalysisReport& report);
AnalysisReport analysis_from_json(const nlohmann::json& doc);

/// Plain-text rendering: a Value / Intensity / Justification table plus
/// the evidence list.
std::string render_analysis(const AnalysisReport& report, const ValueTheory& theory);

}  // namespace valuelens
