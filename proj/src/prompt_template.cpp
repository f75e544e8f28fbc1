#include "valuelens/prompt_template.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace valuelens {

using nlohmann::json;

std::string_view to_string(TemplateKind kind) {
  switch (kind) {
    case TemplateKind::conceptualise:
      return "conceptualise";
    case TemplateKind::detect:
      return "detect";
    case TemplateKind::rate:
      return "rate";
  }
  return "unknown";
}

namespace {

constexpr std::string_view kOpen = "{{";
constexpr std::string_view kClose = "}}";

struct Marker {
  std::size_t begin;
  std::size_t end;  // one past "}}"
  std::string name;
};

std::vector<Marker> scan_markers(std::string_view text) {
  std::vector<Marker> out;
  std::size_t pos = 0;
  while ((pos = text.find(kOpen, pos)) != std::string_view::npos) {
    const auto close = text.find(kClose, pos + kOpen.size());
    if (close == std::string_view::npos) break;
    out.push_back({pos, close + kClose.size(),
                   std::string(text.substr(pos + kOpen.size(), close - pos - kOpen.size()))});
    pos = close + kClose.size();
  }
  return out;
}

TemplateKind parse_kind(const std::string& name) {
  if (name == "conceptualise") return TemplateKind::conceptualise;
  if (name == "detect") return TemplateKind::detect;
  if (name == "rate") return TemplateKind::rate;
  throw ConfigError("unknown template_id \"" + name + "\"");
}

}  // namespace

void PromptTemplate::validate() const {
  const std::string label(to_string(kind));
  if (!scan_markers(system_text).empty()) {
    throw ConfigError(label + " template: system text must not contain slot markers");
  }
  std::map<std::string, int> counts;
  for (const auto& m : scan_markers(user_text)) ++counts[m.name];
  std::set<std::string> declared;
  for (const auto& slot : slots) {
    if (!declared.insert(slot).second) {
      throw ConfigError(label + " template: slot \"" + slot + "\" declared twice");
    }
    const auto it = counts.find(slot);
    const int n = it == counts.end() ? 0 : it->second;
    if (n != 1) {
      throw ConfigError(label + " template: slot \"" + slot + "\" appears " + std::to_string(n) +
                        " times, expected exactly once");
    }
  }
  for (const auto& [name, n] : counts) {
    if (!declared.count(name)) {
      throw ConfigError(label + " template: undeclared slot marker {{" + name + "}}");
    }
  }
}

std::vector<ChatMessage> PromptTemplate::render(
    const std::map<std::string, std::string>& bindings) const {
  std::string rendered;
  std::size_t cursor = 0;
  for (const auto& m : scan_markers(user_text)) {
    const auto it = bindings.find(m.name);
    if (it == bindings.end()) {
      throw ConfigError(std::string(to_string(kind)) + " template: slot \"" + m.name +
                        "\" is unbound");
    }
    rendered.append(user_text, cursor, m.begin - cursor);
    rendered += it->second;
    cursor = m.end;
  }
  rendered.append(user_text, cursor, std::string::npos);

  std::vector<ChatMessage> messages;
  if (!system_text.empty()) messages.push_back({Role::system, system_text});
  messages.push_back({Role::user, std::move(rendered)});
  return messages;
}

PromptTemplate template_from_json(const json& doc) {
  PromptTemplate t;
  try {
    t.kind = parse_kind(doc.at("template_id").get<std::string>());
    t.version = doc.value("version", std::string("1"));
    t.system_text = doc.value("system", std::string());
    const auto& user = doc.at("user");
    // Long prompts are stored as arrays of lines for readable diffs.
    if (user.is_array()) {
      for (std::size_t i = 0; i < user.size(); ++i) {
        if (i > 0) t.user_text.push_back('\n');
        t.user_text += user[i].get<std::string>();
      }
    } else {
      t.user_text = user.get<std::string>();
    }
    t.slots = doc.at("slots").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid prompt template: ") + e.what());
  }
  t.validate();
  return t;
}

PromptTemplate load_template(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read prompt template " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return template_from_json(json::parse(buffer.str()));
  } catch (const json::parse_error& e) {
    throw ConfigError("prompt template " + path.string() + " is not valid JSON: " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

TemplateSet TemplateSet::load(const std::filesystem::path& dir) {
  TemplateSet set{load_template(dir / "conceptualise.json"), load_template(dir / "detect.json"),
                  load_template(dir / "rate.json")};
  if (set.conceptualise.kind != TemplateKind::conceptualise || set.detect.kind != TemplateKind::detect ||
      set.rate.kind != TemplateKind::rate) {
    throw ConfigError("template files in " + dir.string() + " carry mismatched template_id values");
  }
  return set;
}

}  // namespace valuelens
