#include "demix/corpus/anonymize.hpp"

#include "demix/error.hpp"
#include "demix/numerics/checkpoint.hpp"

#include <json.hpp>

namespace demix {

std::vector<AnonymizationRule> default_anonymization_rules() {
  return {
      {"email", R"([A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,})", "<EMAIL>"},
      {"credit_card", R"(\b(?:\d[ -]?){12,15}\d\b)", "<CREDIT_CARD_NUMBER>"},
      {"ssn", R"(\b\d{3}-\d{2}-\d{4}\b)", "<SSN>"},
      {"phone", R"((?:\+\d{1,2}[ .-]?)?(?:\(\d{3}\)|\b\d{3})[ .-]?\d{3}[ .-]?\d{4}\b)", "<PHONE_NUMBER>"},
      {"dart", R"(\bDART[-_ ]?\d+\b)", "<DART>"},
      {"fb_user_id", R"(\b(?:fbid|fb_user_id|facebook\.com/profile\.php\?id)=\d+)", "<FB_USERID>"},
      {"user_handle", R"(@[A-Za-z0-9_]+)", "<USER>"},
  };
}

std::vector<AnonymizationRule> load_anonymization_rules(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("anonymization rules: invalid JSON: " + std::string(e.what()));
  }
  if (!j.is_array()) throw DataError("anonymization rules must be a JSON list");
  std::vector<AnonymizationRule> rules;
  for (const auto& r : j) {
    if (!r.is_object() || !r.contains("pattern") || !r.contains("dummy")) {
      throw DataError("anonymization rule needs pattern and dummy");
    }
    rules.push_back({r.value("category", std::string{}), r["pattern"].get<std::string>(), r["dummy"].get<std::string>()});
  }
  Anonymizer check(rules);
  return rules;
}

Anonymizer::Anonymizer(std::vector<AnonymizationRule> rules) : rules_(std::move(rules)) {
  for (const auto& r : rules_) {
    try {
      compiled_.emplace_back(r.pattern, std::regex::ECMAScript | std::regex::optimize);
    } catch (const std::regex_error& e) {
      throw ConfigError("pattern", "invalid pattern for rule '" + r.category + "': " + e.what());
    }
  }
}

std::string Anonymizer::apply(std::string_view text) const {
  std::string out;
  out.reserve(text.size());
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  const char* pos = begin;
  std::cmatch m;
  while (pos < end) {
    bool replaced = false;
    auto flags = std::regex_constants::match_continuous;
    if (pos != begin) flags |= std::regex_constants::match_prev_avail;
    for (std::size_t r = 0; r < compiled_.size(); ++r) {
      if (std::regex_search(pos, end, m, compiled_[r], flags) && m.length(0) > 0) {
        out += rules_[r].dummy;
        pos += m.length(0);
        replaced = true;
        break;
      }
    }
    if (!replaced) out.push_back(*pos++);
  }
  return out;
}

bool Anonymizer::matches_any(std::string_view text) const {
  for (const auto& re : compiled_) {
    if (std::regex_search(text.begin(), text.end(), re)) return true;
  }
  return false;
}

std::string anonymize(std::string_view text, const std::vector<AnonymizationRule>& rules) {
  return Anonymizer(rules).apply(text);
}

}  // namespace demix
