#pragma once

#include <filesystem>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

namespace demix {

struct AnonymizationRule {
  std::string category;
  std::string pattern;  // ECMAScript regex
  std::string dummy;
};

/// Conservative default patterns for the email, DART, Facebook user id,
/// phone, credit card, SSN and user-handle categories.
std::vector<AnonymizationRule> default_anonymization_rules();

/// Reads an ordered JSON list of {category, pattern, dummy} records.
std::vector<AnonymizationRule> load_anonymization_rules(const std::filesystem::path& path);

/// Compiled rule table. Scans left to right; at each position the first rule
/// whose pattern matches there (longest match for that rule) is replaced by
/// its dummy token and scanning resumes after the match.
class Anonymizer {
 public:
  explicit Anonymizer(std::vector<AnonymizationRule> rules);

  std::string apply(std::string_view text) const;
  const std::vector<AnonymizationRule>& rules() const { return rules_; }
  /// True when any rule pattern matches somewhere in `text`.
  bool matches_any(std::string_view text) const;

 private:
  std::vector<AnonymizationRule> rules_;
  std::vector<std::regex> compiled_;
};

std::string anonymize(std::string_view text, const std::vector<AnonymizationRule>& rules);

}  // namespace demix
