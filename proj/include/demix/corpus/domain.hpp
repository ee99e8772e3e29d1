#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace demix {

struct DomainLabel {
  std::string name;
  std::size_t index = 0;

  bool operator==(const DomainLabel&) const = default;
};

/// Ordered set of unique domain names; position defines the expert index.
class DomainSet {
 public:
  DomainSet() = default;
  explicit DomainSet(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t i) const { return names_.at(i); }

  std::optional<std::size_t> find(const std::string& name) const;
  /// Throws DataError for names outside the set.
  DomainLabel label(const std::string& name) const;
  DomainLabel label(std::size_t index) const;
  bool contains(const std::string& name) const { return find(name).has_value(); }

  /// Appends a new name; throws on duplicates.
  DomainLabel append(const std::string& name);

  bool operator==(const DomainSet&) const = default;

 private:
  std::vector<std::string> names_;
};

}  // namespace demix
