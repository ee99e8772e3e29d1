#include "demix/corpus/vocabulary.hpp"

#include "demix/corpus/domain.hpp"
#include "demix/error.hpp"

#include <algorithm>

namespace demix {

DomainSet::DomainSet(std::vector<std::string> names) {
  for (auto& n : names) append(n);
}

std::optional<std::size_t> DomainSet::find(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names_.begin());
}

DomainLabel DomainSet::label(const std::string& name) const {
  auto i = find(name);
  if (!i) throw DataError("unknown domain '" + name + "'");
  return {name, *i};
}

DomainLabel DomainSet::label(std::size_t index) const {
  if (index >= names_.size()) throw DataError("domain index " + std::to_string(index) + " out of range");
  return {names_[index], index};
}

DomainLabel DomainSet::append(const std::string& name) {
  if (name.empty()) throw DataError("domain names must be non-empty");
  if (contains(name)) throw DataError("duplicate domain '" + name + "'");
  names_.push_back(name);
  return {name, names_.size() - 1};
}

int Vocabulary::domain_token(std::size_t domain_index) const {
  if (domain_index >= n_domains) throw DataError("domain token index out of range");
  return kFirstDomainToken + static_cast<int>(domain_index);
}

std::vector<int> tokenize(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(c);
  return ids;
}

std::string detokenize(const std::vector<int>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (!Vocabulary::is_byte(id)) throw DataError("detokenize: id " + std::to_string(id) + " is not a byte");
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

}  // namespace demix
