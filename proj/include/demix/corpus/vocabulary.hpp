#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace demix {

/// Byte-level vocabulary: raw bytes 0-255, then BOS, PAD and one token per
/// domain of the ordered DomainSet it was built from.
struct Vocabulary {
  static constexpr int kBos = 256;
  static constexpr int kPad = 257;
  static constexpr int kFirstDomainToken = 258;

  std::size_t n_domains = 0;

  std::size_t size() const { return static_cast<std::size_t>(kFirstDomainToken) + n_domains; }
  int domain_token(std::size_t domain_index) const;
  static bool is_byte(int id) { return id >= 0 && id < 256; }
};

std::vector<int> tokenize(std::string_view text);
/// Inverse of tokenize; throws when an id is not a raw byte.
std::string detokenize(const std::vector<int>& ids);

}  // namespace demix
