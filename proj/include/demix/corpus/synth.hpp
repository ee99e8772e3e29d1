#pragma once

#include "demix/corpus/corpus.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace demix {

/// One first-order Markov source over a byte alphabet.
struct SynthDomainSpec {
  std::string name;
  std::size_t alphabet_size = 20;
  /// Dirichlet concentration of each transition row; small values give
  /// peaked, low-entropy chains.
  double concentration = 0.3;
  std::size_t tokens = 100000;
  std::size_t mean_doc_length = 400;
  /// Domains sharing a table key and an alphabet get identical transition
  /// tables. Defaults to the domain name.
  std::string table_key;
  /// Start position of the alphabet in the symbol pool; by default domain k
  /// starts at k * stride, where stride = alphabet_size - round(overlap * alphabet_size).
  std::optional<std::size_t> alphabet_offset;
};

struct SynthSpec {
  std::vector<SynthDomainSpec> domains;
  /// Fraction of its alphabet each domain shares with its neighbour in the
  /// default layout; in [0, 1].
  double overlap = 0.0;
  /// Printable ASCII, so generated documents are valid UTF-8.
  std::string symbol_pool = default_symbol_pool();

  static std::string default_symbol_pool();
};

/// Alphabet (symbol list) of domain `k` under `spec`.
std::vector<unsigned char> synth_alphabet(const SynthSpec& spec, std::size_t k);

/// Deterministic in (spec, seed). Domains are ordered by name in the result.
Corpus synth_corpus(const SynthSpec& spec, std::uint64_t seed);

}  // namespace demix
