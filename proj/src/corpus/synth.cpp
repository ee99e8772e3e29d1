#include "demix/corpus/synth.hpp"

#include "demix/error.hpp"
#include "demix/numerics/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace demix {

std::string SynthSpec::default_symbol_pool() {
  std::string pool;
  for (int c = 33; c <= 126; ++c) pool.push_back(static_cast<char>(c));
  return pool;
}

std::vector<unsigned char> synth_alphabet(const SynthSpec& spec, std::size_t k) {
  const SynthDomainSpec& d = spec.domains.at(k);
  const std::size_t a = d.alphabet_size;
  const auto shared = static_cast<std::size_t>(std::llround(spec.overlap * static_cast<double>(a)));
  const std::size_t stride = a - std::min(a, shared);
  const std::size_t offset = d.alphabet_offset.value_or(k * stride);
  if (offset + a > spec.symbol_pool.size()) {
    throw ConfigError("alphabet_size", "domain '" + d.name + "' needs symbols beyond the pool of " +
                                           std::to_string(spec.symbol_pool.size()));
  }
  std::vector<unsigned char> out;
  for (std::size_t i = 0; i < a; ++i) out.push_back(static_cast<unsigned char>(spec.symbol_pool[offset + i]));
  return out;
}

namespace {

using Table = std::vector<std::vector<double>>;  // cumulative rows

Table transition_table(std::size_t a, double concentration, RngStream rng) {
  Table table(a, std::vector<double>(a));
  for (auto& row : table) {
    double total = 0.0;
    for (auto& p : row) {
      p = rng.gamma(concentration);
      total += p;
    }
    double acc = 0.0;
    for (auto& p : row) {
      acc += p / total;
      p = acc;
    }
    row.back() = 1.0;
  }
  return table;
}

std::size_t sample_row(const std::vector<double>& cumulative, double u) {
  auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
}

}  // namespace

Corpus synth_corpus(const SynthSpec& spec, std::uint64_t seed) {
  if (!(spec.overlap >= 0.0 && spec.overlap <= 1.0)) throw ConfigError("overlap", "must lie in [0, 1]");
  if (spec.domains.empty()) throw ConfigError("domains", "at least one synthetic domain is required");
  std::map<std::string, std::vector<Document>> grouped;
  for (std::size_t k = 0; k < spec.domains.size(); ++k) {
    const SynthDomainSpec& d = spec.domains[k];
    if (d.alphabet_size < 2) throw ConfigError("alphabet_size", "must be at least 2");
    if (!(d.concentration > 0.0)) throw ConfigError("concentration", "must be positive");
    if (d.tokens == 0) throw ConfigError("tokens", "must be positive");
    if (d.mean_doc_length < 2) throw ConfigError("mean_doc_length", "must be at least 2");
    if (grouped.contains(d.name)) throw ConfigError("domains", "duplicate synthetic domain '" + d.name + "'");
    const auto alphabet = synth_alphabet(spec, k);
    const std::string key = d.table_key.empty() ? d.name : d.table_key;
    const Table table = transition_table(alphabet.size(), d.concentration, RngStream(seed, "synth/table/" + key));
    RngStream rng(seed, "synth/docs/" + d.name);
    std::vector<Document> docs;
    std::size_t produced = 0;
    while (produced < d.tokens) {
      const std::size_t lo = d.mean_doc_length / 2;
      std::size_t len = lo + static_cast<std::size_t>(rng.below(d.mean_doc_length + 1));
      len = std::min(len, d.tokens - produced);
      std::string text;
      text.reserve(len);
      std::size_t state = static_cast<std::size_t>(rng.below(alphabet.size()));
      for (std::size_t i = 0; i < len; ++i) {
        text.push_back(static_cast<char>(alphabet[state]));
        state = sample_row(table[state], rng.uniform());
      }
      produced += len;
      docs.push_back(Document{std::move(text), {}, d.name + ":" + std::to_string(docs.size())});
    }
    grouped.emplace(d.name, std::move(docs));
  }
  std::vector<std::string> names;
  std::vector<std::vector<Document>> docs;
  for (auto& [name, list] : grouped) {
    names.push_back(name);
    docs.push_back(std::move(list));
  }
  return Corpus(DomainSet(names), std::move(docs));
}

}  // namespace demix
