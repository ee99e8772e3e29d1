#pragma once

#include "demix/corpus/domain.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace demix {

struct Document {
  std::string text;
  DomainLabel domain;
  std::string id;
};

enum class CorpusFormat { jsonl, dirs };

/// Parses "jsonl" or "dirs"; throws ConfigError("format", ...) otherwise.
CorpusFormat parse_corpus_format(const std::string& name);

/// Documents grouped by domain. Immutable once constructed.
class Corpus {
 public:
  Corpus() = default;
  /// `documents[i]` holds the documents of `domains.name(i)`; every domain
  /// must have at least one document.
  Corpus(DomainSet domains, std::vector<std::vector<Document>> documents);

  const DomainSet& domains() const { return domains_; }
  const std::vector<Document>& documents(std::size_t domain) const { return documents_.at(domain); }
  std::size_t document_count() const;
  /// Byte-token count of a domain's documents (BOS not included).
  std::size_t token_count(std::size_t domain) const { return token_counts_.at(domain); }

  /// Corpus restricted to `names`, in the given order.
  Corpus subset(const std::vector<std::string>& names) const;

 private:
  DomainSet domains_;
  std::vector<std::vector<Document>> documents_;
  std::vector<std::size_t> token_counts_;
};

/// jsonl: one {"text", "domain", optional "id"} object per line.
/// dirs: <root>/<domain>/<file>.txt. Domains are ordered by name; documents
/// keep file order (jsonl) or sorted file-name order (dirs).
Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format);

void write_corpus_jsonl(const Corpus& corpus, const std::filesystem::path& path);

}  // namespace demix
