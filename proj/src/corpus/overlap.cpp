#include "demix/corpus/overlap.hpp"

#include "demix/error.hpp"

#include <algorithm>
#include <cstdint>
#include <iterator>

namespace demix {
namespace {

using BigramSet = std::vector<std::uint64_t>;  // sorted, unique

std::uint64_t pack(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

void add_bigrams(std::span<const int> s, BigramSet& out) {
  for (std::size_t i = 0; i + 1 < s.size(); ++i) out.push_back(pack(s[i], s[i + 1]));
}

void finish(BigramSet& s) {
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
}

double jaccard(const BigramSet& a, const BigramSet& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++inter;
      ++ia;
      ++ib;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

double bigram_overlap(std::span<const int> a, std::span<const int> b) {
  if (a.empty() || b.empty()) throw DataError("bigram_overlap: empty stream");
  BigramSet sa, sb;
  add_bigrams(a, sa);
  add_bigrams(b, sb);
  finish(sa);
  finish(sb);
  return jaccard(sa, sb);
}

std::vector<std::vector<double>> bigram_overlap_matrix(const Corpus& corpus) {
  const std::size_t n = corpus.domains().size();
  std::vector<BigramSet> sets(n);
  for (std::size_t d = 0; d < n; ++d) {
    for (const auto& doc : corpus.documents(d)) {
      std::vector<int> ids;
      ids.reserve(doc.text.size());
      for (unsigned char c : doc.text) ids.push_back(c);
      add_bigrams(ids, sets[d]);
    }
    finish(sets[d]);
  }
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 1.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m[i][j] = m[j][i] = jaccard(sets[i], sets[j]);
  return m;
}

}  // namespace demix
