#pragma once

#include "demix/corpus/corpus.hpp"

#include <span>
#include <vector>

namespace demix {

/// Jaccard similarity of the bigram type sets of two token streams.
double bigram_overlap(std::span<const int> a, std::span<const int> b);

/// Pairwise bigram overlap of the corpus domains; bigrams never span
/// document boundaries.
std::vector<std::vector<double>> bigram_overlap_matrix(const Corpus& corpus);

}  // namespace demix
