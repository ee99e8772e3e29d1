#pragma once

#include "demix/corpus/corpus.hpp"
#include "demix/corpus/vocabulary.hpp"

#include <cstdint>
#include <vector>

namespace demix {

/// Fixed-length token window of one domain; the unit of routing.
struct SequenceBlock {
  std::vector<int> tokens;
  std::size_t domain = 0;
  std::size_t shard = 0;
  /// First position whose token is scored. Position 0 has no context and is
  /// never scored; a prepended domain token pushes this to 2.
  std::size_t score_from = 1;

  std::size_t length() const { return tokens.size(); }
};

/// Next-token targets of a block: row t of the logits predicts tokens[t + 1].
/// The last row has no target and is always masked.
struct BlockTargets {
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
  std::size_t count = 0;
};

BlockTargets block_targets(const SequenceBlock& block);

struct DomainBlocks {
  DomainLabel domain;
  std::vector<SequenceBlock> blocks;
  std::size_t shards = 1;
};

/// Per domain: documents concatenated in order, BOS before each document,
/// cut into contiguous L-token blocks; a final partial block is right-padded
/// with PAD. Block i goes to shard i mod shards_per_domain.
std::vector<DomainBlocks> build_blocks(const Corpus& corpus, std::size_t block_length, std::size_t shards_per_domain);

struct BlockSplits {
  std::vector<DomainBlocks> train;
  std::vector<DomainBlocks> dev;
  std::vector<DomainBlocks> test;
};

/// Splits each domain's block sequence into contiguous train / dev / test
/// ranges (dev and test taken from the tail, each at least one block when
/// its fraction is positive). Train blocks keep their shard ids.
BlockSplits split_blocks(const std::vector<DomainBlocks>& blocks, double dev_fraction, double test_fraction);

/// Interleaves the blocks of two streams A, B, A, B, ... up to `count` blocks.
std::vector<SequenceBlock> interleave_blocks(const std::vector<SequenceBlock>& a, const std::vector<SequenceBlock>& b,
                                             std::size_t count);

}  // namespace demix
