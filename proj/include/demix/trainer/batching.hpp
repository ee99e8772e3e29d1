#pragma once

#include "demix/corpus/blocks.hpp"
#include "demix/trainer/schedule.hpp"

#include <cstdint>
#include <vector>

namespace demix {

/// Blocks of a single domain; position `domain` indexes the stream's domain list.
struct DomainBatch {
  std::size_t domain = 0;
  std::size_t shard = 0;
  std::vector<const SequenceBlock*> blocks;
};

/// Deterministic block sampler over per-domain shards. Within a (domain,
/// shard) pair blocks are drawn without replacement; each epoch reshuffles
/// with a stream keyed by (seed, domain, shard, epoch). The referenced
/// DomainBlocks must outlive the stream.
class BatchStream {
 public:
  /// `mode` must be balanced or proportional.
  BatchStream(const std::vector<DomainBlocks>& domains, BatchMode mode, std::uint64_t seed);

  BatchMode mode() const { return mode_; }
  std::size_t n_domains() const { return domains_->size(); }

  /// One macro-step: |D| batches of `blocks_per_batch` blocks. Balanced mode
  /// yields domain i at position i; proportional mode samples each batch's
  /// domain with probability proportional to its token count.
  std::vector<DomainBatch> next(std::size_t blocks_per_batch);

  /// Domain draw proportional to token counts.
  std::size_t sample_domain();

  /// Next `count` blocks of one shard (shard taken modulo the domain's shard count).
  DomainBatch take(std::size_t domain, std::size_t shard, std::size_t count);

 private:
  struct Cursor {
    std::vector<std::size_t> order;
    std::size_t position = 0;
    std::uint64_t epoch = 0;
  };

  void reshuffle(std::size_t domain, std::size_t shard, Cursor& c);

  const std::vector<DomainBlocks>* domains_;
  BatchMode mode_;
  std::uint64_t seed_;
  std::vector<std::vector<std::vector<std::size_t>>> shard_members_;
  std::vector<std::vector<Cursor>> cursors_;
  std::vector<double> cumulative_;
  std::uint64_t draws_ = 0;
};

}  // namespace demix
