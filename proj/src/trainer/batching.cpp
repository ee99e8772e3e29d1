#include "demix/trainer/batching.hpp"

#include "demix/error.hpp"
#include "demix/numerics/rng.hpp"

#include <algorithm>
#include <numeric>

namespace demix {

BatchStream::BatchStream(const std::vector<DomainBlocks>& domains, BatchMode mode, std::uint64_t seed)
    : domains_(&domains), mode_(mode), seed_(seed) {
  if (mode == BatchMode::automatic) throw std::invalid_argument("batch stream needs a resolved batching mode");
  if (domains.empty()) throw DataError("no domains to batch");
  double total = 0.0;
  for (const auto& d : domains) {
    if (d.blocks.empty()) throw DataError("empty domain '" + d.domain.name + "'");
    const std::size_t shards = std::max<std::size_t>(d.shards, 1);
    std::vector<std::vector<std::size_t>> members(shards);
    std::size_t tokens = 0;
    for (std::size_t i = 0; i < d.blocks.size(); ++i) {
      members[d.blocks[i].shard % shards].push_back(i);
      for (int t : d.blocks[i].tokens) tokens += Vocabulary::is_byte(t) ? 1 : 0;
    }
    // A shard that received no blocks falls back to the whole domain.
    for (auto& m : members) {
      if (m.empty()) {
        m.resize(d.blocks.size());
        std::iota(m.begin(), m.end(), std::size_t{0});
      }
    }
    shard_members_.push_back(std::move(members));
    cursors_.emplace_back(shards);
    total += static_cast<double>(std::max<std::size_t>(tokens, 1));
    cumulative_.push_back(total);
  }
  for (double& c : cumulative_) c /= total;
}

void BatchStream::reshuffle(std::size_t domain, std::size_t shard, Cursor& c) {
  c.order = shard_members_[domain][shard];
  RngStream rng(seed_, "batch/" + std::to_string(domain) + "/" + std::to_string(shard) + "/" + std::to_string(c.epoch));
  for (std::size_t i = c.order.size(); i > 1; --i) std::swap(c.order[i - 1], c.order[rng.below(i)]);
  c.position = 0;
  ++c.epoch;
}

DomainBatch BatchStream::take(std::size_t domain, std::size_t shard, std::size_t count) {
  if (domain >= domains_->size()) throw std::out_of_range("domain index out of range");
  auto& cursors = cursors_[domain];
  shard %= cursors.size();
  Cursor& c = cursors[shard];
  DomainBatch batch{domain, shard, {}};
  const auto& blocks = (*domains_)[domain].blocks;
  for (std::size_t k = 0; k < count; ++k) {
    if (c.position >= c.order.size()) reshuffle(domain, shard, c);
    batch.blocks.push_back(&blocks[c.order[c.position++]]);
  }
  return batch;
}

std::size_t BatchStream::sample_domain() {
  RngStream rng(seed_, "batch/domain", draws_++);
  const double u = rng.uniform();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
}

std::vector<DomainBatch> BatchStream::next(std::size_t blocks_per_batch) {
  std::vector<DomainBatch> out;
  out.reserve(n_domains());
  for (std::size_t i = 0; i < n_domains(); ++i) {
    const std::size_t d = mode_ == BatchMode::balanced ? i : sample_domain();
    out.push_back(take(d, 0, blocks_per_batch));
  }
  return out;
}

}  // namespace demix
