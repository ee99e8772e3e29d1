#include "demix/corpus/blocks.hpp"

#include "demix/error.hpp"

#include <cmath>

namespace demix {

BlockTargets block_targets(const SequenceBlock& block) {
  const std::size_t n = block.tokens.size();
  BlockTargets bt;
  bt.targets.assign(n, 0);
  bt.mask.assign(n, 0);
  for (std::size_t t = 0; t + 1 < n; ++t) {
    const int next = block.tokens[t + 1];
    bt.targets[t] = next;
    if (t + 1 >= block.score_from && next != Vocabulary::kPad) {
      bt.mask[t] = 1;
      ++bt.count;
    }
  }
  return bt;
}

std::vector<DomainBlocks> build_blocks(const Corpus& corpus, std::size_t block_length, std::size_t shards_per_domain) {
  if (block_length < 2) throw ConfigError("block_length", "must be at least 2");
  if (shards_per_domain < 1) throw ConfigError("shards_per_domain", "must be at least 1");
  std::vector<DomainBlocks> out;
  for (std::size_t d = 0; d < corpus.domains().size(); ++d) {
    DomainBlocks db{corpus.domains().label(d), {}, shards_per_domain};
    std::vector<int> stream;
    stream.reserve(corpus.token_count(d) + corpus.documents(d).size());
    for (const auto& doc : corpus.documents(d)) {
      stream.push_back(Vocabulary::kBos);
      for (unsigned char c : doc.text) stream.push_back(c);
    }
    std::size_t index = 0;
    for (std::size_t start = 0; start < stream.size(); start += block_length, ++index) {
      SequenceBlock b;
      b.domain = d;
      b.shard = index % shards_per_domain;
      const std::size_t end = std::min(stream.size(), start + block_length);
      b.tokens.assign(stream.begin() + static_cast<std::ptrdiff_t>(start), stream.begin() + static_cast<std::ptrdiff_t>(end));
      b.tokens.resize(block_length, Vocabulary::kPad);
      db.blocks.push_back(std::move(b));
    }
    out.push_back(std::move(db));
  }
  return out;
}

BlockSplits split_blocks(const std::vector<DomainBlocks>& blocks, double dev_fraction, double test_fraction) {
  if (dev_fraction < 0 || test_fraction < 0 || dev_fraction + test_fraction >= 1.0) {
    throw ConfigError("split", "dev and test fractions must be non-negative and sum to less than 1");
  }
  BlockSplits s;
  for (const auto& db : blocks) {
    const std::size_t n = db.blocks.size();
    auto take = [n](double f) -> std::size_t {
      if (f <= 0) return 0;
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(f * static_cast<double>(n))));
    };
    const std::size_t n_test = take(test_fraction);
    const std::size_t n_dev = take(dev_fraction);
    if (n_test + n_dev >= n) {
      throw DataError("domain '" + db.domain.name + "' has too few blocks (" + std::to_string(n) + ") to split");
    }
    const std::size_t n_train = n - n_dev - n_test;
    DomainBlocks train{db.domain, {}, db.shards};
    DomainBlocks dev{db.domain, {}, 1};
    DomainBlocks test{db.domain, {}, 1};
    for (std::size_t i = 0; i < n; ++i) {
      SequenceBlock b = db.blocks[i];
      if (i < n_train) {
        train.blocks.push_back(std::move(b));
      } else if (i < n_train + n_dev) {
        b.shard = 0;
        dev.blocks.push_back(std::move(b));
      } else {
        b.shard = 0;
        test.blocks.push_back(std::move(b));
      }
    }
    s.train.push_back(std::move(train));
    s.dev.push_back(std::move(dev));
    s.test.push_back(std::move(test));
  }
  return s;
}

std::vector<SequenceBlock> interleave_blocks(const std::vector<SequenceBlock>& a, const std::vector<SequenceBlock>& b,
                                             std::size_t count) {
  if (a.empty() || b.empty()) throw DataError("interleave_blocks: both streams must be non-empty");
  std::vector<SequenceBlock> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& src = (i % 2 == 0) ? a : b;
    out.push_back(src[(i / 2) % src.size()]);
  }
  return out;
}

}  // namespace demix
