#pragma once

#include "hmrn/dataset.hpp"

#include <numeric>
#include <random>

namespace hmrn {

using TokenMatrix = Eigen::Matrix<TokenId, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Queries of one record, padded to the batch-wide max length.
struct PaddedQueries {
  TokenMatrix tokens;                // rounds x max_len, pad id beyond each length
  std::vector<std::size_t> lengths;  // true lengths

  std::size_t rounds() const { return lengths.size(); }
  bool mask(std::size_t q, std::size_t t) const { return t < lengths[q]; }
  std::vector<TokenId> query(std::size_t q) const {
    std::vector<TokenId> out(lengths[q]);
    for (std::size_t t = 0; t < lengths[q]; ++t)
      out[t] = tokens(static_cast<Index>(q), static_cast<Index>(t));
    return out;
  }
};

struct Batch {
  std::vector<std::size_t> indices;                 // record indices into the dataset
  std::vector<std::vector<std::size_t>> query_ids;  // chosen caption indices, in round order
  std::vector<PaddedQueries> queries;

  std::size_t size() const { return indices.size(); }
};

struct BatchOptions {
  std::size_t batch_size = 128;
  bool shuffle = false;            // shuffle record order each epoch
  bool randomize_queries = false;  // training mode: random query sample/order per record per epoch
  std::size_t num_queries = 0;     // rounds per record; 0 = all available
  std::uint64_t seed = 0;
};

// Single-consumer epoch iterator. Epoch e draws from a generator seeded by
// (seed, e), so any epoch can be replayed independently.
class BatchIterator {
 public:
  BatchIterator(const Dataset& data, BatchOptions opts) : data_(&data), opts_(opts) {
    require(opts_.batch_size >= 1, "batch_size must be >= 1");
    if (opts_.num_queries > 0)
      require(data.min_queries() >= opts_.num_queries,
              "dataset has records with fewer than " + std::to_string(opts_.num_queries) + " queries");
  }

  std::size_t epoch() const { return epoch_; }

  std::vector<Batch> next_epoch() { return epoch_batches(epoch_++); }

  std::vector<Batch> epoch_batches(std::size_t epoch) const {
    std::seed_seq seq{static_cast<std::uint32_t>(opts_.seed), static_cast<std::uint32_t>(opts_.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::vector<std::size_t> order(data_->size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (opts_.shuffle) std::shuffle(order.begin(), order.end(), rng);

    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += opts_.batch_size) {
      Batch b;
      const std::size_t end = std::min(order.size(), start + opts_.batch_size);
      for (std::size_t p = start; p < end; ++p) {
        const auto& rec = data_->records[order[p]];
        std::vector<std::size_t> qids(rec.queries.size());
        std::iota(qids.begin(), qids.end(), std::size_t{0});
        if (opts_.randomize_queries) std::shuffle(qids.begin(), qids.end(), rng);
        if (opts_.num_queries > 0) qids.resize(opts_.num_queries);
        b.indices.push_back(order[p]);
        b.query_ids.push_back(std::move(qids));
      }
      std::size_t max_len = 1;
      for (std::size_t i = 0; i < b.size(); ++i)
        for (auto q : b.query_ids[i])
          max_len = std::max(max_len, data_->records[b.indices[i]].queries.queries[q].size());
      for (std::size_t i = 0; i < b.size(); ++i) {
        const auto& qs = data_->records[b.indices[i]].queries.queries;
        PaddedQueries pq;
        pq.tokens = TokenMatrix::Constant(static_cast<Index>(b.query_ids[i].size()),
                                          static_cast<Index>(max_len), Vocabulary::kPad);
        for (std::size_t r = 0; r < b.query_ids[i].size(); ++r) {
          const auto& q = qs[b.query_ids[i][r]];
          for (std::size_t t = 0; t < q.size(); ++t)
            pq.tokens(static_cast<Index>(r), static_cast<Index>(t)) = q[t];
          pq.lengths.push_back(q.size());
        }
        b.queries.push_back(std::move(pq));
      }
      batches.push_back(std::move(b));
    }
    return batches;
  }

 private:
  const Dataset* data_;
  BatchOptions opts_;
  std::size_t epoch_ = 0;
};

inline std::vector<Batch> iterate_batches(const Dataset& data, std::size_t batch_size, bool shuffle,
                                          std::uint64_t seed) {
  BatchOptions o;
  o.batch_size = batch_size;
  o.shuffle = shuffle;
  o.randomize_queries = shuffle;
  o.seed = seed;
  return BatchIterator(data, o).epoch_batches(0);
}

}  // namespace hmrn
