#pragma once

#include <stdexcept>
#include <vector>

#include "evade/rng.hpp"
#include "evade/tensor.hpp"

namespace evade {

template <typename T>
struct TransitionRecord {
  Tensor<T> obs_stack;   // [F*C,H,W]
  int action = 0;
  int reward_class = 0;
  Tensor<T> next_frame;  // [C,H,W]
};

// Append-only transition buffer; iteration order is insertion order.
template <typename T>
class Dataset {
 public:
  void add(TransitionRecord<T> rec) { records_.push_back(std::move(rec)); }

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  const TransitionRecord<T>& operator[](std::size_t i) const { return records_[i]; }

  // Seeded uniform draw of n indices (with replacement) from `pool`.
  std::vector<std::size_t> sample_indices(const std::vector<std::size_t>& pool, std::size_t n,
                                          Rng& rng) const {
    if (pool.empty()) throw std::invalid_argument("sample_indices: empty pool");
    std::vector<std::size_t> out(n);
    for (auto& i : out) i = pool[rng.uniform_int(pool.size())];
    return out;
  }

  // Deterministic 80/20 train/held-out split: every 5th record is held out.
  std::vector<std::size_t> train_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < records_.size(); ++i)
      if (i % 5 != 4 || records_.size() < 5) idx.push_back(i);
    return idx;
  }

  std::vector<std::size_t> heldout_indices() const {
    std::vector<std::size_t> idx;
    if (records_.size() < 5) return idx;
    for (std::size_t i = 4; i < records_.size(); i += 5) idx.push_back(i);
    return idx;
  }

 private:
  std::vector<TransitionRecord<T>> records_;
};

}  // namespace evade
