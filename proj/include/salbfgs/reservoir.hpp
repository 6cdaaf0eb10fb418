#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "salbfgs/rng.hpp"
#include "salbfgs/types.hpp"

namespace salbfgs {

// Classic reservoir sampling: after observing N items, the reservoir holds a
// uniform sample of min(N, capacity) of them; every item seen so far is
// present with probability capacity / N.
template <typename T>
class ReservoirSampler {
 public:
  ReservoirSampler(std::size_t capacity, std::uint64_t seed)
      : capacity_(capacity), rng_(seed) {
    if (capacity_ == 0) throw config_error("reservoir capacity must be >= 1");
    items_.reserve(capacity_);
  }

  void observe(T item) {
    ++seen_;
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
      return;
    }
    const std::uint64_t j = rng_.below(seen_);
    if (j < capacity_) items_[static_cast<std::size_t>(j)] = std::move(item);
  }

  const std::vector<T>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t seen() const { return seen_; }

  void clear() {
    items_.clear();
    seen_ = 0;
  }

 private:
  std::vector<T> items_;
  std::size_t capacity_;
  std::uint64_t seen_ = 0;
  Rng rng_;
};

}  // namespace salbfgs
