#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include "clbias/data/stream.hpp"
#include "clbias/rng.hpp"

namespace clbias::memory {

using data::BiasedSample;

struct MemoryKey {
  int group;  // -1 when the sampler ignores groups (GDumb)
  int cls;
  int task;
  auto operator<=>(const MemoryKey&) const = default;
};

// Bounded exemplar buffer bucketed by (group, class, task). Backs reservoir
// sampling (ER), class-balanced greedy sampling (GDumb) and group-class
// balanced greedy sampling. Eviction randomness comes from an owned seeded
// stream, so replaying the same arrivals reproduces identical contents.
class ExemplarMemory {
 public:
  ExemplarMemory(int capacity, std::uint64_t eviction_seed)
      : capacity_(capacity), rng_(eviction_seed) {
    if (capacity < 0) throw std::invalid_argument("ExemplarMemory: negative capacity");
  }

  int capacity() const { return capacity_; }
  int total() const { return total_; }
  bool empty() const { return total_ == 0; }

  const std::map<MemoryKey, std::vector<BiasedSample>>& buckets() const { return buckets_; }
  const std::map<MemoryKey, int>& counts() const { return counts_; }
  const std::set<std::pair<int, int>>& label_set() const { return labels_; }

  int count(const MemoryKey& key) const {
    const auto it = counts_.find(key);
    return it == counts_.end() ? 0 : it->second;
  }

  // Reservoir sampling over a stream; n_seen is this sample's 1-based
  // position in the stream.
  void reservoir_update(const BiasedSample& sample, long n_seen) {
    if (n_seen < total_)
      throw std::invalid_argument("reservoir_update: n_seen below stored count");
    if (capacity_ == 0) return;
    if (total_ < capacity_) {
      insert(sample, key_of(sample));
      return;
    }
    const long slot = static_cast<long>(rng_.below(static_cast<std::uint64_t>(n_seen)));
    if (slot < capacity_) {
      remove_at(slot);
      insert(sample, key_of(sample));
    }
  }

  // Group-class balanced greedy sampling (quota K / (|L| * |A|)); samples
  // over quota are silently dropped.
  void bgs_update(const BiasedSample& sample, int task, int attribute_values) {
    greedy_update(sample, MemoryKey{sample.group, sample.cls, task},
                  static_cast<double>(attribute_values));
  }

  // Class-balanced greedy sampling (quota K / |L|), groups ignored.
  void gdumb_update(const BiasedSample& sample, int task) {
    greedy_update(sample, MemoryKey{-1, sample.cls, task}, 1.0);
  }

  // All stored samples in deterministic (key, insertion) order.
  std::vector<BiasedSample> snapshot() const {
    std::vector<BiasedSample> out;
    out.reserve(total_);
    for (const auto& [key, bucket] : buckets_)
      out.insert(out.end(), bucket.begin(), bucket.end());
    return out;
  }

  // Uniform draw over stored samples from tasks before `task` (replay view).
  std::optional<BiasedSample> sample_before_task(int task, Rng& rng) const {
    int n = 0;
    for (const auto& [key, bucket] : buckets_)
      if (key.task < task) n += static_cast<int>(bucket.size());
    if (n == 0) return std::nullopt;
    int pick = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
    for (const auto& [key, bucket] : buckets_) {
      if (key.task >= task) continue;
      if (pick < static_cast<int>(bucket.size())) return bucket[pick];
      pick -= static_cast<int>(bucket.size());
    }
    throw std::logic_error("sample_before_task: walk out of range");
  }

  bool has_samples_before_task(int task) const {
    for (const auto& [key, bucket] : buckets_)
      if (key.task < task && !bucket.empty()) return true;
    return false;
  }

 private:
  static MemoryKey key_of(const BiasedSample& s) { return MemoryKey{s.group, s.cls, s.task}; }

  void insert(const BiasedSample& sample, const MemoryKey& key) {
    BiasedSample stored = sample;
    stored.task = key.task;
    buckets_[key].push_back(std::move(stored));
    counts_[key] += 1;
    total_ += 1;
    labels_.insert({key.cls, key.task});
  }

  // Removes the element at a global slot index (key order, insertion order
  // within a bucket).
  void remove_at(long slot) {
    for (auto& [key, bucket] : buckets_) {
      if (slot < static_cast<long>(bucket.size())) {
        bucket.erase(bucket.begin() + slot);
        counts_[key] -= 1;
        total_ -= 1;
        return;
      }
      slot -= static_cast<long>(bucket.size());
    }
    throw std::logic_error("remove_at: slot out of range");
  }

  // Algorithm shared by the greedy samplers. The quota divisor is
  // |L| * groups_per_label; an empty label set means an unbounded quota (k =
  // K).
  void greedy_update(const BiasedSample& sample, const MemoryKey& key,
                     double groups_per_label) {
    if (capacity_ == 0) return;
    const double quota =
        labels_.empty() ? static_cast<double>(capacity_)
                        : static_cast<double>(capacity_) /
                              (static_cast<double>(labels_.size()) * groups_per_label);
    const int before = count(key);
    if (!(static_cast<double>(before) < quota)) return;  // over quota: drop
    if (total_ >= capacity_) evict_from_largest();
    if (before == 0) labels_.insert({key.cls, key.task});
    BiasedSample stored = sample;
    stored.task = key.task;
    buckets_[key].push_back(std::move(stored));
    counts_[key] += 1;
    total_ += 1;
  }

  // Pops a uniformly random element from a bucket of maximal count (ties
  // broken uniformly).
  void evict_from_largest() {
    int max_count = 0;
    for (const auto& [key, c] : counts_) max_count = std::max(max_count, c);
    if (max_count == 0) throw std::logic_error("evict_from_largest: memory empty");
    std::vector<MemoryKey> argmax;
    for (const auto& [key, c] : counts_)
      if (c == max_count) argmax.push_back(key);
    const MemoryKey victim_key = argmax[rng_.index(argmax.size())];
    auto& bucket = buckets_[victim_key];
    const std::size_t victim = rng_.index(bucket.size());
    bucket.erase(bucket.begin() + static_cast<long>(victim));
    counts_[victim_key] -= 1;
    total_ -= 1;
  }

  int capacity_;
  Rng rng_;
  int total_ = 0;
  std::map<MemoryKey, std::vector<BiasedSample>> buckets_;
  std::map<MemoryKey, int> counts_;
  std::set<std::pair<int, int>> labels_;
};

}  // namespace clbias::memory
