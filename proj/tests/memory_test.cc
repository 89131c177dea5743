#include <cmath>
#include <map>
#include <vector>

#include "gtest/gtest.h"

#include "clbias/memory/exemplar.hpp"
#include "clbias/rng.hpp"

namespace clbias {
namespace {

using data::BiasedSample;
using memory::ExemplarMemory;
using memory::MemoryKey;

BiasedSample sample_of(int group, int cls, int task, double tag = 0.0) {
  BiasedSample s;
  s.features = Eigen::VectorXd::Constant(1, tag);
  s.group = group;
  s.cls = cls;
  s.task = task;
  return s;
}

TEST(Reservoir, FillPhaseKeepsEverything) {
  ExemplarMemory mem(10, 1);
  for (int i = 1; i <= 10; ++i) mem.reservoir_update(sample_of(0, 0, 0, i), i);
  EXPECT_EQ(mem.total(), 10);
}

TEST(Reservoir, NeverExceedsCapacity) {
  ExemplarMemory mem(10, 2);
  for (int i = 1; i <= 500; ++i) {
    mem.reservoir_update(sample_of(i % 2, i % 3, 0, i), i);
    ASSERT_LE(mem.total(), 10);
  }
  EXPECT_EQ(mem.total(), 10);
}

TEST(Reservoir, RejectsInconsistentStreamPosition) {
  ExemplarMemory mem(4, 3);
  for (int i = 1; i <= 4; ++i) mem.reservoir_update(sample_of(0, 0, 0, i), i);
  EXPECT_THROW(mem.reservoir_update(sample_of(0, 0, 0), 3), std::invalid_argument);
}

// Monte Carlo oracle for the K/N inclusion property. This is the acceptance
// criterion's statistic at reduced trial count; the full count runs in the
// acceptance suite.
TEST(Reservoir, InclusionFrequencyMatchesKOverN) {
  const int k = 100, n = 1000, trials = 2000;
  std::vector<int> included(n, 0);
  for (int trial = 0; trial < trials; ++trial) {
    ExemplarMemory mem(k, 1000 + trial);
    for (int i = 1; i <= n; ++i) mem.reservoir_update(sample_of(0, 0, 0, i), i);
    for (const auto& s : mem.snapshot())
      included[static_cast<int>(s.features[0]) - 1] += 1;
  }
  // check a few scattered items plus the aggregate
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double freq = static_cast<double>(included[i]) / trials;
    total += freq;
    ASSERT_NEAR(freq, 0.1, 0.03) << "item " << i;
  }
  EXPECT_NEAR(total / n, 0.1, 1e-9);  // exactly K stored per trial
}

TEST(Bgs, FirstSampleAlwaysStored) {
  ExemplarMemory mem(8, 5);
  mem.bgs_update(sample_of(1, 3, 2), 2, 2);
  EXPECT_EQ(mem.total(), 1);
  EXPECT_EQ(mem.count(MemoryKey{1, 3, 2}), 1);
  EXPECT_TRUE(mem.label_set().count({3, 2}) == 1);
}

TEST(Bgs, BalancedStreamFillsQuotaExactly) {
  // |A|=2, one task, 2 classes, K=8 -> every (group, class) bucket holds 2
  ExemplarMemory mem(8, 6);
  Rng rng(7);
  for (int i = 0; i < 400; ++i) {
    const int group = static_cast<int>(rng.below(2));
    const int cls = static_cast<int>(rng.below(2));
    mem.bgs_update(sample_of(group, cls, 0, i), 0, 2);
  }
  EXPECT_EQ(mem.total(), 8);
  for (int g = 0; g < 2; ++g)
    for (int c = 0; c < 2; ++c) EXPECT_EQ(mem.count(MemoryKey{g, c, 0}), 2);
}

TEST(Bgs, SkewedArrivalsCapMajorityAtQuota) {
  // group skew 9:1: majority buckets capped at k=2, minority fills to
  // min(arrivals, 2)
  ExemplarMemory mem(8, 7);
  int minority_arrivals = 0;
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    const int cls = static_cast<int>(rng.below(2));
    const int group = rng.uniform() < 0.9 ? 0 : 1;
    if (group == 1) ++minority_arrivals;
    mem.bgs_update(sample_of(group, cls, 0, i), 0, 2);
  }
  ASSERT_GE(minority_arrivals, 4);  // enough arrivals with this seed
  for (int c = 0; c < 2; ++c) {
    EXPECT_EQ(mem.count(MemoryKey{0, c, 0}), 2);
    EXPECT_LE(mem.count(MemoryKey{1, c, 0}), 2);
  }
  EXPECT_LE(mem.total(), 8);
}

TEST(Bgs, QuotaAppliesOnceLabelRegistered) {
  // first sample enters on the unbounded quota; after that |L|=1, |A|=2
  // gives k = 2, so the bucket caps at 2 even though total < K
  ExemplarMemory mem(4, 8);
  for (int i = 0; i < 10; ++i) mem.bgs_update(sample_of(0, 0, 0, i), 0, 2);
  EXPECT_EQ(mem.count(MemoryKey{0, 0, 0}), 2);
  EXPECT_EQ(mem.total(), 2);
}

TEST(Gdumb, BalancedStreamSplitsPerClass) {
  ExemplarMemory mem(10, 9);
  Rng rng(27);
  for (int i = 0; i < 300; ++i)
    mem.gdumb_update(sample_of(static_cast<int>(rng.below(2)), i % 2, 0, i), 0);
  EXPECT_EQ(mem.total(), 10);
  EXPECT_EQ(mem.count(MemoryKey{-1, 0, 0}), 5);
  EXPECT_EQ(mem.count(MemoryKey{-1, 1, 0}), 5);
}

TEST(Gdumb, SingleSampleClassRetained) {
  ExemplarMemory mem(10, 10);
  for (int i = 0; i < 200; ++i) mem.gdumb_update(sample_of(0, 0, 0, i), 0);
  mem.gdumb_update(sample_of(0, 1, 0, 777), 0);
  for (int i = 0; i < 200; ++i) mem.gdumb_update(sample_of(0, 0, 0, i), 0);
  EXPECT_EQ(mem.count(MemoryKey{-1, 1, 0}), 1);
  bool found = false;
  for (const auto& s : mem.snapshot())
    if (s.cls == 1 && s.features[0] == 777) found = true;
  EXPECT_TRUE(found);
}

TEST(Gdumb, TotalNeverExceedsCapacity) {
  ExemplarMemory mem(10, 11);
  Rng rng(37);
  for (int i = 0; i < 500; ++i) {
    mem.gdumb_update(sample_of(0, static_cast<int>(rng.below(5)), i % 3, i), i % 3);
    ASSERT_LE(mem.total(), 10);
  }
}

TEST(Memory, DeterministicReplay) {
  auto run = [] {
    ExemplarMemory mem(16, 12345);
    Rng rng(4);
    for (int i = 0; i < 600; ++i) {
      const int group = static_cast<int>(rng.below(2));
      const int cls = static_cast<int>(rng.below(4));
      mem.bgs_update(sample_of(group, cls, cls / 2, i), cls / 2, 2);
    }
    return mem.snapshot();
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(a[i].features == b[i].features);
    EXPECT_EQ(a[i].group, b[i].group);
    EXPECT_EQ(a[i].cls, b[i].cls);
    EXPECT_EQ(a[i].task, b[i].task);
  }
}

// Randomized-stream properties (reduced count here; full in acceptance).
TEST(Properties, BgsBalanceEvictionAndCounts) {
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng(substream(5000, "trial", trial));
    const int capacity = 4 + static_cast<int>(rng.below(24));
    const int classes = 1 + static_cast<int>(rng.below(4));
    const int tasks = 1 + static_cast<int>(rng.below(3));
    ExemplarMemory mem(capacity, substream(5000, "evict", trial));
    std::map<MemoryKey, long> arrivals;
    const int steps = 200 + static_cast<int>(rng.below(400));
    // adversarial skew: one cell gets most of the arrivals
    const int hot_cls = static_cast<int>(rng.below(classes));
    for (int i = 0; i < steps; ++i) {
      int cls = static_cast<int>(rng.below(classes));
      if (rng.uniform() < 0.5) cls = hot_cls;
      const int group = rng.uniform() < 0.8 ? 0 : 1;
      const int task = static_cast<int>(rng.below(tasks));
      const MemoryKey key{group, cls, task};
      arrivals[key] += 1;
      mem.bgs_update(sample_of(group, cls, task, i), task, 2);
      ASSERT_LE(mem.total(), capacity);
      // counts always match bucket lengths
      for (const auto& [k, bucket] : mem.buckets())
        ASSERT_EQ(static_cast<int>(bucket.size()), mem.count(k));
    }
    // settling tail: every key recurs while the label set stays fixed
    for (int round = 0; round < 4; ++round) {
      for (int task = 0; task < tasks; ++task)
        for (int cls = 0; cls < classes; ++cls)
          for (int group = 0; group < 2; ++group) {
            const MemoryKey key{group, cls, task};
            if (arrivals.count(key) == 0) continue;  // never part of the stream
            arrivals[key] += 1;
            mem.bgs_update(sample_of(group, cls, task, 0), task, 2);
          }
    }
    // keys whose arrivals exceeded the final quota end within 1 of each other
    const double quota = static_cast<double>(capacity) /
                         (static_cast<double>(mem.label_set().size()) * 2.0);
    int lo = 1 << 30, hi = 0;
    for (const auto& [key, n] : arrivals) {
      if (static_cast<double>(n) <= quota) continue;
      const int c = mem.count(key);
      lo = std::min(lo, c);
      hi = std::max(hi, c);
    }
    if (hi > 0) EXPECT_LE(hi - lo, 1) << "trial " << trial;
  }
}

TEST(Properties, OwnKeyCountNeverDecreasesOnInsert) {
  Rng rng(81);
  ExemplarMemory mem(12, 82);
  for (int i = 0; i < 400; ++i) {
    const int group = static_cast<int>(rng.below(2));
    const int cls = static_cast<int>(rng.below(3));
    const MemoryKey key{group, cls, 0};
    const int before = mem.count(key);
    mem.bgs_update(sample_of(group, cls, 0, i), 0, 2);
    ASSERT_GE(mem.count(key), before);
  }
}

}  // namespace
}  // namespace clbias
