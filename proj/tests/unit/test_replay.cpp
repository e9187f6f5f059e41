#include "bex/replay.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace bex;
using bex::testing::random_vec;

namespace {

Transition scalar_transition(double s, double a = 0.0, double r = 0.0, double s2 = 0.0) {
  return {Vec::Constant(1, s), Vec::Constant(1, a), r, Vec::Constant(1, s2), false};
}

}  // namespace

TEST(ReplayBuffer, PushGrowsSize) {
  ReplayBuffer buf(4, 1, 1);
  EXPECT_TRUE(buf.empty());
  buf.push(scalar_transition(1));
  EXPECT_EQ(buf.size(), 1u);
  EXPECT_EQ(buf.total_pushed(), 1u);
}

TEST(ReplayBuffer, EvictsOldestFirst) {
  ReplayBuffer buf(2, 1, 1);
  buf.push(scalar_transition(1));  // a
  buf.push(scalar_transition(2));  // b
  buf.push(scalar_transition(3));  // c
  ASSERT_EQ(buf.size(), 2u);
  EXPECT_EQ(buf.at(0).state[0], 2.0);
  EXPECT_EQ(buf.at(1).state[0], 3.0);
  EXPECT_EQ(buf.total_pushed(), 3u);
}

TEST(ReplayBuffer, FifoOrderHoldsOverManyWraps) {
  ReplayBuffer buf(7, 1, 1);
  for (int i = 0; i < 100; ++i) {
    buf.push(scalar_transition(i));
    const auto n = buf.size();
    for (std::size_t k = 0; k < n; ++k) ASSERT_EQ(buf.at(k).state[0], i - static_cast<int>(n) + 1 + static_cast<int>(k));
  }
  EXPECT_EQ(buf.total_pushed(), 100u);
  EXPECT_EQ(buf.size(), 7u);
}

TEST(ReplayBuffer, SamplingNeverReturnsEvictedItems) {
  ReplayBuffer buf(5, 1, 1);
  for (int i = 0; i < 50; ++i) buf.push(scalar_transition(i));
  Rng rng(1);
  for (const auto& t : buf.sample(1000, rng)) EXPECT_GE(t.state[0], 45.0);
}

TEST(ReplayBuffer, RejectsBadTransitions) {
  ReplayBuffer buf(4, 2, 1);
  EXPECT_THROW(buf.push(scalar_transition(1)), ConfigError);
  Transition t{Vec::Zero(2), Vec::Zero(1), std::numeric_limits<double>::infinity(), Vec::Zero(2), false};
  EXPECT_THROW(buf.push(t), NumericalError);
  t.reward = 0.0;
  t.next_state[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(buf.push(t), NumericalError);
  EXPECT_TRUE(buf.empty());
  EXPECT_THROW(ReplayBuffer(0, 1, 1), ConfigError);
}

TEST(ReplayBuffer, SingleItemIsSampledRepeatedly) {
  ReplayBuffer buf(3, 1, 1);
  buf.push(scalar_transition(7, 0.5, 2.0, 8));
  Rng rng(2);
  const auto batch = buf.sample(4, rng);
  ASSERT_EQ(batch.size(), 4u);
  for (const auto& t : batch) {
    EXPECT_EQ(t.state[0], 7.0);
    EXPECT_EQ(t.reward, 2.0);
  }
}

TEST(ReplayBuffer, EmptySampleIsAnError) {
  ReplayBuffer buf(3, 1, 1);
  Rng rng(3);
  EXPECT_THROW(buf.sample(1, rng), UsageError);
}

TEST(ReplayBuffer, SameSeedSameBatch) {
  ReplayBuffer buf(100, 1, 1);
  for (int i = 0; i < 100; ++i) buf.push(scalar_transition(i));
  const auto a = buf.sample(32, 77);
  const auto b = buf.sample(32, 77);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].state, b[i].state);
}

TEST(ReplayBuffer, StackedBatchMatchesTransitionSample) {
  ReplayBuffer buf(20, 2, 1);
  Rng data(4);
  for (int i = 0; i < 20; ++i)
    buf.push({random_vec(2, data, -1, 1), random_vec(1, data, -1, 1), data.normal(), random_vec(2, data, -1, 1), i % 4 == 0});
  Rng r1(5), r2(5);
  const Batch stacked = buf.sample_batch(16, r1);
  const Batch direct = Batch::from(buf.sample(16, r2));
  EXPECT_EQ(stacked.states, direct.states);
  EXPECT_EQ(stacked.actions, direct.actions);
  EXPECT_EQ(stacked.rewards, direct.rewards);
  EXPECT_EQ(stacked.next_states, direct.next_states);
  EXPECT_EQ(stacked.terminals, direct.terminals);
}

TEST(ReplayBuffer, SamplingIsUniform) {
  ReplayBuffer buf(10, 1, 1);
  for (int i = 0; i < 10; ++i) buf.push(scalar_transition(i));
  Rng rng(6);
  const int draws = 100000;
  std::vector<int> counts(10, 0);
  for (auto i : buf.sample_indices(draws, rng)) ++counts[i];
  // binomial(n, 1/10): mean 1e4, sigma = sqrt(n p (1 - p)) ~ 94.9
  const double sigma = std::sqrt(draws * 0.1 * 0.9);
  for (int c : counts) EXPECT_LE(std::abs(c - draws * 0.1), 3 * sigma);
}

TEST(NormStats, RunningMeanOfTwoStates) {
  ReplayBuffer buf(10, 1, 1);
  buf.push(scalar_transition(1));
  buf.push(scalar_transition(3));
  EXPECT_DOUBLE_EQ(buf.stats().states().mean()[0], 2.0);
  EXPECT_DOUBLE_EQ(buf.stats().states().variance()[0], 1.0);
}

TEST(NormStats, IncrementalEqualsBatchRecomputation) {
  Rng rng(7);
  ReplayBuffer buf(8, 3, 2);  // small capacity: statistics cover every push, evicted or not
  std::vector<Transition> all;
  for (int i = 0; i < 200; ++i) {
    Transition t{random_vec(3, rng, -5, 5), random_vec(2, rng, -1, 1), rng.normal() * 3, random_vec(3, rng, -5, 5), false};
    buf.push(t);
    all.push_back(t);
    const double n = static_cast<double>(all.size());
    Vec mean = Vec::Zero(3), dmean = Vec::Zero(3);
    for (const auto& x : all) {
      mean += x.state / n;
      dmean += (x.next_state - x.state) / n;
    }
    Vec var = Vec::Zero(3), dvar = Vec::Zero(3);
    for (const auto& x : all) {
      var += (x.state - mean).cwiseAbs2() / n;
      dvar += (x.next_state - x.state - dmean).cwiseAbs2() / n;
    }
    ASSERT_LT((buf.stats().states().mean() - mean).cwiseAbs().maxCoeff(), 1e-9);
    ASSERT_LT((buf.stats().states().variance() - var).cwiseAbs().maxCoeff(), 1e-9);
    ASSERT_LT((buf.stats().deltas().mean() - dmean).cwiseAbs().maxCoeff(), 1e-9);
    ASSERT_LT((buf.stats().deltas().variance() - dvar).cwiseAbs().maxCoeff(), 1e-9);
    ASSERT_TRUE((buf.stats().states().variance().array() >= 0.0).all());
  }
}

TEST(NormStats, OrderOfSamplingDoesNotMatter) {
  ReplayBuffer a(50, 1, 1), b(50, 1, 1);
  for (int i = 0; i < 10; ++i) a.push(scalar_transition(i, 0, 0, i + 1));
  for (int i = 0; i < 10; ++i) b.push(scalar_transition(i, 0, 0, i + 1));
  Rng rng(8);
  a.sample(100, rng);
  EXPECT_EQ(a.stats().states().mean(), b.stats().states().mean());
  EXPECT_EQ(a.stats().deltas().variance(), b.stats().deltas().variance());
}

TEST(NormStats, DeltaNormalizationHandCase) {
  NormStats stats(1);
  stats.add(scalar_transition(0, 0, 0, 0));  // delta 0
  stats.add(scalar_transition(0, 0, 0, 2));  // delta 2
  EXPECT_DOUBLE_EQ(stats.normalize_delta(Vec::Constant(1, 2.0))[0], 1.0);
  EXPECT_DOUBLE_EQ(stats.normalize_delta(Vec::Constant(1, 1.0))[0], 0.0);
}

TEST(NormStats, RoundTripIsIdentity) {
  Rng rng(9);
  NormStats stats(4);
  for (int i = 0; i < 30; ++i)
    stats.add({random_vec(4, rng, -3, 3), Vec::Zero(1), rng.normal(), random_vec(4, rng, -3, 3), false});
  for (int i = 0; i < 100; ++i) {
    const Vec d = random_vec(4, rng, -10, 10);
    EXPECT_LT((stats.denormalize_delta(stats.normalize_delta(d)) - d).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((stats.normalize_delta(stats.denormalize_delta(d)) - d).cwiseAbs().maxCoeff(), 1e-10);
  }
  EXPECT_LT(stats.normalize_delta(stats.deltas().mean()).norm(), 1e-12);
}

TEST(NormStats, ConstantDimensionsUseTheVarianceFloor) {
  NormStats stats(1);
  stats.add(scalar_transition(1, 0, 0, 1));
  stats.add(scalar_transition(1, 0, 0, 1));
  const Vec z = stats.normalize_delta(Vec::Constant(1, 1e-4));
  EXPECT_TRUE(z.allFinite());
  EXPECT_NEAR(z[0], 1e-4 / std::sqrt(NormStats::kVarianceFloor), 1e-9);
}

TEST(NormStats, TooFewTransitionsPointsToWarmup) {
  NormStats stats(1);
  stats.add(scalar_transition(1));
  try {
    stats.normalize_delta(Vec::Zero(1));
    FAIL() << "expected NotReadyError";
  } catch (const NotReadyError& e) {
    EXPECT_NE(std::string(e.what()).find("warmup"), std::string::npos);
  }
}

TEST(ReplayBuffer, SnapshotRoundTrip) {
  ReplayBuffer buf(5, 2, 1);
  Rng rng(10);
  for (int i = 0; i < 8; ++i)
    buf.push({random_vec(2, rng, -1, 1), random_vec(1, rng, -1, 1), rng.normal(), random_vec(2, rng, -1, 1), i == 3});
  std::stringstream io;
  buf.save(io);
  const ReplayBuffer back = ReplayBuffer::load(io);
  ASSERT_EQ(back.size(), buf.size());
  EXPECT_EQ(back.total_pushed(), buf.total_pushed());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    EXPECT_EQ(back.at(i).state, buf.at(i).state);
    EXPECT_EQ(back.at(i).reward, buf.at(i).reward);
    EXPECT_EQ(back.at(i).terminal, buf.at(i).terminal);
  }
  EXPECT_EQ(back.stats().deltas().mean(), buf.stats().deltas().mean());
  Rng r1(11), r2(11);
  EXPECT_EQ(back.sample_batch(6, r1).states, buf.sample_batch(6, r2).states);
}
