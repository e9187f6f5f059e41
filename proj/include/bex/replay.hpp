#pragma once

#include "bex/common.hpp"
#include "bex/container.hpp"

#include <fstream>

namespace bex {

struct Transition {
  Vec state;
  Vec action;  // executed (clamped) action in environment units
  double reward = 0.0;
  Vec next_state;
  bool terminal = false;
};

/// Column-stacked view of a sampled batch.
struct Batch {
  Mat states;       // B x D
  Mat actions;      // B x A (environment units)
  Vec rewards;      // B
  Mat next_states;  // B x D
  Vec terminals;    // B, 1.0 for absorbing transitions

  Eigen::Index size() const { return states.rows(); }

  static Batch from(const std::vector<Transition>& ts) {
    if (ts.empty()) throw UsageError("Batch::from: empty transition list");
    const auto d = ts.front().state.size();
    const auto a = ts.front().action.size();
    const auto n = static_cast<Eigen::Index>(ts.size());
    Batch b{Mat(n, d), Mat(n, a), Vec(n), Mat(n, d), Vec(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& t = ts[static_cast<std::size_t>(i)];
      b.states.row(i) = t.state.transpose();
      b.actions.row(i) = t.action.transpose();
      b.rewards[i] = t.reward;
      b.next_states.row(i) = t.next_state.transpose();
      b.terminals[i] = t.terminal ? 1.0 : 0.0;
    }
    return b;
  }
};

/// Per-dimension running mean and population variance (Welford).
class RunningStats {
 public:
  RunningStats() = default;
  explicit RunningStats(Eigen::Index dim) : mean_(Vec::Zero(dim)), m2_(Vec::Zero(dim)) {}

  void add(const Vec& x) {
    ++count_;
    const Vec delta = x - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta.cwiseProduct(x - mean_);
  }

  std::uint64_t count() const { return count_; }
  const Vec& mean() const { return mean_; }
  Vec variance() const {
    if (count_ == 0) return Vec::Zero(mean_.size());
    return (m2_ / static_cast<double>(count_)).cwiseMax(0.0);
  }

  void save(BinaryWriter& w) const {
    w.u64(count_);
    w.reals({mean_.data(), static_cast<std::size_t>(mean_.size())});
    w.reals({m2_.data(), static_cast<std::size_t>(m2_.size())});
  }
  void load(BinaryReader& r) {
    count_ = r.u64();
    const auto m = r.reals();
    const auto s = r.reals();
    mean_ = Eigen::Map<const Vec>(m.data(), static_cast<Eigen::Index>(m.size()));
    m2_ = Eigen::Map<const Vec>(s.data(), static_cast<Eigen::Index>(s.size()));
  }

 private:
  std::uint64_t count_ = 0;
  Vec mean_;
  Vec m2_;
};

/// Normalization statistics of states, state differences and rewards over every pushed transition.
class NormStats {
 public:
  static constexpr double kVarianceFloor = 1e-8;
  static constexpr std::uint64_t kMinCount = 2;

  NormStats() = default;
  explicit NormStats(Eigen::Index state_dim) : states_(state_dim), deltas_(state_dim), rewards_(1) {}

  void add(const Transition& t) {
    states_.add(t.state);
    deltas_.add(t.next_state - t.state);
    rewards_.add(Vec::Constant(1, t.reward));
  }

  std::uint64_t count() const { return states_.count(); }
  bool ready() const { return count() >= kMinCount; }
  const RunningStats& states() const { return states_; }
  const RunningStats& deltas() const { return deltas_; }
  const RunningStats& rewards() const { return rewards_; }

  Vec normalize_delta(const Vec& delta) const { return normalize(deltas_, delta); }
  Vec denormalize_delta(const Vec& z) const { return denormalize(deltas_, z); }
  Vec normalize_state(const Vec& s) const { return normalize(states_, s); }
  double normalize_reward(double r) const { return normalize(rewards_, Vec::Constant(1, r))[0]; }
  double denormalize_reward(double z) const { return denormalize(rewards_, Vec::Constant(1, z))[0]; }

  /// Scale vectors (std with variance floor) for batch-wise use.
  Vec delta_scale() const { return scale(deltas_); }
  Vec state_scale() const { return scale(states_); }
  double reward_scale() const { return scale(rewards_)[0]; }

  void save(BinaryWriter& w) const {
    w.tag("norm_stats");
    states_.save(w);
    deltas_.save(w);
    rewards_.save(w);
  }
  void load(BinaryReader& r) {
    r.expect_tag("norm_stats");
    states_.load(r);
    deltas_.load(r);
    rewards_.load(r);
  }

 private:
  void require_ready() const {
    if (!ready())
      throw NotReadyError("normalization statistics need at least 2 transitions; keep collecting warmup data");
  }
  Vec scale(const RunningStats& s) const {
    require_ready();
    return s.variance().cwiseMax(kVarianceFloor).cwiseSqrt();
  }
  Vec normalize(const RunningStats& s, const Vec& x) const {
    return (x - s.mean()).cwiseQuotient(scale(s));
  }
  Vec denormalize(const RunningStats& s, const Vec& z) const {
    return z.cwiseProduct(scale(s)) + s.mean();
  }

  RunningStats states_, deltas_, rewards_;
};

/// Fixed-capacity FIFO of transitions with uniform sampling (with replacement).
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int state_dim, int action_dim)
      : capacity_(capacity), state_dim_(state_dim), action_dim_(action_dim), stats_(state_dim) {
    if (capacity == 0) throw ConfigError("ReplayBuffer: capacity must be positive");
    items_.reserve(std::min<std::size_t>(capacity, 1u << 16));
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  std::uint64_t total_pushed() const { return pushed_; }
  const NormStats& stats() const { return stats_; }

  void push(Transition t) {
    if (t.state.size() != state_dim_ || t.next_state.size() != state_dim_ || t.action.size() != action_dim_)
      throw ConfigError("ReplayBuffer::push: transition dimensions do not match the environment");
    if (!t.state.allFinite() || !t.next_state.allFinite() || !t.action.allFinite() || !std::isfinite(t.reward))
      throw NumericalError("ReplayBuffer::push: rejected transition with non-finite values");
    stats_.add(t);
    if (items_.size() < capacity_) {
      items_.push_back(std::move(t));
    } else {
      items_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
    ++pushed_;
  }

  /// i-th stored transition, oldest first.
  const Transition& at(std::size_t i) const {
    if (i >= items_.size()) throw UsageError("ReplayBuffer::at: index out of range");
    return items_[(head_ + i) % items_.size()];
  }

  std::vector<std::size_t> sample_indices(std::size_t batch, Rng& rng) const {
    if (items_.empty()) throw UsageError("ReplayBuffer::sample: buffer is empty");
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = rng.index(items_.size());
    return idx;
  }

  std::vector<Transition> sample(std::size_t batch, Rng& rng) const {
    std::vector<Transition> out;
    out.reserve(batch);
    for (auto i : sample_indices(batch, rng)) out.push_back(at(i));
    return out;
  }

  std::vector<Transition> sample(std::size_t batch, std::uint64_t seed) const {
    Rng rng(seed);
    return sample(batch, rng);
  }

  /// Same draws as sample(batch, rng), stacked without intermediate copies.
  Batch sample_batch(std::size_t batch, Rng& rng) const {
    const auto idx = sample_indices(batch, rng);
    const auto n = static_cast<Eigen::Index>(batch);
    Batch b{Mat(n, state_dim_), Mat(n, action_dim_), Vec(n), Mat(n, state_dim_), Vec(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& t = at(idx[static_cast<std::size_t>(i)]);
      b.states.row(i) = t.state.transpose();
      b.actions.row(i) = t.action.transpose();
      b.rewards[i] = t.reward;
      b.next_states.row(i) = t.next_state.transpose();
      b.terminals[i] = t.terminal ? 1.0 : 0.0;
    }
    return b;
  }

  void save(std::ostream& out) const {
    BinaryWriter w(out);
    w.header("replay");
    w.u64(capacity_);
    w.u64(static_cast<std::uint64_t>(state_dim_));
    w.u64(static_cast<std::uint64_t>(action_dim_));
    w.u64(pushed_);
    stats_.save(w);
    w.u64(items_.size());
    for (std::size_t i = 0; i < items_.size(); ++i) {
      const auto& t = at(i);
      w.reals({t.state.data(), static_cast<std::size_t>(t.state.size())});
      w.reals({t.action.data(), static_cast<std::size_t>(t.action.size())});
      w.f64(t.reward);
      w.reals({t.next_state.data(), static_cast<std::size_t>(t.next_state.size())});
      w.u32(t.terminal ? 1 : 0);
    }
    w.check();
  }

  static ReplayBuffer load(std::istream& in) {
    BinaryReader r(in);
    r.expect_header("replay");
    const auto capacity = r.u64();
    const auto d = static_cast<int>(r.u64());
    const auto a = static_cast<int>(r.u64());
    ReplayBuffer buf(capacity, d, a);
    const auto pushed = r.u64();
    NormStats stats;
    stats.load(r);
    const auto n = r.u64();
    auto to_vec = [](const std::vector<double>& v) {
      return Vec(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    for (std::uint64_t i = 0; i < n; ++i) {
      Transition t;
      t.state = to_vec(r.reals());
      t.action = to_vec(r.reals());
      t.reward = r.f64();
      t.next_state = to_vec(r.reals());
      t.terminal = r.u32() != 0;
      buf.items_.push_back(std::move(t));
    }
    buf.stats_ = stats;
    buf.pushed_ = pushed;
    return buf;
  }

 private:
  std::size_t capacity_;
  int state_dim_;
  int action_dim_;
  std::vector<Transition> items_;
  std::size_t head_ = 0;  // index of the oldest item once the ring is full
  std::uint64_t pushed_ = 0;
  NormStats stats_;
};

}  // namespace bex
