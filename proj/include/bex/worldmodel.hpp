#pragma once

// Ensemble of deterministic dynamics models.
//
// Each member maps [normalized state, normalized action] to [normalized delta,
// normalized reward], where delta = s' - s. Predictions are denormalized and
// added back to the state before any statistic is taken, so the uncertainty
// u = sum_d Var_m[s'_m,d] (population variance over members) is measured in
// state units.

#include "bex/envs.hpp"
#include "bex/mlp.hpp"
#include "bex/replay.hpp"

#include <iostream>

namespace bex {

struct EnsembleConfig {
  int members = 5;
  std::vector<int> hidden{64, 64};
  Activation activation = Activation::Tanh;
  double learning_rate = 1e-3;
  std::size_t warmup_transitions = 1000;  // the ensemble trains (and becomes ready) only past this buffer size
  bool reward_in_uncertainty = false;     // add reward-prediction variance to u

  void validate() const {
    if (members < 2) throw ConfigError("ensemble needs at least 2 members (variance is undefined for 1)");
    if (!(learning_rate >= 0.0)) throw ConfigError("ensemble learning rate must be non-negative");
  }
};

/// Population variance of each column (members in rows), via the pairwise form
/// sum_{i<j} (x_i - x_j)^2 / M^2, which is exactly zero when all members agree.
inline Vec member_variance(const Mat& predictions) {
  const auto m = predictions.rows();
  Vec out = Vec::Zero(predictions.cols());
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j) out += (predictions.row(i) - predictions.row(j)).array().square().matrix().transpose();
  return out / static_cast<double>(m * m);
}

struct EnsemblePrediction {
  Mat next_states;  // M x D, denormalized
  Vec rewards;      // M
  Vec variance;     // D, population variance across members
  double uncertainty = 0.0;
};

class Ensemble {
 public:
  Ensemble(const EnvSpec& spec, EnsembleConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)), state_dim_(spec.state_dim), action_dim_(spec.action_dim),
        center_(spec.center()), half_range_(spec.half_range()), stats_(spec.state_dim) {
    cfg_.validate();
    std::vector<int> sizes{state_dim_ + action_dim_};
    sizes.insert(sizes.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    sizes.push_back(state_dim_ + 1);
    for (int m = 0; m < cfg_.members; ++m) {
      const auto member_seed = derive_seed(seed, static_cast<std::uint64_t>(m));
      Rng init(derive_seed(member_seed, SeedStream::Init));
      members_.emplace_back(sizes, cfg_.activation, init);
      optimizers_.emplace_back(members_.back(), AdamConfig{cfg_.learning_rate});
      samplers_.emplace_back(derive_seed(member_seed, SeedStream::Buffer));
    }
  }

  const EnsembleConfig& config() const { return cfg_; }
  int size() const { return static_cast<int>(members_.size()); }
  const Mlp& member(int m) const { return members_.at(static_cast<std::size_t>(m)); }
  Mlp& member(int m) { return members_.at(static_cast<std::size_t>(m)); }
  const NormStats& stats() const { return stats_; }
  std::uint64_t train_steps() const { return train_steps_; }
  bool ready() const { return train_steps_ > 0 && stats_.ready(); }

  /// Installs normalization statistics directly (tests and offline use).
  void set_stats(const NormStats& stats) { stats_ = stats; }

  /// Copies member 0 (parameters, optimizer, batch sampler) into every other member.
  void make_members_identical() {
    for (std::size_t m = 1; m < members_.size(); ++m) {
      members_[m] = members_[0];
      optimizers_[m] = optimizers_[0];
      samplers_[m] = samplers_[0];
    }
  }

  /// One gradient step per member, each on its own batch drawn from `buffer`.
  /// Returns per-member losses, or an empty vector when the warmup contract is not met.
  std::vector<double> train(const ReplayBuffer& buffer, std::size_t batch) {
    if (buffer.size() < std::max<std::size_t>(batch, cfg_.warmup_transitions) || !buffer.stats().ready()) {
      ++skipped_;
      return {};
    }
    stats_ = buffer.stats();
    std::vector<double> losses;
    losses.reserve(members_.size());
    for (std::size_t m = 0; m < members_.size(); ++m) {
      const Batch b = buffer.sample_batch(batch, samplers_[m]);
      losses.push_back(step_member(m, b));
    }
    ++train_steps_;
    return losses;
  }

  std::uint64_t skipped_rounds() const { return skipped_; }

  /// Every member steps on the same batch using the current statistics.
  std::vector<double> train_on_batch(const Batch& batch) {
    if (!stats_.ready()) throw NotReadyError("train_on_batch: normalization statistics not ready");
    std::vector<double> losses;
    for (std::size_t m = 0; m < members_.size(); ++m) losses.push_back(step_member(m, batch));
    ++train_steps_;
    return losses;
  }

  /// Mean-squared error of each member on `batch` in normalized target space.
  std::vector<double> losses(const Batch& batch) const {
    const Mat x = inputs(batch.states, batch.actions);
    const Mat y = targets(batch);
    std::vector<double> out;
    for (const auto& net : members_) out.push_back((net.forward(x) - y).squaredNorm() / static_cast<double>(y.size()));
    return out;
  }

  /// Denormalized next state and reward predicted by member `m` for each row.
  std::pair<Mat, Vec> predict_member(int m, const Mat& states, const Mat& env_actions) const {
    require_ready();
    const Mat out = member(m).forward(inputs(states, env_actions));
    const Vec dscale = stats_.delta_scale();
    const Vec& dmean = stats_.deltas().mean();
    Mat next = states;
    for (Eigen::Index r = 0; r < next.rows(); ++r)
      next.row(r) += (out.row(r).head(state_dim_).transpose().cwiseProduct(dscale) + dmean).transpose();
    const Vec rewards = (out.col(state_dim_).array() * stats_.reward_scale() + stats_.rewards().mean()[0]).matrix();
    return {std::move(next), rewards};
  }

  EnsemblePrediction predict_all(const Vec& state, const Vec& env_action) const {
    EnsemblePrediction p;
    p.next_states = Mat(size(), state_dim_);
    p.rewards = Vec(size());
    for (int m = 0; m < size(); ++m) {
      auto [next, reward] = predict_member(m, state.transpose(), env_action.transpose());
      p.next_states.row(m) = next.row(0);
      p.rewards[m] = reward[0];
    }
    p.variance = member_variance(p.next_states);
    p.uncertainty = p.variance.sum();
    if (cfg_.reward_in_uncertainty) p.uncertainty += member_variance(Mat(p.rewards))[0];
    return p;
  }

  /// Uncertainty of each (state, action row) pair; same values as predict_all row by row.
  Vec uncertainties(const Vec& state, const Mat& env_actions) const {
    const auto n = env_actions.rows();
    const Mat states = state.transpose().replicate(n, 1);
    std::vector<Mat> next(members_.size());
    std::vector<Vec> rewards(members_.size());
    for (int m = 0; m < size(); ++m) std::tie(next[m], rewards[m]) = predict_member(m, states, env_actions);
    Vec u(n);
    Mat preds(size(), state_dim_);
    Mat reward_preds(size(), 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int m = 0; m < size(); ++m) {
        preds.row(m) = next[m].row(i);
        reward_preds(m, 0) = rewards[m][i];
      }
      u[i] = member_variance(preds).sum();
      if (cfg_.reward_in_uncertainty) u[i] += member_variance(reward_preds)[0];
    }
    return u;
  }

  int pick_member(Rng& rng) const { return static_cast<int>(rng.index(members_.size())); }

  /// Prediction of one uniformly chosen member.
  std::pair<Vec, double> predict_random(const Vec& state, const Vec& env_action, Rng& rng) const {
    auto [next, reward] = predict_member(pick_member(rng), state.transpose(), env_action.transpose());
    return {next.row(0).transpose(), reward[0]};
  }

  void save(BinaryWriter& w) const {
    w.tag("ensemble");
    w.u64(members_.size());
    w.u64(train_steps_);
    for (std::size_t m = 0; m < members_.size(); ++m) {
      members_[m].save(w);
      optimizers_[m].save(w);
    }
    stats_.save(w);
  }

  void load(BinaryReader& r) {
    r.expect_tag("ensemble");
    const auto n = r.u64();
    if (n != members_.size()) throw FormatError("ensemble record: member count mismatch");
    train_steps_ = r.u64();
    for (std::size_t m = 0; m < n; ++m) {
      members_[m] = Mlp::load(r);
      optimizers_[m].load(r, members_[m]);
    }
    stats_.load(r);
  }

 private:
  void require_ready() const {
    if (!stats_.ready()) throw NotReadyError("ensemble prediction before normalization statistics are available");
  }

  Mat inputs(const Mat& states, const Mat& env_actions) const {
    const Vec smean = stats_.states().mean();
    const Vec sscale = stats_.state_scale();
    Mat x(states.rows(), state_dim_ + action_dim_);
    for (Eigen::Index r = 0; r < states.rows(); ++r) {
      x.row(r).head(state_dim_) = (states.row(r).transpose() - smean).cwiseQuotient(sscale).transpose();
      x.row(r).tail(action_dim_) =
          (env_actions.row(r).transpose() - center_).cwiseQuotient(half_range_).transpose();
    }
    return x;
  }

  Mat targets(const Batch& b) const {
    const Vec dmean = stats_.deltas().mean();
    const Vec dscale = stats_.delta_scale();
    const double rmean = stats_.rewards().mean()[0];
    const double rscale = stats_.reward_scale();
    Mat y(b.size(), state_dim_ + 1);
    for (Eigen::Index r = 0; r < b.size(); ++r) {
      const Vec delta = b.next_states.row(r).transpose() - b.states.row(r).transpose();
      y.row(r).head(state_dim_) = (delta - dmean).cwiseQuotient(dscale).transpose();
      y(r, state_dim_) = (b.rewards[r] - rmean) / rscale;
    }
    return y;
  }

  double step_member(std::size_t m, const Batch& b) {
    const Mat x = inputs(b.states, b.actions);
    const Mat y = targets(b);
    ForwardTrace trace;
    const Mat err = members_[m].forward(x, trace) - y;
    const double n = static_cast<double>(err.size());
    const double loss = err.squaredNorm() / n;
    if (!std::isfinite(loss)) throw NumericalError("world-model loss is not finite");
    const auto grad = members_[m].backward(trace, Mat(err * (2.0 / n)));
    optimizers_[m].step(members_[m], grad);
    return loss;
  }

  EnsembleConfig cfg_;
  int state_dim_;
  int action_dim_;
  Vec center_;
  Vec half_range_;
  NormStats stats_;
  std::vector<Mlp> members_;
  std::vector<Adam> optimizers_;
  std::vector<Rng> samplers_;
  std::uint64_t train_steps_ = 0;
  std::uint64_t skipped_ = 0;
};

}  // namespace bex
