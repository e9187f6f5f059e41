#pragma once

// Soft Actor-Critic: squashed-Gaussian actor, twin critics with target copies,
// and an auto-tuned entropy temperature.
//
// Action spaces. The policy works in the normalized box (-1, 1)^A: a = tanh(u),
// u ~ N(mu, sigma^2). Environment actions are center + half_range * a. Critics
// and world models consume normalized actions. Log-densities are densities of
// the normalized action, so the default target entropy -A is bound independent.

#include "bex/envs.hpp"
#include "bex/mlp.hpp"
#include "bex/replay.hpp"

#include <optional>

namespace bex {

struct SacConfig {
  std::vector<int> actor_hidden{64, 64};
  std::vector<int> critic_hidden{64, 64};
  Activation activation = Activation::Tanh;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  double gamma = 0.99;
  double tau = 0.005;
  double initial_alpha = 1.0;
  double log_std_min = -20.0;
  double log_std_max = 2.0;
  std::optional<double> target_entropy;  // defaults to -action_dim

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
    if (!(initial_alpha > 0.0)) throw ConfigError("initial_alpha must be positive");
    if (!(log_std_min < log_std_max)) throw ConfigError("log_std_min must be below log_std_max");
    for (double lr : {actor_lr, critic_lr, alpha_lr})
      if (!(lr >= 0.0)) throw ConfigError("learning rates must be non-negative");
  }
};

/// log(1 - tanh(u)^2) in a form that stays finite for large |u|.
inline double log_one_minus_tanh_sq(double u) { return 2.0 * (std::numbers::ln2 - u - softplus(-2.0 * u)); }

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)

/// Squashed samples drawn for a batch of states (one row per sample).
struct PolicySample {
  Mat noise;       // eps ~ N(0, 1)
  Mat mu;          // pre-squash mean
  Mat log_std;     // clamped
  Mat raw_log_std; // before clamping
  Mat pre_squash;  // u = mu + sigma * eps
  Mat squashed;    // tanh(u), normalized action
  Mat actions;     // environment units
  Vec log_prob;    // log density of the normalized action
  ForwardTrace trace;
};

class GaussianPolicy {
 public:
  static constexpr double kSquashLimit = 1.0 - 1e-12;

  GaussianPolicy() = default;
  GaussianPolicy(const EnvSpec& spec, const SacConfig& cfg, Rng& init)
      : net(layer_sizes(spec.state_dim, cfg.actor_hidden, 2 * spec.action_dim), cfg.activation, init),
        center_(spec.center()),
        half_range_(spec.half_range()),
        log_std_min_(cfg.log_std_min),
        log_std_max_(cfg.log_std_max) {}

  Mlp net;  // state -> [mu (A), log_std (A)]

  int action_dim() const { return static_cast<int>(center_.size()); }
  int state_dim() const { return net.input_dim(); }
  double log_std_min() const { return log_std_min_; }
  double log_std_max() const { return log_std_max_; }

  Mat to_env(const Mat& squashed) const {
    Mat out = squashed;
    for (Eigen::Index r = 0; r < out.rows(); ++r)
      out.row(r) = (center_ + half_range_.cwiseProduct(squashed.row(r).transpose())).transpose();
    return out;
  }

  Mat to_normalized(const Mat& env_actions) const {
    Mat out = env_actions;
    for (Eigen::Index r = 0; r < out.rows(); ++r)
      out.row(r) = (env_actions.row(r).transpose() - center_).cwiseQuotient(half_range_).transpose();
    return out;
  }

  /// Reparameterized samples for the given noise. Row b of `noise` pairs with row b of `states`.
  PolicySample sample_with_noise(const Mat& states, const Mat& noise, bool keep_trace = false) const {
    PolicySample s;
    const auto a = action_dim();
    Mat out = keep_trace ? net.forward(states, s.trace) : net.forward(states);
    s.noise = noise;
    s.mu = out.leftCols(a);
    s.raw_log_std = out.rightCols(a);
    s.log_std = s.raw_log_std.cwiseMax(log_std_min_).cwiseMin(log_std_max_);
    s.pre_squash = s.mu.array() + s.log_std.array().exp() * noise.array();
    s.squashed = s.pre_squash.array().tanh().cwiseMax(-kSquashLimit).cwiseMin(kSquashLimit);
    s.actions = to_env(s.squashed);
    s.log_prob = Vec(states.rows());
    for (Eigen::Index b = 0; b < states.rows(); ++b) {
      double lp = 0.0;
      for (Eigen::Index i = 0; i < a; ++i)
        lp += -0.5 * noise(b, i) * noise(b, i) - s.log_std(b, i) - kHalfLog2Pi -
              log_one_minus_tanh_sq(s.pre_squash(b, i));
      s.log_prob[b] = lp;
    }
    return s;
  }

  /// One sample per state row; noise is drawn row-major from `rng`.
  PolicySample sample(const Mat& states, Rng& rng, bool keep_trace = false) const {
    return sample_with_noise(states, draw_noise(states.rows(), rng), keep_trace);
  }

  Mat draw_noise(Eigen::Index rows, Rng& rng) const {
    Mat eps(rows, action_dim());
    for (Eigen::Index b = 0; b < rows; ++b)
      for (Eigen::Index i = 0; i < eps.cols(); ++i) eps(b, i) = rng.normal();
    return eps;
  }

  /// Squashed distribution mean tanh(mu), in environment units.
  Vec mean_action(const Vec& state) const {
    const Mat out = net.forward(state.transpose());
    const Mat squashed = out.leftCols(action_dim()).array().tanh();
    return to_env(squashed).row(0).transpose();
  }

  void save(BinaryWriter& w) const {
    w.tag("gaussian_policy");
    net.save(w);
    w.reals({center_.data(), static_cast<std::size_t>(center_.size())});
    w.reals({half_range_.data(), static_cast<std::size_t>(half_range_.size())});
    w.f64(log_std_min_);
    w.f64(log_std_max_);
  }

  void load(BinaryReader& r) {
    r.expect_tag("gaussian_policy");
    net = Mlp::load(r);
    const auto c = r.reals();
    const auto h = r.reals();
    center_ = Eigen::Map<const Vec>(c.data(), static_cast<Eigen::Index>(c.size()));
    half_range_ = Eigen::Map<const Vec>(h.data(), static_cast<Eigen::Index>(h.size()));
    log_std_min_ = r.f64();
    log_std_max_ = r.f64();
  }

  static std::vector<int> layer_sizes(int in, const std::vector<int>& hidden, int out) {
    std::vector<int> sizes{in};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(out);
    return sizes;
  }

 private:
  Vec center_;
  Vec half_range_;
  double log_std_min_ = -20.0;
  double log_std_max_ = 2.0;
};

/// Per-state n-sample draw used for candidate generation.
struct ActionSamples {
  Mat actions;      // n x A, environment units
  Mat normalized;   // n x A, in (-1, 1)
  Vec log_prob;     // n
  Vec mean_action;  // tanh(mu) in environment units
};

inline ActionSamples policy_sample(const GaussianPolicy& policy, const Vec& state, int n, Rng& rng) {
  if (n < 1) throw ConfigError("policy_sample: n must be >= 1");
  const Mat states = state.transpose().replicate(n, 1);
  auto s = policy.sample(states, rng);
  const Mat mean_sq = s.mu.row(0).array().tanh();
  return {std::move(s.actions), std::move(s.squashed), std::move(s.log_prob),
          policy.to_env(mean_sq).row(0).transpose()};
}

inline Mat concat_columns(const Mat& left, const Mat& right) {
  Mat out(left.rows(), left.cols() + right.cols());
  out << left, right;
  return out;
}

struct TwinCritics {
  Mlp q1, q2;
  Mlp target1, target2;
  Adam opt1, opt2;

  TwinCritics() = default;
  TwinCritics(const EnvSpec& spec, const SacConfig& cfg, Rng& init) {
    const auto sizes = GaussianPolicy::layer_sizes(spec.state_dim + spec.action_dim, cfg.critic_hidden, 1);
    q1 = Mlp(sizes, cfg.activation, init);
    q2 = Mlp(sizes, cfg.activation, init);
    target1 = q1;
    target2 = q2;
    opt1 = Adam(q1, {cfg.critic_lr});
    opt2 = Adam(q2, {cfg.critic_lr});
  }

  /// min(Q1, Q2) on the online critics; inputs are states and normalized actions.
  Vec min_q(const Mat& states, const Mat& normalized_actions) const {
    const Mat x = concat_columns(states, normalized_actions);
    return q1.forward(x).col(0).cwiseMin(q2.forward(x).col(0));
  }

  Vec min_target_q(const Mat& states, const Mat& normalized_actions) const {
    const Mat x = concat_columns(states, normalized_actions);
    return target1.forward(x).col(0).cwiseMin(target2.forward(x).col(0));
  }
};

struct Temperature {
  double log_alpha = 0.0;
  double target_entropy = -1.0;
  ScalarAdam opt;

  double alpha() const { return std::exp(log_alpha); }

  /// Gradient of -log_alpha * mean(log_prob + target_entropy) with respect to log_alpha.
  double gradient(const Vec& log_prob) const { return -(log_prob.array() + target_entropy).mean(); }
};

struct UpdateStats {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double temperature_loss = 0.0;
  double alpha = 0.0;
};

class SacAgent {
 public:
  SacAgent(const EnvSpec& spec, SacConfig cfg, std::uint64_t seed) : spec_(spec), cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng init(derive_seed(seed, SeedStream::Init));
    policy = GaussianPolicy(spec_, cfg_, init);
    critics = TwinCritics(spec_, cfg_, init);
    actor_opt = Adam(policy.net, {cfg_.actor_lr});
    temperature.log_alpha = std::log(cfg_.initial_alpha);
    temperature.target_entropy = cfg_.target_entropy.value_or(-static_cast<double>(spec_.action_dim));
    temperature.opt = ScalarAdam({cfg_.alpha_lr});
  }

  GaussianPolicy policy;
  TwinCritics critics;
  Temperature temperature;
  Adam actor_opt;

  const EnvSpec& spec() const { return spec_; }
  const SacConfig& config() const { return cfg_; }
  double alpha() const { return temperature.alpha(); }

  /// min target-Q minus alpha log pi, at fresh policy samples drawn with `noise`.
  Vec soft_value_with_noise(const Mat& states, const Mat& noise) const {
    const auto s = policy.sample_with_noise(states, noise);
    return critics.min_target_q(states, s.squashed) - alpha() * s.log_prob;
  }

  Vec soft_value(const Mat& states, Rng& rng) const {
    return soft_value_with_noise(states, policy.draw_noise(states.rows(), rng));
  }

  /// y = r + gamma (1 - terminal) (min Q'(s', a') - alpha log pi(a'|s')), a' ~ pi(.|s').
  Vec critic_targets_with_noise(const Batch& batch, const Mat& noise) const {
    const Vec v = soft_value_with_noise(batch.next_states, noise);
    return batch.rewards.array() + cfg_.gamma * (1.0 - batch.terminals.array()) * v.array();
  }

  Vec critic_targets(const Batch& batch, Rng& rng) const {
    return critic_targets_with_noise(batch, policy.draw_noise(batch.size(), rng));
  }

  /// 0.5 * (mean (Q1 - y)^2 + mean (Q2 - y)^2) without touching parameters.
  double critic_loss(const Batch& batch, const Vec& targets) const {
    const Mat x = concat_columns(batch.states, policy.to_normalized(batch.actions));
    const Vec e1 = critics.q1.forward(x).col(0) - targets;
    const Vec e2 = critics.q2.forward(x).col(0) - targets;
    return 0.5 * (e1.squaredNorm() + e2.squaredNorm()) / static_cast<double>(batch.size());
  }

  /// One gradient step on both critics against `targets`, then soft-update the target copies.
  double update_critics(const Batch& batch, const Vec& targets) {
    if (batch.size() == 0) throw UsageError("update_critics: empty batch");
    const Mat x = concat_columns(batch.states, policy.to_normalized(batch.actions));
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    ForwardTrace t1, t2;
    const Vec e1 = critics.q1.forward(x, t1).col(0) - targets;
    const Vec e2 = critics.q2.forward(x, t2).col(0) - targets;
    const double loss = 0.5 * (e1.squaredNorm() + e2.squaredNorm()) * inv_b;
    if (!std::isfinite(loss)) throw NumericalError("critic loss is not finite");
    const auto g1 = critics.q1.backward(t1, Mat(e1 * inv_b));
    const auto g2 = critics.q2.backward(t2, Mat(e2 * inv_b));
    critics.opt1.step(critics.q1, g1);
    critics.opt2.step(critics.q2, g2);
    soft_update(critics.target1, critics.q1, cfg_.tau);
    soft_update(critics.target2, critics.q2, cfg_.tau);
    return loss;
  }

  double update_critics(const Batch& batch, Rng& rng) { return update_critics(batch, critic_targets(batch, rng)); }

  /// Actor loss mean(alpha log pi(a|s) - min Q(s, a)) and its gradient tape, for given noise.
  /// `log_prob_out` receives the pre-update log densities.
  double actor_loss_and_gradient(const Batch& batch, const Mat& noise, GradientTape& tape,
                                 Vec* log_prob_out = nullptr) const {
    const auto s = policy.sample_with_noise(batch.states, noise, /*keep_trace=*/true);
    const Mat x = concat_columns(batch.states, s.squashed);
    ForwardTrace t1, t2;
    const Vec q1 = critics.q1.forward(x, t1).col(0);
    const Vec q2 = critics.q2.forward(x, t2).col(0);
    const auto n = batch.size();
    const auto a = policy.action_dim();
    const double inv_b = 1.0 / static_cast<double>(n);
    const double alpha = temperature.alpha();

    // dL/dQ = -1/B, routed to whichever critic is smaller (first on ties)
    Mat up1 = Mat::Zero(n, 1), up2 = Mat::Zero(n, 1);
    double loss = 0.0;
    for (Eigen::Index b = 0; b < n; ++b) {
      const bool first = q1[b] <= q2[b];
      (first ? up1 : up2)(b, 0) = -inv_b;
      loss += alpha * s.log_prob[b] - (first ? q1[b] : q2[b]);
    }
    loss *= inv_b;
    if (!std::isfinite(loss)) throw NumericalError("actor loss is not finite");
    const Mat dx = critics.q1.input_gradient(t1, up1) + critics.q2.input_gradient(t2, up2);
    const Mat dq_dy = dx.rightCols(a);  // includes the -1/B factor

    Mat head_grad(n, 2 * a);
    for (Eigen::Index b = 0; b < n; ++b) {
      for (Eigen::Index i = 0; i < a; ++i) {
        const double u = s.pre_squash(b, i);
        const double th = std::tanh(u);
        const double sigma_eps = std::exp(s.log_std(b, i)) * noise(b, i);
        // d(loss)/du from the Q term, and d(log pi)/du from the squash correction
        const double dq_du = dq_dy(b, i) * (1.0 - th * th);
        const double dlogp_du = 2.0 * th;
        head_grad(b, i) = alpha * inv_b * dlogp_du + dq_du;
        double dls = alpha * inv_b * (-1.0 + dlogp_du * sigma_eps) + dq_du * sigma_eps;
        const double raw = s.raw_log_std(b, i);
        if (raw < policy.log_std_min() || raw > policy.log_std_max()) dls = 0.0;
        head_grad(b, a + i) = dls;
      }
    }
    policy.net.backward(s.trace, head_grad, tape);
    if (log_prob_out) *log_prob_out = s.log_prob;
    return loss;
  }

  double update_actor(const Batch& batch, const Mat& noise, Vec* log_prob_out = nullptr) {
    if (batch.size() == 0) throw UsageError("update_actor: empty batch");
    auto tape = policy.net.zero_tape();
    const double loss = actor_loss_and_gradient(batch, noise, tape, log_prob_out);
    actor_opt.step(policy.net, tape);
    return loss;
  }

  double update_actor(const Batch& batch, Rng& rng, Vec* log_prob_out = nullptr) {
    return update_actor(batch, policy.draw_noise(batch.size(), rng), log_prob_out);
  }

  /// Step on -log_alpha * mean(log_prob + target_entropy); returns that loss before the step.
  double update_temperature(const Vec& log_prob) {
    if (log_prob.size() == 0) throw UsageError("update_temperature: empty batch");
    const double loss = -temperature.log_alpha * (log_prob.array() + temperature.target_entropy).mean();
    temperature.opt.step(temperature.log_alpha, temperature.gradient(log_prob));
    return loss;
  }

  double update_temperature(const Batch& batch, Rng& rng) {
    return update_temperature(policy.sample(batch.states, rng).log_prob);
  }

  /// One update round in the order critics -> actor -> temperature, with the given critic targets.
  /// The temperature step reuses the actor's pre-update log densities.
  UpdateStats update_round(const Batch& batch, const Vec& targets, Rng& rng) {
    UpdateStats st;
    st.critic_loss = update_critics(batch, targets);
    Vec log_prob;
    st.actor_loss = update_actor(batch, rng, &log_prob);
    st.temperature_loss = update_temperature(log_prob);
    st.alpha = alpha();
    if (!policy.net.all_finite() || !critics.q1.all_finite() || !critics.q2.all_finite() ||
        !std::isfinite(temperature.log_alpha))
      throw NumericalError("non-finite parameters after update");
    return st;
  }

  Vec act_deterministic(const Vec& state) const { return policy.mean_action(state); }

  void save(BinaryWriter& w) const {
    w.tag("sac_agent");
    policy.save(w);
    actor_opt.save(w);
    for (const Mlp* m : {&critics.q1, &critics.q2, &critics.target1, &critics.target2}) m->save(w);
    critics.opt1.save(w);
    critics.opt2.save(w);
    w.f64(temperature.log_alpha);
    w.f64(temperature.target_entropy);
    temperature.opt.save(w);
  }

  void load(BinaryReader& r) {
    r.expect_tag("sac_agent");
    policy.load(r);
    actor_opt.load(r, policy.net);
    critics.q1 = Mlp::load(r);
    critics.q2 = Mlp::load(r);
    critics.target1 = Mlp::load(r);
    critics.target2 = Mlp::load(r);
    critics.opt1.load(r, critics.q1);
    critics.opt2.load(r, critics.q2);
    temperature.log_alpha = r.f64();
    temperature.target_entropy = r.f64();
    temperature.opt.load(r);
  }

 private:
  EnvSpec spec_;
  SacConfig cfg_;
};

}  // namespace bex
