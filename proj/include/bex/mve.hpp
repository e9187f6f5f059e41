#pragma once

// Model-based value expansion targets.
//
//   y = r + sum_{k=1..H} g^k r_k + g^(H+1) (1 - terminal) V(s_H)
//
// where the imagined rewards r_k and states come from rolling the current
// policy through a learned model starting at the real next state s', and
// V(s) = min Q'(s, a) - alpha log pi(a|s) with a fresh policy sample. Only the
// bootstrap tail carries the entropy term. Terminal transitions are never
// rolled out, and the model is assumed not to terminate within H steps.
//
// With H = 0 the computation (including the random draws it consumes) is the
// model-free soft target.

#include "bex/sac.hpp"
#include "bex/worldmodel.hpp"

namespace bex {

struct MveConfig {
  int horizon = 2;
  double gamma = 0.99;

  void validate() const {
    if (horizon < 0) throw ConfigError("MVE horizon must be >= 0");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("MVE gamma must lie in [0, 1]");
  }
};

/// Predicts with one uniformly chosen ensemble member per row.
struct RandomMemberModel {
  const Ensemble& ensemble;

  std::pair<Mat, Vec> predict(const Mat& states, const Mat& env_actions, Rng& rng) const {
    const auto n = states.rows();
    std::vector<int> chosen(static_cast<std::size_t>(n));
    for (auto& m : chosen) m = ensemble.pick_member(rng);
    Mat next(n, states.cols());
    Vec rewards(n);
    for (int m = 0; m < ensemble.size(); ++m) {
      std::vector<Eigen::Index> rows;
      for (Eigen::Index i = 0; i < n; ++i)
        if (chosen[static_cast<std::size_t>(i)] == m) rows.push_back(i);
      if (rows.empty()) continue;
      Mat s(static_cast<Eigen::Index>(rows.size()), states.cols());
      Mat a(static_cast<Eigen::Index>(rows.size()), env_actions.cols());
      for (std::size_t k = 0; k < rows.size(); ++k) {
        s.row(static_cast<Eigen::Index>(k)) = states.row(rows[k]);
        a.row(static_cast<Eigen::Index>(k)) = env_actions.row(rows[k]);
      }
      auto [ns, nr] = ensemble.predict_member(m, s, a);
      for (std::size_t k = 0; k < rows.size(); ++k) {
        next.row(rows[k]) = ns.row(static_cast<Eigen::Index>(k));
        rewards[rows[k]] = nr[static_cast<Eigen::Index>(k)];
      }
    }
    return {std::move(next), std::move(rewards)};
  }
};

/// Value-expansion targets for a batch.
///   Model:     predict(states, env_actions, rng) -> (next states, rewards)
///   Bootstrap: (states, rng) -> soft state values
template <typename Model, typename Bootstrap>
Vec mve_targets(const Batch& batch, const GaussianPolicy& policy, const Model& model, Bootstrap&& soft_value,
                const MveConfig& cfg, Rng& rng) {
  cfg.validate();
  Vec ret = batch.rewards;
  Mat states = batch.next_states;

  std::vector<Eigen::Index> live;
  for (Eigen::Index i = 0; i < batch.size(); ++i)
    if (batch.terminals[i] == 0.0) live.push_back(i);

  double discount = 1.0;
  if (cfg.horizon > 0 && !live.empty()) {
    const auto n = static_cast<Eigen::Index>(live.size());
    Mat s(n, states.cols());
    for (Eigen::Index k = 0; k < n; ++k) s.row(k) = states.row(live[static_cast<std::size_t>(k)]);
    for (int step = 1; step <= cfg.horizon; ++step) {
      discount *= cfg.gamma;
      const auto sample = policy.sample(s, rng);
      auto [next, reward] = model.predict(s, sample.actions, rng);
      for (Eigen::Index k = 0; k < n; ++k) ret[live[static_cast<std::size_t>(k)]] += discount * reward[k];
      s = std::move(next);
    }
    for (Eigen::Index k = 0; k < n; ++k) states.row(live[static_cast<std::size_t>(k)]) = s.row(k);
  } else {
    for (int step = 1; step <= cfg.horizon; ++step) discount *= cfg.gamma;
  }
  const double tail = discount * cfg.gamma;
  const Vec v = soft_value(states, rng);
  return ret.array() + tail * (1.0 - batch.terminals.array()) * v.array();
}

/// Convenience overload wiring the agent's soft value and a random-member ensemble model.
/// Before the ensemble is ready this is the model-free target.
inline Vec mve_targets(const Batch& batch, const SacAgent& agent, const Ensemble& ensemble, const MveConfig& cfg,
                       Rng& rng) {
  if (!ensemble.ready()) return agent.critic_targets(batch, rng);
  return mve_targets(
      batch, agent.policy, RandomMemberModel{ensemble},
      [&agent](const Mat& s, Rng& r) { return agent.soft_value(s, r); }, cfg, rng);
}

/// Critic update against value-expansion targets; identical to the model-free update otherwise.
inline double update_critics_mve(SacAgent& agent, const Batch& batch, const Ensemble& ensemble, const MveConfig& cfg,
                                 Rng& rng) {
  return agent.update_critics(batch, mve_targets(batch, agent, ensemble, cfg, rng));
}

}  // namespace bex
