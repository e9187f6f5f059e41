#pragma once

// Action selection from policy-sampled candidates.
//
//   vanilla  execute one policy sample.
//   bounded  draw N candidates, score each with ensemble uncertainty u_n,
//            min-max normalize u to [0, 1], divide by the temperature, softmax,
//            draw S indices from that distribution and execute the drawn
//            candidate closest (Euclidean, environment units) to the policy's
//            squashed mean. Ties go to the lowest index.
//   qu       draw N candidates and execute argmax_n min(Q1, Q2)(s, a_n) + u_n.
//
// Whatever the selector, the executed action is one of the candidates the
// current policy produced for this state.

#include "bex/sac.hpp"
#include "bex/worldmodel.hpp"

#include <optional>

namespace bex {

enum class SelectorKind { Vanilla, Bounded, Qu };

inline std::string to_string(SelectorKind k) {
  switch (k) {
    case SelectorKind::Vanilla: return "vanilla";
    case SelectorKind::Bounded: return "bounded";
    case SelectorKind::Qu: return "qu";
  }
  return "?";
}

struct SelectorConfig {
  SelectorKind kind = SelectorKind::Vanilla;
  int candidates = 100;        // N
  int reduction_samples = 10;  // S
  double temperature = 1.0;

  void validate() const {
    if (candidates < 1) throw ConfigError("candidates (N) must be >= 1");
    if (reduction_samples < 1) throw ConfigError("reduction samples (S) must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("selector temperature must be positive");
  }
};

struct CandidateSet {
  Vec state;
  Mat actions;      // N x A, environment units
  Mat normalized;   // N x A
  Vec log_prob;     // N
  Vec mean_action;  // squashed policy mean, environment units
  Vec uncertainty;  // u_n (empty until scored)
  Vec scores;       // normalized u divided by temperature
  Vec probs;        // p_n

  Eigen::Index size() const { return actions.rows(); }
  Vec action(std::size_t i) const { return actions.row(static_cast<Eigen::Index>(i)).transpose(); }

  bool contains(const Vec& a) const {
    for (Eigen::Index i = 0; i < actions.rows(); ++i)
      if (actions.row(i).transpose() == a) return true;
    return false;
  }
};

inline CandidateSet make_candidates(const GaussianPolicy& policy, const Vec& state, int n, Rng& rng) {
  auto s = policy_sample(policy, state, n, rng);
  CandidateSet c;
  c.state = state;
  c.actions = std::move(s.actions);
  c.normalized = std::move(s.normalized);
  c.log_prob = std::move(s.log_prob);
  c.mean_action = std::move(s.mean_action);
  return c;
}

/// Fills u_n for every candidate, preserving order.
inline void score_candidates(CandidateSet& c, const Ensemble& ensemble) {
  if (!ensemble.ready()) throw NotReadyError("score_candidates: ensemble warmup not done");
  c.uncertainty = ensemble.uncertainties(c.state, c.actions);
}

/// Min-max normalization to [0, 1] (a constant vector maps to zeros), divided by temperature.
inline Vec normalize_scores(const Vec& u, double temperature) {
  if (u.size() == 0) throw ConfigError("normalize_scores: empty score vector");
  if (!u.allFinite()) throw NumericalError("normalize_scores: non-finite uncertainty");
  const double lo = u.minCoeff();
  const double range = u.maxCoeff() - lo;
  if (!(range > 0.0)) return Vec::Zero(u.size());
  return ((u.array() - lo) / range / temperature).matrix();
}

/// exp(x_i) / sum_n exp(x_n), evaluated with the maximum subtracted.
inline Vec softmax(const Vec& x) {
  const Vec e = (x.array() - x.maxCoeff()).exp().matrix();
  return e / e.sum();
}

inline Vec gibbs_probs(const Vec& u, double temperature) { return softmax(normalize_scores(u, temperature)); }

/// Draws S indices from c.probs and returns the distinct drawn candidate nearest the policy mean.
inline std::size_t bounded_select(const CandidateSet& c, int samples, Rng& rng) {
  if (samples < 1) throw ConfigError("bounded_select: S must be >= 1");
  if (c.probs.size() != c.size()) throw UsageError("bounded_select: probabilities not filled");
  std::vector<std::size_t> drawn;
  for (int k = 0; k < samples; ++k) drawn.push_back(rng.categorical(c.probs));
  std::sort(drawn.begin(), drawn.end());
  drawn.erase(std::unique(drawn.begin(), drawn.end()), drawn.end());
  std::size_t best = drawn.front();
  double best_dist = (c.action(best) - c.mean_action).norm();
  for (std::size_t i : drawn) {
    const double d = (c.action(i) - c.mean_action).norm();
    if (d < best_dist) {
      best = i;
      best_dist = d;
    }
  }
  return best;
}

/// argmax of min(Q1, Q2) + u over the candidates; lowest index wins ties.
inline std::size_t qu_select(const Vec& q, const Vec& u) {
  if (q.size() != u.size() || q.size() == 0) throw UsageError("qu_select: scores not filled");
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < q.size(); ++i)
    if (q[i] + u[i] > q[static_cast<Eigen::Index>(best)] + u[static_cast<Eigen::Index>(best)]) best = static_cast<std::size_t>(i);
  return best;
}

inline std::size_t qu_select(const CandidateSet& c, const TwinCritics& critics) {
  if (c.uncertainty.size() != c.size()) throw UsageError("qu_select: uncertainties not filled");
  const Mat states = c.state.transpose().replicate(c.size(), 1);
  return qu_select(critics.min_q(states, c.normalized), c.uncertainty);
}

struct Selection {
  Vec action;
  std::size_t index = 0;
  bool fallback = false;  // a non-vanilla selector degraded to vanilla (ensemble not ready)
  CandidateSet candidates;
  double chosen_uncertainty = 0.0;
  double max_uncertainty = 0.0;
  double distance_to_mean = 0.0;
};

/// Full selection pipeline for one state. Deterministic given the rng state.
inline Selection act(const SelectorConfig& cfg, const GaussianPolicy& policy, const Ensemble* ensemble,
                     const TwinCritics* critics, const Vec& state, Rng& rng) {
  Selection sel;
  const bool ensemble_ready = ensemble != nullptr && ensemble->ready();
  if (cfg.kind == SelectorKind::Vanilla || !ensemble_ready) {
    sel.fallback = cfg.kind != SelectorKind::Vanilla;
    sel.candidates = make_candidates(policy, state, 1, rng);
    sel.index = 0;
  } else {
    sel.candidates = make_candidates(policy, state, cfg.candidates, rng);
    score_candidates(sel.candidates, *ensemble);
    if (cfg.kind == SelectorKind::Bounded) {
      sel.candidates.scores = normalize_scores(sel.candidates.uncertainty, cfg.temperature);
      sel.candidates.probs = softmax(sel.candidates.scores);
      sel.index = bounded_select(sel.candidates, cfg.reduction_samples, rng);
    } else {
      if (critics == nullptr) throw ConfigError("qu selector needs critics");
      sel.index = qu_select(sel.candidates, *critics);
    }
    sel.chosen_uncertainty = sel.candidates.uncertainty[static_cast<Eigen::Index>(sel.index)];
    sel.max_uncertainty = sel.candidates.uncertainty.maxCoeff();
  }
  sel.action = sel.candidates.action(sel.index);
  sel.distance_to_mean = (sel.action - sel.candidates.mean_action).norm();
  return sel;
}

}  // namespace bex
