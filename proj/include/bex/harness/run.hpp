#pragma once

// Train/evaluate loop.
//
// Run directory layout:
//   config.resolved   every setting used, defaults included
//   metrics.csv       one row per evaluation; a pure function of (config, seed)
//   timing.csv        wall clock and bookkeeping counters per evaluation
//   selection.csv     per-step selector diagnostics (verbose only)
//   checkpoint.bin    agent (+ ensemble) at the end of the run
//   abort_checkpoint.bin, abort.txt   written instead when a numerical error aborts the run
//
// Seed fan-out: the run seed derives one stream each for episode resets,
// action selection, update noise, replay sampling, the ensemble, and
// evaluation. Episode k resets with derive_seed(env_stream, k).

#include "bex/envs.hpp"
#include "bex/explore.hpp"
#include "bex/harness/config.hpp"
#include "bex/mve.hpp"
#include "bex/replay.hpp"
#include "bex/sac.hpp"
#include "bex/worldmodel.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace bex {

struct MetricRow {
  std::uint64_t step = 0;
  double mean_return = 0.0;
  double return_variance = 0.0;
  int horizon = 0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha = 0.0;
  double mean_chosen_uncertainty = 0.0;
  double mean_distance_to_mean = 0.0;
  std::uint64_t update_rounds = 0;
  // timing.csv only
  double wall_clock_s = 0.0;
  double model_loss = 0.0;
  std::uint64_t model_train_rounds = 0;
  std::uint64_t warmup_skipped_rounds = 0;
  std::uint64_t selector_fallbacks = 0;
};

inline constexpr const char* kMetricsHeader =
    "step,mean_return,return_variance,horizon,critic_loss,actor_loss,alpha,mean_chosen_u,mean_distance_to_mean,"
    "update_rounds";
inline constexpr const char* kTimingHeader =
    "step,wall_clock_s,model_loss,model_train_rounds,warmup_skipped_rounds,selector_fallbacks";

inline std::string metrics_line(const MetricRow& r) {
  using detail::format_double;
  return std::to_string(r.step) + "," + format_double(r.mean_return) + "," + format_double(r.return_variance) + "," +
         std::to_string(r.horizon) + "," + format_double(r.critic_loss) + "," + format_double(r.actor_loss) + "," +
         format_double(r.alpha) + "," + format_double(r.mean_chosen_uncertainty) + "," +
         format_double(r.mean_distance_to_mean) + "," + std::to_string(r.update_rounds);
}

inline std::string timing_line(const MetricRow& r) {
  using detail::format_double;
  return std::to_string(r.step) + "," + format_double(r.wall_clock_s) + "," + format_double(r.model_loss) + "," +
         std::to_string(r.model_train_rounds) + "," + std::to_string(r.warmup_skipped_rounds) + "," +
         std::to_string(r.selector_fallbacks);
}

/// Everything observable about one environment step, for hooks.
struct StepRecord {
  std::uint64_t step = 0;  // 1-based
  const Selection& selection;
  const StepResult& result;
  const Transition& stored;  // as pushed into the replay buffer
};

struct RunHooks {
  std::function<void(const StepRecord&)> on_step;
  std::ostream* log = &std::cerr;
};

struct RunSummary {
  std::vector<MetricRow> metrics;
  std::uint64_t env_steps = 0;
  std::uint64_t update_rounds = 0;
  std::uint64_t warmup_skipped_rounds = 0;
  std::uint64_t model_train_rounds = 0;
  std::uint64_t selector_fallbacks = 0;
  std::uint64_t episodes = 0;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

/// The components of a run, exposed so tests can drive a run step by step.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::uint64_t seed)
      : cfg_(cfg),
        seed_(seed),
        env_(make_env(cfg.env)),
        eval_env_(make_env(cfg.env)),
        agent_(env_->spec(), cfg.sac, seed),
        buffer_(cfg.buffer_capacity, env_->spec().state_dim, env_->spec().action_dim),
        selector_(cfg.selector_config()),
        selector_rng_(derive_seed(seed, SeedStream::Selector)),
        update_rng_(derive_seed(seed, SeedStream::Policy)),
        buffer_rng_(derive_seed(seed, SeedStream::Buffer)),
        env_stream_(derive_seed(seed, SeedStream::Env)),
        eval_seed_(derive_seed(seed, SeedStream::Evaluation)) {
    cfg_.validate();
    if (uses_ensemble(cfg_.algorithm)) ensemble_.emplace(env_->spec(), cfg_.ensemble, derive_seed(seed, SeedStream::Ensemble));
    state_ = env_->reset(derive_seed(env_stream_, episode_));
  }

  SacAgent& agent() { return agent_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const std::optional<Ensemble>& ensemble() const { return ensemble_; }
  const RunSummary& summary() const { return summary_; }

  /// One environment step followed by its update rounds.
  void step(const RunHooks& hooks) {
    const auto t = ++summary_.env_steps;
    const Selection sel = act(selector_, agent_.policy, ensemble_ ? &*ensemble_ : nullptr, &agent_.critics, state_,
                              selector_rng_);
    if (sel.fallback) {
      ++summary_.selector_fallbacks;
      if (!fallback_noticed_ && hooks.log)
        *hooks.log << "notice: ensemble warmup not done; " << to_string(selector_.kind)
                   << " selector degrades to vanilla sampling\n";
      fallback_noticed_ = true;
    } else if (selector_.kind != SelectorKind::Vanilla) {
      chosen_u_sum_ += sel.chosen_uncertainty;
      ++chosen_u_count_;
    }
    distance_sum_ += sel.distance_to_mean;
    ++distance_count_;
    if (selection_log_)
      *selection_log_ << t << "," << sel.index << "," << detail::format_double(sel.chosen_uncertainty) << ","
                      << detail::format_double(sel.max_uncertainty) << ","
                      << detail::format_double(sel.distance_to_mean) << "," << (sel.fallback ? 1 : 0) << "\n";

    const StepResult r = env_->step(sel.action);
    Transition tr{state_, sel.action, r.reward, r.next_state, r.terminal};
    buffer_.push(tr);
    if (hooks.on_step) hooks.on_step(StepRecord{t, sel, r, buffer_.at(buffer_.size() - 1)});

    const auto g = static_cast<std::uint64_t>(cfg_.updates_per_step);
    if (buffer_.size() >= std::max<std::uint64_t>(cfg_.learning_starts, cfg_.batch_size)) {
      if (ensemble_) {
        for (int k = 0; k < cfg_.model_updates_per_step; ++k) {
          const auto losses = ensemble_->train(buffer_, cfg_.model_batch_size);
          if (losses.empty()) continue;
          ++summary_.model_train_rounds;
          double sum = 0.0;
          for (double l : losses) sum += l;
          model_loss_sum_ += sum / static_cast<double>(losses.size());
          ++model_loss_count_;
        }
      }
      for (std::uint64_t k = 0; k < g; ++k) update_round(hooks);
    } else {
      summary_.warmup_skipped_rounds += g;
    }

    if (r.terminal || r.truncated) {
      ++episode_;
      ++summary_.episodes;
      state_ = env_->reset(derive_seed(env_stream_, episode_));
    } else {
      state_ = r.next_state;
    }
  }

  MetricRow evaluate(double wall_clock_s) {
    const GaussianPolicy snapshot = agent_.policy;
    const auto ev = evaluate_policy(
        *eval_env_, [&snapshot](const Vec& s) { return snapshot.mean_action(s); }, cfg_.eval_episodes, eval_seed_);
    MetricRow row;
    row.step = summary_.env_steps;
    row.mean_return = ev.mean_return;
    row.return_variance = ev.return_variance;
    row.horizon = cfg_.effective_horizon();
    const double n = std::max<double>(1.0, static_cast<double>(loss_count_));
    row.critic_loss = critic_loss_sum_ / n;
    row.actor_loss = actor_loss_sum_ / n;
    row.alpha = agent_.alpha();
    row.mean_chosen_uncertainty = chosen_u_count_ ? chosen_u_sum_ / static_cast<double>(chosen_u_count_) : 0.0;
    row.mean_distance_to_mean = distance_count_ ? distance_sum_ / static_cast<double>(distance_count_) : 0.0;
    row.update_rounds = summary_.update_rounds;
    row.wall_clock_s = wall_clock_s;
    row.model_loss = model_loss_count_ ? model_loss_sum_ / static_cast<double>(model_loss_count_) : 0.0;
    row.model_train_rounds = summary_.model_train_rounds;
    row.warmup_skipped_rounds = summary_.warmup_skipped_rounds;
    row.selector_fallbacks = summary_.selector_fallbacks;
    critic_loss_sum_ = actor_loss_sum_ = model_loss_sum_ = chosen_u_sum_ = distance_sum_ = 0.0;
    loss_count_ = model_loss_count_ = chosen_u_count_ = distance_count_ = 0;
    summary_.metrics.push_back(row);
    return row;
  }

  void set_selection_log(std::ostream* out) { selection_log_ = out; }

  void save_checkpoint(const std::filesystem::path& p) const {
    std::ofstream out(p, std::ios::binary);
    BinaryWriter w(out);
    w.header("run");
    w.str(cfg_.env);
    w.str(to_string(cfg_.algorithm));
    w.u64(seed_);
    w.u64(summary_.env_steps);
    agent_.save(w);
    w.u32(ensemble_ ? 1 : 0);
    if (ensemble_) ensemble_->save(w);
    w.check();
  }

  void save_buffer(const std::filesystem::path& p) const {
    std::ofstream out(p, std::ios::binary);
    buffer_.save(out);
  }

 private:
  void update_round(const RunHooks& hooks) {
    const Batch batch = buffer_.sample_batch(cfg_.batch_size, buffer_rng_);
    Vec targets;
    if (uses_mve(cfg_.algorithm) && ensemble_ && ensemble_->ready()) {
      targets = mve_targets(batch, agent_, *ensemble_, cfg_.mve_config(), update_rng_);
    } else {
      if (uses_mve(cfg_.algorithm) && !mve_fallback_noticed_ && hooks.log) {
        *hooks.log << "notice: ensemble warmup not done; MVE uses model-free critic targets\n";
        mve_fallback_noticed_ = true;
      }
      targets = agent_.critic_targets(batch, update_rng_);
    }
    const auto st = agent_.update_round(batch, targets, update_rng_);
    critic_loss_sum_ += st.critic_loss;
    actor_loss_sum_ += st.actor_loss;
    ++loss_count_;
    ++summary_.update_rounds;
  }

  RunConfig cfg_;
  std::uint64_t seed_;
  std::unique_ptr<Env> env_;
  std::unique_ptr<Env> eval_env_;
  SacAgent agent_;
  std::optional<Ensemble> ensemble_;
  ReplayBuffer buffer_;
  SelectorConfig selector_;
  Rng selector_rng_;
  Rng update_rng_;
  Rng buffer_rng_;
  std::uint64_t env_stream_;
  std::uint64_t eval_seed_;
  std::uint64_t episode_ = 0;
  Vec state_;
  RunSummary summary_;
  std::ostream* selection_log_ = nullptr;
  bool fallback_noticed_ = false;
  bool mve_fallback_noticed_ = false;
  double critic_loss_sum_ = 0.0, actor_loss_sum_ = 0.0, model_loss_sum_ = 0.0;
  double chosen_u_sum_ = 0.0, distance_sum_ = 0.0;
  std::uint64_t loss_count_ = 0, model_loss_count_ = 0, chosen_u_count_ = 0, distance_count_ = 0;
};

/// Trains one seed. When `out_dir` is non-empty the run directory is written there.
/// A NumericalError is rethrown after an abort checkpoint has been written.
inline RunSummary run(const RunConfig& cfg, std::uint64_t seed, const std::filesystem::path& out_dir = {},
                      const RunHooks& hooks = {}) {
  cfg.validate();
  RunConfig resolved = cfg;
  resolved.seeds = {seed};
  const bool write = !out_dir.empty();
  std::ofstream metrics, timing, selection;
  if (write) {
    std::filesystem::create_directories(out_dir);
    write_text(out_dir / "config.resolved", resolved_config(resolved));
    metrics.open(out_dir / "metrics.csv");
    timing.open(out_dir / "timing.csv");
    metrics << kMetricsHeader << "\n";
    timing << kTimingHeader << "\n";
    if (!metrics || !timing) throw std::runtime_error("cannot create metrics files in " + out_dir.string());
  }

  Trainer trainer(resolved, seed);
  if (write && cfg.verbose) {
    selection.open(out_dir / "selection.csv");
    selection << "step,chosen_index,chosen_u,max_u,distance_to_mean,fallback\n";
    trainer.set_selection_log(&selection);
  }
  const auto start = std::chrono::steady_clock::now();
  try {
    for (std::uint64_t t = 1; t <= cfg.total_steps; ++t) {
      trainer.step(hooks);
      if (t % cfg.eval_interval == 0) {
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const auto row = trainer.evaluate(wall);
        if (write) {
          metrics << metrics_line(row) << "\n" << std::flush;
          timing << timing_line(row) << "\n" << std::flush;
        }
      }
    }
  } catch (const NumericalError& e) {
    if (write) {
      trainer.save_checkpoint(out_dir / "abort_checkpoint.bin");
      write_text(out_dir / "abort.txt", std::string("numerical abort at step ") +
                                            std::to_string(trainer.summary().env_steps) + ": " + e.what() + "\n");
    }
    throw;
  }
  if (write && cfg.save_checkpoint) trainer.save_checkpoint(out_dir / "checkpoint.bin");
  if (write && cfg.save_buffer) trainer.save_buffer(out_dir / "replay.bin");
  return trainer.summary();
}

}  // namespace bex
