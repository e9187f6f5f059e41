#pragma once

// Fast invariant checks runnable from the CLI (`bex selftest`). Each check
// prints one PASS/FAIL line; the suite passes when every check passes.

#include "bex/explore.hpp"
#include "bex/harness/aggregate.hpp"
#include "bex/harness/run.hpp"
#include "bex/mve.hpp"

#include <functional>

namespace bex {

namespace selftest_detail {

// Largest relative error between analytic and central-difference parameter gradients
// of L = sum(w . f(x)) over `draws` random networks.
inline double mlp_gradient_error(const std::vector<int>& sizes, Activation act, int draws, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int d = 0; d < draws; ++d) {
    Mlp net(sizes, act, rng);
    Mat x(3, sizes.front());
    Mat w(3, sizes.back());
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
    ForwardTrace trace;
    net.forward(x, trace);
    const auto analytic = net.backward(trace, w).flat();
    auto params = net.parameters();
    const double eps = 1e-5;
    for (std::size_t k = 0; k < params.size(); ++k) {
      const double keep = params[k];
      params[k] = keep + eps;
      net.set_parameters(params);
      const double up = net.forward(x).cwiseProduct(w).sum();
      params[k] = keep - eps;
      net.set_parameters(params);
      const double down = net.forward(x).cwiseProduct(w).sum();
      params[k] = keep;
      const double fd = (up - down) / (2 * eps);
      const double denom = std::max({std::abs(fd), std::abs(analytic[k]), 1e-6});
      worst = std::max(worst, std::abs(fd - analytic[k]) / denom);
    }
    net.set_parameters(params);
  }
  return worst;
}

}  // namespace selftest_detail

struct SelftestResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

inline std::vector<SelftestResult> run_selftest(std::ostream& out) {
  std::vector<SelftestResult> results;
  auto check = [&](const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
    SelftestResult r{name, false, {}};
    try {
      std::tie(r.passed, r.detail) = body();
    } catch (const std::exception& e) {
      r.detail = std::string("exception: ") + e.what();
    }
    out << (r.passed ? "PASS " : "FAIL ") << name << (r.detail.empty() ? "" : "  (" + r.detail + ")") << "\n";
    results.push_back(r);
  };

  check("mlp gradients match central differences", [] {
    const double e = std::max(selftest_detail::mlp_gradient_error({3, 8, 8, 2}, Activation::Tanh, 5, 1),
                              selftest_detail::mlp_gradient_error({3, 8, 8, 2}, Activation::Relu, 5, 2));
    return std::pair{e < 1e-4, "max relative error " + detail::format_double(e)};
  });

  check("ensemble uncertainty is the summed population variance", [] {
    const EnvSpec spec = make_env("point_mass")->spec();
    EnsembleConfig cfg;
    cfg.members = 3;
    cfg.hidden = {8};
    Ensemble ens(spec, cfg, 7);
    ReplayBuffer buf(64, spec.state_dim, spec.action_dim);
    Rng rng(3);
    for (int i = 0; i < 16; ++i) {
      Vec s(spec.state_dim), a(spec.action_dim), s2(spec.state_dim);
      for (auto& v : s) v = rng.normal();
      for (auto& v : a) v = rng.uniform(-1, 1);
      for (auto& v : s2) v = rng.normal();
      buf.push({s, a, rng.normal(), s2, false});
    }
    ens.set_stats(buf.stats());
    ens.train_on_batch(buf.sample_batch(8, rng));
    const auto p = ens.predict_all(buf.at(0).state, buf.at(0).action);
    double brute = 0.0;
    for (Eigen::Index d = 0; d < p.next_states.cols(); ++d) {
      const double mean = p.next_states.col(d).mean();
      for (Eigen::Index m = 0; m < p.next_states.rows(); ++m)
        brute += (p.next_states(m, d) - mean) * (p.next_states(m, d) - mean) / static_cast<double>(p.next_states.rows());
    }
    return std::pair{std::abs(brute - p.uncertainty) <= 1e-10, std::string{}};
  });

  check("gibbs probabilities are normalized and rank preserving", [] {
    Rng rng(11);
    for (int t = 0; t < 100; ++t) {
      Vec u(7);
      for (auto& v : u) v = rng.normal();
      const Vec p = gibbs_probs(u, 0.5 + rng.uniform());
      if (std::abs(p.sum() - 1.0) > 1e-9) return std::pair{false, std::string("sum")};
      for (Eigen::Index i = 0; i < u.size(); ++i)
        for (Eigen::Index j = 0; j < u.size(); ++j)
          if (u[i] > u[j] && !(p[i] > p[j])) return std::pair{false, std::string("rank")};
    }
    const Vec half = softmax(Eigen::Vector2d(0.0, std::log(2.0)));
    return std::pair{std::abs(half[0] - 1.0 / 3) < 1e-12 && std::abs(half[1] - 2.0 / 3) < 1e-12, std::string{}};
  });

  check("bounded selection returns a candidate", [] {
    const EnvSpec spec = make_env("pendulum")->spec();
    Rng rng(9);
    GaussianPolicy policy(spec, SacConfig{}, rng);
    auto c = make_candidates(policy, Vec::Zero(spec.state_dim), 20, rng);
    Vec u(20);
    for (auto& v : u) v = rng.uniform();
    c.uncertainty = u;
    c.probs = gibbs_probs(u, 1.0);
    for (int t = 0; t < 50; ++t)
      if (!c.contains(c.action(bounded_select(c, 3, rng)))) return std::pair{false, std::string{}};
    return std::pair{true, std::string{}};
  });

  check("smoothing window", [] {
    const auto s = smooth({0.0, 10.0}, 2);
    return std::pair{s == std::vector<double>{0.0, 5.0}, std::string{}};
  });

  check("zero-horizon value expansion equals the model-free target", [] {
    const EnvSpec spec = make_env("pendulum")->spec();
    SacAgent agent(spec, SacConfig{}, 1);
    EnsembleConfig ecfg;
    ecfg.hidden = {8};
    Ensemble ens(spec, ecfg, 2);
    std::vector<Transition> ts;
    Rng rng(4);
    auto draw = [&rng](int n, double scale) {
      Vec v(n);
      for (auto& x : v) x = scale * rng.uniform(-1, 1);
      return v;
    };
    for (int i = 0; i < 8; ++i) ts.push_back({draw(3, 1.0), draw(1, 2.0), rng.normal(), draw(3, 1.0), i % 3 == 0});
    const Batch b = Batch::from(ts);
    Rng r1(5), r2(5);
    const Vec a = agent.critic_targets(b, r1);
    const Vec m = mve_targets(b, agent, ens, MveConfig{0, agent.config().gamma}, r2);
    return std::pair{a == m, std::string{}};
  });

  check("training runs are deterministic", [] {
    RunConfig cfg;
    cfg.env = "point_mass";
    cfg.algorithm = Algorithm::SacBe;
    cfg.total_steps = 60;
    cfg.eval_interval = 30;
    cfg.eval_episodes = 1;
    cfg.learning_starts = 20;
    cfg.batch_size = 16;
    cfg.updates_per_step = 2;
    cfg.model_batch_size = 16;
    cfg.ensemble.warmup_transitions = 30;
    cfg.sac.actor_hidden = cfg.sac.critic_hidden = cfg.ensemble.hidden = {16};
    cfg.selector.candidates = 10;
    const auto a = run(cfg, 3);
    const auto b = run(cfg, 3);
    bool same = a.metrics.size() == b.metrics.size();
    for (std::size_t i = 0; same && i < a.metrics.size(); ++i)
      same = metrics_line(a.metrics[i]) == metrics_line(b.metrics[i]);
    return std::pair{same, std::string{}};
  });

  return results;
}

}  // namespace bex
