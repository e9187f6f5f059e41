#include "bex/harness/aggregate.hpp"
#include "bex/harness/run.hpp"
#include "bex/harness/selftest.hpp"

#include <gtest/gtest.h>

#include <regex>
#include <sstream>

using namespace bex;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bex_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A run small enough for a unit test: tiny nets, short warmup, one eval episode.
RunConfig tiny(const std::string& env, Algorithm algo, std::uint64_t steps) {
  RunConfig cfg;
  cfg.env = env;
  cfg.algorithm = algo;
  cfg.total_steps = steps;
  cfg.updates_per_step = 2;
  cfg.eval_interval = 50;
  cfg.eval_episodes = 1;
  cfg.learning_starts = 40;
  cfg.batch_size = 16;
  cfg.model_batch_size = 16;
  cfg.buffer_capacity = 1000;
  cfg.sac.actor_hidden = {8};
  cfg.sac.critic_hidden = {8};
  cfg.ensemble.hidden = {8};
  cfg.ensemble.warmup_transitions = 60;
  cfg.selector.candidates = 10;
  cfg.selector.reduction_samples = 3;
  return cfg;
}

RunData constant_run(const std::string& algo, double value, int rows) {
  RunData r{"pendulum", algo, {}, {}};
  for (int i = 1; i <= rows; ++i) {
    r.steps.push_back(1000.0 * i);
    r.returns.push_back(value);
  }
  return r;
}

}  // namespace

TEST(Smooth, WindowOneIsIdentity) {
  const std::vector<double> s{3, -1, 4, 1, -5};
  EXPECT_EQ(smooth(s, 1), s);
}

TEST(Smooth, ConstantSeriesIsUnchanged) {
  const std::vector<double> s(20, 2.5);
  EXPECT_EQ(smooth(s, 10), s);
}

TEST(Smooth, TwoPointHandCase) {
  EXPECT_EQ(smooth({0, 10}, 2), (std::vector<double>{0, 5}));
}

TEST(Smooth, TrailingAverageWithPrefix) {
  const auto out = smooth({1, 2, 3, 4, 5}, 3);
  EXPECT_DOUBLE_EQ(out[0], 1.0);
  EXPECT_DOUBLE_EQ(out[1], 1.5);
  EXPECT_DOUBLE_EQ(out[2], 2.0);
  EXPECT_DOUBLE_EQ(out[3], 3.0);
  EXPECT_DOUBLE_EQ(out[4], 4.0);
  EXPECT_THROW(smooth({1.0}, 0), ConfigError);
}

TEST(Aggregate, TwoConstantRunsGiveMeanTwoVarianceOne) {
  const auto curves = aggregate({constant_run("sac", 1.0, 5), constant_run("sac", 3.0, 5)});
  ASSERT_EQ(curves.size(), 1u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_DOUBLE_EQ(curves[0].mean[i], 2.0);
    EXPECT_DOUBLE_EQ(curves[0].variance[i], 1.0);
  }
  EXPECT_EQ(curves[0].runs, 2u);
  EXPECT_DOUBLE_EQ(curves[0].final_mean, 2.0);
  EXPECT_DOUBLE_EQ(curves[0].final_std, 1.0);
}

TEST(Aggregate, SingleRunHasZeroVariance) {
  RunData r = constant_run("sac+be", 0.0, 8);
  for (std::size_t i = 0; i < r.returns.size(); ++i) r.returns[i] = std::sin(static_cast<double>(i));
  const auto curves = aggregate({r});
  for (double v : curves[0].variance) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(curves[0].final_std, 0.0);
}

TEST(Aggregate, FinalScoreUsesTheLastTenRows) {
  std::vector<double> returns;
  for (int i = 1; i <= 25; ++i) returns.push_back(i);
  EXPECT_DOUBLE_EQ(final_score(returns), (16 + 25) / 2.0);
  EXPECT_DOUBLE_EQ(final_score({4.0, 6.0}), 5.0);
}

TEST(Aggregate, GroupsByEnvironmentAndAlgorithm) {
  RunData other = constant_run("sac", 5.0, 5);
  other.env = "point_mass";
  const auto curves = aggregate({constant_run("sac", 1.0, 5), constant_run("sac+be", 2.0, 5), other});
  EXPECT_EQ(curves.size(), 3u);
}

TEST(Aggregate, MismatchedStepGridsAreAnError) {
  RunData a = constant_run("sac", 1.0, 5), b = constant_run("sac", 1.0, 4);
  EXPECT_THROW(aggregate({a, b}), ConfigError);
  b = constant_run("sac", 1.0, 5);
  b.steps[2] += 1;
  EXPECT_THROW(aggregate({a, b}), ConfigError);
}

TEST(Aggregate, CsvSchemaIsExact) {
  const fs::path dir = scratch("schema");
  write_aggregate(dir, aggregate({constant_run("sac", 1.0, 3), constant_run("sac", 3.0, 3)}));
  const auto t = read_csv(dir / "curves.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"step", "mean", "variance", "algorithm", "env"}));
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.rows[0][3], "sac");
  EXPECT_EQ(t.rows[0][4], "pendulum");
  EXPECT_TRUE(fs::exists(dir / "table.md"));
  EXPECT_NE(slurp(dir / "table.md").find("| sac |"), std::string::npos);
  const auto back = read_curves(dir / "curves.csv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].mean, (std::vector<double>{2, 2, 2}));
}

TEST(Plot, PlottedValuesEqualTheCsv) {
  const fs::path dir = scratch("plot");
  RunData a = constant_run("sac", 0.0, 6), b = constant_run("sac+be", 0.0, 6);
  for (int i = 0; i < 6; ++i) {
    a.returns[static_cast<std::size_t>(i)] = -100.0 + 7.3 * i;
    b.returns[static_cast<std::size_t>(i)] = -90.0 + 1.0 / 3.0 * i;
  }
  std::ostringstream log;
  const auto written = plot(aggregate({a, b}), dir, log);
  ASSERT_EQ(written.size(), 2u);
  const auto csv = read_csv(dir / "pendulum.csv");
  const std::string svg = slurp(dir / "pendulum.svg");
  const std::regex point(R"re(data-algorithm="([^"]+)" data-step="([^"]+)" data-mean="([^"]+)" data-variance="([^"]+)")re");
  std::vector<std::vector<std::string>> plotted;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), point); it != std::sregex_iterator(); ++it)
    plotted.push_back({(*it)[2], (*it)[3], (*it)[4], (*it)[1]});
  ASSERT_EQ(plotted.size(), csv.rows.size());
  for (std::size_t i = 0; i < plotted.size(); ++i) {
    EXPECT_EQ(std::stod(plotted[i][0]), std::stod(csv.rows[i][0]));
    EXPECT_EQ(std::stod(plotted[i][1]), std::stod(csv.rows[i][1]));
    EXPECT_EQ(std::stod(plotted[i][2]), std::stod(csv.rows[i][2]));
    EXPECT_EQ(plotted[i][3], csv.rows[i][3]);
  }
}

TEST(Plot, EmptyAggregateIsANoOpWithNotice) {
  const fs::path dir = scratch("empty_plot");
  std::ostringstream log;
  EXPECT_TRUE(plot({}, dir, log).empty());
  EXPECT_NE(log.str().find("nothing to plot"), std::string::npos);
  EXPECT_TRUE(fs::is_empty(dir));
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
  EXPECT_THROW(parse_config_string("not_a_key = 3\n"), ConfigError);
  EXPECT_THROW(parse_config_string("total_steps = many\n"), ConfigError);
  EXPECT_THROW(parse_config_string("just text\n"), ConfigError);
  EXPECT_THROW(parse_config_string("algo = dqn\n"), ConfigError);
  EXPECT_THROW(parse_config_string("env = hopper\n").validate(), ConfigError);
  EXPECT_THROW(parse_config_string("gamma = 1.5\n").validate(), ConfigError);
}

TEST(Config, ResolvedEchoRoundTrips) {
  RunConfig cfg = parse_config_string("# comment\nenv = point_mass\nalgo = sac+mve+be\ncandidates = 37\nreduction_samples = 4\ngamma = 0.95\n");
  EXPECT_EQ(cfg.env, "point_mass");
  EXPECT_EQ(cfg.algorithm, Algorithm::SacMveBe);
  EXPECT_EQ(cfg.selector.candidates, 37);
  const std::string echo = resolved_config(cfg);
  const RunConfig back = parse_config_string(echo);
  EXPECT_EQ(resolved_config(back), echo);
  for (const auto& key : config_keys()) EXPECT_NE(echo.find(key + " = "), std::string::npos) << key;
}

TEST(Config, Defaults) {
  const RunConfig cfg;
  EXPECT_EQ(cfg.updates_per_step, 10);
  EXPECT_EQ(cfg.eval_episodes, 10);
  EXPECT_EQ(cfg.eval_interval, 1000u);
  EXPECT_EQ(cfg.selector.candidates, 100);
  EXPECT_EQ(cfg.ensemble.members, 5);
  EXPECT_EQ(cfg.horizon, 2);
}

TEST(Run, ZeroStepsWritesConfigAndEmptyMetrics) {
  const fs::path dir = scratch("zero");
  RunConfig cfg = tiny("pendulum", Algorithm::Sac, 0);
  cfg.save_checkpoint = false;
  const auto summary = run(cfg, 3, dir);
  EXPECT_TRUE(summary.metrics.empty());
  EXPECT_EQ(slurp(dir / "metrics.csv"), std::string(kMetricsHeader) + "\n");
  const RunConfig echoed = load_config((dir / "config.resolved").string());
  EXPECT_EQ(echoed.seeds, (std::vector<std::uint64_t>{3}));
  EXPECT_EQ(echoed.batch_size, 16u);
}

TEST(Run, UpdateCadenceIsGPerStep) {
  for (Algorithm algo : {Algorithm::Sac, Algorithm::SacBe, Algorithm::SacMveQu}) {
    RunConfig cfg = tiny("point_mass", algo, 150);
    std::ostringstream log;
    const auto s = run(cfg, 1, {}, RunHooks{nullptr, &log});
    EXPECT_EQ(s.update_rounds + s.warmup_skipped_rounds, 2u * 150u) << to_string(algo);
    EXPECT_EQ(s.warmup_skipped_rounds, 2u * 39u);
    EXPECT_EQ(s.metrics.size(), 3u);
    for (std::size_t i = 1; i < s.metrics.size(); ++i) EXPECT_GT(s.metrics[i].step, s.metrics[i - 1].step);
    if (algo != Algorithm::Sac) {
      EXPECT_GT(s.selector_fallbacks, 0u);
      EXPECT_NE(log.str().find("notice"), std::string::npos);
      EXPECT_EQ(s.model_train_rounds, 150u - 59u);  // buffer reaches the 60-transition warmup at step 60
    }
  }
}

TEST(Run, SameSeedSameMetricsFile) {
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  RunConfig cfg = tiny("mountain_car", Algorithm::SacBe, 120);
  run(cfg, 9, a, RunHooks{nullptr, nullptr});
  run(cfg, 9, b, RunHooks{nullptr, nullptr});
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  EXPECT_EQ(slurp(a / "config.resolved"), slurp(b / "config.resolved"));
  const fs::path c = scratch("det_c");
  run(cfg, 10, c, RunHooks{nullptr, nullptr});
  EXPECT_NE(slurp(a / "metrics.csv"), slurp(c / "metrics.csv"));
}

TEST(Run, HorizonZeroMveMatchesModelFreeBitwise) {
  const fs::path a = scratch("h0_sac"), b = scratch("h0_mve");
  RunConfig sac = tiny("pendulum", Algorithm::Sac, 150);
  RunConfig mve = sac;
  mve.algorithm = Algorithm::SacMve;
  mve.horizon = 0;
  run(sac, 4, a, RunHooks{nullptr, nullptr});
  run(mve, 4, b, RunHooks{nullptr, nullptr});
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
}

TEST(Run, BufferRewardsAreRawEnvironmentRewardsAndActionsAreCandidates) {
  RunConfig cfg = tiny("pendulum", Algorithm::SacBe, 150);
  std::size_t steps = 0, checked = 0;
  RunHooks hooks;
  hooks.log = nullptr;
  hooks.on_step = [&](const StepRecord& r) {
    ++steps;
    ASSERT_EQ(r.stored.reward, r.result.reward);
    ASSERT_TRUE(r.selection.candidates.contains(r.stored.action));
    if (!r.selection.fallback) {
      ASSERT_EQ(r.selection.candidates.size(), 10);
      ++checked;
    }
  };
  run(cfg, 5, {}, hooks);
  EXPECT_EQ(steps, 150u);
  EXPECT_GT(checked, 50u);
}

TEST(Run, EveryAlgorithmRunsOnEveryEnvironment) {
  for (const auto& env : env_names())
    for (const auto& [name, algo] : algorithm_names()) {
      const auto s = run(tiny(env, algo, 100), 2, {}, RunHooks{nullptr, nullptr});
      EXPECT_EQ(s.metrics.size(), 2u) << env << " " << name;
      for (const auto& m : s.metrics) EXPECT_TRUE(std::isfinite(m.mean_return));
      EXPECT_EQ(s.metrics.back().horizon, uses_mve(algo) ? 2 : 0);
    }
}

TEST(Run, RunDirectoryLoadsForAggregation) {
  const fs::path dir = scratch("load");
  run(tiny("point_mass", Algorithm::SacQu, 100), 6, dir, RunHooks{nullptr, nullptr});
  const RunData r = load_run(dir);
  EXPECT_EQ(r.env, "point_mass");
  EXPECT_EQ(r.algorithm, "sac+qu");
  EXPECT_EQ(r.steps, (std::vector<double>{50, 100}));
  EXPECT_TRUE(fs::exists(dir / "checkpoint.bin"));
  EXPECT_TRUE(fs::exists(dir / "timing.csv"));
}

TEST(Selftest, AllChecksPass) {
  std::ostringstream out;
  for (const auto& r : run_selftest(out)) EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
}
