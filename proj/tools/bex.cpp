// bex: train agents, aggregate run directories, plot curves, run the self test.
//
// Exit codes: 0 success, 1 other failure, 2 configuration error, 3 numerical abort.

#include "bex/harness/aggregate.hpp"
#include "bex/harness/run.hpp"
#include "bex/harness/selftest.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct TrainArgs {
  std::string config_path;
  std::string env;
  std::string algo;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> steps;
  std::optional<int> candidates, reduction_samples, members, horizon, updates_per_step;
  std::optional<double> temperature;
  std::vector<std::string> overrides;
  std::string out = "runs";
};

int train(const TrainArgs& a) {
  bex::RunConfig cfg;
  if (!a.config_path.empty()) cfg = bex::load_config(a.config_path);
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw bex::ConfigError("--set expects key=value, got '" + kv + "'");
    bex::set_config_value(cfg, bex::detail::trim(kv.substr(0, eq)), bex::detail::trim(kv.substr(eq + 1)));
  }
  if (!a.env.empty()) cfg.env = a.env;
  if (!a.algo.empty()) cfg.algorithm = bex::algorithm_from_string(a.algo);
  if (a.seed) cfg.seeds = {*a.seed};
  if (a.steps) cfg.total_steps = *a.steps;
  if (a.candidates) cfg.selector.candidates = *a.candidates;
  if (a.reduction_samples) cfg.selector.reduction_samples = *a.reduction_samples;
  if (a.members) cfg.ensemble.members = *a.members;
  if (a.horizon) cfg.horizon = *a.horizon;
  if (a.updates_per_step) cfg.updates_per_step = *a.updates_per_step;
  if (a.temperature) cfg.selector.temperature = *a.temperature;
  cfg.validate();

  for (const auto seed : cfg.seeds) {
    const std::filesystem::path dir =
        std::filesystem::path(a.out) / (cfg.env + "_" + bex::to_string(cfg.algorithm) + "_s" + std::to_string(seed));
    std::cerr << "training " << bex::to_string(cfg.algorithm) << " on " << cfg.env << " seed " << seed << " -> "
              << dir.string() << "\n";
    const auto summary = bex::run(cfg, seed, dir);
    if (!summary.metrics.empty())
      std::cerr << "  final evaluation return " << summary.metrics.back().mean_return << " after "
                << summary.env_steps << " steps\n";
  }
  return 0;
}

int aggregate(const std::vector<std::string>& dirs, const std::string& out, std::size_t window) {
  std::vector<bex::RunData> runs;
  for (const auto& d : dirs) runs.push_back(bex::load_run(d));
  const auto curves = bex::aggregate(runs, window);
  bex::write_aggregate(out, curves);
  std::cout << bex::final_table_markdown(curves);
  std::cerr << "wrote " << out << "/curves.csv, final_scores.csv, table.md\n";
  return 0;
}

int plot(const std::string& aggregate_dir, const std::string& out) {
  const std::filesystem::path curves = std::filesystem::path(aggregate_dir) / "curves.csv";
  if (!std::filesystem::exists(curves)) throw bex::ConfigError("no curves.csv in " + aggregate_dir);
  const auto files = bex::plot(bex::read_curves(curves), out.empty() ? aggregate_dir : out);
  for (const auto& f : files) std::cerr << "wrote " << f.string() << "\n";
  return 0;
}

int selftest() {
  const auto results = bex::run_selftest(std::cout);
  for (const auto& r : results)
    if (!r.passed) return kExitFailure;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bounded exploration for soft actor-critic"};
  app.require_subcommand(1);

  TrainArgs targs;
  auto* train_cmd = app.add_subcommand("train", "train one run per seed");
  train_cmd->add_option("--config", targs.config_path, "key = value config file");
  train_cmd->add_option("--env", targs.env, "pendulum | mountain_car | point_mass");
  train_cmd->add_option("--algo", targs.algo, "sac | sac+be | sac+qu | sac+mve | sac+mve+be | sac+mve+qu");
  train_cmd->add_option("--seed", targs.seed, "single seed (overrides the config's seed list)");
  train_cmd->add_option("--steps", targs.steps, "total environment steps");
  train_cmd->add_option("--N", targs.candidates, "action candidates per step");
  train_cmd->add_option("--S", targs.reduction_samples, "reduction samples");
  train_cmd->add_option("--M", targs.members, "ensemble members");
  train_cmd->add_option("--H,--horizon", targs.horizon, "value-expansion horizon");
  train_cmd->add_option("--G", targs.updates_per_step, "update rounds per environment step");
  train_cmd->add_option("--temperature", targs.temperature, "selector temperature");
  train_cmd->add_option("--set", targs.overrides, "any config key, as key=value (repeatable)");
  train_cmd->add_option("--out", targs.out, "parent directory for run directories")->capture_default_str();

  std::vector<std::string> agg_dirs;
  std::string agg_out = "aggregate";
  std::size_t agg_window = 1;
  auto* agg_cmd = app.add_subcommand("aggregate", "combine run directories into curves and a final-score table");
  agg_cmd->add_option("dirs", agg_dirs, "run directories")->required();
  agg_cmd->add_option("--out", agg_out, "output directory")->capture_default_str();
  agg_cmd->add_option("--smooth", agg_window, "trailing smoothing window for curves")->capture_default_str();

  std::string plot_in, plot_out;
  auto* plot_cmd = app.add_subcommand("plot", "render per-environment CSV and SVG from an aggregate directory");
  plot_cmd->add_option("aggregate", plot_in, "aggregate directory")->required();
  plot_cmd->add_option("--out", plot_out, "output directory (default: the aggregate directory)");

  auto* selftest_cmd = app.add_subcommand("selftest", "run the fast invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train_cmd) return train(targs);
    if (*agg_cmd) return aggregate(agg_dirs, agg_out, agg_window);
    if (*plot_cmd) return plot(plot_in, plot_out);
    if (*selftest_cmd) return selftest();
  } catch (const bex::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const bex::NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
