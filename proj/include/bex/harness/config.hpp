#pragma once

// Run configuration: a flat `key = value` text format.
//
// Blank lines and lines starting with '#' are ignored. Unknown keys are an
// error. Lists are comma separated ("64,64"). The fully resolved
// configuration, defaults included, is written back in the same format as
// `config.resolved`; doubles are printed with 17 significant digits so the
// echo reproduces the run exactly.

#include "bex/explore.hpp"
#include "bex/mve.hpp"
#include "bex/sac.hpp"
#include "bex/worldmodel.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace bex {

enum class Algorithm { Sac, SacBe, SacQu, SacMve, SacMveBe, SacMveQu };

inline const std::vector<std::pair<std::string, Algorithm>>& algorithm_names() {
  static const std::vector<std::pair<std::string, Algorithm>> names{
      {"sac", Algorithm::Sac},         {"sac+be", Algorithm::SacBe},       {"sac+qu", Algorithm::SacQu},
      {"sac+mve", Algorithm::SacMve}, {"sac+mve+be", Algorithm::SacMveBe}, {"sac+mve+qu", Algorithm::SacMveQu}};
  return names;
}

inline std::string to_string(Algorithm a) {
  for (const auto& [name, value] : algorithm_names())
    if (value == a) return name;
  return "?";
}

inline Algorithm algorithm_from_string(const std::string& s) {
  for (const auto& [name, value] : algorithm_names())
    if (name == s) return value;
  throw ConfigError("unknown algorithm '" + s + "' (expected sac|sac+be|sac+qu|sac+mve|sac+mve+be|sac+mve+qu)");
}

inline SelectorKind selector_for(Algorithm a) {
  switch (a) {
    case Algorithm::SacBe:
    case Algorithm::SacMveBe: return SelectorKind::Bounded;
    case Algorithm::SacQu:
    case Algorithm::SacMveQu: return SelectorKind::Qu;
    default: return SelectorKind::Vanilla;
  }
}

inline bool uses_mve(Algorithm a) {
  return a == Algorithm::SacMve || a == Algorithm::SacMveBe || a == Algorithm::SacMveQu;
}

inline bool uses_ensemble(Algorithm a) { return a != Algorithm::Sac; }

struct RunConfig {
  std::string env = "pendulum";
  Algorithm algorithm = Algorithm::Sac;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::uint64_t total_steps = 30000;
  int updates_per_step = 10;  // G
  std::uint64_t eval_interval = 1000;
  int eval_episodes = 10;
  std::uint64_t learning_starts = 1000;
  std::size_t batch_size = 256;
  std::size_t buffer_capacity = 100000;

  SacConfig sac;
  SelectorConfig selector;
  EnsembleConfig ensemble;
  std::size_t model_batch_size = 256;
  int model_updates_per_step = 1;
  int horizon = 2;  // H, used by the sac+mve* algorithms; recorded as 0 otherwise

  bool verbose = false;          // stream per-step selection diagnostics to selection.csv
  bool save_checkpoint = true;   // write checkpoint.bin at the end of the run
  bool save_buffer = false;      // also write replay.bin

  int effective_horizon() const { return uses_mve(algorithm) ? horizon : 0; }

  SelectorConfig selector_config() const {
    SelectorConfig s = selector;
    s.kind = selector_for(algorithm);
    return s;
  }

  MveConfig mve_config() const { return {horizon, sac.gamma}; }

  void validate() const {
    make_env(env);
    if (seeds.empty()) throw ConfigError("seeds must list at least one seed");
    if (updates_per_step < 0) throw ConfigError("updates_per_step (G) must be >= 0");
    if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
    if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
    if (batch_size < 1 || model_batch_size < 1) throw ConfigError("batch sizes must be >= 1");
    if (buffer_capacity < 1) throw ConfigError("buffer_capacity must be >= 1");
    if (model_updates_per_step < 0) throw ConfigError("model_updates_per_step must be >= 0");
    if (horizon < 0) throw ConfigError("horizon (H) must be >= 0");
    auto check_layers = [](const std::vector<int>& v, const char* key) {
      for (int h : v)
        if (h < 1) throw ConfigError(std::string(key) + ": layer widths must be positive");
    };
    check_layers(sac.actor_hidden, "actor_hidden");
    check_layers(sac.critic_hidden, "critic_hidden");
    check_layers(ensemble.hidden, "model_hidden");
    sac.validate();
    selector.validate();
    ensemble.validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  }
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true|false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<std::pair<std::string, Field>>& fields() {
  using C = RunConfig;
  static const std::vector<std::pair<std::string, Field>> table{
      {"env", {[](C& c, const std::string& v) { c.env = v; }, [](const C& c) { return c.env; }}},
      {"algo",
       {[](C& c, const std::string& v) { c.algorithm = algorithm_from_string(v); },
        [](const C& c) { return to_string(c.algorithm); }}},
      {"seeds",
       {[](C& c, const std::string& v) {
          c.seeds.clear();
          for (const auto& s : split_list(v)) c.seeds.push_back(parse_int<std::uint64_t>("seeds", s));
        },
        [](const C& c) { return join(c.seeds); }}},
      {"total_steps",
       {[](C& c, const std::string& v) { c.total_steps = parse_int<std::uint64_t>("total_steps", v); },
        [](const C& c) { return std::to_string(c.total_steps); }}},
      {"updates_per_step",
       {[](C& c, const std::string& v) { c.updates_per_step = parse_int<int>("updates_per_step", v); },
        [](const C& c) { return std::to_string(c.updates_per_step); }}},
      {"eval_interval",
       {[](C& c, const std::string& v) { c.eval_interval = parse_int<std::uint64_t>("eval_interval", v); },
        [](const C& c) { return std::to_string(c.eval_interval); }}},
      {"eval_episodes",
       {[](C& c, const std::string& v) { c.eval_episodes = parse_int<int>("eval_episodes", v); },
        [](const C& c) { return std::to_string(c.eval_episodes); }}},
      {"learning_starts",
       {[](C& c, const std::string& v) { c.learning_starts = parse_int<std::uint64_t>("learning_starts", v); },
        [](const C& c) { return std::to_string(c.learning_starts); }}},
      {"batch_size",
       {[](C& c, const std::string& v) { c.batch_size = parse_int<std::size_t>("batch_size", v); },
        [](const C& c) { return std::to_string(c.batch_size); }}},
      {"buffer_capacity",
       {[](C& c, const std::string& v) { c.buffer_capacity = parse_int<std::size_t>("buffer_capacity", v); },
        [](const C& c) { return std::to_string(c.buffer_capacity); }}},
      {"gamma",
       {[](C& c, const std::string& v) { c.sac.gamma = parse_double("gamma", v); },
        [](const C& c) { return format_double(c.sac.gamma); }}},
      {"tau",
       {[](C& c, const std::string& v) { c.sac.tau = parse_double("tau", v); },
        [](const C& c) { return format_double(c.sac.tau); }}},
      {"actor_lr",
       {[](C& c, const std::string& v) { c.sac.actor_lr = parse_double("actor_lr", v); },
        [](const C& c) { return format_double(c.sac.actor_lr); }}},
      {"critic_lr",
       {[](C& c, const std::string& v) { c.sac.critic_lr = parse_double("critic_lr", v); },
        [](const C& c) { return format_double(c.sac.critic_lr); }}},
      {"alpha_lr",
       {[](C& c, const std::string& v) { c.sac.alpha_lr = parse_double("alpha_lr", v); },
        [](const C& c) { return format_double(c.sac.alpha_lr); }}},
      {"initial_alpha",
       {[](C& c, const std::string& v) { c.sac.initial_alpha = parse_double("initial_alpha", v); },
        [](const C& c) { return format_double(c.sac.initial_alpha); }}},
      {"target_entropy",
       {[](C& c, const std::string& v) {
          if (v == "auto")
            c.sac.target_entropy.reset();
          else
            c.sac.target_entropy = parse_double("target_entropy", v);
        },
        [](const C& c) {
          return c.sac.target_entropy ? format_double(*c.sac.target_entropy) : std::string("auto");
        }}},
      {"log_std_min",
       {[](C& c, const std::string& v) { c.sac.log_std_min = parse_double("log_std_min", v); },
        [](const C& c) { return format_double(c.sac.log_std_min); }}},
      {"log_std_max",
       {[](C& c, const std::string& v) { c.sac.log_std_max = parse_double("log_std_max", v); },
        [](const C& c) { return format_double(c.sac.log_std_max); }}},
      {"actor_hidden",
       {[](C& c, const std::string& v) {
          c.sac.actor_hidden.clear();
          for (const auto& s : split_list(v)) c.sac.actor_hidden.push_back(parse_int<int>("actor_hidden", s));
        },
        [](const C& c) { return join(c.sac.actor_hidden); }}},
      {"critic_hidden",
       {[](C& c, const std::string& v) {
          c.sac.critic_hidden.clear();
          for (const auto& s : split_list(v)) c.sac.critic_hidden.push_back(parse_int<int>("critic_hidden", s));
        },
        [](const C& c) { return join(c.sac.critic_hidden); }}},
      {"activation",
       {[](C& c, const std::string& v) {
          c.sac.activation = activation_from_string(v);
          c.ensemble.activation = c.sac.activation;
        },
        [](const C& c) { return to_string(c.sac.activation); }}},
      {"candidates",
       {[](C& c, const std::string& v) { c.selector.candidates = parse_int<int>("candidates", v); },
        [](const C& c) { return std::to_string(c.selector.candidates); }}},
      {"reduction_samples",
       {[](C& c, const std::string& v) { c.selector.reduction_samples = parse_int<int>("reduction_samples", v); },
        [](const C& c) { return std::to_string(c.selector.reduction_samples); }}},
      {"selector_temperature",
       {[](C& c, const std::string& v) { c.selector.temperature = parse_double("selector_temperature", v); },
        [](const C& c) { return format_double(c.selector.temperature); }}},
      {"ensemble_members",
       {[](C& c, const std::string& v) { c.ensemble.members = parse_int<int>("ensemble_members", v); },
        [](const C& c) { return std::to_string(c.ensemble.members); }}},
      {"model_hidden",
       {[](C& c, const std::string& v) {
          c.ensemble.hidden.clear();
          for (const auto& s : split_list(v)) c.ensemble.hidden.push_back(parse_int<int>("model_hidden", s));
        },
        [](const C& c) { return join(c.ensemble.hidden); }}},
      {"model_lr",
       {[](C& c, const std::string& v) { c.ensemble.learning_rate = parse_double("model_lr", v); },
        [](const C& c) { return format_double(c.ensemble.learning_rate); }}},
      {"model_batch_size",
       {[](C& c, const std::string& v) { c.model_batch_size = parse_int<std::size_t>("model_batch_size", v); },
        [](const C& c) { return std::to_string(c.model_batch_size); }}},
      {"model_warmup",
       {[](C& c, const std::string& v) { c.ensemble.warmup_transitions = parse_int<std::size_t>("model_warmup", v); },
        [](const C& c) { return std::to_string(c.ensemble.warmup_transitions); }}},
      {"model_updates_per_step",
       {[](C& c, const std::string& v) {
          c.model_updates_per_step = parse_int<int>("model_updates_per_step", v);
        },
        [](const C& c) { return std::to_string(c.model_updates_per_step); }}},
      {"reward_in_uncertainty",
       {[](C& c, const std::string& v) { c.ensemble.reward_in_uncertainty = parse_bool("reward_in_uncertainty", v); },
        [](const C& c) { return std::string(c.ensemble.reward_in_uncertainty ? "true" : "false"); }}},
      {"horizon",
       {[](C& c, const std::string& v) { c.horizon = parse_int<int>("horizon", v); },
        [](const C& c) { return std::to_string(c.horizon); }}},
      {"verbose",
       {[](C& c, const std::string& v) { c.verbose = parse_bool("verbose", v); },
        [](const C& c) { return std::string(c.verbose ? "true" : "false"); }}},
      {"save_checkpoint",
       {[](C& c, const std::string& v) { c.save_checkpoint = parse_bool("save_checkpoint", v); },
        [](const C& c) { return std::string(c.save_checkpoint ? "true" : "false"); }}},
      {"save_buffer",
       {[](C& c, const std::string& v) { c.save_buffer = parse_bool("save_buffer", v); },
        [](const C& c) { return std::string(c.save_buffer ? "true" : "false"); }}},
  };
  return table;
}

}  // namespace detail

/// Sets one key. Throws ConfigError for unknown keys or malformed values.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& [name, field] : detail::fields()) {
    if (name == key) {
      field.set(cfg, detail::trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::string get_config_value(const RunConfig& cfg, const std::string& key) {
  for (const auto& [name, field] : detail::fields())
    if (name == key) return field.get(cfg);
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [name, field] : detail::fields()) keys.push_back(name);
  return keys;
}

/// Applies `key = value` lines from `in` on top of `cfg`.
inline void parse_config(std::istream& in, RunConfig& cfg) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const auto key = detail::trim(t.substr(0, eq));
    try {
      set_config_value(cfg, key, t.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline RunConfig parse_config_string(const std::string& text, RunConfig cfg = {}) {
  std::istringstream in(text);
  parse_config(in, cfg);
  return cfg;
}

inline RunConfig load_config(const std::string& path, RunConfig cfg = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  parse_config(in, cfg);
  return cfg;
}

inline std::string resolved_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [name, field] : detail::fields()) out += name + " = " + field.get(cfg) + "\n";
  return out;
}

}  // namespace bex
