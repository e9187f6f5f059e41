#pragma once

// Cross-seed aggregation of run directories, smoothing, and plot emission.
//
// aggregate/ layout:
//   curves.csv        step,mean,variance,algorithm,env   (per-step mean and population variance across seeds)
//   final_scores.csv  env,algorithm,runs,final_mean,final_std
//   table.md          the final-score table, one column per environment
//
// plot/ layout (per environment):
//   <env>.csv         same schema as curves.csv, restricted to that environment
//   <env>.svg         mean curves with +-1 std bands

#include "bex/harness/config.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

namespace bex {

/// Trailing moving average; the first window-1 entries average the available prefix.
inline std::vector<double> smooth(const std::vector<double>& series, std::size_t window) {
  if (window < 1) throw ConfigError("smooth: window must be >= 1");
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::size_t n = std::min(window, i + 1);
    double acc = 0.0;
    for (std::size_t k = i + 1 - n; k <= i; ++k) acc += series[k];
    out[i] = acc / static_cast<double>(n);
  }
  return out;
}

/// A parsed CSV table keyed by header names.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ConfigError("CSV has no column '" + name + "'");
  }

  std::vector<double> numbers(const std::string& name) const {
    const auto c = column(name);
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(detail::parse_double(name, r.at(c)));
    return out;
  }
};

inline CsvTable read_csv(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open " + p.string());
  CsvTable t;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(detail::trim(item));
    return out;
  };
  if (!std::getline(in, line)) throw ConfigError(p.string() + " is empty");
  t.header = split(line);
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    auto r = split(line);
    if (r.size() != t.header.size()) throw ConfigError(p.string() + ": ragged row");
    t.rows.push_back(std::move(r));
  }
  return t;
}

struct RunData {
  std::string env;
  std::string algorithm;
  std::vector<double> steps;
  std::vector<double> returns;
};

inline RunData load_run(const std::filesystem::path& dir) {
  const auto cfg = load_config((dir / "config.resolved").string());
  const auto metrics = read_csv(dir / "metrics.csv");
  return {cfg.env, to_string(cfg.algorithm), metrics.numbers("step"), metrics.numbers("mean_return")};
}

/// Mean over the last `last` evaluation rows (all rows if fewer).
inline double final_score(const std::vector<double>& returns, std::size_t last = 10) {
  if (returns.empty()) return 0.0;
  const std::size_t n = std::min(last, returns.size());
  double sum = 0.0;
  for (std::size_t i = returns.size() - n; i < returns.size(); ++i) sum += returns[i];
  return sum / static_cast<double>(n);
}

struct Curve {
  std::string env;
  std::string algorithm;
  std::vector<double> steps;
  std::vector<double> mean;
  std::vector<double> variance;  // population variance across runs
  std::size_t runs = 0;
  double final_mean = 0.0;
  double final_std = 0.0;  // population std of per-run final scores
};

/// Groups runs by (env, algorithm). Runs in one group must share the step grid.
inline std::vector<Curve> aggregate(const std::vector<RunData>& runs, std::size_t smooth_window = 1) {
  std::map<std::pair<std::string, std::string>, std::vector<const RunData*>> groups;
  for (const auto& r : runs) groups[{r.env, r.algorithm}].push_back(&r);
  std::vector<Curve> out;
  for (const auto& [key, members] : groups) {
    Curve c;
    c.env = key.first;
    c.algorithm = key.second;
    c.runs = members.size();
    c.steps = members.front()->steps;
    for (const auto* m : members)
      if (m->steps != c.steps)
        throw ConfigError("aggregate: runs of " + c.algorithm + " on " + c.env + " have different step grids");
    const double n = static_cast<double>(members.size());
    c.mean.assign(c.steps.size(), 0.0);
    c.variance.assign(c.steps.size(), 0.0);
    std::vector<std::vector<double>> series;
    for (const auto* m : members) series.push_back(smooth_window > 1 ? smooth(m->returns, smooth_window) : m->returns);
    for (std::size_t i = 0; i < c.steps.size(); ++i) {
      for (const auto& s : series) c.mean[i] += s[i] / n;
      for (const auto& s : series) c.variance[i] += (s[i] - c.mean[i]) * (s[i] - c.mean[i]) / n;
    }
    std::vector<double> finals;
    for (const auto* m : members) finals.push_back(final_score(m->returns));
    for (double f : finals) c.final_mean += f / n;
    double var = 0.0;
    for (double f : finals) var += (f - c.final_mean) * (f - c.final_mean) / n;
    c.final_std = std::sqrt(var);
    out.push_back(std::move(c));
  }
  return out;
}

inline constexpr const char* kCurvesHeader = "step,mean,variance,algorithm,env";

inline void write_curves_csv(const std::filesystem::path& p, const std::vector<Curve>& curves) {
  std::ofstream out(p);
  out << kCurvesHeader << "\n";
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.steps.size(); ++i)
      out << detail::format_double(c.steps[i]) << "," << detail::format_double(c.mean[i]) << ","
          << detail::format_double(c.variance[i]) << "," << c.algorithm << "," << c.env << "\n";
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

inline std::string final_table_markdown(const std::vector<Curve>& curves) {
  std::vector<std::string> envs, algos;
  for (const auto& c : curves) {
    if (std::find(envs.begin(), envs.end(), c.env) == envs.end()) envs.push_back(c.env);
    if (std::find(algos.begin(), algos.end(), c.algorithm) == algos.end()) algos.push_back(c.algorithm);
  }
  std::string s = "| Method |";
  for (const auto& e : envs) s += " " + e + " |";
  s += "\n|---|";
  for (std::size_t i = 0; i < envs.size(); ++i) s += "---|";
  s += "\n";
  for (const auto& a : algos) {
    s += "| " + a + " |";
    for (const auto& e : envs) {
      std::string cell = " N/A |";
      for (const auto& c : curves) {
        if (c.env == e && c.algorithm == a) {
          char buf[96];
          std::snprintf(buf, sizeof buf, " %.1f +- %.1f |", c.final_mean, c.final_std);
          cell = buf;
        }
      }
      s += cell;
    }
    s += "\n";
  }
  return s;
}

inline void write_aggregate(const std::filesystem::path& dir, const std::vector<Curve>& curves) {
  std::filesystem::create_directories(dir);
  write_curves_csv(dir / "curves.csv", curves);
  std::ofstream scores(dir / "final_scores.csv");
  scores << "env,algorithm,runs,final_mean,final_std\n";
  for (const auto& c : curves)
    scores << c.env << "," << c.algorithm << "," << c.runs << "," << detail::format_double(c.final_mean) << ","
           << detail::format_double(c.final_std) << "\n";
  std::ofstream table(dir / "table.md");
  table << final_table_markdown(curves);
}

/// Reads curves.csv back into curves (final scores are not part of that file).
inline std::vector<Curve> read_curves(const std::filesystem::path& p) {
  const auto t = read_csv(p);
  const auto cs = t.column("step"), cm = t.column("mean"), cv = t.column("variance"), ca = t.column("algorithm"),
             ce = t.column("env");
  std::vector<Curve> out;
  for (const auto& r : t.rows) {
    if (out.empty() || out.back().env != r[ce] || out.back().algorithm != r[ca]) {
      out.push_back({});
      out.back().env = r[ce];
      out.back().algorithm = r[ca];
    }
    out.back().steps.push_back(detail::parse_double("step", r[cs]));
    out.back().mean.push_back(detail::parse_double("mean", r[cm]));
    out.back().variance.push_back(detail::parse_double("variance", r[cv]));
  }
  return out;
}

/// Renders one environment's curves. Every data point carries its exact values
/// as data-* attributes so the figure can be checked against the CSV.
inline std::string render_svg(const std::string& env, const std::vector<const Curve*>& curves) {
  constexpr double W = 640, H = 400, L = 60, R = 20, T = 30, B = 40;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto* c : curves)
    for (std::size_t i = 0; i < c->steps.size(); ++i) {
      const double sd = std::sqrt(c->variance[i]);
      xmin = std::min(xmin, c->steps[i]);
      xmax = std::max(xmax, c->steps[i]);
      ymin = std::min(ymin, c->mean[i] - sd);
      ymax = std::max(ymax, c->mean[i] + sd);
    }
  if (!(xmax > xmin)) xmax = xmin + 1;
  if (!(ymax > ymin)) ymax = ymin + 1;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
  static const char* colors[] = {"#d62728", "#1f77b4", "#7f7f7f", "#2ca02c", "#9467bd", "#ff7f0e"};
  std::string s;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" viewBox=\"0 0 %g %g\">\n", W, H,
                W, H);
  s += buf;
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + std::to_string(W / 2) + "\" y=\"20\" text-anchor=\"middle\">" + env + "</text>\n";
  std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", L, H - B, W - R,
                H - B);
  s += buf;
  std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", L, T, L, H - B);
  s += buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"10\">%.4g</text>\n", 2.0, py(ymax), ymax);
  s += buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"10\">%.4g</text>\n", 2.0, py(ymin), ymin);
  s += buf;
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto* c = curves[k];
    const char* color = colors[k % 6];
    std::string band, line;
    for (std::size_t i = 0; i < c->steps.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.3f,%.3f ", px(c->steps[i]), py(c->mean[i] + std::sqrt(c->variance[i])));
      band += buf;
    }
    for (std::size_t i = c->steps.size(); i-- > 0;) {
      std::snprintf(buf, sizeof buf, "%.3f,%.3f ", px(c->steps[i]), py(c->mean[i] - std::sqrt(c->variance[i])));
      band += buf;
    }
    for (std::size_t i = 0; i < c->steps.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.3f,%.3f ", px(c->steps[i]), py(c->mean[i]));
      line += buf;
    }
    s += "<polygon points=\"" + band + "\" fill=\"" + color + "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    s += "<polyline points=\"" + line + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\"/>\n";
    for (std::size_t i = 0; i < c->steps.size(); ++i) {
      s += "<circle cx=\"" + detail::format_double(px(c->steps[i])) + "\" cy=\"" +
           detail::format_double(py(c->mean[i])) + "\" r=\"1.5\" fill=\"" + color + "\" data-algorithm=\"" +
           c->algorithm + "\" data-step=\"" + detail::format_double(c->steps[i]) + "\" data-mean=\"" +
           detail::format_double(c->mean[i]) + "\" data-variance=\"" + detail::format_double(c->variance[i]) +
           "\"/>\n";
    }
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"11\" fill=\"%s\">%s</text>\n", W - R - 120,
                  T + 14.0 * static_cast<double>(k + 1), color, c->algorithm.c_str());
    s += buf;
  }
  s += "</svg>\n";
  return s;
}

/// Writes <env>.csv and <env>.svg per environment. Returns the files written.
inline std::vector<std::filesystem::path> plot(const std::vector<Curve>& curves, const std::filesystem::path& dir,
                                               std::ostream& log = std::cerr) {
  std::vector<std::filesystem::path> written;
  if (curves.empty()) {
    log << "notice: empty aggregate; nothing to plot\n";
    return written;
  }
  std::filesystem::create_directories(dir);
  std::vector<std::string> envs;
  for (const auto& c : curves)
    if (std::find(envs.begin(), envs.end(), c.env) == envs.end()) envs.push_back(c.env);
  for (const auto& env : envs) {
    std::vector<Curve> subset;
    std::vector<const Curve*> ptrs;
    for (const auto& c : curves)
      if (c.env == env) subset.push_back(c);
    for (const auto& c : subset) ptrs.push_back(&c);
    const auto csv = dir / (env + ".csv");
    const auto svg = dir / (env + ".svg");
    write_curves_csv(csv, subset);
    std::ofstream out(svg);
    out << render_svg(env, ptrs);
    written.push_back(csv);
    written.push_back(svg);
  }
  return written;
}

}  // namespace bex
