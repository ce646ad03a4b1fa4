#ifndef SWFUSION_EXPERIMENT_HPP
#define SWFUSION_EXPERIMENT_HPP

// Runs a configured experiment and writes its CSV, table and manifest outputs.
// CSV files carry no timings, so repeated runs produce identical bytes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "swfusion/config.hpp"
#include "swfusion/metrics.hpp"
#include "swfusion/sim.hpp"
#include "swfusion/trackfile.hpp"

namespace swfusion {

inline constexpr const char* kVersion = "1.0.0";

enum class Command { kSimulate, kCompare, kAblate };

constexpr std::string_view to_string(Command c) {
  switch (c) {
    case Command::kSimulate: return "simulate";
    case Command::kCompare: return "compare";
    case Command::kAblate: return "ablate";
  }
  return "unknown";
}

/// Strategy set used when the configuration names none.
inline std::vector<Estimator> default_strategies(Command c) {
  switch (c) {
    case Command::kSimulate: return {Estimator::kBatch};
    case Command::kCompare: return {Estimator::kSwo, Estimator::kSwfSa};
    case Command::kAblate:
      return {Estimator::kSwo, Estimator::kSwfSa, Estimator::kSwfFej, Estimator::kSwfFull};
  }
  return {};
}

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<TrialResult> trials;
  bool has_truth = false;
  double seconds = 0.0;

  Estimator control() const { return config.control.value_or(config.strategies.front()); }
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult out;
  out.config = cfg;
  const auto start = std::chrono::steady_clock::now();
  if (cfg.simulation) {
    out.trials = run_monte_carlo(*cfg.simulation, cfg.strategies, cfg.run);
    out.has_truth = true;
  } else {
    const TrackFile t = read_trackfile(*cfg.trackfile);
    const Sequence seq = t.sequence();
    TrialResult tr;
    tr.hash = sequence_hash(seq);
    // RMSE needs a truth pose for every frame.
    out.has_truth = t.ground_truth.size() == t.frames.size();
    if (out.has_truth) tr.truth.frames = t.ground_truth;
    for (Estimator e : cfg.strategies) tr.results.push_back(run_strategy(e, seq, cfg.run));
    out.trials.push_back(std::move(tr));
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// ---------------------------------------------------------------------------
// CSV output.

/// '.' decimal, ',' separator, LF line ends. A non-finite number is an error.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
    row(header);
  }

  CsvWriter& cell(const std::string& s) {
    pending_.push_back(s);
    return *this;
  }
  CsvWriter& cell(std::int64_t v) { return cell(std::to_string(v)); }
  CsvWriter& cell(int v) { return cell(std::to_string(v)); }
  CsvWriter& cell(double v) {
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::kSingularSystem, "non-finite value in CSV output");
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return cell(std::string(buf));
  }
  void end_row() {
    row(pending_);
    pending_.clear();
  }

  std::size_t rows() const { return rows_ - 1; }
  const std::string& text() const { return text_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    f << text_;
    if (!f) throw Error(ErrorKind::kIoError, "cannot write " + path.string());
  }

 private:
  void row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_) {
      throw Error(ErrorKind::kDimensionMismatch, "CSV row has the wrong number of cells");
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) text_ += ',';
      text_ += cells[i];
    }
    text_ += '\n';
    ++rows_;
  }

  std::size_t columns_;
  std::size_t rows_ = 0;
  std::vector<std::string> pending_;
  std::string text_;
};

struct ComparisonSeries {
  Estimator subject = Estimator::kBatch;
  std::vector<int> trials;
  std::vector<DiscrepancySeries> series;
};

/// Per-trial discrepancy of every non-control strategy against the control.
inline std::vector<ComparisonSeries> comparisons(const ExperimentResult& r) {
  std::vector<ComparisonSeries> out;
  const Estimator control = r.control();
  for (Estimator e : r.config.strategies) {
    if (e == control) continue;
    ComparisonSeries c;
    c.subject = e;
    for (const auto& tr : r.trials) {
      if (tr.failed) continue;
      const StrategyResult* a = tr.find(control);
      const StrategyResult* b = tr.find(e);
      if (!a || !b || !a->ok || !b->ok) continue;
      c.trials.push_back(tr.index);
      c.series.push_back(discrepancy(b->estimates, a->estimates));
    }
    out.push_back(std::move(c));
  }
  return out;
}

inline std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline CsvWriter estimates_csv(const ExperimentResult& r) {
  CsvWriter w({"trial", "strategy", "frame", "px", "py", "pz", "qw", "qx", "qy", "qz"});
  for (const auto& tr : r.trials) {
    for (const auto& s : tr.results) {
      if (!s.ok) continue;
      for (const auto& [id, p] : s.estimates.frames) {
        w.cell(tr.index).cell(std::string(to_string(s.estimator))).cell(id);
        for (int k = 0; k < 3; ++k) w.cell(p.position[k]);
        w.cell(p.attitude.w()).cell(p.attitude.x()).cell(p.attitude.y()).cell(p.attitude.z());
        w.end_row();
      }
    }
  }
  return w;
}

inline CsvWriter discrepancy_csv(const ExperimentResult& r,
                                 const std::vector<ComparisonSeries>& cmp) {
  CsvWriter w({"trial", "control", "subject", "frame", "translation_m", "attitude_deg"});
  const std::string control(to_string(r.control()));
  for (const auto& c : cmp) {
    for (std::size_t t = 0; t < c.series.size(); ++t) {
      const auto& s = c.series[t];
      for (std::size_t i = 0; i < s.size(); ++i) {
        w.cell(c.trials[t]).cell(control).cell(std::string(to_string(c.subject))).cell(s.frames[i]);
        w.cell(s.translation[i]).cell(s.attitude_deg[i]);
        w.end_row();
      }
    }
  }
  return w;
}

inline CsvWriter rmse_csv(const ExperimentResult& r) {
  CsvWriter w({"trial", "strategy", "converged", "iterations", "position_m", "attitude_deg"});
  if (!r.has_truth) return w;
  for (const auto& tr : r.trials) {
    for (const auto& s : tr.results) {
      if (!s.ok) continue;
      const Rmse e = rmse(s.estimates, tr.truth);
      w.cell(tr.index).cell(std::string(to_string(s.estimator))).cell(s.converged ? 1 : 0);
      w.cell(s.iterations).cell(e.position).cell(e.attitude_deg);
      w.end_row();
    }
  }
  return w;
}

inline DiscrepancySeries pooled(const ComparisonSeries& c) {
  DiscrepancySeries p;
  for (const auto& s : c.series) {
    p.frames.insert(p.frames.end(), s.frames.begin(), s.frames.end());
    p.translation.insert(p.translation.end(), s.translation.begin(), s.translation.end());
    p.attitude_deg.insert(p.attitude_deg.end(), s.attitude_deg.begin(), s.attitude_deg.end());
  }
  return p;
}

/// One row per subject and trial plus a pooled row with trial = "all".
inline CsvWriter stats_csv(const ExperimentResult& r, const std::vector<ComparisonSeries>& cmp) {
  CsvWriter w({"control", "subject", "trial", "translation_log10_max", "translation_log10_mean",
               "translation_mean_log10", "attitude_log10_max", "attitude_log10_mean",
               "attitude_mean_log10"});
  const std::string control(to_string(r.control()));
  const auto put = [&](const std::string& subject, const std::string& trial,
                       const LogStatsPair& s) {
    w.cell(control).cell(subject).cell(trial);
    w.cell(s.translation.max).cell(s.translation.mean).cell(s.translation.mean_log);
    w.cell(s.attitude.max).cell(s.attitude.mean).cell(s.attitude.mean_log);
    w.end_row();
  };
  for (const auto& c : cmp) {
    const std::string subject(to_string(c.subject));
    for (std::size_t t = 0; t < c.series.size(); ++t) {
      if (c.series[t].size() == 0) continue;
      put(subject, std::to_string(c.trials[t]), log10_stats(c.series[t]));
    }
    const DiscrepancySeries p = pooled(c);
    if (p.size()) put(subject, "all", log10_stats(p));
  }
  return w;
}

inline CsvWriter averaged_csv(const ExperimentResult& r, const std::vector<ComparisonSeries>& cmp) {
  CsvWriter w({"control", "subject", "frame", "translation_m", "attitude_deg"});
  const std::string control(to_string(r.control()));
  for (const auto& c : cmp) {
    const DiscrepancySeries a = averaged_discrepancy(c.series);
    for (std::size_t i = 0; i < a.size(); ++i) {
      w.cell(control).cell(std::string(to_string(c.subject))).cell(a.frames[i]);
      w.cell(a.translation[i]).cell(a.attitude_deg[i]);
      w.end_row();
    }
  }
  return w;
}

/// Fixed-width summary of the pooled statistics.
inline std::string stats_table(const ExperimentResult& r, const std::vector<ComparisonSeries>& cmp) {
  std::ostringstream o;
  char buf[256];
  o << "log10 discrepancy against " << to_string(r.control()) << " (pooled over trials)\n";
  std::snprintf(buf, sizeof buf, "%-10s %7s | %9s %9s %9s | %9s %9s %9s\n", "subject", "trials",
                "t max", "t mean", "t meanlog", "a max", "a mean", "a meanlog");
  o << buf;
  for (const auto& c : cmp) {
    const DiscrepancySeries p = pooled(c);
    if (!p.size()) continue;
    const LogStatsPair s = log10_stats(p);
    std::snprintf(buf, sizeof buf, "%-10s %7zu | %9.3f %9.3f %9.3f | %9.3f %9.3f %9.3f\n",
                  std::string(to_string(c.subject)).c_str(), c.series.size(), s.translation.max,
                  s.translation.mean, s.translation.mean_log, s.attitude.max, s.attitude.mean,
                  s.attitude.mean_log);
    o << buf;
  }
  o << "t: translation [m], a: attitude [deg]\n";
  return o.str();
}

inline nlohmann::json manifest(Command cmd, const ExperimentResult& r,
                               const std::vector<std::string>& files) {
  using nlohmann::json;
  json m;
  m["tool"] = "swfusion";
  m["version"] = kVersion;
  m["command"] = std::string(to_string(cmd));
  m["config"] = to_json(r.config);
  m["control"] = std::string(to_string(r.control()));
  m["files"] = files;
  m["seconds"] = r.seconds;
  m["trials"] = json::array();
  std::map<std::string, double> totals;
  for (const auto& tr : r.trials) {
    json t{{"index", tr.index}, {"seed", tr.seed}, {"hash", hex64(tr.hash)}, {"failed", tr.failed}};
    if (tr.failed) t["error"] = {{"kind", tr.error_kind}, {"message", tr.error}};
    t["results"] = json::array();
    for (const auto& s : tr.results) {
      const std::string name(to_string(s.estimator));
      totals[name] += s.seconds;
      json e{{"strategy", name},   {"ok", s.ok},           {"converged", s.converged},
             {"iterations", s.iterations}, {"seconds", s.seconds},
             {"input_hash", hex64(s.input_hash)}};
      if (!s.ok) e["error"] = {{"kind", s.error_kind}, {"message", s.error}};
      t["results"].push_back(e);
    }
    m["trials"].push_back(t);
  }
  m["strategy_seconds"] = totals;
  return m;
}

/// Writes every output file for `cmd` into the configured directory; returns file names.
inline std::vector<std::string> write_outputs(Command cmd, const ExperimentResult& r) {
  namespace fs = std::filesystem;
  const fs::path dir(r.config.output);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIoError, "cannot create " + dir.string() + ": " + ec.message());

  // Render everything first so a numerical failure leaves no partial output.
  const auto cmp = comparisons(r);
  std::vector<std::pair<std::string, std::string>> files;
  files.emplace_back("estimates.csv", estimates_csv(r).text());
  files.emplace_back("discrepancy.csv", discrepancy_csv(r, cmp).text());
  files.emplace_back("rmse.csv", rmse_csv(r).text());
  if (cmd != Command::kSimulate) {
    files.emplace_back("stats.csv", stats_csv(r, cmp).text());
    files.emplace_back("averaged_discrepancy.csv", averaged_csv(r, cmp).text());
    files.emplace_back("table.txt", stats_table(r, cmp));
  }
  std::vector<std::string> names;
  for (const auto& [name, _] : files) names.push_back(name);
  names.push_back("manifest.json");
  files.emplace_back("manifest.json", manifest(cmd, r, names).dump(2) + "\n");

  for (const auto& [name, text] : files) {
    std::ofstream f(dir / name, std::ios::binary);
    f << text;
    if (!f) throw Error(ErrorKind::kIoError, "cannot write " + (dir / name).string());
  }
  return names;
}

}  // namespace swfusion

#endif  // SWFUSION_EXPERIMENT_HPP
