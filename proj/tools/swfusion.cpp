// Command-line front end: simulate, compare, ablate and ingest.
//
// Exit codes: 0 success, 1 usage, 2 bad data or configuration, 3 numerical failure.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "swfusion/config.hpp"
#include "swfusion/experiment.hpp"
#include "swfusion/trackfile.hpp"

namespace {

using swfusion::Error;
using swfusion::ErrorKind;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kSingularBlock:
    case ErrorKind::kSingularSystem:
    case ErrorKind::kNotConverged:
    case ErrorKind::kDimensionMismatch:
    case ErrorKind::kMissingAnchor:
      return kExitNumerical;
    default:
      return kExitData;
  }
}

int report(const std::string& kind, const std::string& message, int code) {
  nlohmann::json j{{"error", kind}, {"message", message}};
  std::cerr << j.dump() << '\n';
  return code;
}

struct Overrides {
  std::string config;
  std::string out;
  std::int64_t seed = -1;
  int workers = 0;
  int trials = 0;
  std::string control;
  std::string strategies;
};

std::vector<swfusion::Estimator> parse_list(const std::string& csv) {
  std::vector<swfusion::Estimator> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto e = swfusion::parse_estimator(item);
    if (!e) throw Error(ErrorKind::kConfigError, "unknown strategy '" + item + "'");
    out.push_back(*e);
  }
  return out;
}

swfusion::ExperimentConfig effective_config(swfusion::Command cmd, const Overrides& o) {
  swfusion::ExperimentConfig c = swfusion::load_config(o.config);
  if (!o.strategies.empty()) c.strategies = parse_list(o.strategies);
  if (c.strategies.empty()) c.strategies = swfusion::default_strategies(cmd);
  if (!o.control.empty()) {
    const auto e = swfusion::parse_estimator(o.control);
    if (!e) throw Error(ErrorKind::kConfigError, "unknown strategy '" + o.control + "'");
    c.control = *e;
  }
  if (cmd == swfusion::Command::kAblate && !c.control) c.control = swfusion::Estimator::kSwo;
  if (!o.out.empty()) c.output = o.out;
  if (o.workers > 0) c.run.workers = o.workers;
  if (c.simulation) {
    if (o.seed >= 0) c.simulation->master_seed = static_cast<std::uint64_t>(o.seed);
    if (o.trials > 0) c.simulation->n_trials = o.trials;
  }
  if (cmd != swfusion::Command::kSimulate && c.strategies.size() < 2) {
    throw Error(ErrorKind::kConfigError, "comparison needs at least two strategies");
  }
  c.validate();
  return c;
}

int run_experiment_command(swfusion::Command cmd, const Overrides& o) {
  const auto cfg = effective_config(cmd, o);
  const auto result = swfusion::run_experiment(cfg);
  const auto files = swfusion::write_outputs(cmd, result);
  int failed = 0;
  for (const auto& t : result.trials) failed += t.failed ? 1 : 0;
  nlohmann::json summary{{"command", std::string(swfusion::to_string(cmd))},
                         {"output", cfg.output},
                         {"trials", result.trials.size()},
                         {"failed_trials", failed},
                         {"files", files}};
  std::cout << summary.dump() << '\n';
  return 0;
}

int ingest(const std::string& path) {
  const swfusion::TrackFile t = swfusion::read_trackfile(path);
  const auto s = swfusion::summarize(t);
  nlohmann::json j{{"path", path},
                   {"frames", s.frames},
                   {"landmarks", s.landmarks},
                   {"observations", s.observations},
                   {"ground_truth", s.ground_truth},
                   {"mean_track_length", s.mean_track_length},
                   {"hash", swfusion::hex64(swfusion::sequence_hash(t.sequence()))}};
  std::cout << j.dump(2) << '\n';
  return 0;
}

void add_experiment_options(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "experiment JSON")->required();
  app->add_option("--out", o.out, "output directory");
  app->add_option("--seed", o.seed, "master seed")->check(CLI::NonNegativeNumber);
  app->add_option("--workers", o.workers, "worker threads")->check(CLI::PositiveNumber);
  app->add_option("--trials", o.trials, "number of trials")->check(CLI::PositiveNumber);
  app->add_option("--control", o.control, "reference strategy for discrepancies");
  app->add_option("--strategies", o.strategies, "comma-separated strategy list");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sliding-window stereo estimation experiments"};
  app.require_subcommand(1);
  Overrides sim_o;
  Overrides cmp_o;
  Overrides abl_o;
  std::string track;
  auto* sim = app.add_subcommand("simulate", "run strategies over simulated trials");
  auto* cmp = app.add_subcommand("compare", "discrepancy of strategies against a control");
  auto* abl = app.add_subcommand("ablate", "filter variants against the optimizer");
  auto* ing = app.add_subcommand("ingest", "parse and summarize a track file");
  add_experiment_options(sim, sim_o);
  add_experiment_options(cmp, cmp_o);
  add_experiment_options(abl, abl_o);
  ing->add_option("path", track, "track file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("UsageError", e.what(), kExitUsage);
  }

  try {
    if (*sim) return run_experiment_command(swfusion::Command::kSimulate, sim_o);
    if (*cmp) return run_experiment_command(swfusion::Command::kCompare, cmp_o);
    if (*abl) return run_experiment_command(swfusion::Command::kAblate, abl_o);
    if (*ing) return ingest(track);
  } catch (const swfusion::ParseError& e) {
    nlohmann::json j{{"error", "ParseError"},
                     {"message", e.detail()},
                     {"line", e.line()},
                     {"column", e.column()}};
    std::cerr << j.dump() << '\n';
    return kExitData;
  } catch (const Error& e) {
    return report(std::string(swfusion::to_string(e.kind())), e.detail(), exit_code(e.kind()));
  } catch (const std::exception& e) {
    return report("InternalError", e.what(), kExitNumerical);
  }
  return kExitUsage;
}
