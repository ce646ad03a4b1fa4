#ifndef SWFUSION_CONFIG_HPP
#define SWFUSION_CONFIG_HPP

// JSON experiment configuration. Unknown keys are rejected so typos surface
// instead of silently falling back to defaults.

#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "swfusion/error.hpp"
#include "swfusion/sim.hpp"

namespace swfusion {

using nlohmann::json;

struct ExperimentConfig {
  std::string name = "experiment";
  std::optional<SimConfig> simulation;
  std::optional<std::string> trackfile;  // resolved against the config's directory
  std::vector<Estimator> strategies;
  std::optional<Estimator> control;
  RunOptions run;
  std::string output = "out";

  void validate() const {
    if (simulation.has_value() == trackfile.has_value()) {
      throw Error(ErrorKind::kConfigError, "exactly one of input.simulation or input.trackfile");
    }
    if (simulation) simulation->validate();
    if (strategies.empty()) throw Error(ErrorKind::kConfigError, "strategy set is empty");
    std::set<Estimator> seen(strategies.begin(), strategies.end());
    if (seen.size() != strategies.size()) {
      throw Error(ErrorKind::kConfigError, "strategy listed twice");
    }
    if (control && !seen.contains(*control)) {
      throw Error(ErrorKind::kConfigError,
                  "control " + std::string(to_string(*control)) + " is not in the strategy set");
    }
    run.policy.validate();
    if (!(run.solver.tolerance > 0.0) || run.solver.max_iterations < 1) {
      throw Error(ErrorKind::kConfigError, "solver tolerance and max_iterations must be positive");
    }
    if (run.workers < 1) throw Error(ErrorKind::kConfigError, "workers must be >= 1");
  }
};

namespace detail {

constexpr double kDeg = std::numbers::pi / 180.0;

inline void only_keys(const json& j, const std::string& where, std::set<std::string> allowed) {
  if (!j.is_object()) throw Error(ErrorKind::kConfigError, where + " must be an object");
  for (const auto& [k, _] : j.items()) {
    if (!allowed.contains(k)) {
      throw Error(ErrorKind::kConfigError, "unknown key '" + k + "' in " + where);
    }
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::kConfigError, where + "." + key + " has the wrong type");
  }
}

inline Eigen::Vector3d read_vec3(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) {
    throw Error(ErrorKind::kConfigError, where + " must be an array of 3 numbers");
  }
  Eigen::Vector3d v;
  for (int k = 0; k < 3; ++k) {
    if (!j[k].is_number()) throw Error(ErrorKind::kConfigError, where + " must hold numbers");
    v[k] = j[k].get<double>();
  }
  return v;
}

inline Estimator read_estimator(const json& j, const std::string& where) {
  if (!j.is_string()) throw Error(ErrorKind::kConfigError, where + " must be a string");
  const auto e = parse_estimator(j.get<std::string>());
  if (!e) throw Error(ErrorKind::kConfigError, "unknown strategy '" + j.get<std::string>() + "'");
  return *e;
}

inline StereoCamera read_camera(const json& j, StereoCamera c) {
  only_keys(j, "camera", {"fx", "fy", "cx", "cy", "baseline", "width", "height", "pixel_sigma"});
  read(j, "fx", c.fx, "camera");
  read(j, "fy", c.fy, "camera");
  read(j, "cx", c.cx, "camera");
  read(j, "cy", c.cy, "camera");
  read(j, "baseline", c.baseline, "camera");
  read(j, "width", c.width, "camera");
  read(j, "height", c.height, "camera");
  read(j, "pixel_sigma", c.pixel_sigma, "camera");
  return c;
}

inline SimConfig read_simulation(const json& j) {
  const std::string w = "input.simulation";
  only_keys(j, w,
            {"n_frames", "circle_radius", "angular_step_deg", "n_landmarks", "region_min",
             "region_max", "camera", "init_perturb_pos", "init_perturb_att_deg", "n_trials",
             "master_seed", "min_landmarks_per_frame", "max_resamples"});
  SimConfig s;
  read(j, "n_frames", s.n_frames, w);
  read(j, "circle_radius", s.circle_radius, w);
  if (j.contains("angular_step_deg")) {
    double deg = 0.0;
    read(j, "angular_step_deg", deg, w);
    s.angular_step = deg * kDeg;
  }
  read(j, "n_landmarks", s.n_landmarks, w);
  if (j.contains("region_min")) s.region_min = read_vec3(j["region_min"], w + ".region_min");
  if (j.contains("region_max")) s.region_max = read_vec3(j["region_max"], w + ".region_max");
  if (j.contains("camera")) s.camera = read_camera(j["camera"], s.camera);
  read(j, "init_perturb_pos", s.init_perturb_pos, w);
  if (j.contains("init_perturb_att_deg")) {
    double deg = 0.0;
    read(j, "init_perturb_att_deg", deg, w);
    s.init_perturb_att = deg * kDeg;
  }
  read(j, "n_trials", s.n_trials, w);
  read(j, "master_seed", s.master_seed, w);
  read(j, "min_landmarks_per_frame", s.min_landmarks_per_frame, w);
  read(j, "max_resamples", s.max_resamples, w);
  return s;
}

}  // namespace detail

/// `base_dir` anchors a relative track file path.
inline ExperimentConfig parse_config(const json& j, const std::filesystem::path& base_dir = {}) {
  detail::only_keys(j, "config",
                    {"name", "input", "strategies", "control", "policy", "solver", "workers",
                     "output"});
  ExperimentConfig c;
  detail::read(j, "name", c.name, "config");
  if (!j.contains("input")) throw Error(ErrorKind::kConfigError, "config has no input");
  const json& in = j["input"];
  detail::only_keys(in, "input", {"simulation", "trackfile"});
  if (in.contains("simulation")) c.simulation = detail::read_simulation(in["simulation"]);
  if (in.contains("trackfile")) {
    std::string path;
    detail::read(in, "trackfile", path, "input");
    std::filesystem::path p(path);
    c.trackfile = (p.is_relative() && !base_dir.empty() ? base_dir / p : p).string();
  }
  if (j.contains("strategies")) {
    if (!j["strategies"].is_array()) {
      throw Error(ErrorKind::kConfigError, "strategies must be an array");
    }
    for (const auto& s : j["strategies"]) c.strategies.push_back(detail::read_estimator(s, "strategies"));
  }
  if (j.contains("control")) c.control = detail::read_estimator(j["control"], "control");
  if (j.contains("policy")) {
    const json& p = j["policy"];
    detail::only_keys(p, "policy", {"window_length", "selector", "min_track"});
    detail::read(p, "window_length", c.run.policy.window_length, "policy");
    detail::read(p, "min_track", c.run.policy.min_track, "policy");
    if (p.contains("selector")) {
      std::string sel;
      detail::read(p, "selector", sel, "policy");
      if (sel == "oldest_frame") {
        c.run.policy.selector = MarginalSelector::kOldestFrame;
      } else if (sel == "msckf") {
        c.run.policy.selector = MarginalSelector::kMsckf;
      } else {
        throw Error(ErrorKind::kConfigError, "unknown selector '" + sel + "'");
      }
    }
  }
  if (j.contains("solver")) {
    const json& s = j["solver"];
    detail::only_keys(s, "solver", {"tolerance", "max_iterations"});
    detail::read(s, "tolerance", c.run.solver.tolerance, "solver");
    detail::read(s, "max_iterations", c.run.solver.max_iterations, "solver");
  }
  detail::read(j, "workers", c.run.workers, "config");
  detail::read(j, "output", c.output, "config");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIoError, "cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kConfigError, "config " + path + " is not valid JSON: " + e.what());
  }
  return parse_config(j, std::filesystem::path(path).parent_path());
}

inline json camera_json(const StereoCamera& c) {
  return {{"fx", c.fx},         {"fy", c.fy},         {"cx", c.cx},
          {"cy", c.cy},         {"baseline", c.baseline}, {"width", c.width},
          {"height", c.height}, {"pixel_sigma", c.pixel_sigma}};
}

/// Echo of the effective configuration, in the same schema it was read from.
inline json to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  if (c.simulation) {
    const SimConfig& s = *c.simulation;
    j["input"]["simulation"] = {
        {"n_frames", s.n_frames},
        {"circle_radius", s.circle_radius},
        {"angular_step_deg", s.angular_step / detail::kDeg},
        {"n_landmarks", s.n_landmarks},
        {"region_min", {s.region_min.x(), s.region_min.y(), s.region_min.z()}},
        {"region_max", {s.region_max.x(), s.region_max.y(), s.region_max.z()}},
        {"camera", camera_json(s.camera)},
        {"init_perturb_pos", s.init_perturb_pos},
        {"init_perturb_att_deg", s.init_perturb_att / detail::kDeg},
        {"n_trials", s.n_trials},
        {"master_seed", s.master_seed},
        {"min_landmarks_per_frame", s.min_landmarks_per_frame},
        {"max_resamples", s.max_resamples}};
  } else if (c.trackfile) {
    j["input"]["trackfile"] = *c.trackfile;
  }
  j["strategies"] = json::array();
  for (Estimator e : c.strategies) j["strategies"].push_back(std::string(to_string(e)));
  if (c.control) j["control"] = std::string(to_string(*c.control));
  j["policy"] = {{"window_length", c.run.policy.window_length},
                 {"selector", c.run.policy.selector == MarginalSelector::kMsckf ? "msckf"
                                                                                : "oldest_frame"},
                 {"min_track", c.run.policy.min_track}};
  j["solver"] = {{"tolerance", c.run.solver.tolerance},
                 {"max_iterations", c.run.solver.max_iterations}};
  j["workers"] = c.run.workers;
  j["output"] = c.output;
  return j;
}

}  // namespace swfusion

#endif  // SWFUSION_CONFIG_HPP
