#include "pszsim/experiment.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "pszsim/atf_io.hpp"
#include "pszsim/pm.hpp"

namespace psz {

namespace {

using nlohmann::ordered_json;

// Stream roles within one run (documented in the README).
constexpr std::uint64_t kRolePerturbation = 0;
constexpr std::uint64_t kRoleMeasurement = 1;
constexpr std::uint64_t kRoleOracleFilter = 2;

template <typename Enum>
Enum parse_enum(const std::string& value, const char* field,
                std::initializer_list<std::pair<const char*, Enum>> table) {
  for (const auto& [name, e] : table)
    if (value == name) return e;
  std::string allowed;
  for (const auto& [name, e] : table) {
    if (!allowed.empty()) allowed += ", ";
    allowed += name;
  }
  throw ConfigError(std::string(field) + ": unknown value '" + value +
                    "' (expected one of: " + allowed + ")");
}

const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::cpm: return "cpm";
    case Algorithm::dpmd: return "dpmd";
    default: return "both";
  }
}
const char* to_string(SystemKind s) {
  switch (s) {
    case SystemKind::system1: return "system1";
    case SystemKind::system2: return "system2";
    default: return "custom";
  }
}
const char* to_string(AtfBackend b) {
  switch (b) {
    case AtfBackend::freefield: return "freefield";
    case AtfBackend::image_source: return "image_source";
    default: return "file";
  }
}
const char* to_string(TargetMode m) {
  return m == TargetMode::planewave ? "planewave" : "oracle";
}
const char* to_string(CombinationRule r) {
  return r == CombinationRule::uniform ? "uniform" : "metropolis";
}
const char* to_string(AtfNormalization n) {
  return n == AtfNormalization::none ? "none" : "unit_mean_power";
}

double number_field(const ordered_json& v, const char* field) {
  if (!v.is_number()) throw ConfigError(std::string(field) + ": expected a number");
  return v.get<double>();
}

long integer_field(const ordered_json& v, const char* field) {
  if (!v.is_number_integer()) throw ConfigError(std::string(field) + ": expected an integer");
  return v.get<long>();
}

Vec3 vec3_field(const ordered_json& v, const char* field) {
  if (!v.is_array() || v.size() != 3)
    throw ConfigError(std::string(field) + ": expected an array of 3 numbers");
  return {number_field(v[0], field), number_field(v[1], field), number_field(v[2], field)};
}

std::vector<Vec3> vec3_list_field(const ordered_json& v, const char* field) {
  if (!v.is_array()) throw ConfigError(std::string(field) + ": expected an array of points");
  std::vector<Vec3> out;
  for (const auto& p : v) out.push_back(vec3_field(p, field));
  return out;
}

std::vector<int> int_list_field(const ordered_json& v, const char* field) {
  if (!v.is_array()) throw ConfigError(std::string(field) + ": expected an array of integers");
  std::vector<int> out;
  for (const auto& e : v) out.push_back(static_cast<int>(integer_field(e, field)));
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (iterations < 1) throw ConfigError("iterations: must be >= 1");
  if (monte_carlo_runs < 1) throw ConfigError("monte_carlo_runs: must be >= 1");
  if (frequencies.empty()) throw ConfigError("frequencies: must be nonempty");
  for (double f : frequencies)
    if (!(f > 0.0)) throw ConfigError("frequencies: entries must be positive");
  if (!step_size_auto && !(step_size > 0.0))
    throw ConfigError("step_size: must be positive or \"auto\"");
  if (perturbation_variance < 0.0)
    throw ConfigError("perturbation_variance: must be nonnegative");
  if (!std::isinf(snr_db) && std::isnan(snr_db))
    throw ConfigError("snr_db: must be a number or \"inf\"");
  if (sample_rate <= 0.0) throw ConfigError("sample_rate_hz: must be positive");
  if (window_len < 1) throw ConfigError("window_len: must be >= 1");
  if (t60 <= 0.0) throw ConfigError("t60_s: must be positive");
  if (std::abs(planewave_direction.norm() - 1.0) > 1e-9)
    throw ConfigError("planewave_direction: must be a unit vector");
  if (planewave_amplitude <= 0.0)
    throw ConfigError("planewave_amplitude: must be positive");
  if (system == SystemKind::custom && custom_system.empty())
    throw ConfigError("custom_system: required when system is \"custom\"");
  if (atf_backend == AtfBackend::file && atf_file.empty())
    throw ConfigError("atf_file: required when atf_backend is \"file\"");
  if (atf_backend == AtfBackend::file && validation_atf_file.empty())
    throw ConfigError("validation_atf_file: required when atf_backend is \"file\"");
}

ExperimentConfig parse_config(const std::string& text) {
  std::string trimmed = text;
  trimmed.erase(0, trimmed.find_first_not_of(" \t\r\n"));
  ordered_json doc;
  if (trimmed.empty()) {
    doc = ordered_json::object();
  } else {
    try {
      doc = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
  }
  if (!doc.is_object()) throw ConfigError("config root must be a JSON object");

  ExperimentConfig cfg;
  for (const auto& [key, value] : doc.items()) {
    if (key == "algorithm") {
      cfg.algorithm = parse_enum<Algorithm>(value.get<std::string>(), "algorithm",
                                            {{"cpm", Algorithm::cpm},
                                             {"dpmd", Algorithm::dpmd},
                                             {"both", Algorithm::both}});
    } else if (key == "system") {
      cfg.system = parse_enum<SystemKind>(value.get<std::string>(), "system",
                                          {{"system1", SystemKind::system1},
                                           {"system2", SystemKind::system2},
                                           {"custom", SystemKind::custom}});
    } else if (key == "custom_system") {
      if (!value.is_array()) throw ConfigError("custom_system: expected an array of nodes");
      for (const auto& node : value) {
        CustomNode cn;
        for (const auto& [nk, nv] : node.items()) {
          if (nk == "mics") cn.mics = int_list_field(nv, "custom_system.mics");
          else if (nk == "speakers") cn.speakers = int_list_field(nv, "custom_system.speakers");
          else if (nk == "neighbors") cn.neighbors = int_list_field(nv, "custom_system.neighbors");
          else throw ConfigError("custom_system: unknown key '" + nk + "'");
        }
        cfg.custom_system.push_back(std::move(cn));
      }
    } else if (key == "atf_backend") {
      cfg.atf_backend = parse_enum<AtfBackend>(value.get<std::string>(), "atf_backend",
                                               {{"freefield", AtfBackend::freefield},
                                                {"image_source", AtfBackend::image_source},
                                                {"file", AtfBackend::file}});
    } else if (key == "target_mode") {
      cfg.target_mode = parse_enum<TargetMode>(value.get<std::string>(), "target_mode",
                                               {{"planewave", TargetMode::planewave},
                                                {"oracle", TargetMode::oracle}});
    } else if (key == "frequencies") {
      if (!value.is_array()) throw ConfigError("frequencies: expected an array of numbers");
      cfg.frequencies.clear();
      for (const auto& f : value) cfg.frequencies.push_back(number_field(f, "frequencies"));
      cfg.frequencies_explicit = true;
    } else if (key == "iterations") {
      cfg.iterations = integer_field(value, "iterations");
    } else if (key == "monte_carlo_runs") {
      cfg.monte_carlo_runs = static_cast<int>(integer_field(value, "monte_carlo_runs"));
    } else if (key == "step_size") {
      if (value.is_string()) {
        if (value.get<std::string>() != "auto")
          throw ConfigError("step_size: must be a positive number or \"auto\"");
        cfg.step_size_auto = true;
      } else {
        cfg.step_size = number_field(value, "step_size");
        cfg.step_size_auto = false;
      }
    } else if (key == "perturbation_variance") {
      cfg.perturbation_variance = number_field(value, "perturbation_variance");
    } else if (key == "snr_db") {
      if (value.is_string()) {
        const auto s = value.get<std::string>();
        if (s != "inf" && s != "infinity")
          throw ConfigError("snr_db: must be a number or \"inf\"");
        cfg.snr_db = std::numeric_limits<double>::infinity();
      } else {
        cfg.snr_db = number_field(value, "snr_db");
      }
    } else if (key == "combination_rule") {
      cfg.combination_rule = parse_enum<CombinationRule>(
          value.get<std::string>(), "combination_rule",
          {{"uniform", CombinationRule::uniform},
           {"metropolis", CombinationRule::metropolis}});
    } else if (key == "seed") {
      if (!value.is_number_integer())
        throw ConfigError("seed: expected an integer");
      cfg.seed = value.get<std::uint64_t>();
    } else if (key == "output_dir") {
      cfg.output_dir = value.get<std::string>();
    } else if (key == "sample_rate_hz") {
      cfg.sample_rate = number_field(value, "sample_rate_hz");
    } else if (key == "window_len") {
      cfg.window_len = static_cast<int>(integer_field(value, "window_len"));
    } else if (key == "t60_s") {
      cfg.t60 = number_field(value, "t60_s");
    } else if (key == "max_order") {
      cfg.max_order = static_cast<int>(integer_field(value, "max_order"));
    } else if (key == "standoff_m") {
      cfg.standoff = number_field(value, "standoff_m");
    } else if (key == "zone_separation_m") {
      cfg.zone_separation = number_field(value, "zone_separation_m");
    } else if (key == "validation_offset_m") {
      cfg.validation_offset = number_field(value, "validation_offset_m");
    } else if (key == "sound_speed") {
      cfg.sound_speed = number_field(value, "sound_speed");
    } else if (key == "planewave_direction") {
      cfg.planewave_direction = vec3_field(value, "planewave_direction");
    } else if (key == "planewave_amplitude") {
      cfg.planewave_amplitude = number_field(value, "planewave_amplitude");
    } else if (key == "atf_normalization") {
      cfg.atf_normalization = parse_enum<AtfNormalization>(
          value.get<std::string>(), "atf_normalization",
          {{"none", AtfNormalization::none},
           {"unit_mean_power", AtfNormalization::unit_mean_power}});
    } else if (key == "atf_file") {
      cfg.atf_file = value.get<std::string>();
    } else if (key == "validation_atf_file") {
      cfg.validation_atf_file = value.get<std::string>();
    } else if (key == "allow_divergence") {
      if (!value.is_boolean()) throw ConfigError("allow_divergence: expected a boolean");
      cfg.allow_divergence = value.get<bool>();
    } else if (key == "scene") {
      CustomScene sc;
      for (const auto& [sk, sv] : value.items()) {
        if (sk == "room") sc.room_dims = vec3_field(sv, "scene.room");
        else if (sk == "speakers") sc.speakers = vec3_list_field(sv, "scene.speakers");
        else if (sk == "bright_mics") sc.bright_mics = vec3_list_field(sv, "scene.bright_mics");
        else if (sk == "dark_mics") sc.dark_mics = vec3_list_field(sv, "scene.dark_mics");
        else if (sk == "validation_points")
          sc.validation_points = vec3_list_field(sv, "scene.validation_points");
        else if (sk == "sound_speed") sc.sound_speed = number_field(sv, "scene.sound_speed");
        else throw ConfigError("scene: unknown key '" + sk + "'");
      }
      cfg.scene = std::move(sc);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << is.rdbuf();
  return parse_config(buffer.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["algorithm"] = to_string(cfg.algorithm);
  j["system"] = to_string(cfg.system);
  if (!cfg.custom_system.empty()) {
    ordered_json nodes = ordered_json::array();
    for (const CustomNode& n : cfg.custom_system) {
      nodes.push_back({{"mics", n.mics}, {"speakers", n.speakers}, {"neighbors", n.neighbors}});
    }
    j["custom_system"] = std::move(nodes);
  }
  j["atf_backend"] = to_string(cfg.atf_backend);
  j["target_mode"] = to_string(cfg.target_mode);
  j["frequencies"] = cfg.frequencies;
  j["iterations"] = cfg.iterations;
  j["monte_carlo_runs"] = cfg.monte_carlo_runs;
  if (cfg.step_size_auto) j["step_size"] = "auto";
  else j["step_size"] = cfg.step_size;
  j["perturbation_variance"] = cfg.perturbation_variance;
  if (std::isinf(cfg.snr_db)) j["snr_db"] = "inf";
  else j["snr_db"] = cfg.snr_db;
  j["combination_rule"] = to_string(cfg.combination_rule);
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["sample_rate_hz"] = cfg.sample_rate;
  j["window_len"] = cfg.window_len;
  j["t60_s"] = cfg.t60;
  j["max_order"] = cfg.max_order;
  j["standoff_m"] = cfg.standoff;
  j["zone_separation_m"] = cfg.zone_separation;
  j["validation_offset_m"] = cfg.validation_offset;
  j["sound_speed"] = cfg.sound_speed;
  j["planewave_direction"] = {cfg.planewave_direction.x(), cfg.planewave_direction.y(),
                              cfg.planewave_direction.z()};
  j["planewave_amplitude"] = cfg.planewave_amplitude;
  j["atf_normalization"] = to_string(cfg.atf_normalization);
  if (!cfg.atf_file.empty()) j["atf_file"] = cfg.atf_file;
  if (!cfg.validation_atf_file.empty()) j["validation_atf_file"] = cfg.validation_atf_file;
  j["allow_divergence"] = cfg.allow_divergence;
  if (cfg.scene) {
    const CustomScene& sc = *cfg.scene;
    ordered_json s;
    s["room"] = {sc.room_dims.x(), sc.room_dims.y(), sc.room_dims.z()};
    auto points = [](const std::vector<Vec3>& v) {
      ordered_json a = ordered_json::array();
      for (const Vec3& p : v) a.push_back({p.x(), p.y(), p.z()});
      return a;
    };
    s["speakers"] = points(sc.speakers);
    s["bright_mics"] = points(sc.bright_mics);
    s["dark_mics"] = points(sc.dark_mics);
    s["validation_points"] = points(sc.validation_points);
    s["sound_speed"] = sc.sound_speed;
    j["scene"] = std::move(s);
  }
  return j.dump(2);
}

std::uint64_t config_hash(const std::string& canonical_json) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : canonical_json) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Experiment execution
// ---------------------------------------------------------------------------

namespace {

struct SystemSetup {
  std::string label;  // "system1", "system2", "custom"
  Topology top;
  Partition part;
  CombinationMatrix weights;
};

struct Context {
  SceneGeometry geom;
  double freq = 0.0;
  std::size_t freq_index = 0;
  ATFMatrix ctrl;  // nominal control-point ATFs (normalized)
  ATFMatrix val;   // nominal validation-point ATFs (same scale)
  DesiredField pw_ctrl, pw_val;  // clean plane-wave targets
  bool cpm_active = false;
  std::vector<SystemSetup> systems;
};

SceneGeometry build_scene(const ExperimentConfig& cfg) {
  SceneGeometry geom;
  if (cfg.scene) {
    geom.room_dims = cfg.scene->room_dims;
    geom.speaker_positions = cfg.scene->speakers;
    geom.bright_mics = cfg.scene->bright_mics;
    geom.dark_mics = cfg.scene->dark_mics;
    geom.validation_points = cfg.scene->validation_points;
    geom.sound_speed = cfg.scene->sound_speed;
    geom.array_plane_height = geom.speaker_positions.empty()
                                  ? 0.0
                                  : geom.speaker_positions.front().z();
    geom.validate();
  } else {
    geom = paper_geometry(cfg.standoff, cfg.zone_separation, cfg.validation_offset);
    geom.sound_speed = cfg.sound_speed;
  }
  return geom;
}

std::pair<ATFMatrix, ATFMatrix> build_atfs(const ExperimentConfig& cfg,
                                           const SceneGeometry& geom, double freq) {
  ATFMatrix ctrl, val;
  switch (cfg.atf_backend) {
    case AtfBackend::freefield:
      ctrl = freefield_atf(geom, freq, PointSet::control);
      val = freefield_atf(geom, freq, PointSet::validation);
      break;
    case AtfBackend::image_source: {
      ImageSourceParams params{cfg.t60, cfg.sample_rate, cfg.window_len, cfg.max_order};
      ctrl = image_source_atf(geom, freq, params, PointSet::control);
      val = image_source_atf(geom, freq, params, PointSet::validation);
      break;
    }
    case AtfBackend::file: {
      const auto ctrl_records = load_atf(cfg.atf_file);
      const auto val_records = load_atf(cfg.validation_atf_file);
      ctrl = select_atf(ctrl_records, freq, geom.bright_count(), geom.dark_count(),
                        geom.speaker_count());
      val = select_atf(val_records, freq, geom.bright_count(), geom.dark_count(),
                       geom.speaker_count());
      break;
    }
  }

  if (cfg.atf_normalization == AtfNormalization::unit_mean_power) {
    const double mean_power =
        ctrl.entries.squaredNorm() / static_cast<double>(ctrl.entries.size());
    if (mean_power > 0.0) {
      const double scale = 1.0 / std::sqrt(mean_power);
      ctrl.entries *= scale;
      val.entries *= scale;  // same scale keeps both point sets consistent
    }
  }
  return {std::move(ctrl), std::move(val)};
}

SystemSetup build_system(const ExperimentConfig& cfg, SystemKind kind,
                         Eigen::Index n_mics, Eigen::Index n_speakers) {
  auto finish = [&](std::string label, std::pair<Topology, Partition> tp) {
    tp.second.validate(n_mics, n_speakers);
    CombinationMatrix weights = cfg.combination_rule == CombinationRule::uniform
                                    ? uniform_combination(tp.first)
                                    : metropolis_combination(tp.first);
    return SystemSetup{std::move(label), std::move(tp.first), std::move(tp.second),
                       std::move(weights)};
  };

  switch (kind) {
    case SystemKind::system1: {
      if (n_mics != 32 || n_speakers != 9)
        throw ConfigError("system1 requires the 32-microphone, 9-speaker scene");
      return finish("system1", system1_partition());
    }
    case SystemKind::system2: {
      if (n_mics != 32 || n_speakers != 9)
        throw ConfigError("system2 requires the 32-microphone, 9-speaker scene");
      return finish("system2", system2_partition());
    }
    case SystemKind::custom:
    default: {
      const int n = static_cast<int>(cfg.custom_system.size());
      if (n < 1) throw ConfigError("custom_system: needs at least one node");
      std::vector<std::pair<int, int>> edges;
      Partition part;
      for (int k = 0; k < n; ++k) {
        const CustomNode& node = cfg.custom_system[static_cast<std::size_t>(k)];
        part.mic_sets.push_back(node.mics);
        part.speaker_sets.push_back(node.speakers);
        for (int nb : node.neighbors) edges.emplace_back(k, nb);
      }
      Topology top(n, edges);
      return finish("custom", {std::move(top), std::move(part)});
    }
  }
}

Context build_context(const ExperimentConfig& cfg, std::size_t freq_index,
                      bool all_paper_systems) {
  Context ctx;
  ctx.geom = build_scene(cfg);
  ctx.freq_index = freq_index;
  ctx.freq = cfg.frequencies.at(freq_index);
  std::tie(ctx.ctrl, ctx.val) = build_atfs(cfg, ctx.geom, ctx.freq);

  ctx.cpm_active = cfg.algorithm != Algorithm::dpmd;
  const bool dpmd_active = cfg.algorithm != Algorithm::cpm;
  if (dpmd_active) {
    const Eigen::Index m = ctx.geom.mic_count();
    const Eigen::Index l = ctx.geom.speaker_count();
    if (cfg.system == SystemKind::custom) {
      ctx.systems.push_back(build_system(cfg, SystemKind::custom, m, l));
    } else if (all_paper_systems) {
      ctx.systems.push_back(build_system(cfg, SystemKind::system1, m, l));
      ctx.systems.push_back(build_system(cfg, SystemKind::system2, m, l));
    } else {
      ctx.systems.push_back(build_system(cfg, cfg.system, m, l));
    }
  }

  if (cfg.target_mode == TargetMode::planewave) {
    ctx.pw_ctrl = planewave_target(ctx.geom, ctx.freq, cfg.planewave_direction,
                                   cfg.planewave_amplitude, PointSet::control);
    ctx.pw_val = planewave_target(ctx.geom, ctx.freq, cfg.planewave_direction,
                                  cfg.planewave_amplitude, PointSet::validation);
  }
  return ctx;
}

/// Measurement noise around a clean target; the noisy field is tagged as a
/// measured (oracle-form) signal since its dark entries are no longer zero.
DesiredField add_measurement_noise(const DesiredField& clean, double snr_db,
                                   RngStream& rng) {
  if (std::isinf(snr_db)) return clean;
  DesiredField noisy = clean;
  noisy.mode = TargetMode::oracle;
  const double signal_power = clean.values.squaredNorm();
  if (signal_power == 0.0)
    throw SingularSystemError("measurement noise undefined for a zero target");
  const double per_entry = signal_power * std::pow(10.0, -snr_db / 10.0) /
                           static_cast<double>(clean.values.size());
  noisy.values += complex_gaussian_vector(rng, clean.values.size(), per_entry);
  return noisy;
}

struct AlgoTrack {
  std::string key;  // "cpm" or "dpmd:<system>"
  RunTrajectory traj;
  std::vector<MacCounter> counters;
  CVector final_filter;
};

struct MultiRunResult {
  std::vector<AlgoTrack> tracks;
  double step_size_used = 0.0;
};

void record_metrics(AlgoTrack& track, const Context& ctx, const ControlFilter& g,
                    const DesiredField& clean_ctrl, const DesiredField& clean_val,
                    long iteration) {
  // A filter whose rendered field overflows is divergent even while its own
  // entries are still representable; fail the run rather than emit
  // unflagged non-finite samples.
  const std::string& alg = track.key == "cpm" ? track.key : "dpmd";
  auto checked_nmse = [&](const CVector& d_bright, const CVector& p_bright) {
    const double v = nmse_db(d_bright, p_bright);
    if (!std::isfinite(v)) throw DivergenceError(alg, -1, iteration);
    return v;
  };
  auto checked_ac = [&](const auto& bright, const auto& dark) {
    const AcousticContrast ac = acoustic_contrast_db(bright, dark, g);
    if (!std::isfinite(ac.db) && !ac.dark_zone_silent)
      throw DivergenceError(alg, -1, iteration);
    return ac.db;
  };

  const CVector p_ctrl = ctx.ctrl.entries * g.weights;
  track.traj.nmse_control.push_back(
      checked_nmse(clean_ctrl.bright(), p_ctrl.head(ctx.ctrl.bright_rows)));
  track.traj.ac_control.push_back(checked_ac(ctx.ctrl.bright(), ctx.ctrl.dark()));

  const CVector p_val = ctx.val.entries * g.weights;
  track.traj.nmse_validation.push_back(
      checked_nmse(clean_val.bright(), p_val.head(ctx.val.bright_rows)));
  track.traj.ac_validation.push_back(checked_ac(ctx.val.bright(), ctx.val.dark()));
}

MultiRunResult run_single_impl(const ExperimentConfig& cfg, const Context& ctx,
                               std::uint64_t run_seed) {
  RngStream pert_stream = make_stream(run_seed, {kRolePerturbation});
  RngStream meas_stream = make_stream(run_seed, {kRoleMeasurement});
  RngStream oracle_stream = make_stream(run_seed, {kRoleOracleFilter});

  const Eigen::Index n_speakers = ctx.geom.speaker_count();
  const PerturbationModel pert{cfg.perturbation_variance, run_seed};

  // Clean reference targets used by the metrics; in oracle mode they are
  // rendered through the nominal ATFs with this run's oracle filter.
  ControlFilter g_oracle;
  DesiredField clean_ctrl, clean_val;
  if (cfg.target_mode == TargetMode::oracle) {
    g_oracle = sample_oracle_filter(n_speakers, ctx.freq, oracle_stream);
    clean_ctrl = oracle_target(ctx.ctrl, g_oracle, std::numeric_limits<double>::infinity(),
                               oracle_stream);
    clean_val = oracle_target(ctx.val, g_oracle, std::numeric_limits<double>::infinity(),
                              oracle_stream);
  } else {
    clean_ctrl = ctx.pw_ctrl;
    clean_val = ctx.pw_val;
  }

  MultiRunResult result;

  std::optional<CpmState> cpm;
  struct NetTrack {
    const SystemSetup* sys;
    NetworkState state;
    std::size_t track_index;
  };
  std::vector<NetTrack> nets;

  double mu = cfg.step_size;
  for (long n = 0; n < cfg.iterations; ++n) {
    const ATFMatrix atf_n = perturb_atf(ctx.ctrl, pert, pert_stream);

    DesiredField d_n;
    if (cfg.target_mode == TargetMode::oracle) {
      d_n = oracle_target(atf_n, g_oracle, cfg.snr_db, meas_stream);
    } else {
      d_n = add_measurement_noise(clean_ctrl, cfg.snr_db, meas_stream);
    }

    if (n == 0) {
      if (cfg.step_size_auto) mu = 0.5 * stability_bound(atf_n);
      result.step_size_used = mu;
      if (ctx.cpm_active) {
        cpm = CpmState{ControlFilter{CVector::Zero(n_speakers), ctx.freq}, mu, 0};
        result.tracks.push_back({"cpm", {}, {MacCounter{}}, {}});
      }
      for (const SystemSetup& sys : ctx.systems) {
        NetTrack nt{&sys, make_network(sys.top.n_nodes(), n_speakers, mu, ctx.freq), 0};
        nt.track_index = result.tracks.size();
        result.tracks.push_back(
            {"dpmd:" + sys.label, {},
             std::vector<MacCounter>(static_cast<std::size_t>(sys.top.n_nodes())), {}});
        nets.push_back(std::move(nt));
      }
    }

    if (cpm) {
      *cpm = cpm_step(*cpm, atf_n, d_n, &result.tracks[0].counters[0]);
      record_metrics(result.tracks[0], ctx, cpm->filter, clean_ctrl, clean_val, n + 1);
    }
    for (NetTrack& nt : nets) {
      AlgoTrack& track = result.tracks[nt.track_index];
      nt.state = dpmd_iteration(nt.state, atf_n, d_n, nt.sys->part, nt.sys->weights,
                                nt.sys->top, &track.counters);
      record_metrics(track, ctx, deployed_filter(nt.state, nt.sys->part), clean_ctrl,
                     clean_val, n + 1);
    }
  }

  if (cpm) result.tracks[0].final_filter = cpm->filter.weights;
  for (NetTrack& nt : nets)
    result.tracks[nt.track_index].final_filter =
        deployed_filter(nt.state, nt.sys->part).weights;
  return result;
}

int resolve_jobs(const ExperimentConfig& cfg) {
  if (cfg.jobs > 0) return cfg.jobs;
  if (const char* env = std::getenv("PSZSIM_JOBS")) {
    const int j = std::atoi(env);
    if (j > 0) return j;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

/// Runs fn(0..n_items-1) on up to `jobs` workers. Exceptions are captured
/// per item so the caller can apply its divergence policy in index order.
std::vector<std::exception_ptr> parallel_for(int n_items, int jobs,
                                             const std::function<void(int)>& fn) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_items));
  const int workers = std::max(1, std::min(jobs, n_items));
  if (workers == 1) {
    for (int i = 0; i < n_items; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
    return errors;
  }

  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n_items; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  return errors;
}

std::string timestamp_utc() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Provenance make_provenance(const ExperimentConfig& cfg, int jobs, int diverged) {
  Provenance p;
  p.config_json = config_to_json(cfg);
  p.config_hash = config_hash(p.config_json);
  p.seed = cfg.seed;
  p.code_version = kVersion;
  p.timestamp = timestamp_utc();
  p.jobs = jobs;
  p.diverged_runs = diverged;
  return p;
}

struct CurveAccumulator {
  // population mean/std per iteration, folded in run order
  std::vector<double> sum, sum_sq;
  long count = 0;

  void fold(const std::vector<double>& series) {
    if (sum.empty()) {
      sum.assign(series.size(), 0.0);
      sum_sq.assign(series.size(), 0.0);
    }
    for (std::size_t i = 0; i < series.size(); ++i) {
      sum[i] += series[i];
      sum_sq[i] += series[i] * series[i];
    }
    ++count;
  }

  void finish(std::vector<double>& mean, std::vector<double>& stddev) const {
    mean.resize(sum.size());
    stddev.resize(sum.size());
    const auto n = static_cast<double>(count);
    for (std::size_t i = 0; i < sum.size(); ++i) {
      mean[i] = sum[i] / n;
      const double var = std::max(0.0, sum_sq[i] / n - mean[i] * mean[i]);
      stddev[i] = std::sqrt(var);
    }
  }
};

std::vector<ComplexityRow> complexity_rows_for(const Context& ctx, double fft_len,
                                               const std::vector<AlgoTrack>& tracks,
                                               long iterations) {
  std::vector<ComplexityRow> rows;
  for (const AlgoTrack& track : tracks) {
    const auto per_iter = [&](const MacCounter& total) {
      return MacCounter{total.additions / static_cast<double>(iterations),
                        total.multiplications / static_cast<double>(iterations)};
    };
    if (track.key == "cpm") {
      ComplexityRow row;
      row.algorithm = "cpm";
      row.system = "-";
      row.node = -1;
      row.model = complexity_cpm(ctx.ctrl.mics(), ctx.ctrl.speakers(), fft_len);
      row.measured = per_iter(track.counters[0]);
      rows.push_back(std::move(row));
    } else {
      const std::string sys_label = track.key.substr(std::string("dpmd:").size());
      const SystemSetup* sys = nullptr;
      for (const SystemSetup& s : ctx.systems)
        if (s.label == sys_label) sys = &s;
      if (!sys) continue;
      for (int k = 0; k < sys->top.n_nodes(); ++k) {
        ComplexityRow row;
        row.algorithm = "dpmd";
        row.system = sys_label;
        row.node = k;
        const auto mk = static_cast<Eigen::Index>(sys->part.mic_sets[k].size());
        const auto lk = static_cast<Eigen::Index>(
            std::max<std::size_t>(1, sys->part.speaker_sets[k].size()));
        row.model = complexity_dpmd(mk, lk, mk,
                                    static_cast<Eigen::Index>(sys->top.neighborhood(k).size()),
                                    ctx.ctrl.speakers(), fft_len);
        row.measured = per_iter(track.counters[static_cast<std::size_t>(k)]);
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

ResultSet monte_carlo_at(const ExperimentConfig& cfg, const Context& ctx, int jobs) {
  const int runs = cfg.monte_carlo_runs;
  std::vector<MultiRunResult> results(static_cast<std::size_t>(runs));

  const auto errors = parallel_for(runs, jobs, [&](int i) {
    const std::uint64_t run_seed =
        derive_seed(cfg.seed, {static_cast<std::uint64_t>(ctx.freq_index),
                               static_cast<std::uint64_t>(i)});
    results[static_cast<std::size_t>(i)] = run_single_impl(cfg, ctx, run_seed);
  });

  // Divergence policy, applied in run-index order.
  int diverged = 0;
  std::vector<bool> included(static_cast<std::size_t>(runs), true);
  for (int i = 0; i < runs; ++i) {
    if (!errors[static_cast<std::size_t>(i)]) continue;
    if (!cfg.allow_divergence) std::rethrow_exception(errors[static_cast<std::size_t>(i)]);
    included[static_cast<std::size_t>(i)] = false;
    ++diverged;
  }
  if (diverged == runs)
    throw Error("all " + std::to_string(runs) + " Monte Carlo runs diverged");

  ResultSet rs;
  rs.monte_carlo_runs = runs;
  rs.provenance = make_provenance(cfg, jobs, diverged);

  // Fold curves in run-index order.
  const MultiRunResult* first = nullptr;
  for (int i = 0; i < runs && !first; ++i)
    if (included[static_cast<std::size_t>(i)]) first = &results[static_cast<std::size_t>(i)];

  for (std::size_t t = 0; t < first->tracks.size(); ++t) {
    struct PerPointSet {
      CurveAccumulator nmse, ac;
    } control, validation;
    for (int i = 0; i < runs; ++i) {
      if (!included[static_cast<std::size_t>(i)]) continue;
      const RunTrajectory& traj = results[static_cast<std::size_t>(i)].tracks[t].traj;
      control.nmse.fold(traj.nmse_control);
      control.ac.fold(traj.ac_control);
      validation.nmse.fold(traj.nmse_validation);
      validation.ac.fold(traj.ac_validation);
    }
    const std::string& key = first->tracks[t].key;
    const std::string algorithm = key == "cpm" ? "cpm" : "dpmd";
    LearningCurve ctrl_curve, val_curve;
    ctrl_curve.algorithm = algorithm;
    ctrl_curve.point_set = PointSet::control;
    control.nmse.finish(ctrl_curve.nmse_mean_db, ctrl_curve.nmse_std_db);
    control.ac.finish(ctrl_curve.ac_mean_db, ctrl_curve.ac_std_db);
    val_curve.algorithm = algorithm;
    val_curve.point_set = PointSet::validation;
    validation.nmse.finish(val_curve.nmse_mean_db, val_curve.nmse_std_db);
    validation.ac.finish(val_curve.ac_mean_db, val_curve.ac_std_db);
    rs.curves.push_back(std::move(ctrl_curve));
    rs.curves.push_back(std::move(val_curve));
  }

  rs.complexity = complexity_rows_for(ctx, static_cast<double>(cfg.window_len),
                                      first->tracks, cfg.iterations);
  return rs;
}

}  // namespace

SingleRunResult run_single(const ExperimentConfig& cfg, std::uint64_t run_seed) {
  cfg.validate();
  const Context ctx = build_context(cfg, 0, /*all_paper_systems=*/false);
  const MultiRunResult multi = run_single_impl(cfg, ctx, run_seed);

  SingleRunResult out;
  out.step_size_used = multi.step_size_used;
  for (const AlgoTrack& track : multi.tracks) {
    const std::string key = track.key == "cpm" ? "cpm" : "dpmd";
    out.trajectories[key] = track.traj;
    out.final_filters[key] = track.final_filter;
    out.measured_ops[key] = track.counters;
  }
  return out;
}

ResultSet run_monte_carlo(const ExperimentConfig& cfg) {
  cfg.validate();
  const Context ctx = build_context(cfg, 0, /*all_paper_systems=*/false);
  return monte_carlo_at(cfg, ctx, resolve_jobs(cfg));
}

ResultSet frequency_sweep(const ExperimentConfig& cfg) {
  ExperimentConfig sweep_cfg = cfg;
  if (!cfg.frequencies_explicit) {
    sweep_cfg.frequencies.clear();
    for (int f = 100; f <= 4000; f += 100) sweep_cfg.frequencies.push_back(f);
    sweep_cfg.frequencies_explicit = true;
  }
  sweep_cfg.validate();
  const int jobs = resolve_jobs(sweep_cfg);
  const auto window =
      static_cast<std::size_t>(std::max<long>(1, sweep_cfg.iterations / 10));

  ResultSet rs;
  rs.monte_carlo_runs = sweep_cfg.monte_carlo_runs;
  rs.provenance = make_provenance(sweep_cfg, jobs, 0);

  bool have_complexity = false;
  for (std::size_t fi = 0; fi < sweep_cfg.frequencies.size(); ++fi) {
    const double freq = sweep_cfg.frequencies[fi];
    try {
      const Context ctx = build_context(sweep_cfg, fi, /*all_paper_systems=*/true);
      ResultSet bin = monte_carlo_at(sweep_cfg, ctx, jobs);
      rs.provenance.diverged_runs += bin.provenance.diverged_runs;

      // Steady state of the mean curves over the final 10% of iterations.
      std::size_t curve_idx = 0;
      std::vector<std::string> sys_labels;
      if (ctx.cpm_active) sys_labels.push_back("-");
      for (const SystemSetup& s : ctx.systems) sys_labels.push_back(s.label);
      for (const std::string& sys : sys_labels) {
        const LearningCurve& ctrl_curve = bin.curves.at(curve_idx);
        SweepPoint p;
        p.freq_hz = freq;
        p.algorithm = sys == "-" ? "cpm" : "dpmd";
        p.system = sys;
        p.nmse_ss_db = steady_state(ctrl_curve.nmse_mean_db, window).mean_db;
        p.ac_ss_db = steady_state(ctrl_curve.ac_mean_db, window).mean_db;
        rs.sweep.push_back(std::move(p));
        curve_idx += 2;  // skip the validation curve of this track
      }
      if (!have_complexity) {
        rs.complexity = std::move(bin.complexity);
        have_complexity = true;
      }
    } catch (const std::exception& e) {
      std::vector<std::string> sys_labels;
      if (cfg.algorithm != Algorithm::dpmd) sys_labels.push_back("-");
      if (cfg.algorithm != Algorithm::cpm) {
        if (sweep_cfg.system == SystemKind::custom) {
          sys_labels.push_back("custom");
        } else {
          sys_labels.push_back("system1");
          sys_labels.push_back("system2");
        }
      }
      for (const std::string& sys : sys_labels) {
        SweepPoint p;
        p.freq_hz = freq;
        p.algorithm = sys == "-" ? "cpm" : "dpmd";
        p.system = sys;
        p.nmse_ss_db = std::numeric_limits<double>::quiet_NaN();
        p.ac_ss_db = std::numeric_limits<double>::quiet_NaN();
        p.failed = true;
        p.error = e.what();
        rs.sweep.push_back(std::move(p));
      }
    }
  }
  return rs;
}

std::vector<ComplexityRow> complexity_report(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentConfig report_cfg = cfg;
  report_cfg.algorithm = Algorithm::both;
  report_cfg.iterations = 1;
  report_cfg.monte_carlo_runs = 1;

  const Context ctx = build_context(report_cfg, 0, /*all_paper_systems=*/true);
  const std::uint64_t run_seed = derive_seed(report_cfg.seed, {0, 0});
  const MultiRunResult one = run_single_impl(report_cfg, ctx, run_seed);
  return complexity_rows_for(ctx, static_cast<double>(report_cfg.window_len), one.tracks, 1);
}

}  // namespace psz
