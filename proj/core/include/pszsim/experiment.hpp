#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pszsim/diffusion.hpp"
#include "pszsim/metrics.hpp"
#include "pszsim/scene.hpp"
#include "pszsim/types.hpp"

namespace psz {

enum class Algorithm { cpm, dpmd, both };
enum class SystemKind { system1, system2, custom };
enum class AtfBackend { freefield, image_source, file };
enum class CombinationRule { uniform, metropolis };
enum class AtfNormalization { none, unit_mean_power };

struct CustomNode {
  std::vector<int> mics;       // control-mic indices, bright-first global order
  std::vector<int> speakers;   // speaker indices
  std::vector<int> neighbors;  // other node ids; self is implicit
};

/// Optional explicit scene, replacing the built-in geometry.
struct CustomScene {
  Vec3 room_dims = Vec3::Zero();
  std::vector<Vec3> speakers;
  std::vector<Vec3> bright_mics;
  std::vector<Vec3> dark_mics;
  std::vector<Vec3> validation_points;
  double sound_speed = 343.0;
};

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::both;
  SystemKind system = SystemKind::system1;
  std::vector<CustomNode> custom_system;

  AtfBackend atf_backend = AtfBackend::freefield;
  TargetMode target_mode = TargetMode::planewave;

  std::vector<double> frequencies = {1000.0};
  bool frequencies_explicit = false;

  long iterations = 5000;
  int monte_carlo_runs = 100;

  double step_size = 2.5;
  bool step_size_auto = false;  // "auto": 0.5 * stability_bound(H(0)) per run

  double perturbation_variance = 0.0707;
  double snr_db = 20.0;  // +infinity: no measurement noise
  CombinationRule combination_rule = CombinationRule::uniform;
  std::uint64_t seed = 12345;
  std::string output_dir = "results";

  // scene parameters
  double standoff = kDefaultStandoff;
  double zone_separation = kDefaultZoneSeparation;
  double validation_offset = kDefaultValidationOffset;
  double sound_speed = 343.0;
  std::optional<CustomScene> scene;

  // signal/backend parameters
  double sample_rate = 8000.0;
  int window_len = 3200;
  double t60 = 0.2;
  int max_order = -1;
  Vec3 planewave_direction = Vec3(0.0, 1.0, 0.0);
  double planewave_amplitude = 1.0;
  AtfNormalization atf_normalization = AtfNormalization::unit_mean_power;
  std::string atf_file;
  std::string validation_atf_file;

  bool allow_divergence = false;

  // execution (CLI flag / PSZSIM_JOBS, never a config-file key)
  int jobs = 0;  // 0: hardware concurrency

  void validate() const;  // throws ConfigError naming field and constraint
};

/// Parses and validates a JSON config file. Unknown keys are errors; an
/// empty file yields the defaults above. `run`/`sweep` fill the frequency
/// list when the file left it implicit.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& json_text);

/// Canonical JSON rendering of a fully resolved config (used for
/// provenance and config hashing).
std::string config_to_json(const ExperimentConfig& cfg);

struct RunTrajectory {
  // indexed by iteration (metrics taken after each update)
  std::vector<double> nmse_control, ac_control;
  std::vector<double> nmse_validation, ac_validation;
};

struct SingleRunResult {
  // keyed "cpm" / "dpmd"
  std::map<std::string, RunTrajectory> trajectories;
  std::map<std::string, CVector> final_filters;
  // per-node measured update ops, totals over the run ("cpm" has one entry)
  std::map<std::string, std::vector<MacCounter>> measured_ops;
  double step_size_used = 0.0;
};

/// One full adaptive run at the config's single frequency. Deterministic
/// given (config, run_seed).
SingleRunResult run_single(const ExperimentConfig& cfg, std::uint64_t run_seed);

struct LearningCurve {
  std::string algorithm;  // "cpm" / "dpmd"
  PointSet point_set = PointSet::control;
  std::vector<double> nmse_mean_db, nmse_std_db;
  std::vector<double> ac_mean_db, ac_std_db;
};

struct SweepPoint {
  double freq_hz = 0.0;
  std::string algorithm;  // "cpm" / "dpmd"
  std::string system;     // "-", "system1", "system2", "custom"
  double nmse_ss_db = 0.0;
  double ac_ss_db = 0.0;
  bool failed = false;
  std::string error;
};

struct ComplexityRow {
  std::string algorithm;
  std::string system;  // "-" for cpm
  int node = -1;       // -1 for cpm
  ComplexityProfile model;
  MacCounter measured;  // per-iteration update ops actually executed
};

struct Provenance {
  std::string config_json;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string code_version;
  std::string timestamp;
  int jobs = 1;
  int diverged_runs = 0;
};

struct ResultSet {
  std::vector<LearningCurve> curves;
  std::vector<SweepPoint> sweep;
  std::vector<ComplexityRow> complexity;
  Provenance provenance;
  int monte_carlo_runs = 0;
};

/// monte_carlo_runs independent runs at the single configured frequency;
/// per-run seeds derive from (seed, frequency_index, run_index, role).
/// Aggregation is a fold in run-index order, so worker count never changes
/// the result. A diverged run fails the experiment unless
/// allow_divergence is set, in which case it is excluded and counted.
ResultSet run_monte_carlo(const ExperimentConfig& cfg);

/// Runs run_monte_carlo per frequency bin and records the steady state of
/// the mean curves (final 10% of iterations). With a paper system the
/// distributed algorithm is evaluated for both System 1 and System 2.
/// Per-bin failures are recorded and the sweep continues.
ResultSet frequency_sweep(const ExperimentConfig& cfg);

/// Table-1 style complexity report (model + one measured iteration).
std::vector<ComplexityRow> complexity_report(const ExperimentConfig& cfg);

/// Writes learning_curves.csv, sweep.csv, complexity.csv and
/// provenance.json into `dir`.
void write_results(const ResultSet& rs, const std::filesystem::path& dir);

/// FNV-1a over the canonical config JSON.
std::uint64_t config_hash(const std::string& canonical_json);

inline constexpr const char* kVersion = "0.1.0";

}  // namespace psz
