#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "pszsim/atf_io.hpp"
#include "pszsim/experiment.hpp"
#include "pszsim/pm.hpp"

using namespace psz;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("pszsim_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_file(const std::string& tag, const std::string& text) {
  const fs::path path = fs::temp_directory_path() / ("pszsim_cfg_" + tag + ".json");
  std::ofstream os(path);
  os << text;
  return path;
}

// Loudspeaker line plus two separated mic rows, spread widely enough that
// the transfer matrix is well conditioned at 1 kHz.
CustomScene desk_scene(int n_speakers, int n_bright, int n_dark) {
  CustomScene sc;
  sc.room_dims = Vec3(6.0, 5.0, 3.0);
  sc.sound_speed = 343.0;
  for (int l = 0; l < n_speakers; ++l)
    sc.speakers.push_back(Vec3(1.2 + 0.6 * l, 1.0 + 0.1 * (l % 2), 1.5));
  for (int m = 0; m < n_bright; ++m)
    sc.bright_mics.push_back(Vec3(1.0 + 0.55 * m, 3.0 + 0.15 * (m % 3), 1.4));
  for (int m = 0; m < n_dark; ++m)
    sc.dark_mics.push_back(Vec3(1.1 + 0.55 * m, 4.1 + 0.15 * (m % 3), 1.6));
  for (const Vec3& m : sc.bright_mics)
    sc.validation_points.push_back(m + Vec3(0.005, 0.005, 0.0));
  for (const Vec3& m : sc.dark_mics)
    sc.validation_points.push_back(m + Vec3(0.005, 0.005, 0.0));
  return sc;
}

std::vector<CustomNode> even_ring_nodes(int n_nodes, int n_mics, int n_speakers) {
  std::vector<CustomNode> nodes(n_nodes);
  for (int m = 0; m < n_mics; ++m) nodes[m % n_nodes].mics.push_back(m);
  for (int l = 0; l < n_speakers; ++l) nodes[l % n_nodes].speakers.push_back(l);
  for (int k = 0; k < n_nodes; ++k) {
    if (n_nodes > 1) {
      nodes[k].neighbors.push_back((k + 1) % n_nodes);
      nodes[k].neighbors.push_back((k + n_nodes - 1) % n_nodes);
    }
  }
  return nodes;
}

}  // namespace

TEST_CASE("config defaults from an empty file") {
  const fs::path path = write_file("empty", "");
  const ExperimentConfig cfg = load_config(path);

  CHECK(cfg.algorithm == Algorithm::both);
  CHECK(cfg.system == SystemKind::system1);
  CHECK(cfg.atf_backend == AtfBackend::freefield);
  CHECK(cfg.target_mode == TargetMode::planewave);
  REQUIRE(cfg.frequencies.size() == 1);
  CHECK(cfg.frequencies[0] == 1000.0);
  CHECK(!cfg.frequencies_explicit);
  CHECK(cfg.iterations == 5000);
  CHECK(cfg.monte_carlo_runs == 100);
  CHECK(cfg.step_size == 2.5);
  CHECK(!cfg.step_size_auto);
  CHECK(cfg.perturbation_variance == 0.0707);
  CHECK(cfg.snr_db == 20.0);
  CHECK(cfg.combination_rule == CombinationRule::uniform);
  CHECK(cfg.sample_rate == 8000.0);
  CHECK(cfg.window_len == 3200);
  fs::remove(path);
}

TEST_CASE("config validation errors name the field") {
  SUBCASE("iterations") {
    CHECK_THROWS_WITH_AS(parse_config(R"({"iterations": 0})"),
                         doctest::Contains("iterations"), ConfigError);
  }
  SUBCASE("unknown key") {
    CHECK_THROWS_WITH_AS(parse_config(R"({"bogus_knob": 1})"),
                         doctest::Contains("bogus_knob"), ConfigError);
  }
  SUBCASE("unknown enum value") {
    CHECK_THROWS_WITH_AS(parse_config(R"({"algorithm": "quantum"})"),
                         doctest::Contains("algorithm"), ConfigError);
  }
  SUBCASE("negative frequency") {
    CHECK_THROWS_WITH_AS(parse_config(R"({"frequencies": [100, -5]})"),
                         doctest::Contains("frequencies"), ConfigError);
  }
  SUBCASE("malformed JSON") {
    CHECK_THROWS_AS(parse_config("{ not json"), ConfigError);
  }
  SUBCASE("nested custom_system key") {
    CHECK_THROWS_WITH_AS(
        parse_config(R"({"system": "custom",
                         "custom_system": [{"mics": [0], "speakers": [0], "wires": []}]})"),
        doctest::Contains("wires"), ConfigError);
  }
}

TEST_CASE("step size and snr accept their sentinel strings") {
  const ExperimentConfig a = parse_config(R"({"step_size": "auto"})");
  CHECK(a.step_size_auto);
  const ExperimentConfig b = parse_config(R"({"snr_db": "inf"})");
  CHECK(std::isinf(b.snr_db));
  CHECK_THROWS_AS(parse_config(R"({"step_size": "fast"})"), ConfigError);
}

TEST_CASE("config hash is stable and sensitive") {
  ExperimentConfig a, b;
  b.seed = a.seed + 1;
  const std::string ja = config_to_json(a);
  CHECK(config_hash(ja) == config_hash(config_to_json(a)));
  CHECK(config_hash(ja) != config_hash(config_to_json(b)));
}

TEST_CASE("run_single is deterministic in the run seed") {
  ExperimentConfig cfg;
  cfg.scene = desk_scene(3, 3, 3);
  cfg.system = SystemKind::custom;
  cfg.custom_system = even_ring_nodes(3, 6, 3);
  cfg.iterations = 60;
  cfg.monte_carlo_runs = 1;
  cfg.step_size_auto = true;

  const SingleRunResult a = run_single(cfg, 99);
  const SingleRunResult b = run_single(cfg, 99);
  const SingleRunResult c = run_single(cfg, 100);

  for (const char* key : {"cpm", "dpmd"}) {
    const auto& ta = a.trajectories.at(key);
    const auto& tb = b.trajectories.at(key);
    REQUIRE(ta.nmse_control.size() == 60);
    for (std::size_t i = 0; i < 60; ++i) {
      CHECK(ta.nmse_control[i] == tb.nmse_control[i]);
      CHECK(ta.ac_validation[i] == tb.ac_validation[i]);
    }
    CHECK((a.final_filters.at(key) - b.final_filters.at(key)).norm() == 0.0);
  }
  CHECK(a.trajectories.at("cpm").nmse_control.back() !=
        c.trajectories.at("cpm").nmse_control.back());
}

TEST_CASE("static noise-free run lands on the least-squares residual") {
  ExperimentConfig cfg;
  cfg.scene = desk_scene(4, 4, 4);
  cfg.algorithm = Algorithm::cpm;
  cfg.perturbation_variance = 0.0;
  cfg.snr_db = std::numeric_limits<double>::infinity();
  cfg.step_size_auto = true;
  cfg.iterations = 100000;
  cfg.atf_normalization = AtfNormalization::none;

  const SingleRunResult r = run_single(cfg, 7);

  // Independent oracle: direct least squares on the same scene.
  SceneGeometry geom;
  geom.room_dims = cfg.scene->room_dims;
  geom.speaker_positions = cfg.scene->speakers;
  geom.bright_mics = cfg.scene->bright_mics;
  geom.dark_mics = cfg.scene->dark_mics;
  geom.validation_points = cfg.scene->validation_points;
  geom.sound_speed = cfg.scene->sound_speed;
  const ATFMatrix atf = freefield_atf(geom, 1000.0);
  const DesiredField target =
      planewave_target(geom, 1000.0, cfg.planewave_direction, cfg.planewave_amplitude);
  const ControlFilter ls = least_squares_solution(atf, target, 0.0);
  const CVector p = atf.entries * ls.weights;
  const double ls_nmse =
      10.0 * std::log10((target.bright() - p.head(4)).squaredNorm() /
                        target.bright().squaredNorm());

  CHECK(std::abs(r.trajectories.at("cpm").nmse_control.back() - ls_nmse) <= 1e-6);
}

TEST_CASE("single-node network reproduces the centralized run") {
  ExperimentConfig cfg;
  cfg.scene = desk_scene(4, 4, 4);
  cfg.system = SystemKind::custom;
  cfg.custom_system = even_ring_nodes(1, 8, 4);
  cfg.iterations = 200;
  cfg.step_size_auto = true;

  const SingleRunResult r = run_single(cfg, 3);
  const auto& cpm = r.trajectories.at("cpm");
  const auto& dpmd = r.trajectories.at("dpmd");
  for (std::size_t i = 0; i < cpm.nmse_control.size(); ++i) {
    CHECK(std::abs(cpm.nmse_control[i] - dpmd.nmse_control[i]) <=
          1e-15 * std::abs(cpm.nmse_control[i]));
    CHECK(std::abs(cpm.ac_control[i] - dpmd.ac_control[i]) <=
          1e-15 * std::abs(cpm.ac_control[i]));
  }
  CHECK((r.final_filters.at("cpm") - r.final_filters.at("dpmd")).norm() == 0.0);
}

TEST_CASE("monte carlo with one run has zero spread") {
  ExperimentConfig cfg;
  cfg.scene = desk_scene(3, 3, 3);
  cfg.algorithm = Algorithm::cpm;
  cfg.iterations = 40;
  cfg.monte_carlo_runs = 1;
  cfg.step_size_auto = true;

  const ResultSet rs = run_monte_carlo(cfg);
  REQUIRE(!rs.curves.empty());
  for (const LearningCurve& c : rs.curves) {
    for (double s : c.nmse_std_db) CHECK(s == 0.0);
    for (double s : c.ac_std_db) CHECK(s == 0.0);
  }
}

TEST_CASE("divergence policy") {
  // Scalar instance at a step size where, with this seed, exactly three of
  // six runs overflow (found by scan, frozen here; everything is
  // deterministic given the config and seed).
  ExperimentConfig cfg;
  CustomScene sc;
  sc.room_dims = Vec3(6.0, 5.0, 3.0);
  sc.speakers = {{2.0, 1.0, 1.5}};
  sc.bright_mics = {{2.2, 3.0, 1.5}};
  sc.dark_mics = {{2.4, 4.0, 1.5}};
  sc.validation_points = {Vec3(2.205, 3.005, 1.5), Vec3(2.405, 4.005, 1.5)};
  cfg.scene = sc;
  cfg.algorithm = Algorithm::cpm;
  cfg.monte_carlo_runs = 6;
  cfg.iterations = 3000;
  cfg.perturbation_variance = 2.0;
  cfg.step_size = 0.47;
  cfg.seed = 2;

  SUBCASE("default: the experiment fails") {
    cfg.allow_divergence = false;
    CHECK_THROWS_AS(run_monte_carlo(cfg), DivergenceError);
  }

  SUBCASE("allow_divergence: diverged runs are excluded and counted") {
    cfg.allow_divergence = true;
    const ResultSet rs = run_monte_carlo(cfg);
    CHECK(rs.provenance.diverged_runs == 4);
    for (const LearningCurve& c : rs.curves)
      for (double v : c.nmse_mean_db) CHECK(std::isfinite(v));
  }
}

TEST_CASE("worker count does not change aggregated results") {
  ExperimentConfig cfg;
  cfg.scene = desk_scene(3, 4, 4);
  cfg.system = SystemKind::custom;
  cfg.custom_system = even_ring_nodes(2, 8, 3);
  cfg.iterations = 50;
  cfg.monte_carlo_runs = 6;
  cfg.step_size_auto = true;

  cfg.jobs = 1;
  const ResultSet serial = run_monte_carlo(cfg);
  cfg.jobs = 4;
  const ResultSet parallel = run_monte_carlo(cfg);

  REQUIRE(serial.curves.size() == parallel.curves.size());
  for (std::size_t c = 0; c < serial.curves.size(); ++c) {
    for (std::size_t i = 0; i < serial.curves[c].nmse_mean_db.size(); ++i) {
      CHECK(serial.curves[c].nmse_mean_db[i] == parallel.curves[c].nmse_mean_db[i]);
      CHECK(serial.curves[c].nmse_std_db[i] == parallel.curves[c].nmse_std_db[i]);
      CHECK(serial.curves[c].ac_mean_db[i] == parallel.curves[c].ac_mean_db[i]);
    }
  }
}

TEST_CASE("result files") {
  SUBCASE("empty result set writes header-only files") {
    const fs::path dir = temp_dir("empty_rs");
    write_results(ResultSet{}, dir);

    auto first_line = [](const fs::path& p) {
      std::ifstream is(p);
      std::string line;
      std::getline(is, line);
      return line;
    };
    CHECK(first_line(dir / "learning_curves.csv") ==
          "iteration,algorithm,point_set,nmse_mean_db,nmse_std_db,ac_mean_db,ac_std_db");
    CHECK(first_line(dir / "sweep.csv") == "freq_hz,algorithm,system,nmse_ss_db,ac_ss_db");
    CHECK(fs::file_size(dir / "learning_curves.csv") ==
          std::string("iteration,algorithm,point_set,nmse_mean_db,nmse_std_db,ac_mean_db,"
                      "ac_std_db\n")
              .size());
    fs::remove_all(dir);
  }

  SUBCASE("written values parse back to 1e-12") {
    ExperimentConfig cfg;
    cfg.scene = desk_scene(3, 3, 3);
    cfg.algorithm = Algorithm::cpm;
    cfg.iterations = 25;
    cfg.monte_carlo_runs = 2;
    cfg.step_size_auto = true;

    const ResultSet rs = run_monte_carlo(cfg);
    const fs::path dir = temp_dir("roundtrip");
    write_results(rs, dir);

    std::ifstream is(dir / "learning_curves.csv");
    std::string line;
    std::getline(is, line);  // header
    std::size_t row = 0;
    const LearningCurve& ctrl = rs.curves.front();
    while (std::getline(is, line) && row < ctrl.nmse_mean_db.size()) {
      std::stringstream ss(line);
      std::string cell;
      std::vector<std::string> cells;
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      REQUIRE(cells.size() == 7);
      if (cells[2] != "control") continue;
      const double written = std::stod(cells[3]);
      CHECK(std::abs(written - ctrl.nmse_mean_db[row]) <=
            1e-12 * std::max(1.0, std::abs(ctrl.nmse_mean_db[row])));
      ++row;
    }
    CHECK(row == ctrl.nmse_mean_db.size());
    fs::remove_all(dir);
  }
}

TEST_CASE("file ATF backend reproduces the synthesizing backend") {
  ExperimentConfig cfg;
  cfg.scene = desk_scene(3, 4, 4);
  cfg.iterations = 40;
  cfg.monte_carlo_runs = 2;
  cfg.system = SystemKind::custom;
  cfg.custom_system = even_ring_nodes(2, 8, 3);
  cfg.step_size_auto = true;

  const ResultSet direct = run_monte_carlo(cfg);

  // Export the exact nominal ATFs this scene produces, then re-run through
  // the container.
  SceneGeometry geom;
  geom.room_dims = cfg.scene->room_dims;
  geom.speaker_positions = cfg.scene->speakers;
  geom.bright_mics = cfg.scene->bright_mics;
  geom.dark_mics = cfg.scene->dark_mics;
  geom.validation_points = cfg.scene->validation_points;
  geom.sound_speed = cfg.scene->sound_speed;
  const fs::path dir = temp_dir("atf_files");
  save_atf(dir / "ctrl.atf", {freefield_atf(geom, 1000.0, PointSet::control)});
  save_atf(dir / "val.atf", {freefield_atf(geom, 1000.0, PointSet::validation)});

  cfg.atf_backend = AtfBackend::file;
  cfg.atf_file = (dir / "ctrl.atf").string();
  cfg.validation_atf_file = (dir / "val.atf").string();
  const ResultSet via_file = run_monte_carlo(cfg);

  REQUIRE(direct.curves.size() == via_file.curves.size());
  for (std::size_t c = 0; c < direct.curves.size(); ++c)
    for (std::size_t i = 0; i < direct.curves[c].nmse_mean_db.size(); ++i)
      CHECK(direct.curves[c].nmse_mean_db[i] == via_file.curves[c].nmse_mean_db[i]);
  fs::remove_all(dir);
}

TEST_CASE("frequency sweep") {
  SUBCASE("degenerate single-bin sweep equals the monte carlo steady state") {
    ExperimentConfig cfg;
    cfg.scene = desk_scene(3, 3, 3);
    cfg.algorithm = Algorithm::cpm;
    cfg.frequencies = {800.0};
    cfg.frequencies_explicit = true;
    cfg.iterations = 60;
    cfg.monte_carlo_runs = 2;
    cfg.step_size_auto = true;

    const ResultSet mc = run_monte_carlo(cfg);
    const ResultSet sw = frequency_sweep(cfg);
    REQUIRE(sw.sweep.size() == 1);
    const SteadyState ss = steady_state(mc.curves.front().nmse_mean_db, 6);
    CHECK(sw.sweep[0].freq_hz == 800.0);
    CHECK(std::abs(sw.sweep[0].nmse_ss_db - ss.mean_db) <= 1e-12);
  }

  SUBCASE("default sweep covers 40 bins with both systems") {
    ExperimentConfig cfg;  // paper scene so system1/system2 both apply
    cfg.iterations = 30;
    cfg.monte_carlo_runs = 1;
    cfg.step_size_auto = true;

    const ResultSet sw = frequency_sweep(cfg);
    CHECK(sw.sweep.size() == 40 * 3);
    std::set<double> freqs;
    for (const SweepPoint& p : sw.sweep) {
      freqs.insert(p.freq_hz);
      CHECK(!p.failed);
    }
    CHECK(freqs.size() == 40);
    CHECK(*freqs.begin() == 100.0);
    CHECK(*freqs.rbegin() == 4000.0);
    int sys2_rows = 0;
    for (const SweepPoint& p : sw.sweep)
      if (p.system == "system2") ++sys2_rows;
    CHECK(sys2_rows == 40);
  }
}

TEST_CASE("distinct seed paths give distinct streams") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t f = 0; f < 10; ++f)
    for (std::uint64_t r = 0; r < 100; ++r)
      for (std::uint64_t role = 0; role < 3; ++role)
        seen.insert(derive_seed(derive_seed(12345, {f, r}), {role}));
  CHECK(seen.size() == 10 * 100 * 3);
}

TEST_CASE("complexity report covers both paper systems") {
  ExperimentConfig cfg;
  cfg.iterations = 5;
  cfg.monte_carlo_runs = 1;
  cfg.step_size_auto = true;

  const auto rows = complexity_report(cfg);
  int cpm_rows = 0, s1 = 0, s2 = 0;
  for (const ComplexityRow& r : rows) {
    if (r.algorithm == "cpm") {
      ++cpm_rows;
      CHECK(r.measured.additions == 32.0 * 9.0);
      CHECK(r.measured.multiplications == 33.0 * 9.0);
    } else if (r.system == "system1") {
      ++s1;
    } else if (r.system == "system2") {
      ++s2;
    }
  }
  CHECK(cpm_rows == 1);
  CHECK(s1 == 9);
  CHECK(s2 == 4);
}

#ifdef PSZSIM_CLI_PATH
namespace {

int run_cli(const std::string& args, const fs::path& out_file) {
  const std::string cmd =
      std::string(PSZSIM_CLI_PATH) + " " + args + " > " + out_file.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("command line interface") {
  const fs::path dir = temp_dir("cli");
  const fs::path log = dir / "out.txt";
  const fs::path cfg = dir / "cfg.json";
  std::ofstream(cfg) << "{}";

  SUBCASE("complexity report prints both systems and exits zero") {
    CHECK(run_cli("complexity " + cfg.string(), log) == 0);
    const std::string out = slurp(log);
    CHECK(out.find("cpm") != std::string::npos);
    CHECK(out.find("system1") != std::string::npos);
    CHECK(out.find("system2") != std::string::npos);
  }

  SUBCASE("unknown subcommand fails with usage") {
    CHECK(run_cli("frobnicate", log) != 0);
  }

  SUBCASE("unknown flag fails") {
    CHECK(run_cli("complexity " + cfg.string() + " --turbo", log) != 0);
  }

  SUBCASE("missing config file fails with a diagnostic") {
    CHECK(run_cli("run " + (dir / "nope.json").string(), log) != 0);
    CHECK(slurp(log).find("error") != std::string::npos);
  }

  SUBCASE("multi-frequency config is rejected by run") {
    std::ofstream(cfg) << R"({"frequencies": [500, 600]})";
    CHECK(run_cli("run " + cfg.string(), log) != 0);
    CHECK(slurp(log).find("sweep") != std::string::npos);
  }

  fs::remove_all(dir);
}
#endif
