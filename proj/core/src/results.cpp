#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "pszsim/experiment.hpp"

namespace psz {

namespace {

// Decimal with 15 significant digits; round-trips doubles to well below
// 1e-12 relative.
std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.15g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);  // LF endings
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

const char* point_set_name(PointSet ps) {
  return ps == PointSet::control ? "control" : "validation";
}

}  // namespace

void write_results(const ResultSet& rs, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string());

  {
    auto os = open_out(dir / "learning_curves.csv");
    os << "iteration,algorithm,point_set,nmse_mean_db,nmse_std_db,ac_mean_db,ac_std_db\n";
    for (const LearningCurve& c : rs.curves) {
      for (std::size_t i = 0; i < c.nmse_mean_db.size(); ++i) {
        os << (i + 1) << ',' << c.algorithm << ',' << point_set_name(c.point_set) << ','
           << num(c.nmse_mean_db[i]) << ',' << num(c.nmse_std_db[i]) << ','
           << num(c.ac_mean_db[i]) << ',' << num(c.ac_std_db[i]) << '\n';
      }
    }
    if (!os) throw IoError("write failed for " + (dir / "learning_curves.csv").string());
  }

  {
    auto os = open_out(dir / "sweep.csv");
    os << "freq_hz,algorithm,system,nmse_ss_db,ac_ss_db\n";
    for (const SweepPoint& p : rs.sweep) {
      os << num(p.freq_hz) << ',' << p.algorithm << ',' << p.system << ','
         << num(p.nmse_ss_db) << ',' << num(p.ac_ss_db) << '\n';
    }
    if (!os) throw IoError("write failed for " + (dir / "sweep.csv").string());
  }

  {
    auto os = open_out(dir / "complexity.csv");
    os << "algorithm,system,node,fft_additions,fft_multiplications,"
          "proc_additions,proc_multiplications,additions,multiplications,"
          "measured_proc_additions,measured_proc_multiplications\n";
    for (const ComplexityRow& r : rs.complexity) {
      os << r.algorithm << ',' << r.system << ',' << r.node << ','
         << num(r.model.fft_additions) << ',' << num(r.model.fft_multiplications) << ','
         << num(r.model.proc_additions) << ',' << num(r.model.proc_multiplications) << ','
         << num(r.model.additions()) << ',' << num(r.model.multiplications()) << ','
         << num(r.measured.additions) << ',' << num(r.measured.multiplications) << '\n';
    }
    if (!os) throw IoError("write failed for " + (dir / "complexity.csv").string());
  }

  {
    nlohmann::ordered_json j;
    j["config"] = nlohmann::ordered_json::parse(rs.provenance.config_json.empty()
                                                    ? "{}"
                                                    : rs.provenance.config_json);
    j["config_hash"] = rs.provenance.config_hash;
    j["seed"] = rs.provenance.seed;
    j["code_version"] = rs.provenance.code_version;
    j["timestamp"] = rs.provenance.timestamp;
    j["jobs"] = rs.provenance.jobs;
    j["monte_carlo_runs"] = rs.monte_carlo_runs;
    j["diverged_runs"] = rs.provenance.diverged_runs;
    nlohmann::ordered_json failed = nlohmann::ordered_json::array();
    for (const SweepPoint& p : rs.sweep) {
      if (p.failed)
        failed.push_back({{"freq_hz", p.freq_hz},
                          {"algorithm", p.algorithm},
                          {"system", p.system},
                          {"error", p.error}});
    }
    j["failed_bins"] = std::move(failed);

    auto os = open_out(dir / "provenance.json");
    os << j.dump(2) << '\n';
    if (!os) throw IoError("write failed for " + (dir / "provenance.json").string());
  }
}

}  // namespace psz
