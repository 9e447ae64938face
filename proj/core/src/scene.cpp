#include "pszsim/scene.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace psz {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kFourPi = 4.0 * std::numbers::pi;

bool inside_room(const Vec3& p, const Vec3& room) {
  return p.x() > 0.0 && p.x() < room.x() && p.y() > 0.0 && p.y() < room.y() &&
         p.z() > 0.0 && p.z() < room.z();
}

void require_inside(const Vec3& p, const Vec3& room, const std::string& what) {
  if (!inside_room(p, room)) {
    throw GeometryError(what + " at (" + std::to_string(p.x()) + ", " +
                        std::to_string(p.y()) + ", " + std::to_string(p.z()) +
                        ") lies outside the room");
  }
}

}  // namespace

std::vector<Vec3> SceneGeometry::control_mics() const {
  std::vector<Vec3> mics = bright_mics;
  mics.insert(mics.end(), dark_mics.begin(), dark_mics.end());
  return mics;
}

void SceneGeometry::validate() const {
  if (speaker_positions.empty()) throw GeometryError("no loudspeakers");
  if (bright_mics.empty()) throw GeometryError("no bright-zone microphones");
  if (dark_mics.empty()) throw GeometryError("no dark-zone microphones");

  for (std::size_t i = 0; i < speaker_positions.size(); ++i)
    require_inside(speaker_positions[i], room_dims, "speaker " + std::to_string(i));
  for (std::size_t i = 0; i < bright_mics.size(); ++i)
    require_inside(bright_mics[i], room_dims, "bright mic " + std::to_string(i));
  for (std::size_t i = 0; i < dark_mics.size(); ++i)
    require_inside(dark_mics[i], room_dims, "dark mic " + std::to_string(i));

  // Each validation point must sit within 0.05 m of exactly one control mic.
  const std::vector<Vec3> mics = control_mics();
  for (std::size_t i = 0; i < validation_points.size(); ++i) {
    require_inside(validation_points[i], room_dims, "validation point " + std::to_string(i));
    int close = 0;
    for (const Vec3& m : mics)
      if ((validation_points[i] - m).norm() <= 0.05) ++close;
    if (close != 1) {
      throw GeometryError("validation point " + std::to_string(i) + " is within 0.05 m of " +
                          std::to_string(close) + " control microphones, expected exactly 1");
    }
  }
}

SceneGeometry paper_geometry(double standoff, double zone_separation,
                             double validation_offset) {
  if (standoff <= 0.0) throw GeometryError("standoff must be positive");
  if (zone_separation <= 0.0) throw GeometryError("zone separation must be positive");
  if (validation_offset <= 0.0) throw GeometryError("validation offset must be positive");

  SceneGeometry g;
  g.room_dims = Vec3(8.088, 7.346, 2.865);
  g.sound_speed = 343.0;
  g.array_plane_height = 1.485;

  const double z = g.array_plane_height;
  const double cx = g.room_dims.x() / 2.0;
  // Plan view centered along y: speaker line at one end, zones `standoff` away.
  const double y_speakers = (g.room_dims.y() - standoff) / 2.0;
  const double y_zones = y_speakers + standoff;

  constexpr int kSpeakers = 9;
  constexpr double kSpeakerSpacing = 0.06;
  for (int l = 0; l < kSpeakers; ++l) {
    const double x = cx + (l - (kSpeakers - 1) / 2.0) * kSpeakerSpacing;
    g.speaker_positions.emplace_back(x, y_speakers, z);
  }

  constexpr int kGrid = 4;
  constexpr double kMicSpacing = 0.075;
  auto add_zone = [&](double center_x, std::vector<Vec3>& out) {
    for (int iy = 0; iy < kGrid; ++iy) {
      for (int ix = 0; ix < kGrid; ++ix) {
        const double x = center_x + (ix - (kGrid - 1) / 2.0) * kMicSpacing;
        const double y = y_zones + (iy - (kGrid - 1) / 2.0) * kMicSpacing;
        out.emplace_back(x, y, z);
      }
    }
  };
  add_zone(cx - zone_separation / 2.0, g.bright_mics);  // bright zone
  add_zone(cx + zone_separation / 2.0, g.dark_mics);    // dark zone

  const double d = validation_offset / std::numbers::sqrt2;
  const Vec3 offset(d, d, 0.0);
  for (const Vec3& m : g.control_mics()) g.validation_points.push_back(m + offset);

  g.validate();
  return g;
}

ATFMatrix freefield_atf_at(std::span<const Vec3> mics, Eigen::Index bright_rows,
                           std::span<const Vec3> speakers, double sound_speed,
                           double freq_hz) {
  if (freq_hz < 0.0) throw GeometryError("frequency must be nonnegative");
  const auto n_mics = static_cast<Eigen::Index>(mics.size());
  const auto n_spk = static_cast<Eigen::Index>(speakers.size());

  ATFMatrix atf;
  atf.freq = freq_hz;
  atf.bright_rows = bright_rows;
  atf.entries.resize(n_mics, n_spk);
  for (Eigen::Index m = 0; m < n_mics; ++m) {
    for (Eigen::Index l = 0; l < n_spk; ++l) {
      const double r = (mics[m] - speakers[l]).norm();
      if (r <= 0.0) {
        throw GeometryError("microphone " + std::to_string(m) + " coincides with speaker " +
                            std::to_string(l));
      }
      const double phase = -kTwoPi * freq_hz * r / sound_speed;
      atf.entries(m, l) = std::polar(1.0 / (kFourPi * r), phase);
    }
  }
  return atf;
}

namespace {

ATFMatrix atf_from_backend(const SceneGeometry& geom, PointSet points,
                           auto&& per_points) {
  if (points == PointSet::control) {
    const std::vector<Vec3> mics = geom.control_mics();
    return per_points(std::span<const Vec3>(mics), geom.bright_count());
  }
  if (geom.validation_points.size() != static_cast<std::size_t>(geom.mic_count())) {
    throw GeometryError("scene carries " + std::to_string(geom.validation_points.size()) +
                        " validation points for " + std::to_string(geom.mic_count()) +
                        " control microphones");
  }
  return per_points(std::span<const Vec3>(geom.validation_points), geom.bright_count());
}

}  // namespace

ATFMatrix freefield_atf(const SceneGeometry& geom, double freq_hz, PointSet points) {
  return atf_from_backend(geom, points, [&](std::span<const Vec3> mics, Eigen::Index bright) {
    return freefield_atf_at(mics, bright, geom.speaker_positions, geom.sound_speed, freq_hz);
  });
}

ATFMatrix image_source_atf(const SceneGeometry& geom, double freq_hz,
                           const ImageSourceParams& params, PointSet points) {
  return atf_from_backend(geom, points, [&](std::span<const Vec3> mics, Eigen::Index bright) {
    return image_source_atf_at(mics, bright, geom.speaker_positions, geom.room_dims,
                               geom.sound_speed, freq_hz, params);
  });
}

ATFMatrix perturb_atf(const ATFMatrix& atf, const PerturbationModel& pert, RngStream& rng) {
  if (pert.variance < 0.0) throw ConfigError("perturbation variance must be nonnegative");
  ATFMatrix out = atf;
  if (pert.variance == 0.0) return out;
  for (Eigen::Index m = 0; m < out.entries.rows(); ++m)
    for (Eigen::Index l = 0; l < out.entries.cols(); ++l)
      out.entries(m, l) += complex_gaussian(rng, pert.variance);
  return out;
}

DesiredField planewave_target(const SceneGeometry& geom, double freq_hz,
                              const Vec3& direction, double amplitude, PointSet points) {
  if (std::abs(direction.norm() - 1.0) > 1e-9)
    throw GeometryError("plane-wave direction must be a unit vector");
  if (amplitude <= 0.0) throw GeometryError("plane-wave amplitude must be positive");

  DesiredField d;
  d.freq = freq_hz;
  d.mode = TargetMode::planewave;
  d.bright_count = geom.bright_count();
  d.values = CVector::Zero(geom.mic_count());

  const double k = kTwoPi * freq_hz / geom.sound_speed;
  std::vector<Vec3> pts;
  if (points == PointSet::control) {
    pts = geom.bright_mics;
  } else {
    pts.assign(geom.validation_points.begin(),
               geom.validation_points.begin() + geom.bright_count());
  }
  for (Eigen::Index m = 0; m < d.bright_count; ++m)
    d.values[m] = std::polar(amplitude, -k * direction.dot(pts[m]));
  return d;
}

DesiredField oracle_target(const ATFMatrix& atf_n, const ControlFilter& g_o,
                           double snr_db, RngStream& rng) {
  if (g_o.weights.size() != atf_n.speakers())
    throw DimensionError("oracle filter length does not match the ATF column count");

  DesiredField d;
  d.freq = atf_n.freq;
  d.mode = TargetMode::oracle;
  d.bright_count = atf_n.bright_rows;
  d.values = atf_n.entries * g_o.weights;

  if (std::isinf(snr_db)) return d;

  const double signal_power = d.values.squaredNorm();
  if (signal_power == 0.0)
    throw SingularSystemError("degenerate oracle target: H g_o = 0 with finite SNR");

  // Total noise energy E||z||^2 = signal_power * 10^(-snr/10), spread over M entries.
  const double per_entry = signal_power * std::pow(10.0, -snr_db / 10.0) /
                           static_cast<double>(d.values.size());
  d.values += complex_gaussian_vector(rng, d.values.size(), per_entry);
  return d;
}

ControlFilter sample_oracle_filter(Eigen::Index length, double freq_hz, RngStream& rng) {
  if (length < 1) throw DimensionError("oracle filter length must be at least 1");
  ControlFilter g;
  g.freq = freq_hz;
  g.weights = complex_gaussian_vector(rng, length, 1.0);
  return g;
}

}  // namespace psz
