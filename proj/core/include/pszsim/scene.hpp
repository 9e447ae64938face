#pragma once

#include <span>
#include <vector>

#include "pszsim/rng.hpp"
#include "pszsim/types.hpp"

namespace psz {

/// Room and array geometry. ATF row ordering everywhere is bright
/// microphones first, then dark, matching the matrix layout.
struct SceneGeometry {
  Vec3 room_dims = Vec3::Zero();
  std::vector<Vec3> speaker_positions;
  std::vector<Vec3> bright_mics;
  std::vector<Vec3> dark_mics;
  std::vector<Vec3> validation_points;  // one per control mic, bright-first
  double sound_speed = 343.0;
  double array_plane_height = 0.0;

  Eigen::Index speaker_count() const {
    return static_cast<Eigen::Index>(speaker_positions.size());
  }
  Eigen::Index bright_count() const {
    return static_cast<Eigen::Index>(bright_mics.size());
  }
  Eigen::Index dark_count() const {
    return static_cast<Eigen::Index>(dark_mics.size());
  }
  Eigen::Index mic_count() const { return bright_count() + dark_count(); }

  /// Control microphones in row order (bright then dark).
  std::vector<Vec3> control_mics() const;

  /// Checks positions-in-room, nonempty arrays and the validation-point
  /// association rule; throws GeometryError naming the violating element.
  void validate() const;
};

inline constexpr double kDefaultStandoff = 2.0;
inline constexpr double kDefaultZoneSeparation = 1.0;
// 0.5 cm along +x and +y in the array plane, 0.707 cm total.
inline constexpr double kDefaultValidationOffset = 0.00707106781186547524;

/// The simulated setup: 8.088 x 7.346 x 2.865 m room, a 9-speaker uniform
/// linear array with 0.06 m spacing, and two 0.225 m square zones, 1 m
/// apart, each sampled by a 4x4 microphone grid at 0.075 m spacing. All
/// arrays sit in the horizontal plane at height 1.485 m; the plan view is
/// centered in the room with `standoff` meters between the speaker line
/// and the zone centers. Each control microphone gets a validation point
/// offset diagonally by `validation_offset` in the array plane.
SceneGeometry paper_geometry(double standoff = kDefaultStandoff,
                             double zone_separation = kDefaultZoneSeparation,
                             double validation_offset = kDefaultValidationOffset);

/// Point-source free-field transfer functions:
/// entry (m, l) = exp(-j 2 pi f r / c) / (4 pi r).
ATFMatrix freefield_atf(const SceneGeometry& geom, double freq_hz,
                        PointSet points = PointSet::control);

ATFMatrix freefield_atf_at(std::span<const Vec3> mics, Eigen::Index bright_rows,
                           std::span<const Vec3> speakers, double sound_speed,
                           double freq_hz);

struct ImageSourceParams {
  double t60 = 0.2;       // seconds
  double sample_rate = 8000.0;
  int window_len = 3200;  // RIR length in samples; DFT length is the next power of two
  int max_order = -1;     // -1: limited only by the window length
};

/// Rectangular-room image-source transfer functions. Uniform wall
/// absorption is derived from T60 via Sabine's formula; each RIR is the
/// sampled sum of image-source arrivals (delays rounded to the sample
/// grid) and the returned entry is the DFT bin nearest freq_hz.
ATFMatrix image_source_atf(const SceneGeometry& geom, double freq_hz,
                           const ImageSourceParams& params,
                           PointSet points = PointSet::control);

ATFMatrix image_source_atf_at(std::span<const Vec3> mics, Eigen::Index bright_rows,
                              std::span<const Vec3> speakers, const Vec3& room_dims,
                              double sound_speed, double freq_hz,
                              const ImageSourceParams& params);

/// One room impulse response between a speaker and a microphone.
std::vector<double> image_source_rir(const Vec3& room_dims, const Vec3& speaker,
                                     const Vec3& mic, double sound_speed,
                                     const ImageSourceParams& params);

/// Uniform Sabine absorption coefficient for the given room and T60.
double sabine_absorption(const Vec3& room_dims, double t60);

struct PerturbationModel {
  double variance = 0.0;    // total complex-entry variance, split re/im
  std::uint64_t seed = 0;   // stream identity; the draw uses the passed stream
};

/// Returns H + V where V has i.i.d. circular complex Gaussian entries of
/// total variance `pert.variance`. A fresh V is drawn on every call; the
/// input is untouched.
ATFMatrix perturb_atf(const ATFMatrix& atf, const PerturbationModel& pert,
                      RngStream& rng);

/// Plane-wave target: bright entries amplitude * exp(-j 2 pi f / c *
/// (direction . x_m)), dark entries exactly zero.
DesiredField planewave_target(const SceneGeometry& geom, double freq_hz,
                              const Vec3& direction, double amplitude,
                              PointSet points = PointSet::control);

/// Measured target d = H_n g_o + z with z circular complex Gaussian scaled
/// to the requested SNR; snr_db = +infinity yields z = 0.
DesiredField oracle_target(const ATFMatrix& atf_n, const ControlFilter& g_o,
                           double snr_db, RngStream& rng);

/// i.i.d. CN(0, 1) filter of length L, drawn once per Monte Carlo run and
/// held fixed by the caller.
ControlFilter sample_oracle_filter(Eigen::Index length, double freq_hz,
                                   RngStream& rng);

}  // namespace psz
