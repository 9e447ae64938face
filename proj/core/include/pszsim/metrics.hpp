#pragma once

#include <map>
#include <span>
#include <string>

#include "pszsim/types.hpp"

namespace psz {

inline constexpr double kNmseFloorDb = -300.0;

/// 10 log10( sum |d_m - p_m|^2 / sum |d_m|^2 ) over the bright zone,
/// clamped below at kNmseFloorDb. d_bright must be nonzero.
double nmse_db(const CVector& d_bright, const CVector& p_bright);

struct AcousticContrast {
  double db = 0.0;
  bool dark_zone_silent = false;  // set when ||H_d g|| = 0; db is +inf
};

/// 10 log10( (M_d ||H_b g||^2) / (M_b ||H_d g||^2) ).
AcousticContrast acoustic_contrast_db(const Eigen::Ref<const CMatrix>& bright_rows,
                                      const Eigen::Ref<const CMatrix>& dark_rows,
                                      const ControlFilter& g);

/// Analytic per-iteration cost model. Counts are real-valued because the
/// transform length enters through log2(F).
struct ComplexityProfile {
  double fft_additions = 0.0;
  double fft_multiplications = 0.0;
  double proc_additions = 0.0;
  double proc_multiplications = 0.0;
  std::map<std::string, double> params;

  double additions() const { return fft_additions + proc_additions; }
  double multiplications() const { return fft_multiplications + proc_multiplications; }
};

/// Centralized per-iteration cost:
///   additions       = (M+L) F log2 F + M L
///   multiplications = (M+L) (F/2) log2 F + (M+1) L
ComplexityProfile complexity_cpm(Eigen::Index mics, Eigen::Index speakers, double fft_len);

/// Per-node distributed cost:
///   additions       = (M_k+L_k) F log2 F + (|C_k|+|N_k|-1) L
///   multiplications = (M_k+L_k) (F/2) log2 F + (|C_k|+|N_k|+1) L
/// Under this node model |C_k| = M_k.
ComplexityProfile complexity_dpmd(Eigen::Index node_mics, Eigen::Index node_speakers,
                                  Eigen::Index c_k_size, Eigen::Index n_k_size,
                                  Eigen::Index speakers_total, double fft_len);

struct MetricSample {
  long iteration = 0;
  double nmse_db = 0.0;
  double ac_db = 0.0;
  PointSet point_set = PointSet::control;
  bool nmse_clamped = false;
  bool ac_unbounded = false;
};

struct SteadyState {
  double mean_db = 0.0;
  double std_db = 0.0;  // population standard deviation
};

/// Mean and standard deviation of the final `window` entries.
SteadyState steady_state(std::span<const double> series, std::size_t window);

}  // namespace psz
