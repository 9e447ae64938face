#include "pszsim/metrics.hpp"

#include <cmath>
#include <limits>

namespace psz {

double nmse_db(const CVector& d_bright, const CVector& p_bright) {
  if (d_bright.size() != p_bright.size())
    throw DimensionError("nmse_db: target and pressure lengths differ");
  if (d_bright.size() < 1) throw DimensionError("nmse_db: empty bright zone");

  const double ref = d_bright.squaredNorm();
  if (ref == 0.0) throw SingularSystemError("nmse_db: zero reference field");

  const double err = (d_bright - p_bright).squaredNorm();
  if (err == 0.0) return kNmseFloorDb;
  return std::max(10.0 * std::log10(err / ref), kNmseFloorDb);
}

AcousticContrast acoustic_contrast_db(const Eigen::Ref<const CMatrix>& bright_rows,
                                      const Eigen::Ref<const CMatrix>& dark_rows,
                                      const ControlFilter& g) {
  if (bright_rows.cols() != g.weights.size() || dark_rows.cols() != g.weights.size())
    throw DimensionError("acoustic_contrast_db: filter length does not match ATF blocks");
  if (g.weights.size() == 0 || g.weights.norm() == 0.0)
    throw SingularSystemError("acoustic_contrast_db: zero control filter");

  const double bright_energy = (bright_rows * g.weights).squaredNorm();
  const double dark_energy = (dark_rows * g.weights).squaredNorm();
  const auto m_b = static_cast<double>(bright_rows.rows());
  const auto m_d = static_cast<double>(dark_rows.rows());

  if (dark_energy == 0.0)
    return {std::numeric_limits<double>::infinity(), true};
  return {10.0 * std::log10((m_d * bright_energy) / (m_b * dark_energy)), false};
}

namespace {

void require_at_least_one(Eigen::Index v, const char* what) {
  if (v < 1) throw ConfigError(std::string("complexity model: ") + what + " must be >= 1");
}

}  // namespace

ComplexityProfile complexity_cpm(Eigen::Index mics, Eigen::Index speakers, double fft_len) {
  require_at_least_one(mics, "M");
  require_at_least_one(speakers, "L");
  if (fft_len < 1.0) throw ConfigError("complexity model: F must be >= 1");

  const auto m = static_cast<double>(mics);
  const auto l = static_cast<double>(speakers);
  const double log_f = std::log2(fft_len);

  ComplexityProfile p;
  p.fft_additions = (m + l) * fft_len * log_f;
  p.fft_multiplications = (m + l) * (fft_len / 2.0) * log_f;
  p.proc_additions = m * l;
  p.proc_multiplications = (m + 1.0) * l;
  p.params = {{"M", m}, {"L", l}, {"F", fft_len}};
  return p;
}

ComplexityProfile complexity_dpmd(Eigen::Index node_mics, Eigen::Index node_speakers,
                                  Eigen::Index c_k_size, Eigen::Index n_k_size,
                                  Eigen::Index speakers_total, double fft_len) {
  require_at_least_one(node_mics, "M_k");
  require_at_least_one(node_speakers, "L_k");
  require_at_least_one(c_k_size, "|C_k|");
  require_at_least_one(n_k_size, "|N_k|");
  require_at_least_one(speakers_total, "L");
  if (fft_len < 1.0) throw ConfigError("complexity model: F must be >= 1");
  if (c_k_size != node_mics)
    throw ConfigError("complexity model: |C_k| must equal M_k under this node model");

  const auto mk = static_cast<double>(node_mics);
  const auto lk = static_cast<double>(node_speakers);
  const auto ck = static_cast<double>(c_k_size);
  const auto nk = static_cast<double>(n_k_size);
  const auto l = static_cast<double>(speakers_total);
  const double log_f = std::log2(fft_len);

  ComplexityProfile p;
  p.fft_additions = (mk + lk) * fft_len * log_f;
  p.fft_multiplications = (mk + lk) * (fft_len / 2.0) * log_f;
  p.proc_additions = (ck + nk - 1.0) * l;
  p.proc_multiplications = (ck + nk + 1.0) * l;
  p.params = {{"M_k", mk}, {"L_k", lk}, {"C_k", ck}, {"N_k", nk}, {"L", l}, {"F", fft_len}};
  return p;
}

SteadyState steady_state(std::span<const double> series, std::size_t window) {
  if (window == 0) throw ConfigError("steady_state: empty window");
  if (window > series.size())
    throw ConfigError("steady_state: window " + std::to_string(window) +
                      " exceeds sample count " + std::to_string(series.size()));

  const auto tail = series.subspan(series.size() - window);
  double mean = 0.0;
  for (double v : tail) mean += v;
  mean /= static_cast<double>(window);

  double var = 0.0;
  for (double v : tail) var += (v - mean) * (v - mean);
  var /= static_cast<double>(window);
  return {mean, std::sqrt(var)};
}

}  // namespace psz
