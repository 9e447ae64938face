#include "pszsim/pm.hpp"

#include <cmath>
#include <random>

#include "pszsim/rng.hpp"

namespace psz {

namespace {

void require_same_length(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b)
    throw DimensionError(std::string(what) + ": lengths " + std::to_string(a) +
                         " and " + std::to_string(b) + " differ");
}

}  // namespace

PressureField render_pressure(const ATFMatrix& atf, const ControlFilter& g) {
  if (atf.speakers() != g.weights.size())
    throw DimensionError("render_pressure: ATF has " + std::to_string(atf.speakers()) +
                         " columns, filter has " + std::to_string(g.weights.size()) +
                         " weights");
  return {atf.entries * g.weights};
}

ErrorVector compute_error(const PressureField& p, const DesiredField& d) {
  require_same_length(p.values.size(), d.values.size(), "compute_error");
  return {p.values - d.values};
}

double mse_cost(const ErrorVector& e) { return e.values.squaredNorm(); }

CpmState cpm_step(const CpmState& state, const ATFMatrix& atf_n,
                  const DesiredField& d_n, MacCounter* counter) {
  const Eigen::Index n_mics = atf_n.mics();
  const Eigen::Index n_spk = atf_n.speakers();
  require_same_length(state.filter.weights.size(), n_spk, "cpm_step filter");
  require_same_length(d_n.values.size(), n_mics, "cpm_step target");

  const CVector e = atf_n.entries * state.filter.weights - d_n.values;
  const CVector grad = atf_n.entries.adjoint() * e;

  CpmState next = state;
  next.filter.weights = state.filter.weights - state.step_size * grad;
  next.iteration = state.iteration + 1;

  if (!next.filter.weights.allFinite())
    throw DivergenceError("cpm", -1, next.iteration);

  if (counter) {
    // Update arithmetic given e: H^H e costs M*L multiplications and
    // (M-1)*L additions; the scaled subtraction costs L of each.
    const auto m = static_cast<double>(n_mics);
    const auto l = static_cast<double>(n_spk);
    counter->multiplications += (m + 1.0) * l;
    counter->additions += m * l;
  }
  return next;
}

ControlFilter least_squares_solution(const ATFMatrix& atf, const DesiredField& d,
                                     double diag_load) {
  require_same_length(d.values.size(), atf.mics(), "least_squares_solution target");
  if (diag_load < 0.0) throw ConfigError("diagonal loading must be nonnegative");

  const Eigen::Index n_spk = atf.speakers();
  ControlFilter g;
  g.freq = atf.freq;

  if (diag_load == 0.0) {
    Eigen::ColPivHouseholderQR<CMatrix> qr(atf.entries);
    if (qr.rank() < n_spk) {
      throw SingularSystemError(
          "rank-deficient system (rank " + std::to_string(qr.rank()) + " of " +
          std::to_string(n_spk) + "); consider diagonal loading");
    }
    g.weights = qr.solve(d.values);
    return g;
  }

  // Augmented least squares: min ||[H; sqrt(load) I] g - [d; 0]||.
  CMatrix aug(atf.mics() + n_spk, n_spk);
  aug.topRows(atf.mics()) = atf.entries;
  aug.bottomRows(n_spk) = std::sqrt(diag_load) * CMatrix::Identity(n_spk, n_spk);
  CVector rhs = CVector::Zero(atf.mics() + n_spk);
  rhs.head(atf.mics()) = d.values;
  g.weights = aug.colPivHouseholderQr().solve(rhs);
  return g;
}

double stability_bound(const ATFMatrix& atf) {
  if (atf.entries.size() == 0 || atf.entries.norm() == 0.0)
    throw SingularSystemError("stability bound undefined for a zero ATF");

  const CMatrix gram = atf.entries.adjoint() * atf.entries;
  const Eigen::Index n = gram.rows();

  // Deterministic start so the auto step-size policy is reproducible.
  RngStream rng(0x9E3779B97F4A7C15ULL);
  std::normal_distribution<double> unit(0.0, 1.0);
  CVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = Complex(unit(rng), unit(rng));
  v.normalize();

  double lambda = 0.0;
  constexpr double kRelTol = 1e-8;
  constexpr int kMaxIters = 100000;
  for (int it = 0; it < kMaxIters; ++it) {
    CVector w = gram * v;
    const double next = std::real(v.dot(w));  // Rayleigh quotient, v unit
    const double norm = w.norm();
    if (norm == 0.0) {
      // Landed in the null space; redraw and keep going.
      for (Eigen::Index i = 0; i < n; ++i) v[i] = Complex(unit(rng), unit(rng));
      v.normalize();
      continue;
    }
    v = w / norm;
    if (it > 0 && std::abs(next - lambda) <= kRelTol * std::abs(next)) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return 2.0 / lambda;
}

}  // namespace psz
