#pragma once

#include "pszsim/types.hpp"

namespace psz {

// Centralized pressure matching. The adaptive update is the 2-free form
//   g' = g - mu H^H (H g - d)
// i.e. the analytic gradient's factor 2 is absorbed into mu
// (mu_effective = 2 mu_analytic).

struct CpmState {
  ControlFilter filter;
  double step_size = 0.0;
  long iteration = 0;
};

/// p = H g.
PressureField render_pressure(const ATFMatrix& atf, const ControlFilter& g);

/// e = p - d.
ErrorVector compute_error(const PressureField& p, const DesiredField& d);

/// J = ||e||^2.
double mse_cost(const ErrorVector& e);

/// One LMS update. Throws DivergenceError (naming the iteration) if the
/// updated filter has a non-finite entry. When `counter` is given it is
/// advanced by the complex operations of the update given the error
/// signal: M*L additions and (M+1)*L multiplications.
CpmState cpm_step(const CpmState& state, const ATFMatrix& atf_n,
                  const DesiredField& d_n, MacCounter* counter = nullptr);

/// g = (H^H H + diag_load I)^{-1} H^H d via column-pivoted QR on the
/// (optionally augmented) system. diag_load = 0 on a rank-deficient H
/// throws SingularSystemError suggesting loading.
ControlFilter least_squares_solution(const ATFMatrix& atf, const DesiredField& d,
                                     double diag_load = 0.0);

/// 2 / lambda_max(H^H H), the LMS mean-convergence step-size bound,
/// computed by power iteration to 1e-8 relative tolerance.
double stability_bound(const ATFMatrix& atf);

}  // namespace psz
