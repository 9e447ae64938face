#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "pszsim/pm.hpp"
#include "pszsim/rng.hpp"

using namespace psz;

namespace {

ATFMatrix make_atf(const CMatrix& entries, Eigen::Index bright_rows = -1) {
  ATFMatrix atf;
  atf.freq = 1000.0;
  atf.entries = entries;
  atf.bright_rows = bright_rows < 0 ? entries.rows() : bright_rows;
  return atf;
}

DesiredField make_target(const CVector& values, Eigen::Index bright = -1) {
  DesiredField d;
  d.freq = 1000.0;
  d.values = values;
  d.bright_count = bright < 0 ? values.size() : bright;
  return d;
}

CMatrix random_cmatrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  RngStream rng(seed);
  CMatrix h(rows, cols);
  for (Eigen::Index m = 0; m < rows; ++m)
    for (Eigen::Index l = 0; l < cols; ++l) h(m, l) = complex_gaussian(rng, 1.0);
  return h;
}

}  // namespace

TEST_CASE("render_pressure") {
  SUBCASE("zero filter") {
    const ATFMatrix atf = make_atf(random_cmatrix(3, 2, 1));
    const PressureField p = render_pressure(atf, {CVector::Zero(2), 0.0});
    CHECK(p.values.norm() == 0.0);
  }

  SUBCASE("identity passes the filter through") {
    const ATFMatrix atf = make_atf(CMatrix::Identity(2, 2));
    CVector g(2);
    g << Complex(0.5, -1.0), Complex(2.0, 0.25);
    const PressureField p = render_pressure(atf, {g, 0.0});
    CHECK((p.values - g).norm() == 0.0);
  }

  SUBCASE("hand matrix-vector product") {
    CMatrix h(2, 2);
    h << Complex(1, 0), Complex(0, 1), Complex(2, 0), Complex(0, 0);
    CVector g(2);
    g << Complex(1, 0), Complex(1, 0);
    const PressureField p = render_pressure(make_atf(h), {g, 0.0});
    CHECK(p.values[0] == Complex(1, 1));
    CHECK(p.values[1] == Complex(2, 0));
  }

  SUBCASE("dimension mismatch") {
    const ATFMatrix atf = make_atf(CMatrix::Identity(2, 2));
    CHECK_THROWS_AS(render_pressure(atf, {CVector::Zero(3), 0.0}), DimensionError);
  }
}

TEST_CASE("compute_error") {
  CVector v(1);
  v << Complex(1, 1);
  const PressureField p{v};

  SUBCASE("p equals d") {
    const ErrorVector e = compute_error(p, make_target(v));
    CHECK(e.values.norm() == 0.0);
  }

  SUBCASE("zero target returns p") {
    const ErrorVector e = compute_error(p, make_target(CVector::Zero(1)));
    CHECK(e.values[0] == v[0]);
  }

  SUBCASE("hand subtraction") {
    CVector d(1);
    d << Complex(1, -1);
    const ErrorVector e = compute_error(p, make_target(d));
    CHECK(e.values[0] == Complex(0, 2));
  }

  SUBCASE("length mismatch") {
    CHECK_THROWS_AS(compute_error(p, make_target(CVector::Zero(3))), DimensionError);
  }
}

TEST_CASE("mse_cost") {
  CHECK(mse_cost({CVector::Zero(4)}) == 0.0);

  CVector e(1);
  e << Complex(3, 4);
  CHECK(mse_cost({e}) == doctest::Approx(25.0).epsilon(1e-15));

  CVector basis = CVector::Zero(5);
  basis[2] = Complex(1, 0);
  CHECK(mse_cost({basis}) == 1.0);
}

TEST_CASE("cpm_step") {
  SUBCASE("already converged filter is a fixed point") {
    const ATFMatrix atf = make_atf(random_cmatrix(4, 3, 2));
    CVector g(3);
    g << Complex(1, 0), Complex(0, 1), Complex(-0.5, 0.5);
    const DesiredField d = make_target(atf.entries * g);
    const CpmState next = cpm_step({{g, 0.0}, 0.7, 0}, atf, d);
    CHECK((next.filter.weights - g).norm() < 1e-14);
    CHECK(next.iteration == 1);
  }

  SUBCASE("scalar hand arithmetic") {
    const ATFMatrix atf = make_atf(CMatrix::Identity(1, 1));
    CVector d(1);
    d << Complex(1, 0);
    const CpmState next = cpm_step({{CVector::Zero(1), 0.0}, 0.5, 0}, atf, make_target(d));
    CHECK(next.filter.weights[0] == Complex(0.5, 0.0));
  }

  SUBCASE("scalar geometric recursion g_n = 1 - 0.5^n") {
    const ATFMatrix atf = make_atf(CMatrix::Identity(1, 1));
    CVector d(1);
    d << Complex(1, 0);
    CpmState state{{CVector::Zero(1), 0.0}, 0.5, 0};
    for (int n = 1; n <= 30; ++n) {
      state = cpm_step(state, atf, make_target(d));
      CHECK(state.filter.weights[0].real() ==
            doctest::Approx(1.0 - std::pow(0.5, n)).epsilon(1e-12));
    }
  }

  SUBCASE("divergence carries the iteration") {
    const ATFMatrix atf = make_atf(CMatrix::Identity(1, 1) * 1e200);
    CVector d(1);
    d << Complex(1, 0);
    CpmState state{{CVector::Zero(1), 0.0}, 1e200, 3};
    try {
      state = cpm_step(state, atf, make_target(d));
      state = cpm_step(state, atf, make_target(d));
      FAIL("expected divergence");
    } catch (const DivergenceError& e) {
      CHECK(e.algorithm == "cpm");
      CHECK(e.iteration >= 4);
    }
  }

  SUBCASE("update operation counter matches the processing model") {
    const ATFMatrix atf = make_atf(random_cmatrix(5, 3, 3));
    const DesiredField d = make_target(CVector::Ones(5));
    MacCounter ops;
    cpm_step({{CVector::Zero(3), 0.0}, 0.1, 0}, atf, d, &ops);
    CHECK(ops.additions == 5.0 * 3.0);
    CHECK(ops.multiplications == 6.0 * 3.0);
  }
}

TEST_CASE("least_squares_solution") {
  SUBCASE("identity system") {
    const ATFMatrix atf = make_atf(CMatrix::Identity(3, 3));
    CVector d(3);
    d << Complex(1, 2), Complex(-1, 0), Complex(0, 3);
    const ControlFilter g = least_squares_solution(atf, make_target(d), 0.0);
    CHECK((g.weights - d).norm() < 1e-14);
  }

  SUBCASE("normal-equation residual on random systems") {
    for (std::uint64_t seed : {10, 11, 12}) {
      const ATFMatrix atf = make_atf(random_cmatrix(8, 5, seed));
      const DesiredField d = make_target(random_cmatrix(8, 1, seed + 100).col(0));
      const ControlFilter g = least_squares_solution(atf, d, 0.0);
      const CVector normal_residual =
          atf.entries.adjoint() * (atf.entries * g.weights - d.values);
      CHECK(normal_residual.norm() <= 1e-10 * (atf.entries.adjoint() * d.values).norm());
    }
  }

  SUBCASE("mean of targets for a repeated row") {
    CMatrix h(2, 1);
    h << Complex(1, 0), Complex(1, 0);
    CVector d(2);
    d << Complex(0, 0), Complex(2, 0);
    const ControlFilter g = least_squares_solution(make_atf(h), make_target(d), 0.0);
    CHECK(g.weights[0].real() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(std::abs(g.weights[0].imag()) < 1e-14);
  }

  SUBCASE("rank deficiency without loading") {
    CMatrix h(2, 2);
    h << Complex(1, 0), Complex(1, 0), Complex(1, 0), Complex(1, 0);
    CVector d(2);
    d << Complex(1, 0), Complex(1, 0);
    CHECK_THROWS_AS(least_squares_solution(make_atf(h), make_target(d), 0.0),
                    SingularSystemError);
    // Loading restores solvability: g = (H^H H + I)^-1 H^H d.
    const ControlFilter g = least_squares_solution(make_atf(h), make_target(d), 1.0);
    CHECK(g.weights[0].real() == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(g.weights[1].real() == doctest::Approx(0.4).epsilon(1e-12));
  }
}

TEST_CASE("stability_bound") {
  SUBCASE("identity") {
    const ATFMatrix atf = make_atf(CMatrix::Identity(3, 3));
    CHECK(stability_bound(atf) == doctest::Approx(2.0).epsilon(1e-8));
  }

  SUBCASE("scaled identity") {
    const ATFMatrix atf = make_atf(CMatrix::Identity(3, 3) * 2.0);
    CHECK(stability_bound(atf) == doctest::Approx(0.5).epsilon(1e-8));
  }

  SUBCASE("matches a dense eigensolver") {
    for (std::uint64_t seed : {21, 22, 23, 24}) {
      const ATFMatrix atf = make_atf(random_cmatrix(4, 3, seed));
      Eigen::SelfAdjointEigenSolver<CMatrix> eig(atf.entries.adjoint() * atf.entries);
      const double oracle = 2.0 / eig.eigenvalues().maxCoeff();
      CHECK(stability_bound(atf) == doctest::Approx(oracle).epsilon(1e-6));
    }
  }

  SUBCASE("zero ATF") {
    CHECK_THROWS_AS(stability_bound(make_atf(CMatrix::Zero(2, 2))), SingularSystemError);
  }
}

TEST_CASE("render_pressure is linear") {
  const ATFMatrix atf = make_atf(random_cmatrix(6, 4, 31));
  RngStream rng(32);
  const CVector g1 = complex_gaussian_vector(rng, 4, 1.0);
  const CVector g2 = complex_gaussian_vector(rng, 4, 1.0);
  const Complex a = complex_gaussian(rng, 1.0);
  const Complex b = complex_gaussian(rng, 1.0);

  const CVector combined = render_pressure(atf, {a * g1 + b * g2, 0.0}).values;
  const CVector split = a * render_pressure(atf, {g1, 0.0}).values +
                        b * render_pressure(atf, {g2, 0.0}).values;
  CHECK((combined - split).norm() <= 1e-12 * combined.norm());
}

TEST_CASE("cost is non-increasing at half the stability bound") {
  const ATFMatrix atf = make_atf(random_cmatrix(8, 4, 41));
  const DesiredField d = make_target(random_cmatrix(8, 1, 42).col(0));
  const double mu = 0.5 * stability_bound(atf);

  CpmState state{{CVector::Zero(4), 0.0}, mu, 0};
  double prev = mse_cost(compute_error(render_pressure(atf, state.filter), d));
  for (int n = 0; n < 500; ++n) {
    state = cpm_step(state, atf, d);
    const double cost = mse_cost(compute_error(render_pressure(atf, state.filter), d));
    CHECK(cost <= prev + 1e-12);
    prev = cost;
  }
}

TEST_CASE("cpm converges to the least-squares oracle") {
  const ATFMatrix atf = make_atf(random_cmatrix(12, 5, 51));
  const DesiredField d = make_target(random_cmatrix(12, 1, 52).col(0));
  const ControlFilter ls = least_squares_solution(atf, d, 0.0);
  const double mu = 0.5 * stability_bound(atf);

  CpmState state{{CVector::Zero(5), 0.0}, mu, 0};
  double rel = 1.0;
  for (int n = 0; n < 200000 && rel > 1e-6; ++n) {
    state = cpm_step(state, atf, d);
    rel = (state.filter.weights - ls.weights).norm() / std::max(ls.weights.norm(), 1.0);
  }
  CHECK(rel <= 1e-6);
}

TEST_CASE("update direction matches central finite differences of the cost") {
  // J(g) = ||H g - d||^2; d J / d Re(g_i) = 2 Re[(H^H e)_i], and likewise
  // for the imaginary part, so H^H e must equal the finite-difference
  // gradient halved.
  for (std::uint64_t seed : {61, 62, 63}) {
    const ATFMatrix atf = make_atf(random_cmatrix(7, 4, seed));
    const DesiredField d = make_target(random_cmatrix(7, 1, seed + 10).col(0));
    RngStream rng(seed + 20);
    const CVector g = complex_gaussian_vector(rng, 4, 1.0);

    const CVector direction =
        atf.entries.adjoint() * (atf.entries * g - d.values);

    auto cost_at = [&](const CVector& w) {
      return (atf.entries * w - d.values).squaredNorm();
    };
    const double h = 1e-6;
    double err2 = 0.0, ref2 = 0.0;
    for (Eigen::Index i = 0; i < 4; ++i) {
      CVector gp = g, gm = g;
      gp[i] += h;
      gm[i] -= h;
      const double fd_re = (cost_at(gp) - cost_at(gm)) / (2.0 * h);
      gp = g;
      gm = g;
      gp[i] += Complex(0.0, h);
      gm[i] -= Complex(0.0, h);
      const double fd_im = (cost_at(gp) - cost_at(gm)) / (2.0 * h);
      err2 += std::norm(Complex(fd_re, fd_im) - 2.0 * direction[i]);
      ref2 += std::norm(2.0 * direction[i]);
    }
    CHECK(std::sqrt(err2 / ref2) <= 1e-6);
  }
}
