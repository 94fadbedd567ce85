#include <doctest.h>

#include <cmath>

#include "driftsens/models.hpp"
#include "driftsens/sensitivity.hpp"

using namespace driftsens;

namespace {

Eigen::VectorXd vec1(double x) {
  Eigen::VectorXd v(1);
  v[0] = x;
  return v;
}

Observable position(double t, double bound = 100.0) {
  return Observable::marginal([](const Eigen::VectorXd& y) { return y[0]; }, t, bound,
                              "position");
}

Observable position_squared(double t, double bound = 10000.0) {
  return Observable::marginal([](const Eigen::VectorXd& y) { return y[0] * y[0]; }, t, bound,
                              "position_squared");
}

}  // namespace

TEST_CASE("expectation examples") {
  const TimeGrid grid(1.0, 8);
  SUBCASE("constant observable has zero standard error") {
    const SdeModel model = make_brownian(1, 1.0);
    const PathEnsemble ens =
        simulate_ensemble(model, Domain::unbounded(), vec1(0.0), nullptr, grid, 100, 5, 0);
    const Observable one =
        Observable::path_functional([](const SamplePath&) { return 1.0; }, 2.0, "one");
    const MCEstimate e = expectation(ens, one);
    CHECK(e.mean == 1.0);
    CHECK(e.std_error == 0.0);
    CHECK(e.n_samples == 100);
  }
  SUBCASE("drifted endpoint and squared endpoint match analytic values") {
    const SdeModel drift = make_constant_drift(1, 1.0, 1.0);
    McParams mc{100000, 71, 0};
    const BaseRun run = reduce_base_run(drift, Domain::unbounded(), vec1(0.0), zero_field(1),
                                        position(1.0), grid, mc);
    CHECK(std::abs(expectation(run).mean - 1.0) < 0.01);

    const SdeModel bm = make_brownian(1, 1.0);
    const BaseRun run2 = reduce_base_run(bm, Domain::unbounded(), vec1(1.0), zero_field(1),
                                         position_squared(1.0), grid, mc);
    CHECK(std::abs(expectation(run2).mean - 2.0) < 0.03);
  }
}

TEST_CASE("derivative estimator: analytic constant-coefficient oracles") {
  const SdeModel model = make_brownian(1, 1.0);
  const TimeGrid grid(1.0, 16);
  McParams mc{100000, 2030, 0};

  SUBCASE("zero direction gives exactly zero") {
    const BaseRun run = reduce_base_run(model, Domain::unbounded(), vec1(0.0), zero_field(1),
                                        position(1.0), grid, mc);
    const MCEstimate d = frechet_derivative(run);
    CHECK(d.mean == 0.0);
    CHECK(d.std_error == 0.0);
  }
  SUBCASE("g = X_t: derivative c t") {
    const PerturbationField c = make_constant_field(1, 0.5);
    const BaseRun run =
        reduce_base_run(model, Domain::unbounded(), vec1(0.0), c, position(1.0), grid, mc);
    const MCEstimate d = frechet_derivative(run);
    CHECK(std::abs(d.mean - 0.5) <= 3.0 * d.std_error);
  }
  SUBCASE("g = X_t^2 from x0 = 1: derivative 2 x0 t c") {
    const PerturbationField c = make_constant_field(1, 0.5);
    const BaseRun run = reduce_base_run(model, Domain::unbounded(), vec1(1.0), c,
                                        position_squared(1.0), grid, mc);
    const MCEstimate d = frechet_derivative(run);
    CHECK(std::abs(d.mean - 1.0) <= 3.0 * d.std_error);
  }
}

TEST_CASE("derivative linearity in the direction is exact pathwise") {
  const SdeModel model = make_double_well(0.7);
  const Domain box = Domain::box1d(-2.0, 2.0);
  const TimeGrid grid(0.5, 64);
  McParams mc{200, 8, 1};
  const PerturbationField bump = make_gaussian_bump(1.0, 0.5, 0.3);
  const BaseRun run = reduce_base_run(model, box, vec1(1.0), bump, position(0.5, 2.0), grid, mc);
  const MCEstimate d1 = frechet_derivative(run, 1.0);
  const MCEstimate d3 = frechet_derivative(run, 3.0);
  CHECK(d3.mean == doctest::Approx(3.0 * d1.mean).epsilon(1e-12));
}

TEST_CASE("finite differences: affine case is h-independent and matches c t") {
  const SdeModel model = make_brownian(1, 1.0);
  const TimeGrid grid(1.0, 16);
  const PerturbationField c = make_constant_field(1, 0.5);
  McParams mc{20000, 4001, 0};
  for (const double h : {1.0, 0.25}) {
    const MCEstimate fd = finite_difference_derivative(model, Domain::unbounded(), vec1(0.0), c,
                                                       position(1.0), grid, h, mc);
    CHECK(std::abs(fd.mean - 0.5) <= 3.0 * fd.std_error + 1e-12);
    // Coupling: for an affine functional the pathwise difference is
    // deterministic, so the stderr collapses.
    CHECK(fd.std_error < 1e-10);
  }
  CHECK_THROWS_AS(finite_difference_derivative(model, Domain::unbounded(), vec1(0.0), c,
                                               position(1.0), grid, 0.0, mc),
                  InputError);
}

TEST_CASE("girsanov derivative vs coupled finite difference, double well") {
  const SdeModel model = make_double_well(0.7);
  const Domain box = Domain::box1d(-2.0, 2.0);
  const TimeGrid grid(0.5, 250);
  const PerturbationField bump = make_gaussian_bump(1.0, 0.5, 0.3);
  const Observable g = position(0.5, 2.0);
  McParams mc{20000, 303, 0};
  const BaseRun run = reduce_base_run(model, box, vec1(0.5), bump, g, grid, mc);
  const MCEstimate girsanov = frechet_derivative(run);
  const MCEstimate fd = finite_difference_derivative(model, box, vec1(0.5), bump, g, grid, 0.1,
                                                     McParams{20000, 904, 0});
  const double combined =
      std::sqrt(girsanov.std_error * girsanov.std_error + fd.std_error * fd.std_error);
  CHECK(std::abs(girsanov.mean - fd.mean) <= 3.0 * combined);
}

TEST_CASE("remainder values") {
  const SdeModel model = make_brownian(1, 1.0);
  const TimeGrid grid(1.0, 16);
  McParams mc{100000, 61, 0};

  SUBCASE("affine observable: remainder vanishes within noise") {
    const PerturbationField c = make_constant_field(1, 0.3);
    const MCEstimate r =
        remainder(model, Domain::unbounded(), vec1(0.0), c, position(1.0), grid, mc);
    CHECK(std::abs(r.mean) <= 3.0 * r.std_error);
  }
  SUBCASE("g = X_T^2, x0 = 1, gamma = 0.1: remainder = c^2 T^2") {
    const PerturbationField c = make_constant_field(1, 0.1);
    const MCEstimate r =
        remainder(model, Domain::unbounded(), vec1(1.0), c, position_squared(1.0), grid, mc);
    CHECK(std::abs(r.mean - 0.01) <= 3.0 * r.std_error);
  }
  SUBCASE("zero direction: remainder exactly zero") {
    const MCEstimate r = remainder(model, Domain::unbounded(), vec1(1.0), zero_field(1),
                                   position_squared(1.0), grid, mc);
    CHECK(r.mean == 0.0);
    CHECK(r.std_error == 0.0);
  }
}

TEST_CASE("quadratic decay fit") {
  const SdeModel model = make_brownian(1, 1.0);
  const TimeGrid grid(1.0, 16);
  McParams mc{100000, 88, 0};

  SUBCASE("analytic quadratic case: slope 2") {
    const DecayFit fit =
        quadratic_decay_fit(model, Domain::unbounded(), vec1(1.0), make_constant_field(1, 1.0),
                            position_squared(1.0), {0.4, 0.2, 0.1}, grid, mc);
    CHECK(fit.n_used == 3);
    CHECK(fit.slope == doctest::Approx(2.0).epsilon(0.05));
    // r(eps) = eps^2 exactly for this observable.
    for (const DecayPoint& p : fit.points)
      CHECK(std::abs(p.remainder - p.epsilon * p.epsilon) <= 4.0 * p.remainder_stderr);
  }
  SUBCASE("affine observable: inconclusive") {
    CHECK_THROWS_AS(
        quadratic_decay_fit(model, Domain::unbounded(), vec1(0.0), make_constant_field(1, 1.0),
                            position(1.0), {0.4, 0.2, 0.1}, grid, mc),
        InconclusiveFitError);
  }
  SUBCASE("epsilon list validation") {
    const PerturbationField c = make_constant_field(1, 1.0);
    CHECK_THROWS_AS(quadratic_decay_fit(model, Domain::unbounded(), vec1(1.0), c,
                                        position_squared(1.0), {0.1, 0.2, 0.4}, grid, mc),
                    InputError);
    CHECK_THROWS_AS(quadratic_decay_fit(model, Domain::unbounded(), vec1(1.0), c,
                                        position_squared(1.0), {0.4, 0.2}, grid, mc),
                    InputError);
  }
}

TEST_CASE("marker-time weight beats the terminal weight in variance") {
  // For a marginal observable, M_T and M_t give the same derivative in
  // expectation; the t-truncated weight has no extra martingale noise.
  const SdeModel model = make_brownian(1, 1.0);
  const TimeGrid grid(1.0, 32);
  const PerturbationField c = make_constant_field(1, 0.5);
  McParams mc{50000, 1111, 0};
  const BaseRun run = reduce_base_run(model, Domain::unbounded(), vec1(0.0), c,
                                      position(0.5), grid, mc);

  std::vector<double> marker(run.g.size()), terminal(run.g.size());
  for (std::size_t i = 0; i < run.g.size(); ++i) {
    marker[i] = run.g[i] * run.m[i];
    terminal[i] = run.g[i] * run.m_end[i];
  }
  const MCEstimate dm = mc_estimate(marker);
  const MCEstimate dt = mc_estimate(terminal);
  const double combined = std::sqrt(dm.std_error * dm.std_error + dt.std_error * dt.std_error);
  CHECK(std::abs(dm.mean - dt.mean) <= 3.0 * combined);
  CHECK(dm.std_error <= dt.std_error);
  CHECK(std::abs(dm.mean - 0.25) <= 3.0 * dm.std_error);  // c * t = 0.25
}

TEST_CASE("continuity scan") {
  const TimeGrid grid(1.0, 16);
  SUBCASE("zero shift reproduces the base derivative exactly") {
    const SdeModel model = make_brownian(1, 1.0);
    const PerturbationField dir = make_constant_field(1, 0.5);
    McParams mc{5000, 17, 0};
    const ContinuityScan scan =
        derivative_continuity_scan(model, Domain::unbounded(), vec1(0.0), {zero_field(1)}, dir,
                                   position(1.0), grid, mc);
    CHECK(scan.rows.size() == 1);
    CHECK(scan.rows[0].abs_difference == 0.0);
  }
  SUBCASE("constant-coefficient derivative is independent of the base shift") {
    const SdeModel model = make_brownian(1, 1.0);
    const PerturbationField dir = make_constant_field(1, 0.5);
    McParams mc{50000, 18, 0};
    const ContinuityScan scan = derivative_continuity_scan(
        model, Domain::unbounded(), vec1(0.0),
        {make_constant_field(1, 0.4), make_constant_field(1, 0.2)}, dir, position(1.0), grid,
        mc);
    for (const ContinuityRow& row : scan.rows) {
      const double tol = 3.0 * std::sqrt(2.0) * row.derivative.std_error;
      CHECK(row.abs_difference <= tol);
    }
  }
}

TEST_CASE("observable bound violations are rejected") {
  const SdeModel model = make_brownian(1, 1.0);
  const TimeGrid grid(1.0, 8);
  const Observable tight = Observable::marginal([](const Eigen::VectorXd& y) { return y[0]; },
                                                1.0, 1e-6, "too_tight");
  McParams mc{100, 5, 1};
  CHECK_THROWS_AS(
      reduce_base_run(model, Domain::unbounded(), vec1(0.0), zero_field(1), tight, grid, mc),
      InputError);
}
