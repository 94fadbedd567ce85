#include <doctest.h>

#include <cmath>

#include "driftsens/girsanov.hpp"
#include "driftsens/models.hpp"

using namespace driftsens;

namespace {

Eigen::VectorXd vec1(double x) {
  Eigen::VectorXd v(1);
  v[0] = x;
  return v;
}

}  // namespace

TEST_CASE("zero direction gives zero weight and unit martingale") {
  const SdeModel model = make_brownian(1, 1.0);
  const TimeGrid grid(1.0, 32);
  const SamplePath path = simulate_path(model, Domain::unbounded(), vec1(0.0), nullptr, grid, 3);
  const GirsanovSeries s = girsanov_series(path, zero_field(1), model);
  for (long k = 0; k <= 32; ++k) {
    CHECK(s.m[k] == 0.0);
    CHECK(s.qv[k] == 0.0);
    CHECK(s.z[k] == 1.0);
  }
}

TEST_CASE("constant direction telescopes: M_T = c (X_T - X_0) for b = 0, sigma = 1") {
  const SdeModel model = make_brownian(1, 1.0);
  const TimeGrid grid(1.0, 64);
  const SamplePath path = simulate_path(model, Domain::unbounded(), vec1(0.4), nullptr, grid, 17);
  const double c = 0.7;
  const Eigen::VectorXd m = ito_weight(path, make_constant_field(1, c), model);
  const double expected = c * (path.terminal()[0] - 0.4);
  CHECK(m[64] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("time-dependent direction matches re-summation of stored increments") {
  // gamma(s) = s with b = 0, sigma = 1: M_T = sum t_j dW_j, summed
  // independently from the stored increments.
  const SdeModel model = make_brownian(1, 1.0);
  const TimeGrid grid(1.0, 128);
  const SamplePath path = simulate_path(model, Domain::unbounded(), vec1(0.0), nullptr, grid, 23);
  const PerturbationField tl = make_time_linear_field(1.0, 1.0);
  const Eigen::VectorXd m = ito_weight(path, tl, model);
  double oracle = 0.0;
  for (long j = 0; j < 128; ++j) oracle += grid.time(j) * path.wiener(j, 0);
  CHECK(m[128] == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("quadratic variation examples") {
  const TimeGrid grid(1.0, 50);
  SUBCASE("sigma = 1, gamma = c: <M>_T = c^2 T exactly") {
    const SdeModel model = make_brownian(1, 1.0);
    const SamplePath path =
        simulate_path(model, Domain::unbounded(), vec1(0.0), nullptr, grid, 4);
    const Eigen::VectorXd qv = quadratic_variation(path, make_constant_field(1, 0.5), model);
    CHECK(qv[50] == doctest::Approx(0.25).epsilon(1e-12));
    for (long k = 1; k <= 50; ++k) CHECK(qv[k] >= qv[k - 1]);
  }
  SUBCASE("sigma = 2, gamma = 1, T = 1: <M>_T = 0.25") {
    const SdeModel model = make_brownian(1, 2.0);
    const SamplePath path =
        simulate_path(model, Domain::unbounded(), vec1(0.0), nullptr, grid, 4);
    const Eigen::VectorXd qv = quadratic_variation(path, make_constant_field(1, 1.0), model);
    CHECK(qv[50] == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("pathwise identity z = exp(m - qv/2) holds bit-exactly") {
  const SdeModel model = make_double_well(0.7);
  const Domain box = Domain::box1d(-2.0, 2.0);
  const TimeGrid grid(1.0, 100);
  const PerturbationField bump = make_gaussian_bump(1.0, 0.5, 0.3);
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const SamplePath path = simulate_path(model, box, vec1(1.0), nullptr, grid, seed);
    const GirsanovSeries s = girsanov_series(path, bump, model);
    CHECK(s.z[0] == 1.0);
    CHECK(s.m[0] == 0.0);
    CHECK(s.qv[0] == 0.0);
    for (long k = 0; k <= 100; ++k) {
      const bool identical = s.z[k] == std::exp(s.m[k] - 0.5 * s.qv[k]);
      CHECK(identical);
    }
  }
}

TEST_CASE("direction linearity: M and <M> scale exactly to rounding") {
  const SdeModel model = make_double_well(0.7);
  const Domain box = Domain::box1d(-2.0, 2.0);
  const TimeGrid grid(0.5, 64);
  const PerturbationField bump = make_gaussian_bump(1.0, 0.5, 0.3);
  const SamplePath path = simulate_path(model, box, vec1(-1.0), nullptr, grid, 11);
  const GirsanovSeries base = girsanov_series(path, bump, model);
  const GirsanovSeries scaled = girsanov_series(path, scaled_field(bump, -2.5), model);
  CHECK(scaled.m[64] == doctest::Approx(-2.5 * base.m[64]).epsilon(1e-12));
  CHECK(scaled.qv[64] == doctest::Approx(6.25 * base.qv[64]).epsilon(1e-12));
}

TEST_CASE("quadratic variation respects the ellipticity envelope") {
  // <M>_t <= lambda_sigma^2 ||gamma||_inf^2 t on every path.
  const SdeModel model = make_double_well(0.7);
  const Domain box = Domain::box1d(-2.0, 2.0);
  const TimeGrid grid(1.0, 64);
  const PerturbationField bump = make_gaussian_bump(0.8, 0.0, 0.4);
  const double envelope = model.ellipticity_bound * model.ellipticity_bound * 0.8 * 0.8;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const SamplePath path = simulate_path(model, box, vec1(0.5), nullptr, grid, seed);
    const Eigen::VectorXd qv = quadratic_variation(path, bump, model);
    for (long k = 0; k <= 64; ++k) CHECK(qv[k] <= envelope * grid.time(k) + 1e-12);
  }
}

TEST_CASE("martingale property: E[Z_T] = 1 and E[Z_T^2] finite, with drift") {
  // Uses a nonzero base drift; the compensated weight keeps E[Z] = 1 exactly
  // in law for constant coefficients.
  const SdeModel model = make_constant_drift(1, 1.0, 1.0);
  const TimeGrid grid(1.0, 16);
  const PerturbationField c = make_constant_field(1, 0.5);
  const long n = 20000;
  std::vector<double> z(n), z2(n);
  for_each_path(model, Domain::unbounded(), vec1(0.0), nullptr, grid, n, 515, 0,
                [&](long i, const SamplePath& p) {
                  const GirsanovSeries s = girsanov_series(p, c, model);
                  z[i] = s.z[16];
                  z2[i] = s.z[16] * s.z[16];
                });
  const MCEstimate ez = mc_estimate(z);
  CHECK(std::abs(ez.mean - 1.0) <= 4.0 * ez.std_error);
  // Second moment of the exponential martingale: exp(<M>) = exp(0.25).
  const MCEstimate ez2 = mc_estimate(z2);
  CHECK(std::abs(ez2.mean - std::exp(0.25)) <= 4.0 * ez2.std_error);
}

TEST_CASE("reweighted expectation") {
  const SdeModel model = make_brownian(1, 1.0);
  const TimeGrid grid(1.0, 16);
  const Observable g = Observable::marginal([](const Eigen::VectorXd& y) { return y[0]; }, 1.0,
                                            100.0, "position");
  const PathEnsemble ens =
      simulate_ensemble(model, Domain::unbounded(), vec1(0.0), nullptr, grid, 20000, 99, 0);

  SUBCASE("gamma = 0 equals the plain mean bitwise") {
    const MCEstimate plain = [&] {
      std::vector<double> v(ens.paths.size());
      for (std::size_t i = 0; i < ens.paths.size(); ++i)
        v[i] = ens.paths[i].terminal()[0];
      return mc_estimate(v);
    }();
    const MCEstimate rw = reweighted_expectation(ens, zero_field(1), model, g);
    CHECK(rw.mean == plain.mean);
    CHECK(rw.std_error == plain.std_error);
  }

  SUBCASE("constant tilt matches the analytic perturbed mean") {
    const PerturbationField c = make_constant_field(1, 0.3);
    const MCEstimate rw = reweighted_expectation(ens, c, model, g);
    CHECK(std::abs(rw.mean - 0.3) <= 3.0 * rw.std_error);
  }

  SUBCASE("matches direct simulation of the perturbed dynamics") {
    const PerturbationField c = make_constant_field(1, 0.3);
    const MCEstimate rw = reweighted_expectation(ens, c, model, g);
    const PathEnsemble pert =
        simulate_ensemble(model, Domain::unbounded(), vec1(0.0), &c, grid, 20000, 100, 0);
    std::vector<double> v(pert.paths.size());
    for (std::size_t i = 0; i < pert.paths.size(); ++i) v[i] = pert.paths[i].terminal()[0];
    const MCEstimate direct = mc_estimate(v);
    const double combined =
        std::sqrt(rw.std_error * rw.std_error + direct.std_error * direct.std_error);
    CHECK(std::abs(rw.mean - direct.mean) <= 3.0 * combined);
  }
}

TEST_CASE("ill-conditioned diffusion is rejected") {
  SdeModel model = make_brownian(1, 1e-9);
  const TimeGrid grid(1.0, 4);
  const SamplePath path = simulate_path(model, Domain::unbounded(), vec1(0.0), nullptr, grid, 1);
  CHECK_THROWS_AS(girsanov_series(path, make_constant_field(1, 1.0), model),
                  IllConditionedDiffusionError);
}

TEST_CASE("exponential overflow reports the offending values") {
  // Injected extreme increments drive M far above the representable range of
  // exp while <M> stays moderate.
  const SdeModel model = make_brownian(1, 1.0);
  const TimeGrid grid(1.0, 8);
  SamplePath path;
  path.wiener = Eigen::MatrixXd::Constant(8, 1, 30.0);
  simulate_path_with_increments(path, model, Domain::unbounded(), vec1(0.0), nullptr, grid);
  CHECK_THROWS_AS(girsanov_series(path, make_constant_field(1, 100.0), model), EstimationError);
}
