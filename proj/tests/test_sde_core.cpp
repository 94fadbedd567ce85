#include <doctest.h>

#include <cmath>

#include "driftsens/models.hpp"
#include "driftsens/sde.hpp"

using namespace driftsens;

namespace {

Eigen::VectorXd vec1(double x) {
  Eigen::VectorXd v(1);
  v[0] = x;
  return v;
}

}  // namespace

TEST_CASE("mirror folding examples and idempotence") {
  const Domain box = Domain::box1d(0.0, 1.0);
  CHECK(reflect_into_domain(vec1(0.5), box)[0] == 0.5);
  CHECK(reflect_into_domain(vec1(1.2), box)[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(reflect_into_domain(vec1(2.5), box)[0] == doctest::Approx(0.5).epsilon(1e-15));

  // Idempotence over a deterministic point sweep, including far-out points.
  CounterRng rng(99);
  for (int i = 0; i < 200; ++i) {
    const double x = 40.0 * (rng.next_uniform() - 0.5);
    const Eigen::VectorXd once = reflect_into_domain(vec1(x), box);
    const Eigen::VectorXd twice = reflect_into_domain(once, box);
    CHECK(once[0] == twice[0]);
    CHECK(once[0] >= 0.0);
    CHECK(once[0] <= 1.0);
  }

  const Domain free = Domain::unbounded();
  CHECK(reflect_into_domain(vec1(123.0), free)[0] == 123.0);
}

TEST_CASE("degenerate grid produces the bare initial state") {
  const SdeModel model = make_brownian(1, 1.0);
  const TimeGrid grid(0.0, 0);
  const SamplePath path = simulate_path(model, Domain::unbounded(), vec1(0.7), nullptr, grid, 5);
  CHECK(path.states.rows() == 1);
  CHECK(path.states(0, 0) == 0.7);
}

TEST_CASE("time grid validation") {
  CHECK_THROWS_AS(TimeGrid(1.0, 0), InputError);
  CHECK_THROWS_AS(TimeGrid(-1.0, 4), InputError);
  const TimeGrid g(2.0, 8);
  CHECK(g.dt == doctest::Approx(0.25));
  CHECK(g.time(8) == doctest::Approx(2.0));
}

TEST_CASE("injected zero increments keep a driftless path constant") {
  const SdeModel model = make_brownian(1, 1.0);
  const TimeGrid grid(1.0, 16);
  SamplePath path;
  path.wiener = Eigen::MatrixXd::Zero(16, 1);
  simulate_path_with_increments(path, model, Domain::unbounded(), vec1(0.3), nullptr, grid);
  for (long k = 0; k <= 16; ++k) CHECK(path.states(k, 0) == 0.3);
}

TEST_CASE("ensembles are seed-deterministic and scheduling-invariant") {
  const SdeModel model = make_constant_drift(1, 0.5, 1.0);
  const TimeGrid grid(1.0, 32);
  const PathEnsemble a =
      simulate_ensemble(model, Domain::unbounded(), vec1(0.0), nullptr, grid, 64, 1234, 1);
  const PathEnsemble b =
      simulate_ensemble(model, Domain::unbounded(), vec1(0.0), nullptr, grid, 64, 1234, 4);
  REQUIRE(a.n_paths() == b.n_paths());
  for (long i = 0; i < a.n_paths(); ++i) {
    CHECK(a.paths[i].states == b.paths[i].states);
    CHECK(a.paths[i].wiener == b.paths[i].wiener);
  }

  // N = 1 ensemble is exactly the counter-seeded single path.
  const PathEnsemble single =
      simulate_ensemble(model, Domain::unbounded(), vec1(0.0), nullptr, grid, 1, 77, 1);
  const SamplePath direct =
      simulate_path(model, Domain::unbounded(), vec1(0.0), nullptr, grid, derive_stream(77, 0));
  CHECK(single.paths[0].states == direct.states);
}

TEST_CASE("box-domain paths stay inside the box") {
  const SdeModel model = make_brownian(1, 1.0);
  const Domain box = Domain::box1d(0.0, 1.0);
  const TimeGrid grid(1.0, 200);
  const PathEnsemble ens = simulate_ensemble(model, box, vec1(0.5), nullptr, grid, 50, 9, 0);
  for (const SamplePath& p : ens.paths)
    for (long k = 0; k <= grid.n_steps; ++k) {
      CHECK(p.states(k, 0) >= 0.0);
      CHECK(p.states(k, 0) <= 1.0);
    }
}

TEST_CASE("weak-order sanity: constant coefficients match analytic moments") {
  // X_1 ~ Normal(x0 + b t, sigma^2 t): mean within the 3 sigma MC band,
  // variance within a chi-square band.
  const SdeModel model = make_constant_drift(1, 1.0, 1.0);
  const TimeGrid grid(1.0, 8);
  const long n = 100000;
  double sum = 0.0, sumsq = 0.0;
  for_each_path(model, Domain::unbounded(), vec1(0.0), nullptr, grid, n, 2024, 1,
                [&](long, const SamplePath& p) {
                  const double x = p.terminal()[0];
                  sum += x;
                  sumsq += x * x;
                });
  const double mean = sum / static_cast<double>(n);
  const double var = sumsq / static_cast<double>(n) - mean * mean;
  CHECK(std::abs(mean - 1.0) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("explosion guard names the failing step") {
  SdeModel model = make_brownian(1, 1.0);
  model.drift = [](double, const Eigen::VectorXd& y, Eigen::VectorXd& out) {
    out.resize(1);
    out[0] = 1e7 * (1.0 + y.cwiseAbs().sum());
  };
  const TimeGrid grid(1.0, 4);
  CHECK_THROWS_AS(simulate_path(model, Domain::unbounded(), vec1(0.0), nullptr, grid, 1),
                  ExplosionError);
  try {
    simulate_path(model, Domain::unbounded(), vec1(0.0), nullptr, grid, 1);
  } catch (const ExplosionError& e) {
    CHECK(e.step() == 0);
  }
}

TEST_CASE("x0 outside the domain is an input error") {
  const SdeModel model = make_brownian(1, 1.0);
  const Domain box = Domain::box1d(0.0, 1.0);
  CHECK_THROWS_AS(simulate_path(model, box, vec1(2.0), nullptr, TimeGrid(1.0, 4), 1), InputError);
}

TEST_CASE("v-norm estimate: zero, constant and sine fields") {
  const Domain box = Domain::box1d(0.0, 3.14159265358979323846);
  CHECK(estimate_v_norm(zero_field(1), box, 16, {0.0}) == 0.0);

  const PerturbationField c = make_constant_field(1, -2.5);
  CHECK(estimate_v_norm(c, box, 16, {0.0, 1.0}) == doctest::Approx(2.5));

  const PerturbationField sine = make_sine_field(1.0, 1.0);
  const double est = estimate_v_norm(sine, box, 10000, {0.0});
  CHECK(est == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(est <= 1.0 + 1e-12);  // sampled estimate stays a lower bound

  CHECK_THROWS_AS(estimate_v_norm(c, Domain::unbounded(), 16, {0.0}), UnsupportedDomainError);
  CHECK_THROWS_AS(estimate_v_norm(c, box, 1, {0.0}), InputError);
}

TEST_CASE("model validation report") {
  SUBCASE("identity diffusion, zero drift") {
    const SdeModel model = make_brownian(1, 1.0);
    const AssumptionReport rep = validate_model(model, Domain::box1d(-1.0, 1.0), 64);
    CHECK(rep.min_singular_value == doctest::Approx(1.0));
    CHECK(rep.max_growth_ratio <= 1.0);
    CHECK(rep.all_ok());
  }
  SUBCASE("linear drift has unit Lipschitz quotient") {
    const SdeModel model = make_ornstein_uhlenbeck(1, 1.0, 0.0, 1.0);
    const AssumptionReport rep = validate_model(model, Domain::box1d(-2.0, 2.0), 128);
    CHECK(rep.max_drift_lipschitz == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(rep.all_ok());
  }
  SUBCASE("under-declared ellipticity is flagged, not thrown") {
    SdeModel model = make_brownian(1, 0.5);
    model.ellipticity_bound = 1.0;  // declares min singular value >= 1, actual is 0.5
    const AssumptionReport rep = validate_model(model, Domain::box1d(-1.0, 1.0), 16);
    CHECK(rep.min_singular_value == doctest::Approx(0.5));
    CHECK(!rep.ellipticity_ok);
    CHECK(rep.lipschitz_ok);
  }
}

TEST_CASE("path dump round trip, binary and text") {
  const SdeModel model = make_constant_drift(1, 0.2, 0.7);
  const TimeGrid grid(0.5, 6);
  const PathEnsemble ens =
      simulate_ensemble(model, Domain::unbounded(), vec1(0.1), nullptr, grid, 5, 31, 1);

  for (const bool binary : {true, false}) {
    const std::string file = binary ? "/tmp/ds_dump_test.bin" : "/tmp/ds_dump_test.txt";
    write_path_dump(ens, file, binary);
    const PathDump dump = read_path_dump(file);
    CHECK(dump.d == 1);
    CHECK(dump.n_steps == 6);
    CHECK(dump.n_paths == 5);
    CHECK(dump.seed == 31);
    CHECK(!dump.has_series());
    for (long k = 0; k <= 6; ++k)
      for (long i = 0; i < 5; ++i) {
        const bool same = dump.states[k](i, 0) == ens.paths[i].states(k, 0);
        CHECK(same);
      }
  }
}
