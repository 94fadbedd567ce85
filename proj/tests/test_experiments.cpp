#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "driftsens/experiments.hpp"

using namespace driftsens;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config parser") {
  SUBCASE("well-formed config with comments") {
    const ExperimentConfig cfg = parse_config_text(
        "# a comment\n"
        "kind = derivative_check\n"
        "seed = 42\n"
        "model = brownian   # trailing comment\n"
        "epsilons = 0.4, 0.2, 0.1\n");
    CHECK(cfg.kind == "derivative_check");
    CHECK(cfg.get_seed() == 42);
    CHECK(cfg.get_string("model") == "brownian");
    CHECK(cfg.get_decreasing_list("epsilons").size() == 3);
  }
  SUBCASE("missing equals sign names the line") {
    try {
      parse_config_text("kind = derivative_check\nseed 42\n");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("unknown kind") {
    CHECK_THROWS_AS(parse_config_text("kind = warp_drive\nseed = 1\n"), ConfigError);
  }
  SUBCASE("seed is required with no wall-clock default") {
    const ExperimentConfig cfg = parse_config_text("kind = derivative_check\n");
    CHECK_THROWS_AS(cfg.get_seed(), ConfigError);
  }
  SUBCASE("increasing epsilon list is rejected naming the field") {
    const ExperimentConfig cfg =
        parse_config_text("kind = remainder_scaling\nseed = 1\nepsilons = 0.1, 0.2\n");
    try {
      cfg.get_decreasing_list("epsilons");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.field() == "epsilons");
    }
  }
  SUBCASE("duplicate keys are rejected") {
    CHECK_THROWS_AS(parse_config_text("kind = derivative_check\nseed = 1\nseed = 2\n"),
                    ConfigError);
  }
}

TEST_CASE("registry errors name their fields") {
  const ExperimentConfig cfg = parse_config_text(
      "kind = derivative_check\nseed = 1\nmodel = pendulum\n");
  CHECK_THROWS_AS(model_from_config(cfg), ConfigError);
}

TEST_CASE("derivative_check experiment passes its analytic gate and is byte-deterministic") {
  const ExperimentConfig cfg = parse_config_text(
      "kind = derivative_check\n"
      "seed = 2718\n"
      "model = brownian\n"
      "model.sigma = 1\n"
      "gamma = constant\n"
      "gamma.value = 0.5\n"
      "observable = position\n"
      "time.t_end = 1\n"
      "time.n_steps = 16\n"
      "mc.n_paths = 40000\n"
      "fd.n_paths = 5000\n");
  const ExperimentResult a = run_experiment(cfg, "/tmp/ds_exp_a");
  CHECK(a.pass);
  REQUIRE(a.checks.size() >= 2);
  CHECK(std::filesystem::exists(a.out_dir / "summary.json"));
  CHECK(std::filesystem::exists(a.out_dir / "derivative.csv"));

  const ExperimentResult b = run_experiment(cfg, "/tmp/ds_exp_b");
  CHECK(slurp(a.out_dir / "summary.json") == slurp(b.out_dir / "summary.json"));
  CHECK(slurp(a.out_dir / "derivative.csv") == slurp(b.out_dir / "derivative.csv"));
}

TEST_CASE("remainder_scaling experiment on the analytic quadratic case") {
  const ExperimentConfig cfg = parse_config_text(
      "kind = remainder_scaling\n"
      "seed = 5\n"
      "model = brownian\n"
      "x0 = 1\n"
      "gamma = constant\n"
      "gamma.value = 1\n"
      "observable = position_squared\n"
      "time.t_end = 1\n"
      "time.n_steps = 16\n"
      "epsilons = 0.4, 0.2, 0.1\n"
      "mc.n_paths = 50000\n");
  const ExperimentResult r = run_experiment(cfg, "/tmp/ds_exp_rs");
  CHECK(r.pass);
  CHECK(r.summary["results"]["slope"].get<double>() == doctest::Approx(2.0).epsilon(0.1));
  // CSV carries the documented columns.
  const std::string csv = slurp(r.out_dir / "remainder.csv");
  CHECK(csv.rfind("epsilon,u_gamma,u_0,derivative,remainder,stderr", 0) == 0);
}

TEST_CASE("discontinuity demo: zero drift offset gives exactly zero distance") {
  const ExperimentConfig cfg = parse_config_text(
      "kind = discontinuity_demo\n"
      "seed = 31\n"
      "model = brownian\n"
      "domain = box\n"
      "domain.lower = 0\n"
      "domain.upper = 1\n"
      "x0 = 0.5\n"
      "kernel.cells = 50\n"
      "kernel.n_steps = 10\n"
      "kernel.n_paths_per_cell = 200\n"
      "demo.offset = 0\n"
      "demo.sigmas = 0.5, 0.05\n"
      "demo.widths = 0.02\n"
      "demo.t = 0.5\n");
  const ExperimentResult r = run_experiment(cfg, "/tmp/ds_exp_demo0");
  // A zero offset cannot reproduce the small-noise jump, so the experiment
  // fails its gate, but both distances must be exactly zero (common seeds).
  CHECK(!r.pass);
  for (const ExperimentCheck& c : r.checks)
    if (c.name == "small_noise_distance_sq" || c.name == "large_noise_distance_sq")
      CHECK(c.value == 0.0);
}

TEST_CASE("discontinuity demo rejects sub-cell bumps") {
  const ExperimentConfig cfg = parse_config_text(
      "kind = discontinuity_demo\n"
      "seed = 31\n"
      "model = brownian\n"
      "domain = box\n"
      "domain.lower = 0\n"
      "domain.upper = 1\n"
      "x0 = 0.5\n"
      "kernel.cells = 10\n"
      "kernel.n_steps = 5\n"
      "kernel.n_paths_per_cell = 50\n"
      "demo.sigmas = 0.5\n"
      "demo.widths = 0.02\n");  // cell width 0.1 > bump width
  const ExperimentResult r = run_experiment(cfg, "/tmp/ds_exp_demo_narrow");
  CHECK(!r.pass);
  CHECK(r.summary.contains("error"));
  const std::string err = r.summary["error"].get<std::string>();
  CHECK(err.find("narrower") != std::string::npos);
}

TEST_CASE("experiment kind registry is complete") {
  CHECK(kExperimentKinds.size() == 8);
  for (const std::string& kind : kExperimentKinds) {
    const ExperimentConfig cfg = parse_config_text("kind = " + kind + "\nseed = 1\n");
    CHECK(cfg.kind == kind);
  }
}
