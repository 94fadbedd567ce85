#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "driftsens/errors.hpp"
#include "driftsens/rng.hpp"

namespace driftsens {

using DriftFn = std::function<void(double t, const Eigen::VectorXd& y, Eigen::VectorXd& out)>;
using DiffusionFn = std::function<void(double t, const Eigen::VectorXd& y, Eigen::MatrixXd& out)>;

/// Paths are aborted once |X|_inf exceeds this; surfaces growth-condition
/// violations instead of propagating NaN.
inline constexpr double kExplosionGuard = 1e6;

// ---------------------------------------------------------------------------
// Model and perturbation data
// ---------------------------------------------------------------------------

/// Time-inhomogeneous SDE  dX = b(t,X) dt + sigma(t,X) dW  with declared
/// coefficient bounds:
///   - lipschitz_bound L:     |f_i(t,y)| <= L(1+|y|) and Lipschitz constant <= L
///                            for entries of b and sigma,
///   - ellipticity_bound:     smallest singular value of sigma >= 1/ellipticity_bound.
/// The declared bounds are validated against samples by validate_model().
struct SdeModel {
  DriftFn drift;
  DiffusionFn diffusion;
  double horizon = 1.0;
  int dim = 1;
  double lipschitz_bound = 1.0;
  double ellipticity_bound = 1.0;
  /// Structural hint: sigma(t,y) is diagonal for all (t,y). Enables the
  /// conditional last-step histogram in the kernel estimator.
  bool diagonal_diffusion = false;
  std::string id;
};

/// Additive drift direction gamma with an estimate of its sup+Lipschitz norm.
struct PerturbationField {
  DriftFn gamma;
  double v_norm_estimate = 0.0;
  std::string id;
};

PerturbationField zero_field(int dim);

/// epsilon * field, with the norm estimate scaled along.
PerturbationField scaled_field(const PerturbationField& field, double factor);

/// Pointwise sum of two fields; v-norm estimate is the (sub-additive) sum.
PerturbationField sum_field(const PerturbationField& a, const PerturbationField& b);

struct Domain {
  enum class Kind { unbounded, box };
  Kind kind = Kind::unbounded;
  Eigen::VectorXd lower, upper;  // box only

  static Domain box(Eigen::VectorXd lo, Eigen::VectorXd hi);
  static Domain box1d(double lo, double hi);
  static Domain unbounded();

  bool is_box() const { return kind == Kind::box; }
  bool contains(const Eigen::VectorXd& p) const;
  double volume() const;  // box only
};

/// Uniform grid on [0, t_end]. n_steps == 0 is allowed only with t_end == 0
/// (the degenerate no-step grid).
struct TimeGrid {
  double t_end = 0.0;
  long n_steps = 0;
  double dt = 0.0;

  TimeGrid() = default;
  TimeGrid(double t_end_, long n_steps_);

  double time(long k) const { return dt * static_cast<double>(k); }
};

/// One discretized trajectory: states on the time grid plus the Wiener
/// increments that produced them (enables common-random-number coupling and
/// independent re-summation oracles). reflected[k] marks steps where the
/// proposal was folded back into the box.
struct SamplePath {
  TimeGrid grid;
  Eigen::MatrixXd states;               // (n_steps+1) x d, row k = X_{t_k}
  Eigen::MatrixXd wiener;               // n_steps x d
  std::vector<std::uint8_t> reflected;  // n_steps

  int dim() const { return static_cast<int>(states.cols()); }
  Eigen::VectorXd state(long k) const { return states.row(k).transpose(); }
  Eigen::VectorXd terminal() const { return states.row(states.rows() - 1).transpose(); }
};

struct PathEnsemble {
  std::vector<SamplePath> paths;
  TimeGrid grid;
  Eigen::VectorXd x0;
  std::uint64_t seed = 0;
  std::string model_id, gamma_id;

  long n_paths() const { return static_cast<long>(paths.size()); }
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Componentwise mirror folding into a box; identity on unbounded domains and
/// interior points (bit-identical pass-through). Total on finite inputs and
/// idempotent.
Eigen::VectorXd reflect_into_domain(const Eigen::VectorXd& point, const Domain& domain);
double fold_coordinate(double x, double lo, double hi);

/// Euler-Maruyama with left-endpoint coefficients:
///   X_{k+1} = reflect(X_k + (b + gamma_sim)(t_k, X_k) dt + sigma(t_k, X_k) dW_k).
/// gamma_sim == nullptr simulates the unperturbed drift. Throws ExplosionError
/// naming the step when |X| exceeds the guard, InputError when x0 is outside
/// the domain or the grid overruns the model horizon.
SamplePath simulate_path(const SdeModel& model, const Domain& domain, const Eigen::VectorXd& x0,
                         const PerturbationField* gamma_sim, const TimeGrid& grid,
                         std::uint64_t path_seed);

/// Same stepper with caller-provided increments (path.wiener must be preset);
/// used by integrator identity checks and coupling oracles.
void simulate_path_with_increments(SamplePath& path, const SdeModel& model, const Domain& domain,
                                   const Eigen::VectorXd& x0, const PerturbationField* gamma_sim,
                                   const TimeGrid& grid);

/// Reusable-buffer variant of simulate_path for hot loops.
void simulate_path_into(SamplePath& path, const SdeModel& model, const Domain& domain,
                        const Eigen::VectorXd& x0, const PerturbationField* gamma_sim,
                        const TimeGrid& grid, std::uint64_t path_seed);

/// Materialized ensemble. Path i uses the stream derive_stream(seed, i), so
/// the sample set is independent of scheduling and identical across runs.
PathEnsemble simulate_ensemble(const SdeModel& model, const Domain& domain,
                               const Eigen::VectorXd& x0, const PerturbationField* gamma_sim,
                               const TimeGrid& grid, long n_paths, std::uint64_t seed,
                               int threads = 0);

int resolve_threads(int threads);

/// Streaming traversal of the same ensemble simulate_ensemble would produce,
/// without materializing it. fn(path_index, path) is invoked exactly once per
/// index, possibly concurrently; the path buffer is only valid during the
/// call. Explosion errors are rethrown with the smallest failing path index.
template <class F>
void for_each_path(const SdeModel& model, const Domain& domain, const Eigen::VectorXd& x0,
                   const PerturbationField* gamma_sim, const TimeGrid& grid, long n_paths,
                   std::uint64_t seed, int threads, F&& fn) {
  if (n_paths < 1) throw InputError("for_each_path: n_paths must be >= 1");
  const int nthreads = resolve_threads(threads);
  if (nthreads <= 1 || n_paths == 1) {
    SamplePath buf;
    for (long i = 0; i < n_paths; ++i) {
      simulate_path_into(buf, model, domain, x0, gamma_sim, grid, derive_stream(seed, i));
      fn(i, buf);
    }
    return;
  }

  std::atomic<long> next{0};
  std::mutex err_mutex;
  long err_index = std::numeric_limits<long>::max();
  std::exception_ptr err;
  auto worker = [&]() {
    SamplePath buf;
    for (;;) {
      const long i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n_paths) return;
      try {
        simulate_path_into(buf, model, domain, x0, gamma_sim, grid, derive_stream(seed, i));
        fn(i, buf);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (i < err_index) {
          err_index = i;
          err = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(nthreads);
  for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (err) {
    try {
      std::rethrow_exception(err);
    } catch (ExplosionError& e) {
      e.set_path_index(err_index);
      throw;
    }
  }
}

/// Sampled lower bound of the sup+Lipschitz norm on a box domain:
/// max over times and grid points of |f_i| and of axis-neighbor difference
/// quotients. Converges to the norm from below as resolution grows.
double estimate_v_norm(const PerturbationField& field, const Domain& domain, int resolution,
                       const std::vector<double>& time_samples);

struct AssumptionReport {
  double max_drift_lipschitz = 0.0;
  double max_diffusion_lipschitz = 0.0;
  double max_growth_ratio = 0.0;
  double min_singular_value = std::numeric_limits<double>::infinity();
  bool lipschitz_ok = true;
  bool growth_ok = true;
  bool ellipticity_ok = true;

  bool all_ok() const { return lipschitz_ok && growth_ok && ellipticity_ok; }
  std::string summary() const;
};

/// Samples the coefficient bounds on a box and compares them with the
/// declared constants. Violations are report entries, never exceptions.
AssumptionReport validate_model(const SdeModel& model, const Domain& domain, int resolution);

// ---------------------------------------------------------------------------
// Path dump (documented external format, see README)
// ---------------------------------------------------------------------------

struct PathDump {
  long d = 0;
  long n_steps = 0;
  double dt = 0.0;
  long n_paths = 0;
  std::uint64_t seed = 0;
  /// states[k] is the N x d matrix of all paths at time index k (time-major).
  std::vector<Eigen::MatrixXd> states;
  /// Optional per-path series appended to the dump; series[k] is N x 3 with
  /// columns (M, <M>, Z) at time index k.
  std::vector<Eigen::MatrixXd> series;
  bool has_series() const { return !series.empty(); }
};

void write_path_dump(const PathEnsemble& ensemble, const std::string& file, bool binary,
                     const std::vector<Eigen::MatrixXd>* series_per_time = nullptr);
PathDump read_path_dump(const std::string& file);

}  // namespace driftsens
