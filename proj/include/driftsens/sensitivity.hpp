#pragma once

#include <vector>

#include "driftsens/estimate.hpp"
#include "driftsens/girsanov.hpp"
#include "driftsens/observable.hpp"
#include "driftsens/sde.hpp"

namespace driftsens {

struct McParams {
  long n_paths = 10000;
  std::uint64_t seed = 1;
  int threads = 0;
};

/// Per-path reductions of one unperturbed ensemble. The expectation, the
/// derivative, the reweighted expectation and the remainder are all evaluated
/// from the same BaseRun, so every linear-response quantity shares its sample
/// paths and scaling the direction by epsilon is exact post-processing
/// (M and <M> scale linearly/quadratically pathwise).
struct BaseRun {
  std::vector<double> g;      // observable values
  std::vector<double> m, qv;  // Ito weight / quadratic variation at t_obs
  std::vector<double> m_end, qv_end;  // same at t_end (Remark-style diagnostics)
  double t_obs = 0.0;
};

BaseRun reduce_base_run(const SdeModel& model, const Domain& domain, const Eigen::VectorXd& x0,
                        const PerturbationField& direction, const Observable& observable,
                        const TimeGrid& grid, const McParams& mc);

/// E[g(X)] over an ensemble.
MCEstimate expectation(const PathEnsemble& ensemble, const Observable& observable);
MCEstimate expectation(const BaseRun& run);

/// Girsanov estimator of the drift derivative: mean of g * M at the
/// observable's time (marker time for marginals, t_end otherwise).
MCEstimate frechet_derivative(const PathEnsemble& base_ensemble, const PerturbationField& gamma,
                              const SdeModel& model, const Observable& observable);
MCEstimate frechet_derivative(const BaseRun& run, double epsilon = 1.0);

/// Reweighted expectation u(epsilon * direction) from the shared run.
MCEstimate reweighted_expectation(const BaseRun& run, double epsilon = 1.0);

/// Pathwise remainder sample r = g (Z - 1 - M), the quantity whose decay
/// rate certifies first-order correctness.
MCEstimate remainder(const BaseRun& run, double epsilon = 1.0);
MCEstimate remainder(const SdeModel& model, const Domain& domain, const Eigen::VectorXd& x0,
                     const PerturbationField& gamma, const Observable& observable,
                     const TimeGrid& grid, const McParams& mc);

/// Central difference [u(h gamma) - u(-h gamma)] / (2h) with common Wiener
/// increments between the two ensembles; the stderr is that of the coupled
/// pathwise differences.
MCEstimate finite_difference_derivative(const SdeModel& model, const Domain& domain,
                                        const Eigen::VectorXd& x0,
                                        const PerturbationField& gamma,
                                        const Observable& observable, const TimeGrid& grid,
                                        double h, const McParams& mc);

struct DecayPoint {
  double epsilon = 0.0;
  double u_gamma = 0.0;
  double u_0 = 0.0;
  double derivative = 0.0;  // epsilon * mean(g M)
  double remainder = 0.0;
  double remainder_stderr = 0.0;
  bool usable = false;  // |remainder| resolvable above MC noise
};

struct DecayFit {
  std::vector<DecayPoint> points;
  double slope = 0.0;      // log|r| vs log(eps) least squares
  double intercept = 0.0;
  int n_used = 0;
};

/// Remainder magnitudes over an epsilon sweep plus the log-log slope.
/// Points with |r| <= 3 stderr are flagged and excluded from the fit; fewer
/// than 3 usable points raises InconclusiveFitError.
DecayFit quadratic_decay_fit(const SdeModel& model, const Domain& domain,
                             const Eigen::VectorXd& x0, const PerturbationField& direction,
                             const Observable& observable, const std::vector<double>& epsilons,
                             const TimeGrid& grid, const McParams& mc);

/// Model with drift b + shift (declared bounds widened by the shift's norm).
SdeModel shifted_model(const SdeModel& model, const PerturbationField& shift);

struct ContinuityRow {
  double shift_v_norm = 0.0;
  MCEstimate derivative;
  double abs_difference = 0.0;  // |D(b + b') - D(b)|
};

struct ContinuityScan {
  MCEstimate base_derivative;
  std::vector<ContinuityRow> rows;
};

/// Derivative in a fixed direction, evaluated at shifted base drifts b + b'.
/// All rows share the master seed (common increments), so the differences are
/// coupled estimates.
ContinuityScan derivative_continuity_scan(const SdeModel& model, const Domain& domain,
                                          const Eigen::VectorXd& x0,
                                          const std::vector<PerturbationField>& base_shifts,
                                          const PerturbationField& direction,
                                          const Observable& observable, const TimeGrid& grid,
                                          const McParams& mc);

}  // namespace driftsens
