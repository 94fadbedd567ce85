#include "driftsens/sensitivity.hpp"

#include <algorithm>
#include <cmath>

namespace driftsens {

BaseRun reduce_base_run(const SdeModel& model, const Domain& domain, const Eigen::VectorXd& x0,
                        const PerturbationField& direction, const Observable& observable,
                        const TimeGrid& grid, const McParams& mc) {
  const long N = mc.n_paths;
  BaseRun run;
  run.g.resize(static_cast<std::size_t>(N));
  run.m.resize(static_cast<std::size_t>(N));
  run.qv.resize(static_cast<std::size_t>(N));
  run.m_end.resize(static_cast<std::size_t>(N));
  run.qv_end.resize(static_cast<std::size_t>(N));

  const long marker = observable.kind == Observable::Kind::time_marginal
                          ? Observable::marker_index(grid, observable.t_marker)
                          : grid.n_steps;
  run.t_obs = grid.time(marker);

  for_each_path(model, domain, x0, nullptr, grid, N, mc.seed, mc.threads,
                [&](long i, const SamplePath& path) {
                  const GirsanovSeries s = girsanov_series(path, direction, model);
                  const auto idx = static_cast<std::size_t>(i);
                  run.g[idx] = observable.evaluate_checked(path);
                  run.m[idx] = s.m[marker];
                  run.qv[idx] = s.qv[marker];
                  run.m_end[idx] = s.m[grid.n_steps];
                  run.qv_end[idx] = s.qv[grid.n_steps];
                });
  return run;
}

MCEstimate expectation(const PathEnsemble& ensemble, const Observable& observable) {
  if (ensemble.n_paths() == 0) throw EstimationError("expectation: empty ensemble");
  std::vector<double> values(static_cast<std::size_t>(ensemble.n_paths()));
  for (long i = 0; i < ensemble.n_paths(); ++i)
    values[static_cast<std::size_t>(i)] =
        observable.evaluate_checked(ensemble.paths[static_cast<std::size_t>(i)]);
  return mc_estimate(values);
}

MCEstimate expectation(const BaseRun& run) { return mc_estimate(run.g); }

MCEstimate frechet_derivative(const PathEnsemble& base_ensemble, const PerturbationField& gamma,
                              const SdeModel& model, const Observable& observable) {
  if (base_ensemble.n_paths() == 0) throw EstimationError("frechet_derivative: empty ensemble");
  std::vector<double> values(static_cast<std::size_t>(base_ensemble.n_paths()));
  for (long i = 0; i < base_ensemble.n_paths(); ++i) {
    const SamplePath& path = base_ensemble.paths[static_cast<std::size_t>(i)];
    const GirsanovSeries s = girsanov_series(path, gamma, model);
    const long k = observable.kind == Observable::Kind::time_marginal
                       ? Observable::marker_index(path.grid, observable.t_marker)
                       : path.grid.n_steps;
    values[static_cast<std::size_t>(i)] = observable.evaluate_checked(path) * s.m[k];
  }
  return mc_estimate(values);
}

MCEstimate frechet_derivative(const BaseRun& run, double epsilon) {
  std::vector<double> values(run.g.size());
  for (std::size_t i = 0; i < run.g.size(); ++i) values[i] = run.g[i] * epsilon * run.m[i];
  return mc_estimate(values);
}

MCEstimate reweighted_expectation(const BaseRun& run, double epsilon) {
  std::vector<double> values(run.g.size());
  for (std::size_t i = 0; i < run.g.size(); ++i)
    values[i] = run.g[i] * std::exp(epsilon * run.m[i] - 0.5 * epsilon * epsilon * run.qv[i]);
  return mc_estimate(values);
}

MCEstimate remainder(const BaseRun& run, double epsilon) {
  std::vector<double> values(run.g.size());
  for (std::size_t i = 0; i < run.g.size(); ++i) {
    const double z = std::exp(epsilon * run.m[i] - 0.5 * epsilon * epsilon * run.qv[i]);
    values[i] = run.g[i] * (z - 1.0 - epsilon * run.m[i]);
  }
  return mc_estimate(values);
}

MCEstimate remainder(const SdeModel& model, const Domain& domain, const Eigen::VectorXd& x0,
                     const PerturbationField& gamma, const Observable& observable,
                     const TimeGrid& grid, const McParams& mc) {
  return remainder(reduce_base_run(model, domain, x0, gamma, observable, grid, mc));
}

MCEstimate finite_difference_derivative(const SdeModel& model, const Domain& domain,
                                        const Eigen::VectorXd& x0,
                                        const PerturbationField& gamma,
                                        const Observable& observable, const TimeGrid& grid,
                                        double h, const McParams& mc) {
  if (!(h > 0.0)) throw InputError("finite_difference_derivative: h must be positive");
  const PerturbationField plus = scaled_field(gamma, h);
  const PerturbationField minus = scaled_field(gamma, -h);
  const long N = mc.n_paths;

  std::vector<double> g_plus(static_cast<std::size_t>(N)), g_minus(static_cast<std::size_t>(N));
  for_each_path(model, domain, x0, &plus, grid, N, mc.seed, mc.threads,
                [&](long i, const SamplePath& p) {
                  g_plus[static_cast<std::size_t>(i)] = observable.evaluate_checked(p);
                });
  for_each_path(model, domain, x0, &minus, grid, N, mc.seed, mc.threads,
                [&](long i, const SamplePath& p) {
                  g_minus[static_cast<std::size_t>(i)] = observable.evaluate_checked(p);
                });

  std::vector<double> diff(static_cast<std::size_t>(N));
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = (g_plus[i] - g_minus[i]) / (2.0 * h);
  return mc_estimate(diff);
}

DecayFit quadratic_decay_fit(const SdeModel& model, const Domain& domain,
                             const Eigen::VectorXd& x0, const PerturbationField& direction,
                             const Observable& observable, const std::vector<double>& epsilons,
                             const TimeGrid& grid, const McParams& mc) {
  if (epsilons.size() < 3)
    throw InputError("quadratic_decay_fit: at least 3 epsilon values required");
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    if (!(epsilons[i] > 0.0)) throw InputError("quadratic_decay_fit: epsilons must be positive");
    if (i > 0 && !(epsilons[i] < epsilons[i - 1]))
      throw InputError("quadratic_decay_fit: epsilons must be strictly decreasing");
  }

  const BaseRun run = reduce_base_run(model, domain, x0, direction, observable, grid, mc);
  const MCEstimate u0 = expectation(run);

  DecayFit fit;
  fit.points.reserve(epsilons.size());
  for (const double eps : epsilons) {
    DecayPoint p;
    p.epsilon = eps;
    p.u_0 = u0.mean;
    p.u_gamma = reweighted_expectation(run, eps).mean;
    p.derivative = frechet_derivative(run, eps).mean;
    const MCEstimate r = remainder(run, eps);
    p.remainder = r.mean;
    p.remainder_stderr = r.std_error;
    p.usable = std::abs(r.mean) > 3.0 * r.std_error;
    fit.points.push_back(p);
  }

  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const DecayPoint& p : fit.points) {
    if (!p.usable) continue;
    const double x = std::log(p.epsilon);
    const double y = std::log(std::abs(p.remainder));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++fit.n_used;
  }
  if (fit.n_used < 3)
    throw InconclusiveFitError("quadratic_decay_fit: fewer than 3 points above MC noise");
  const double n = static_cast<double>(fit.n_used);
  fit.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  fit.intercept = (sy - fit.slope * sx) / n;
  return fit;
}

SdeModel shifted_model(const SdeModel& model, const PerturbationField& shift) {
  SdeModel out = model;
  out.drift = [base = model.drift, s = shift.gamma](double t, const Eigen::VectorXd& y,
                                                    Eigen::VectorXd& b) {
    base(t, y, b);
    Eigen::VectorXd add(b.size());
    s(t, y, add);
    b += add;
  };
  out.lipschitz_bound = model.lipschitz_bound + shift.v_norm_estimate;
  out.id = model.id + "+" + shift.id;
  return out;
}

ContinuityScan derivative_continuity_scan(const SdeModel& model, const Domain& domain,
                                          const Eigen::VectorXd& x0,
                                          const std::vector<PerturbationField>& base_shifts,
                                          const PerturbationField& direction,
                                          const Observable& observable, const TimeGrid& grid,
                                          const McParams& mc) {
  ContinuityScan scan;
  scan.base_derivative =
      frechet_derivative(reduce_base_run(model, domain, x0, direction, observable, grid, mc));
  scan.rows.reserve(base_shifts.size());
  for (const PerturbationField& shift : base_shifts) {
    const SdeModel shifted = shifted_model(model, shift);
    ContinuityRow row;
    row.shift_v_norm = shift.v_norm_estimate;
    row.derivative =
        frechet_derivative(reduce_base_run(shifted, domain, x0, direction, observable, grid, mc));
    row.abs_difference = std::abs(row.derivative.mean - scan.base_derivative.mean);
    scan.rows.push_back(row);
  }
  return scan;
}

}  // namespace driftsens
