#include "driftsens/girsanov.hpp"

#include <Eigen/LU>
#include <cmath>

namespace driftsens {

namespace {

// Solves (sigma sigma^T) w = gamma at one sampled point, with the condition
// threshold applied. d == 1 is special-cased; SDE dimensions here are small.
void weight_vector(const Eigen::MatrixXd& sig, const Eigen::VectorXd& g, Eigen::VectorXd& w) {
  const int d = static_cast<int>(sig.rows());
  if (d == 1) {
    const double a = sig(0, 0) * sig(0, 0);
    if (!(a > 1.0 / kDiffusionConditionLimit))
      throw IllConditionedDiffusionError("sigma sigma^T not invertible within condition limit");
    w.resize(1);
    w[0] = g[0] / a;
    return;
  }
  const Eigen::MatrixXd a = sig * sig.transpose();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (!lu.isInvertible() || lu.rcond() < 1.0 / kDiffusionConditionLimit)
    throw IllConditionedDiffusionError("sigma sigma^T condition number above threshold");
  w = lu.solve(g);
}

}  // namespace

GirsanovSeries girsanov_series(const SamplePath& path, const PerturbationField& gamma,
                               const SdeModel& model) {
  const long n = path.grid.n_steps;
  const int d = path.dim();
  GirsanovSeries s;
  s.m.setZero(n + 1);
  s.qv.setZero(n + 1);
  s.z.setZero(n + 1);
  s.z[0] = 1.0;

  Eigen::VectorXd g(d), w(d), b(d), inc(d);
  Eigen::MatrixXd sig(d, d);
  double m = 0.0, qv = 0.0;

  for (long k = 0; k < n; ++k) {
    const double t = path.grid.time(k);
    const Eigen::VectorXd y = path.states.row(k).transpose();
    gamma.gamma(t, y, g);
    model.diffusion(t, y, sig);
    weight_vector(sig, g, w);

    // Martingale increment: dX - b dt off the boundary; at reflected steps
    // the pre-reflection proposal minus drift, i.e. sigma dW.
    if (path.reflected[static_cast<std::size_t>(k)]) {
      inc = sig * path.wiener.row(k).transpose();
    } else {
      model.drift(t, y, b);
      inc = (path.states.row(k + 1) - path.states.row(k)).transpose() - b * path.grid.dt;
    }

    m += w.dot(inc);
    qv += w.dot(g) * path.grid.dt;

    const double log_z = m - 0.5 * qv;
    if (log_z > 700.0)
      throw EstimationError("exponential martingale overflow: M = " + std::to_string(m) +
                            ", <M> = " + std::to_string(qv));
    s.m[k + 1] = m;
    s.qv[k + 1] = qv;
    s.z[k + 1] = std::exp(log_z);
  }
  return s;
}

Eigen::VectorXd ito_weight(const SamplePath& path, const PerturbationField& gamma,
                           const SdeModel& model) {
  return girsanov_series(path, gamma, model).m;
}

Eigen::VectorXd quadratic_variation(const SamplePath& path, const PerturbationField& gamma,
                                    const SdeModel& model) {
  return girsanov_series(path, gamma, model).qv;
}

Eigen::VectorXd exponential_martingale(const SamplePath& path, const PerturbationField& gamma,
                                       const SdeModel& model) {
  return girsanov_series(path, gamma, model).z;
}

MCEstimate reweighted_expectation(const PathEnsemble& base_ensemble,
                                  const PerturbationField& gamma, const SdeModel& model,
                                  const Observable& observable) {
  const long n_paths = base_ensemble.n_paths();
  if (n_paths == 0) throw EstimationError("reweighted_expectation: empty ensemble");

  std::vector<double> samples(static_cast<std::size_t>(n_paths));
  long failures = 0;
  for (long i = 0; i < n_paths; ++i) {
    const SamplePath& path = base_ensemble.paths[static_cast<std::size_t>(i)];
    try {
      const GirsanovSeries s = girsanov_series(path, gamma, model);
      const long k = observable.kind == Observable::Kind::time_marginal
                         ? Observable::marker_index(path.grid, observable.t_marker)
                         : path.grid.n_steps;
      samples[static_cast<std::size_t>(i)] = observable.evaluate_checked(path) * s.z[k];
    } catch (const IllConditionedDiffusionError&) {
      samples[static_cast<std::size_t>(i)] = std::numeric_limits<double>::quiet_NaN();
      ++failures;
    }
  }
  if (failures == n_paths)
    throw EstimationError("reweighted_expectation: all paths failed");
  if (failures > 0) {
    std::vector<double> kept;
    kept.reserve(static_cast<std::size_t>(n_paths - failures));
    for (const double v : samples)
      if (!std::isnan(v)) kept.push_back(v);
    return mc_estimate(kept);
  }
  return mc_estimate(samples);
}

}  // namespace driftsens
