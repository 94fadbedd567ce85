#pragma once

#include <Eigen/Dense>

#include "driftsens/estimate.hpp"
#include "driftsens/observable.hpp"
#include "driftsens/sde.hpp"

namespace driftsens {

/// Per-step change-of-measure series along one base-drift path:
///   m[k]  = M_{t_k}   Ito weight of the direction gamma,
///   qv[k] = <M>_{t_k} its quadratic variation (nondecreasing),
///   z[k]  = exp(m[k] - qv[k]/2) the exponential martingale (> 0).
struct GirsanovSeries {
  Eigen::VectorXd m, qv, z;
};

/// Left-point discretization of the martingale weight
///   M_t = int_0^t gamma^T (sigma sigma^T)^{-1} (dX - b ds)
/// and its quadratic variation int_0^t |sigma^{-1} gamma|^2 ds along a path
/// simulated under the base drift. At reflection steps the increment
/// (dX - b ds) is replaced by sigma dW from the stored Wiener increment: the
/// pre-reflection proposal increment minus the drift part, so the local-time
/// jump never enters the weight.
///
/// Note the (dX - b ds) compensation: the raw state integral of the paper's
/// display would add int gamma^T (sigma sigma^T)^{-1} b ds to M, which breaks
/// E[Z] = 1 whenever b != 0; the compensated form is the classical Girsanov
/// exponent and keeps M a mean-zero martingale under the base measure.
GirsanovSeries girsanov_series(const SamplePath& path, const PerturbationField& gamma,
                               const SdeModel& model);

Eigen::VectorXd ito_weight(const SamplePath& path, const PerturbationField& gamma,
                           const SdeModel& model);
Eigen::VectorXd quadratic_variation(const SamplePath& path, const PerturbationField& gamma,
                                    const SdeModel& model);
Eigen::VectorXd exponential_martingale(const SamplePath& path, const PerturbationField& gamma,
                                       const SdeModel& model);

/// Condition-number threshold for inverting sigma sigma^T along paths.
inline constexpr double kDiffusionConditionLimit = 1e8;

/// u_g(gamma) = E^0[g Z_t]: expectation of g under the gamma-perturbed law,
/// estimated by reweighting the unperturbed ensemble. Marginal observables
/// use Z at their marker time, path functionals Z at t_end.
MCEstimate reweighted_expectation(const PathEnsemble& base_ensemble,
                                  const PerturbationField& gamma, const SdeModel& model,
                                  const Observable& observable);

}  // namespace driftsens
