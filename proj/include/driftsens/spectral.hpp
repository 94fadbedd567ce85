#pragma once

#include <Eigen/Dense>
#include <complex>
#include <functional>
#include <string>
#include <vector>

#include "driftsens/ulam.hpp"

namespace driftsens {

/// Eigenpair of an Ulam operator under the volume-weighted L2 inner product
/// <a, b> = vol * sum_i conj(a_i) b_i. The right vector has unit norm with
/// its largest-magnitude entry rotated real positive; the left vector is
/// scaled so that <left, right> = 1.
struct EigenPair {
  std::complex<double> value;
  Eigen::VectorXcd right, left;
  double gap = 0.0;       // distance to the nearest other computed eigenvalue
  double residual = 0.0;  // ||A r - lambda r|| / ||r||
  bool degenerate = false;
};

/// Top-k eigenpairs by |value|, dense QR-type decomposition up to 512 cells,
/// subspace iteration above. Residuals are checked against 1e-8 ||A||_F.
std::vector<EigenPair> eigenpairs(const UlamOperator& op, int k);

struct SpectralResponse {
  std::complex<double> dvalue;
  Eigen::VectorXcd dvector;  // <left, dvector> = 0 normalization
  double conditioning = 0.0; // 1 / gap
};

/// First-order response of a simple eigenpair to the operator perturbation
/// DP: dvalue = <l, DP r> and dvector = (lambda I - P0)^+ (DP - dvalue) r
/// projected onto the complement of r. Refuses pairs whose gap is below
/// 1e-6 ||P0||_F, the simplicity threshold.
SpectralResponse eigenvalue_response(const UlamOperator& p0, const Eigen::MatrixXd& dp,
                                     const EigenPair& pair);

struct SingularTriplet {
  double value = 0.0;
  Eigen::VectorXd left, right;  // vol-normalized, sign fixed via right vector
};

/// Top-k singular triplets under the volume-weighted inner product.
std::vector<SingularTriplet> singular_triplets(const UlamOperator& op, int k);

/// First-order singular value response <u, DP v>.
double singular_value_response(const Eigen::MatrixXd& dp, const SingularTriplet& triplet,
                               double box_volume);

/// Stationary family of densities of a period-tau forced system: f_s is the
/// unit-mass eigenvector at eigenvalue 1 of the one-period operator started
/// at phase s, assembled from per-phase-step Ulam operators (left factor =
/// later time).
struct PeriodicFamily {
  double period = 0.0;
  std::vector<double> phases;
  std::vector<Eigen::VectorXd> densities;       // unit total mass each
  std::vector<UlamOperator> step_operators;     // P_{s_a -> s_{a+1}}
  double max_unit_eigenvalue_deviation = 0.0;   // max_a |lambda_1 - 1|
  double max_consistency_l1 = 0.0;              // max_a ||P_a f_a - f_{a+1}||_L1
  bool discretization_flag = false;             // deviation > 1e-3
};

PeriodicFamily periodic_stationary_family(const SdeModel& model,
                                          const PerturbationField* gamma_sim, const Grid& grid,
                                          double period, int n_phase,
                                          const KernelParams& per_step_params);

/// Phase-trapezoid (periodic, hence phase mean) x space-midpoint quadrature of
/// (1/T) int int g(s, y) f_s(y) dy ds.
double ergodic_average(const std::function<double(double, const Eigen::VectorXd&)>& g,
                       const PeriodicFamily& family, const Grid& grid);

/// Long-trajectory time average (1/t) int g(tau mod T, X_tau) dtau over
/// n_periods periods; the Birkhoff oracle for ergodic_average.
double birkhoff_time_average(const SdeModel& model, const Domain& domain,
                             const Eigen::VectorXd& x0, const PerturbationField* gamma_sim,
                             double period, long n_periods, long steps_per_period,
                             const std::function<double(double, const Eigen::VectorXd&)>& g,
                             std::uint64_t seed);

/// Eigen/singular reports as CSV (index, re, im, gap, residual).
void write_eigen_report_csv(const std::string& file, const std::vector<EigenPair>& pairs);
void write_density_family_csv(const std::string& file, const PeriodicFamily& family,
                              const Grid& grid);

}  // namespace driftsens
