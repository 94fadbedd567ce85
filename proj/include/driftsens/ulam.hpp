#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "driftsens/sde.hpp"

namespace driftsens {

/// Uniform box partition with half-open cells (the last cell along each axis
/// is closed). Cell order is lexicographic with axis 0 slowest.
struct Grid {
  Domain domain;  // box
  int boxes_per_axis = 0;
  int dim = 0;
  long n_cells = 0;
  double box_volume = 0.0;
  Eigen::VectorXd cell_width;  // per axis

  int axis_index(double coord, int axis) const;
  long cell_index(const Eigen::VectorXd& point) const;
  Eigen::VectorXd cell_center(long cell) const;
};

Grid build_grid(const Domain& domain, int boxes_per_axis);

/// Monte-Carlo transition-kernel estimate on a grid: entry (i, j) is the
/// density (1/volume units) of landing in cell j after time t when started
/// from the center of cell i. Row mass sum_j k(i,j) * box_volume is 1 by
/// construction.
struct KernelMatrix {
  Eigen::MatrixXd k;
  double t_start = 0.0;
  double t_end = 0.0;
  std::string gamma_id;
  long n_paths_per_cell = 0;

  double t() const { return t_end - t_start; }
  double max_entry() const { return k.size() ? k.maxCoeff() : 0.0; }
};

/// Girsanov-weighted directional derivative of the kernel: entry (i, j)
/// estimates E[1{X_t in cell j} M_t | X_0 = center_i] / box_volume on paths
/// of the unperturbed dynamics. Row mass is 0 in expectation.
struct DKernelMatrix {
  Eigen::MatrixXd dk;
  double t_start = 0.0;
  double t_end = 0.0;
  std::string direction_id;
  long n_paths_per_cell = 0;
};

struct KernelParams {
  double t_start = 0.0;
  double t_end = 1.0;
  long n_steps = 100;  // Euler-Maruyama steps over [t_start, t_end]
  long n_paths_per_cell = 1000;
  std::uint64_t seed = 1;
  int threads = 0;
  /// Conditional last-step histogram: each path contributes the exact cell
  /// probabilities of its final Euler-Maruyama step (a folded Gaussian)
  /// instead of a point mass. Unbiased for the same kernel with much smaller
  /// variance; requires diagonal diffusion. Falls back to endpoint binning
  /// when the model does not declare diagonal_diffusion.
  bool smoothed = true;
};

/// Launches n_paths_per_cell paths from each cell center under drift
/// b + gamma_sim (gamma_sim == nullptr for the base dynamics) and accumulates
/// the endpoint histogram. Path (cell, p) uses the stream
/// derive_stream(derive_stream(seed, cell), p), so runs with equal seeds are
/// coupled path-by-path.
KernelMatrix estimate_kernel(const SdeModel& model, const PerturbationField* gamma_sim,
                             const Grid& grid, const KernelParams& params);

/// Derivative matrix on unperturbed paths with the same seed contract, so a
/// kernel estimated with equal params shares its paths exactly.
DKernelMatrix kernel_derivative(const SdeModel& model, const PerturbationField& direction,
                                const Grid& grid, const KernelParams& params);

/// Both at once from a single set of paths.
std::pair<KernelMatrix, DKernelMatrix> kernel_with_derivative(const SdeModel& model,
                                                              const PerturbationField& direction,
                                                              const Grid& grid,
                                                              const KernelParams& params);

struct UlamOperator {
  Eigen::MatrixXd matrix;
  enum class Kind { perron_frobenius, koopman } kind = Kind::perron_frobenius;
  double t = 0.0;
  std::string gamma_id;
  double box_volume = 0.0;
  long n_cells = 0;
};

/// Midpoint-quadrature operators: P(j,i) = k(i,j) vol pushes densities
/// forward, U = P^T pulls observables back; adjoint under the volume-weighted
/// inner product by construction.
std::pair<UlamOperator, UlamOperator> assemble_operators(const KernelMatrix& kernel,
                                                         const Grid& grid);

/// Induced derivative of the Perron-Frobenius matrix: DP(j,i) = dk(i,j) vol.
Eigen::MatrixXd derivative_operator(const DKernelMatrix& dkernel, const Grid& grid);

/// Largest singular value by power iteration on R^T R.
double spectral_norm(const Eigen::MatrixXd& mat, double tol = 1e-8, long max_iter = 10000);

/// ||P(gamma) - P(0) - DP||_2 / ||gamma||_V, the first-order Taylor residual
/// of the operator family. DP must already carry the magnitude of gamma
/// (i.e. pass epsilon * DP_direction for gamma = epsilon * direction).
double operator_norm_residual(const UlamOperator& p0, const UlamOperator& p_gamma,
                              const Eigen::MatrixXd& dp, double gamma_v_norm);

/// Max row-mass deviation |sum_j k(i,j) vol - 1| over rows.
double kernel_row_mass_error(const KernelMatrix& kernel, const Grid& grid);

/// Row sums of a derivative matrix times volume (0 within MC noise).
Eigen::VectorXd dkernel_row_mass(const DKernelMatrix& dkernel, const Grid& grid);

/// Dense CSV dump (row-major), header row carries n_cells, t, gamma_id.
void write_matrix_csv(const std::string& file, const Eigen::MatrixXd& mat, long n_cells, double t,
                      const std::string& gamma_id);

}  // namespace driftsens
