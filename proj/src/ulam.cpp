#include "driftsens/ulam.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include "driftsens/rng.hpp"

namespace driftsens {

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

Grid build_grid(const Domain& domain, int boxes_per_axis) {
  if (domain.kind != Domain::Kind::box)
    throw UnsupportedDomainError("build_grid: box domain required");
  if (boxes_per_axis < 2) throw InputError("build_grid: boxes_per_axis must be >= 2");

  Grid g;
  g.domain = domain;
  g.boxes_per_axis = boxes_per_axis;
  g.dim = static_cast<int>(domain.lower.size());
  g.n_cells = 1;
  for (int a = 0; a < g.dim; ++a) g.n_cells *= boxes_per_axis;
  g.cell_width = (domain.upper - domain.lower) / static_cast<double>(boxes_per_axis);
  g.box_volume = g.cell_width.prod();
  return g;
}

int Grid::axis_index(double coord, int axis) const {
  const double rel = (coord - domain.lower[axis]) / cell_width[axis];
  long idx = static_cast<long>(std::floor(rel));
  if (idx < 0) idx = 0;
  if (idx >= boxes_per_axis) idx = boxes_per_axis - 1;  // last cell closed
  return static_cast<int>(idx);
}

long Grid::cell_index(const Eigen::VectorXd& point) const {
  long idx = 0;
  for (int a = 0; a < dim; ++a) idx = idx * boxes_per_axis + axis_index(point[a], a);
  return idx;
}

Eigen::VectorXd Grid::cell_center(long cell) const {
  Eigen::VectorXd c(dim);
  for (int a = dim - 1; a >= 0; --a) {
    const long i = cell % boxes_per_axis;
    cell /= boxes_per_axis;
    c[a] = domain.lower[a] + (static_cast<double>(i) + 0.5) * cell_width[a];
  }
  return c;
}

// ---------------------------------------------------------------------------
// Kernel estimation
// ---------------------------------------------------------------------------

namespace {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440); }
inline double normal_pdf(double x) {
  return 0.39894228040143267794 * std::exp(-0.5 * x * x);
}

// Cell weights of one folded Gaussian along one axis:
//   I[c] = P(fold(mean + s Z) in cell c),  J[c] = E[Z 1{fold(mean + s Z) in cell c}].
// The preimage of each cell under the mirror fold is a union of intervals
// tiled with period 2w; contributions outside mean +- 8.5 s are dropped.
void folded_axis_weights(double lo, double hi, int m, double mean, double s,
                         Eigen::ArrayXd& weight, Eigen::ArrayXd& zmoment) {
  weight.setZero(m);
  zmoment.setZero(m);
  const double w = hi - lo;
  const double h = w / static_cast<double>(m);
  const double span = 8.5 * s;
  const long p_lo = static_cast<long>(std::floor((mean - span - lo) / (2.0 * w))) - 1;
  const long p_hi = static_cast<long>(std::floor((mean + span - lo) / (2.0 * w))) + 1;

  for (long p = p_lo; p <= p_hi; ++p) {
    const double shift = 2.0 * static_cast<double>(p) * w;
    const double mirror_origin = 2.0 * lo + shift + 2.0 * w;
    for (int c = 0; c < m; ++c) {
      const double e0 = lo + c * h;
      const double e1 = e0 + h;
      // identity image of the cell in period p
      {
        const double a = (e0 + shift - mean) / s;
        const double b = (e1 + shift - mean) / s;
        if (b > -8.5 && a < 8.5) {
          weight[c] += normal_cdf(b) - normal_cdf(a);
          zmoment[c] += normal_pdf(a) - normal_pdf(b);
        }
      }
      // mirrored image
      {
        const double a = (mirror_origin - e1 - mean) / s;
        const double b = (mirror_origin - e0 - mean) / s;
        if (b > -8.5 && a < 8.5) {
          weight[c] += normal_cdf(b) - normal_cdf(a);
          zmoment[c] += normal_pdf(a) - normal_pdf(b);
        }
      }
    }
  }
}

struct KernelAccumulators {
  Eigen::MatrixXd k;   // counts / weights, normalized later
  Eigen::MatrixXd dk;  // weighted by the Ito martingale
};

// Walks one kernel row (all paths launched from one cell center) and
// accumulates histogram weights; shared by the plain and smoothed estimators.
void accumulate_row(const SdeModel& model, const PerturbationField* gamma_sim,
                    const PerturbationField* direction, const Grid& grid,
                    const KernelParams& params, long cell, bool smoothed,
                    KernelAccumulators& acc) {
  const int d = model.dim;
  const long n = params.n_steps;
  const double dt = (params.t_end - params.t_start) / static_cast<double>(n);
  const double sqrt_dt = std::sqrt(dt);
  const Eigen::VectorXd x0 = grid.cell_center(cell);
  const std::uint64_t row_seed = derive_stream(params.seed, static_cast<std::uint64_t>(cell));

  Eigen::VectorXd y(d), b(d), g(d), dw(d), prop(d), gdir(d), wdir(d);
  Eigen::MatrixXd sig(d, d);
  std::vector<Eigen::ArrayXd> axis_w(static_cast<std::size_t>(d)),
      axis_j(static_cast<std::size_t>(d));
  for (auto& a : axis_w) a.resize(grid.boxes_per_axis);
  for (auto& a : axis_j) a.resize(grid.boxes_per_axis);
  Eigen::ArrayXd q(grid.n_cells), dq(grid.n_cells);
  std::vector<int> cidx(static_cast<std::size_t>(d));

  for (long p = 0; p < params.n_paths_per_cell; ++p) {
    CounterRng rng(derive_stream(row_seed, static_cast<std::uint64_t>(p)));
    y = x0;
    double m_run = 0.0;  // Ito weight of `direction` along the path

    const long inner_steps = smoothed ? n - 1 : n;
    for (long k = 0; k < inner_steps; ++k) {
      const double t = params.t_start + dt * static_cast<double>(k);
      model.drift(t, y, b);
      if (gamma_sim) {
        gamma_sim->gamma(t, y, g);
        b += g;
      }
      model.diffusion(t, y, sig);
      for (int a = 0; a < d; ++a) dw[a] = sqrt_dt * rng.next_normal();
      if (direction) {
        // Martingale increment gamma^T (sigma sigma^T)^{-1} sigma dW; equals
        // the compensated state increment exactly for an EM step.
        direction->gamma(t, y, gdir);
        if (d == 1) {
          m_run += gdir[0] / sig(0, 0) * dw[0];
        } else {
          wdir = (sig * sig.transpose()).ldlt().solve(gdir);
          m_run += wdir.dot(sig * dw);
        }
      }
      prop = y + b * dt + sig * dw;
      if (!prop.allFinite() || prop.cwiseAbs().maxCoeff() > kExplosionGuard)
        throw ExplosionError(k, prop.allFinite() ? prop.cwiseAbs().maxCoeff()
                                                 : std::numeric_limits<double>::infinity(),
                             cell);
      for (int a = 0; a < d; ++a)
        prop[a] = fold_coordinate(prop[a], grid.domain.lower[a], grid.domain.upper[a]);
      y = prop;
    }

    if (!smoothed) {
      const long target = grid.cell_index(y);
      acc.k(cell, target) += 1.0;
      if (direction) acc.dk(cell, target) += m_run;
      continue;
    }

    // Final step: integrate the folded Gaussian of the last EM increment
    // exactly instead of binning a sampled endpoint.
    const double t_pre = params.t_start + dt * static_cast<double>(n - 1);
    model.drift(t_pre, y, b);
    if (gamma_sim) {
      gamma_sim->gamma(t_pre, y, g);
      b += g;
    }
    model.diffusion(t_pre, y, sig);
    if (direction) {
      direction->gamma(t_pre, y, gdir);
      for (int a = 0; a < d; ++a) wdir[a] = gdir[a] / (sig(a, a) * sig(a, a));
    }
    for (int a = 0; a < d; ++a) {
      const double mean = y[a] + b[a] * dt;
      const double s = std::abs(sig(a, a)) * sqrt_dt;
      folded_axis_weights(grid.domain.lower[a], grid.domain.upper[a], grid.boxes_per_axis, mean,
                          s, axis_w[static_cast<std::size_t>(a)],
                          axis_j[static_cast<std::size_t>(a)]);
    }

    // Combine axes: q = prod_a I_a, dq = q * m_run + sum_a (w_a sigma_a sqrt_dt) J_a prod_{a' != a} I_a'.
    std::fill(cidx.begin(), cidx.end(), 0);
    for (long cell_j = 0; cell_j < grid.n_cells; ++cell_j) {
      double prod = 1.0;
      for (int a = 0; a < d; ++a) prod *= axis_w[static_cast<std::size_t>(a)][cidx[static_cast<std::size_t>(a)]];
      q[cell_j] = prod;
      if (direction) {
        double cross = 0.0;
        for (int a = 0; a < d; ++a) {
          double pj = wdir[a] * sig(a, a) * sqrt_dt *
                      axis_j[static_cast<std::size_t>(a)][cidx[static_cast<std::size_t>(a)]];
          for (int a2 = 0; a2 < d; ++a2)
            if (a2 != a)
              pj *= axis_w[static_cast<std::size_t>(a2)][cidx[static_cast<std::size_t>(a2)]];
          cross += pj;
        }
        dq[cell_j] = q[cell_j] * m_run + cross;
      }
      for (int a = d - 1; a >= 0; --a) {
        if (++cidx[static_cast<std::size_t>(a)] < grid.boxes_per_axis) break;
        cidx[static_cast<std::size_t>(a)] = 0;
      }
    }

    const double mass = q.sum();  // 1 up to Gaussian tail truncation
    acc.k.row(cell) += (q / mass).matrix().transpose();
    if (direction) acc.dk.row(cell) += (dq / mass).matrix().transpose();
  }
}

KernelAccumulators run_kernel_job(const SdeModel& model, const PerturbationField* gamma_sim,
                                  const PerturbationField* direction, const Grid& grid,
                                  const KernelParams& params) {
  if (params.n_steps < 1) throw InputError("kernel estimation: n_steps must be >= 1");
  if (params.n_paths_per_cell < 1)
    throw InputError("kernel estimation: n_paths_per_cell must be >= 1");
  if (!(params.t_end > params.t_start)) throw InputError("kernel estimation: t_end <= t_start");
  if (params.t_end > model.horizon + 1e-12)
    throw InputError("kernel estimation: t_end exceeds model horizon");
  if (gamma_sim && direction)
    throw InputError("kernel derivative requires unperturbed paths (gamma_sim must be null)");
  if (model.dim != grid.dim) throw InputError("kernel estimation: model/grid dimension mismatch");

  const bool smoothed = params.smoothed && model.diagonal_diffusion;
  KernelAccumulators acc;
  acc.k.setZero(grid.n_cells, grid.n_cells);
  if (direction) acc.dk.setZero(grid.n_cells, grid.n_cells);

  const int nthreads = resolve_threads(params.threads);
  std::atomic<long> next{0};
  std::mutex err_mutex;
  std::exception_ptr err;
  long err_cell = std::numeric_limits<long>::max();

  auto worker = [&]() {
    for (;;) {
      const long cell = next.fetch_add(1, std::memory_order_relaxed);
      if (cell >= grid.n_cells) return;
      try {
        accumulate_row(model, gamma_sim, direction, grid, params, cell, smoothed, acc);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (cell < err_cell) {
          err_cell = cell;
          err = std::current_exception();
        }
      }
    }
  };
  if (nthreads <= 1 || grid.n_cells == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (err) {
    try {
      std::rethrow_exception(err);
    } catch (const ExplosionError& e) {
      throw EstimationError("kernel estimation failed for launch cell " +
                            std::to_string(err_cell) + ": " + e.what());
    }
  }

  const double scale =
      1.0 / (static_cast<double>(params.n_paths_per_cell) * grid.box_volume);
  acc.k *= scale;
  if (direction) acc.dk *= scale;
  return acc;
}

}  // namespace

KernelMatrix estimate_kernel(const SdeModel& model, const PerturbationField* gamma_sim,
                             const Grid& grid, const KernelParams& params) {
  KernelAccumulators acc = run_kernel_job(model, gamma_sim, nullptr, grid, params);
  KernelMatrix out;
  out.k = std::move(acc.k);
  out.t_start = params.t_start;
  out.t_end = params.t_end;
  out.gamma_id = gamma_sim ? gamma_sim->id : "zero";
  out.n_paths_per_cell = params.n_paths_per_cell;
  return out;
}

DKernelMatrix kernel_derivative(const SdeModel& model, const PerturbationField& direction,
                                const Grid& grid, const KernelParams& params) {
  KernelAccumulators acc = run_kernel_job(model, nullptr, &direction, grid, params);
  DKernelMatrix out;
  out.dk = std::move(acc.dk);
  out.t_start = params.t_start;
  out.t_end = params.t_end;
  out.direction_id = direction.id;
  out.n_paths_per_cell = params.n_paths_per_cell;
  return out;
}

std::pair<KernelMatrix, DKernelMatrix> kernel_with_derivative(const SdeModel& model,
                                                              const PerturbationField& direction,
                                                              const Grid& grid,
                                                              const KernelParams& params) {
  KernelAccumulators acc = run_kernel_job(model, nullptr, &direction, grid, params);
  KernelMatrix k;
  k.k = std::move(acc.k);
  k.t_start = params.t_start;
  k.t_end = params.t_end;
  k.gamma_id = "zero";
  k.n_paths_per_cell = params.n_paths_per_cell;
  DKernelMatrix dk;
  dk.dk = std::move(acc.dk);
  dk.t_start = params.t_start;
  dk.t_end = params.t_end;
  dk.direction_id = direction.id;
  dk.n_paths_per_cell = params.n_paths_per_cell;
  return {std::move(k), std::move(dk)};
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

std::pair<UlamOperator, UlamOperator> assemble_operators(const KernelMatrix& kernel,
                                                         const Grid& grid) {
  if (kernel.k.rows() != grid.n_cells || kernel.k.cols() != grid.n_cells)
    throw InputError("assemble_operators: kernel/grid size mismatch");
  UlamOperator p, u;
  p.matrix = kernel.k.transpose() * grid.box_volume;
  p.kind = UlamOperator::Kind::perron_frobenius;
  u.matrix = kernel.k * grid.box_volume;
  u.kind = UlamOperator::Kind::koopman;
  for (UlamOperator* op : {&p, &u}) {
    op->t = kernel.t();
    op->gamma_id = kernel.gamma_id;
    op->box_volume = grid.box_volume;
    op->n_cells = grid.n_cells;
  }
  return {std::move(p), std::move(u)};
}

Eigen::MatrixXd derivative_operator(const DKernelMatrix& dkernel, const Grid& grid) {
  if (dkernel.dk.rows() != grid.n_cells)
    throw InputError("derivative_operator: dkernel/grid size mismatch");
  return dkernel.dk.transpose() * grid.box_volume;
}

double spectral_norm(const Eigen::MatrixXd& mat, double tol, long max_iter) {
  if (mat.rows() == 0 || mat.cols() == 0) return 0.0;
  Eigen::VectorXd v(mat.cols());
  for (long i = 0; i < v.size(); ++i)
    v[i] = 1.0 + 1e-3 * std::sin(static_cast<double>(i + 1));
  v.normalize();
  Eigen::VectorXd w, u;
  double sigma = 0.0;
  for (long it = 0; it < max_iter; ++it) {
    w.noalias() = mat * v;
    u.noalias() = mat.transpose() * w;
    const double nu = u.norm();
    if (nu == 0.0) return 0.0;
    v = u / nu;
    const double next = std::sqrt(nu);
    if (it > 0 && std::abs(next - sigma) <= tol * std::max(1.0, next)) return next;
    sigma = next;
  }
  throw SolverError("spectral_norm: power iteration did not converge");
}

double operator_norm_residual(const UlamOperator& p0, const UlamOperator& p_gamma,
                              const Eigen::MatrixXd& dp, double gamma_v_norm) {
  if (p0.matrix.rows() != p_gamma.matrix.rows() || p0.matrix.rows() != dp.rows() ||
      p0.matrix.cols() != dp.cols())
    throw InputError("operator_norm_residual: dimension mismatch");
  const Eigen::MatrixXd residual = p_gamma.matrix - p0.matrix - dp;
  const double norm = spectral_norm(residual);
  if (gamma_v_norm <= 0.0) return norm;  // degenerate direction: report the raw norm (0 for gamma = 0)
  return norm / gamma_v_norm;
}

double kernel_row_mass_error(const KernelMatrix& kernel, const Grid& grid) {
  double worst = 0.0;
  for (long i = 0; i < kernel.k.rows(); ++i)
    worst = std::max(worst, std::abs(kernel.k.row(i).sum() * grid.box_volume - 1.0));
  return worst;
}

Eigen::VectorXd dkernel_row_mass(const DKernelMatrix& dkernel, const Grid& grid) {
  return dkernel.dk.rowwise().sum() * grid.box_volume;
}

void write_matrix_csv(const std::string& file, const Eigen::MatrixXd& mat, long n_cells, double t,
                      const std::string& gamma_id) {
  std::ofstream os(file);
  if (!os) throw InputError("write_matrix_csv: cannot open " + file);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", t);
  os << "n_cells,t,gamma_id\n" << n_cells << "," << buf << "," << gamma_id << "\n";
  for (long i = 0; i < mat.rows(); ++i) {
    for (long j = 0; j < mat.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", mat(i, j));
      os << buf << (j + 1 == mat.cols() ? "" : ",");
    }
    os << "\n";
  }
}

}  // namespace driftsens
