#include "driftsens/spectral.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "driftsens/rng.hpp"

namespace driftsens {

namespace {

constexpr double kResidualFactor = 1e-8;
constexpr double kSimplicityFactor = 1e-6;
constexpr long kDenseLimit = 512;

struct RawPairs {
  Eigen::VectorXcd values;       // all computed eigenvalues (for gaps)
  Eigen::MatrixXcd right, left;  // k columns, aligned with `order`
  std::vector<long> order;       // indices into `values`, |value| descending
};

bool value_less(const std::complex<double>& a, const std::complex<double>& b) {
  if (std::abs(a) != std::abs(b)) return std::abs(a) > std::abs(b);
  if (a.real() != b.real()) return a.real() > b.real();
  return a.imag() > b.imag();
}

// Greedy matching of left eigenvectors to the selected right eigenvalues.
// The left vector of the pair (lambda, r) satisfies A^T l = conj(lambda) l,
// so the match target is the conjugate eigenvalue.
Eigen::MatrixXcd match_left(const Eigen::VectorXcd& right_vals, const std::vector<long>& order,
                            const Eigen::VectorXcd& left_vals, const Eigen::MatrixXcd& left_vecs,
                            int k) {
  Eigen::MatrixXcd matched(left_vecs.rows(), k);
  std::vector<bool> used(static_cast<std::size_t>(left_vals.size()), false);
  for (int i = 0; i < k; ++i) {
    const std::complex<double> target =
        std::conj(right_vals[order[static_cast<std::size_t>(i)]]);
    long best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (long j = 0; j < left_vals.size(); ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      const double dist = std::abs(left_vals[j] - target);
      if (dist < best_dist) {
        best_dist = dist;
        best = j;
      }
    }
    used[static_cast<std::size_t>(best)] = true;
    matched.col(i) = left_vecs.col(best);
  }
  return matched;
}

RawPairs dense_decomposition(const Eigen::MatrixXd& a, int k) {
  Eigen::EigenSolver<Eigen::MatrixXd> right_solver(a);
  if (right_solver.info() != Eigen::Success)
    throw SolverError("eigenpairs: dense decomposition of A did not converge");
  Eigen::EigenSolver<Eigen::MatrixXd> left_solver(a.transpose());
  if (left_solver.info() != Eigen::Success)
    throw SolverError("eigenpairs: dense decomposition of A^T did not converge");

  RawPairs raw;
  raw.values = right_solver.eigenvalues();
  raw.order.resize(static_cast<std::size_t>(raw.values.size()));
  std::iota(raw.order.begin(), raw.order.end(), 0L);
  std::sort(raw.order.begin(), raw.order.end(),
            [&](long l, long r) { return value_less(raw.values[l], raw.values[r]); });
  raw.order.resize(static_cast<std::size_t>(k));

  raw.right.resize(a.rows(), k);
  for (int i = 0; i < k; ++i)
    raw.right.col(i) = right_solver.eigenvectors().col(raw.order[static_cast<std::size_t>(i)]);
  raw.left =
      match_left(raw.values, raw.order, left_solver.eigenvalues(), left_solver.eigenvectors(), k);
  return raw;
}

// Orthogonal subspace iteration with Rayleigh-Ritz extraction for operators
// above the dense size limit.
RawPairs subspace_decomposition(const Eigen::MatrixXd& a, int k, bool left_side) {
  const long n = a.rows();
  const long m = std::min<long>(n, k + 8);
  const Eigen::MatrixXd mat = left_side ? a.transpose() : a;
  const double a_norm = mat.norm();

  Eigen::MatrixXd q(n, m);
  CounterRng rng(0x5137AB1E5EEDull);
  for (long j = 0; j < m; ++j)
    for (long i = 0; i < n; ++i) q(i, j) = rng.next_normal();
  q = Eigen::HouseholderQR<Eigen::MatrixXd>(q).householderQ() * Eigen::MatrixXd::Identity(n, m);

  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> small;
  for (long it = 0; it < 10000; ++it) {
    const Eigen::MatrixXd z = mat * q;
    q = Eigen::HouseholderQR<Eigen::MatrixXd>(z).householderQ() * Eigen::MatrixXd::Identity(n, m);
    if (it % 10 != 9) continue;

    const Eigen::MatrixXd h = q.transpose() * mat * q;
    small.compute(h.cast<std::complex<double>>());
    std::vector<long> idx(static_cast<std::size_t>(m));
    std::iota(idx.begin(), idx.end(), 0L);
    std::sort(idx.begin(), idx.end(), [&](long l, long r) {
      return value_less(small.eigenvalues()[l], small.eigenvalues()[r]);
    });
    bool converged = true;
    for (int i = 0; i < k && converged; ++i) {
      const Eigen::VectorXcd v = q * small.eigenvectors().col(idx[static_cast<std::size_t>(i)]);
      const Eigen::VectorXcd av = mat * v.real() +
                                  std::complex<double>(0.0, 1.0) * (mat * v.imag()).eval();
      const double res = (av - small.eigenvalues()[idx[static_cast<std::size_t>(i)]] * v).norm() / v.norm();
      if (res > kResidualFactor * a_norm) converged = false;
    }
    if (!converged) continue;

    RawPairs raw;
    raw.values = small.eigenvalues();
    raw.order.assign(idx.begin(), idx.begin() + k);
    raw.right.resize(n, k);
    for (int i = 0; i < k; ++i)
      raw.right.col(i) = q * small.eigenvectors().col(raw.order[static_cast<std::size_t>(i)]);
    return raw;
  }
  throw SolverError("eigenpairs: subspace iteration did not converge within 10000 iterations");
}

}  // namespace

std::vector<EigenPair> eigenpairs(const UlamOperator& op, int k) {
  const Eigen::MatrixXd& a = op.matrix;
  const long n = a.rows();
  if (k < 1 || k > n) throw InputError("eigenpairs: k out of range");
  const double vol = op.box_volume;
  const double a_norm = a.norm();

  RawPairs raw;
  if (n <= kDenseLimit) {
    raw = dense_decomposition(a, k);
  } else {
    raw = subspace_decomposition(a, k, false);
    const RawPairs left_raw = subspace_decomposition(a, k, true);
    raw.left = match_left(raw.values, raw.order, left_raw.values, left_raw.right, k);
  }

  std::vector<EigenPair> pairs;
  pairs.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    EigenPair pair;
    pair.value = raw.values[raw.order[static_cast<std::size_t>(i)]];
    Eigen::VectorXcd r = raw.right.col(i);
    Eigen::VectorXcd l = raw.left.col(i);

    const Eigen::VectorXcd ar =
        a * r.real() + std::complex<double>(0.0, 1.0) * (a * r.imag()).eval();
    pair.residual = (ar - pair.value * r).norm() / r.norm();
    if (pair.residual > kResidualFactor * std::max(a_norm, 1e-300))
      throw SolverError("eigenpairs: residual " + std::to_string(pair.residual) +
                        " above tolerance for pair " + std::to_string(i));

    pair.gap = std::numeric_limits<double>::infinity();
    for (long j = 0; j < raw.values.size(); ++j)
      if (j != raw.order[static_cast<std::size_t>(i)])
        pair.gap = std::min(pair.gap, std::abs(raw.values[j] - pair.value));
    pair.degenerate = pair.gap < kSimplicityFactor * a_norm;

    // Phase convention: largest-magnitude entry real positive; unit
    // volume-weighted norm; <l, r> = 1.
    Eigen::Index imax = 0;
    r.cwiseAbs().maxCoeff(&imax);
    if (std::abs(r[imax]) > 0.0) r /= r[imax] / std::abs(r[imax]);
    r /= std::sqrt(vol) * r.norm();

    const std::complex<double> inner = vol * l.dot(r);  // dot conjugates l
    if (std::abs(inner) < 1e-12 * std::sqrt(vol) * l.norm()) {
      pair.degenerate = true;  // near-defective pairing, keep l at unit norm
      l /= std::sqrt(vol) * l.norm();
    } else {
      l /= std::conj(inner);
    }
    pair.right = std::move(r);
    pair.left = std::move(l);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

SpectralResponse eigenvalue_response(const UlamOperator& p0, const Eigen::MatrixXd& dp,
                                     const EigenPair& pair) {
  const Eigen::MatrixXd& a = p0.matrix;
  if (dp.rows() != a.rows() || dp.cols() != a.cols())
    throw InputError("eigenvalue_response: dimension mismatch");
  if (pair.degenerate || pair.gap < kSimplicityFactor * a.norm())
    throw DegenerateEigenpairError(
        "eigenvalue_response: eigenvalue is not simple and isolated (gap " +
        std::to_string(pair.gap) + ")");

  const double vol = p0.box_volume;
  SpectralResponse resp;
  const Eigen::VectorXcd dp_r =
      dp * pair.right.real() + std::complex<double>(0.0, 1.0) * (dp * pair.right.imag()).eval();
  resp.dvalue = vol * pair.left.dot(dp_r);  // <l, r> = 1 by normalization
  resp.conditioning = 1.0 / pair.gap;

  // (lambda I - P0) w = (DP - dvalue) r, least-squares pseudo-inverse solve,
  // then remove the r-component so that <l, dvector> = 0.
  Eigen::MatrixXcd shifted = -a.cast<std::complex<double>>();
  shifted.diagonal().array() += pair.value;
  const Eigen::VectorXcd rhs = dp_r - resp.dvalue * pair.right;
  Eigen::VectorXcd w = shifted.completeOrthogonalDecomposition().solve(rhs);
  w -= (vol * pair.left.dot(w)) * pair.right;
  resp.dvector = std::move(w);
  return resp;
}

std::vector<SingularTriplet> singular_triplets(const UlamOperator& op, int k) {
  const Eigen::MatrixXd& a = op.matrix;
  if (k < 1 || k > a.rows()) throw InputError("singular_triplets: k out of range");
  const double vol = op.box_volume;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success)
    throw SolverError("singular_triplets: decomposition did not converge");

  std::vector<SingularTriplet> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    SingularTriplet t;
    t.value = svd.singularValues()[i];
    Eigen::VectorXd u = svd.matrixU().col(i);
    Eigen::VectorXd v = svd.matrixV().col(i);
    // Sign fixed on the right vector; the left flips with it so P v = s u holds.
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    if (v[imax] < 0.0) {
      v = -v;
      u = -u;
    }
    t.left = u / std::sqrt(vol);
    t.right = v / std::sqrt(vol);
    out.push_back(std::move(t));
  }
  return out;
}

double singular_value_response(const Eigen::MatrixXd& dp, const SingularTriplet& triplet,
                               double box_volume) {
  return box_volume * triplet.left.dot(dp * triplet.right);
}

// ---------------------------------------------------------------------------
// Periodically forced systems
// ---------------------------------------------------------------------------

PeriodicFamily periodic_stationary_family(const SdeModel& model,
                                          const PerturbationField* gamma_sim, const Grid& grid,
                                          double period, int n_phase,
                                          const KernelParams& per_step_params) {
  if (!(period > 0.0)) throw InputError("periodic_stationary_family: period must be positive");
  if (n_phase < 1) throw InputError("periodic_stationary_family: n_phase must be >= 1");
  if (period > model.horizon + 1e-12)
    throw InputError("periodic_stationary_family: period exceeds model horizon");

  const double phase_dt = period / static_cast<double>(n_phase);
  PeriodicFamily fam;
  fam.period = period;
  fam.phases.resize(static_cast<std::size_t>(n_phase));
  fam.step_operators.reserve(static_cast<std::size_t>(n_phase));

  for (int a = 0; a < n_phase; ++a) {
    fam.phases[static_cast<std::size_t>(a)] = phase_dt * static_cast<double>(a);
    KernelParams params = per_step_params;
    params.t_start = fam.phases[static_cast<std::size_t>(a)];
    params.t_end = params.t_start + phase_dt;
    params.seed = derive_stream(per_step_params.seed, static_cast<std::uint64_t>(a));
    const KernelMatrix kernel = estimate_kernel(model, gamma_sim, grid, params);
    fam.step_operators.push_back(assemble_operators(kernel, grid).first);
  }

  // f_s = unit-mass eigenvector at eigenvalue 1 of the cyclic product
  // P_{s+T-dt} ... P_s (later time on the left).
  fam.densities.resize(static_cast<std::size_t>(n_phase));
  for (int a = 0; a < n_phase; ++a) {
    Eigen::MatrixXd period_op =
        Eigen::MatrixXd::Identity(grid.n_cells, grid.n_cells);
    for (int s = 0; s < n_phase; ++s)
      period_op = fam.step_operators[static_cast<std::size_t>((a + s) % n_phase)].matrix * period_op;

    Eigen::EigenSolver<Eigen::MatrixXd> es(period_op);
    if (es.info() != Eigen::Success)
      throw SolverError("periodic_stationary_family: eigensolver did not converge");
    Eigen::Index lead = 0;
    es.eigenvalues().cwiseAbs().maxCoeff(&lead);
    const std::complex<double> lambda = es.eigenvalues()[lead];
    fam.max_unit_eigenvalue_deviation =
        std::max(fam.max_unit_eigenvalue_deviation, std::abs(lambda - 1.0));

    Eigen::VectorXd f = es.eigenvectors().col(lead).real();
    const double mass = f.sum() * grid.box_volume;
    if (std::abs(mass) < 1e-12)
      throw SolverError("periodic_stationary_family: stationary density has zero mass");
    f /= mass;
    fam.densities[static_cast<std::size_t>(a)] = std::move(f);
  }
  fam.discretization_flag = fam.max_unit_eigenvalue_deviation > 1e-3;

  for (int a = 0; a < n_phase; ++a) {
    const Eigen::VectorXd pushed =
        fam.step_operators[static_cast<std::size_t>(a)].matrix * fam.densities[static_cast<std::size_t>(a)];
    const Eigen::VectorXd& next = fam.densities[static_cast<std::size_t>((a + 1) % n_phase)];
    fam.max_consistency_l1 = std::max(
        fam.max_consistency_l1, (pushed - next).cwiseAbs().sum() * grid.box_volume);
  }
  return fam;
}

double ergodic_average(const std::function<double(double, const Eigen::VectorXd&)>& g,
                       const PeriodicFamily& family, const Grid& grid) {
  if (family.densities.empty()) throw InputError("ergodic_average: empty family");
  // Trapezoid on the periodic phase grid reduces to the phase mean.
  double total = 0.0;
  for (std::size_t a = 0; a < family.densities.size(); ++a) {
    double space = 0.0;
    for (long j = 0; j < grid.n_cells; ++j)
      space += g(family.phases[a], grid.cell_center(j)) * family.densities[a][j];
    total += space * grid.box_volume;
  }
  return total / static_cast<double>(family.densities.size());
}

double birkhoff_time_average(const SdeModel& model, const Domain& domain,
                             const Eigen::VectorXd& x0, const PerturbationField* gamma_sim,
                             double period, long n_periods, long steps_per_period,
                             const std::function<double(double, const Eigen::VectorXd&)>& g,
                             std::uint64_t seed) {
  if (!(period > 0.0) || n_periods < 1 || steps_per_period < 1)
    throw InputError("birkhoff_time_average: invalid parameters");
  if (!domain.contains(x0)) throw InputError("birkhoff_time_average: x0 outside domain");

  const int d = model.dim;
  const double dt = period / static_cast<double>(steps_per_period);
  const double sqrt_dt = std::sqrt(dt);
  const long total_steps = n_periods * steps_per_period;
  const bool boxed = domain.kind == Domain::Kind::box;

  CounterRng rng(seed);
  Eigen::VectorXd y = x0, b(d), gg(d), dw(d);
  Eigen::MatrixXd sig(d, d);
  double acc = 0.0;

  for (long k = 0; k < total_steps; ++k) {
    // Coefficients are evaluated at the phase time; the builtins are periodic
    // so this equals evaluation at absolute time.
    const double phase = dt * static_cast<double>(k % steps_per_period);
    acc += g(phase, y);
    model.drift(phase, y, b);
    if (gamma_sim) {
      gamma_sim->gamma(phase, y, gg);
      b += gg;
    }
    model.diffusion(phase, y, sig);
    for (int i = 0; i < d; ++i) dw[i] = sqrt_dt * rng.next_normal();
    y += b * dt + sig * dw;
    if (!y.allFinite() || y.cwiseAbs().maxCoeff() > kExplosionGuard)
      throw ExplosionError(k, y.allFinite() ? y.cwiseAbs().maxCoeff()
                                            : std::numeric_limits<double>::infinity());
    if (boxed)
      for (int i = 0; i < d; ++i) y[i] = fold_coordinate(y[i], domain.lower[i], domain.upper[i]);
  }
  return acc / static_cast<double>(total_steps);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

void write_eigen_report_csv(const std::string& file, const std::vector<EigenPair>& pairs) {
  std::ofstream os(file);
  if (!os) throw InputError("write_eigen_report_csv: cannot open " + file);
  os << "index,re,im,gap,residual\n";
  char buf[160];
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g\n", i, pairs[i].value.real(),
                  pairs[i].value.imag(), pairs[i].gap, pairs[i].residual);
    os << buf;
  }
}

void write_density_family_csv(const std::string& file, const PeriodicFamily& family,
                              const Grid& grid) {
  std::ofstream os(file);
  if (!os) throw InputError("write_density_family_csv: cannot open " + file);
  os << "phase,cell,center,density\n";
  char buf[160];
  for (std::size_t a = 0; a < family.densities.size(); ++a)
    for (long j = 0; j < grid.n_cells; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g,%ld,%.17g,%.17g\n", family.phases[a], j,
                    grid.cell_center(j)[0], family.densities[a][j]);
      os << buf;
    }
}

}  // namespace driftsens
