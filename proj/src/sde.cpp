#include "driftsens/sde.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace driftsens {

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

PerturbationField zero_field(int dim) {
  PerturbationField f;
  f.gamma = [dim](double, const Eigen::VectorXd&, Eigen::VectorXd& out) {
    out.setZero(dim);
  };
  f.v_norm_estimate = 0.0;
  f.id = "zero";
  return f;
}

PerturbationField scaled_field(const PerturbationField& field, double factor) {
  PerturbationField f;
  f.gamma = [inner = field.gamma, factor](double t, const Eigen::VectorXd& y,
                                          Eigen::VectorXd& out) {
    inner(t, y, out);
    out *= factor;
  };
  f.v_norm_estimate = std::abs(factor) * field.v_norm_estimate;
  f.id = field.id + "*" + std::to_string(factor);
  return f;
}

PerturbationField sum_field(const PerturbationField& a, const PerturbationField& b) {
  PerturbationField f;
  f.gamma = [ga = a.gamma, gb = b.gamma](double t, const Eigen::VectorXd& y,
                                         Eigen::VectorXd& out) {
    ga(t, y, out);
    Eigen::VectorXd tmp(out.size());
    gb(t, y, tmp);
    out += tmp;
  };
  f.v_norm_estimate = a.v_norm_estimate + b.v_norm_estimate;
  f.id = a.id + "+" + b.id;
  return f;
}

// ---------------------------------------------------------------------------
// Domain / grid
// ---------------------------------------------------------------------------

Domain Domain::box(Eigen::VectorXd lo, Eigen::VectorXd hi) {
  if (lo.size() != hi.size()) throw InputError("domain bounds must have equal dimension");
  for (int i = 0; i < lo.size(); ++i)
    if (!(lo[i] < hi[i])) throw InputError("domain requires lower < upper componentwise");
  Domain d;
  d.kind = Kind::box;
  d.lower = std::move(lo);
  d.upper = std::move(hi);
  return d;
}

Domain Domain::box1d(double lo, double hi) {
  Eigen::VectorXd l(1), u(1);
  l[0] = lo;
  u[0] = hi;
  return box(l, u);
}

Domain Domain::unbounded() { return Domain{}; }

bool Domain::contains(const Eigen::VectorXd& p) const {
  if (kind == Kind::unbounded) return p.allFinite();
  if (p.size() != lower.size()) return false;
  for (int i = 0; i < p.size(); ++i)
    if (!(p[i] >= lower[i] && p[i] <= upper[i])) return false;
  return true;
}

double Domain::volume() const {
  if (kind != Kind::box) throw UnsupportedDomainError("volume: box domain required");
  return (upper - lower).prod();
}

TimeGrid::TimeGrid(double t_end_, long n_steps_) : t_end(t_end_), n_steps(n_steps_) {
  if (n_steps < 0) throw InputError("TimeGrid: n_steps must be >= 0");
  if (n_steps == 0) {
    if (t_end != 0.0) throw InputError("TimeGrid: n_steps == 0 requires t_end == 0");
    dt = 0.0;
    return;
  }
  if (!(t_end > 0.0)) throw InputError("TimeGrid: t_end must be positive");
  dt = t_end / static_cast<double>(n_steps);
}

// ---------------------------------------------------------------------------
// Reflection
// ---------------------------------------------------------------------------

double fold_coordinate(double x, double lo, double hi) {
  if (x >= lo && x <= hi) return x;  // interior: exact pass-through
  const double w = hi - lo;
  double y = std::fmod(x - lo, 2.0 * w);
  if (y < 0.0) y += 2.0 * w;
  if (y > w) y = 2.0 * w - y;
  return lo + y;
}

Eigen::VectorXd reflect_into_domain(const Eigen::VectorXd& point, const Domain& domain) {
  if (!point.allFinite()) throw InputError("reflect_into_domain: point must be finite");
  if (domain.kind == Domain::Kind::unbounded) return point;
  Eigen::VectorXd out = point;
  for (int i = 0; i < out.size(); ++i)
    out[i] = fold_coordinate(out[i], domain.lower[i], domain.upper[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

namespace {

void check_simulation_inputs(const SdeModel& model, const Domain& domain,
                             const Eigen::VectorXd& x0, const TimeGrid& grid) {
  if (x0.size() != model.dim) throw InputError("simulate: x0 dimension mismatch");
  if (!domain.contains(x0)) throw InputError("simulate: x0 outside domain");
  if (grid.t_end > model.horizon + 1e-12)
    throw InputError("simulate: grid.t_end exceeds model horizon");
}

// Core stepper; assumes path.wiener has been filled with the increments.
void run_steps(SamplePath& path, const SdeModel& model, const Domain& domain,
               const Eigen::VectorXd& x0, const PerturbationField* gamma_sim,
               const TimeGrid& grid) {
  const int d = model.dim;
  const long n = grid.n_steps;
  const bool boxed = domain.kind == Domain::Kind::box;

  path.grid = grid;
  path.states.resize(n + 1, d);
  path.reflected.assign(static_cast<std::size_t>(std::max(n, 0L)), 0);
  path.states.row(0) = x0.transpose();

  Eigen::VectorXd y = x0;
  Eigen::VectorXd b(d), g(d), prop(d);
  Eigen::MatrixXd sig(d, d);

  for (long k = 0; k < n; ++k) {
    const double t = grid.time(k);
    model.drift(t, y, b);
    if (gamma_sim) {
      gamma_sim->gamma(t, y, g);
      b += g;
    }
    model.diffusion(t, y, sig);
    prop = y + b * grid.dt + sig * path.wiener.row(k).transpose();

    if (!prop.allFinite() || prop.cwiseAbs().maxCoeff() > kExplosionGuard)
      throw ExplosionError(k, prop.allFinite() ? prop.cwiseAbs().maxCoeff()
                                               : std::numeric_limits<double>::infinity());

    if (boxed) {
      bool folded = false;
      for (int i = 0; i < d; ++i) {
        const double v = fold_coordinate(prop[i], domain.lower[i], domain.upper[i]);
        if (v != prop[i]) {
          prop[i] = v;
          folded = true;
        }
      }
      path.reflected[static_cast<std::size_t>(k)] = folded ? 1 : 0;
    }
    y = prop;
    path.states.row(k + 1) = y.transpose();
  }
}

}  // namespace

void simulate_path_into(SamplePath& path, const SdeModel& model, const Domain& domain,
                        const Eigen::VectorXd& x0, const PerturbationField* gamma_sim,
                        const TimeGrid& grid, std::uint64_t path_seed) {
  check_simulation_inputs(model, domain, x0, grid);
  const int d = model.dim;
  const long n = grid.n_steps;
  path.wiener.resize(n, d);
  CounterRng rng(path_seed);
  const double sqrt_dt = std::sqrt(grid.dt);
  for (long k = 0; k < n; ++k)
    for (int i = 0; i < d; ++i) path.wiener(k, i) = sqrt_dt * rng.next_normal();
  run_steps(path, model, domain, x0, gamma_sim, grid);
}

SamplePath simulate_path(const SdeModel& model, const Domain& domain, const Eigen::VectorXd& x0,
                         const PerturbationField* gamma_sim, const TimeGrid& grid,
                         std::uint64_t path_seed) {
  SamplePath path;
  simulate_path_into(path, model, domain, x0, gamma_sim, grid, path_seed);
  return path;
}

void simulate_path_with_increments(SamplePath& path, const SdeModel& model, const Domain& domain,
                                   const Eigen::VectorXd& x0, const PerturbationField* gamma_sim,
                                   const TimeGrid& grid) {
  check_simulation_inputs(model, domain, x0, grid);
  if (path.wiener.rows() != grid.n_steps || path.wiener.cols() != model.dim)
    throw InputError("simulate_path_with_increments: wiener increments not preset");
  run_steps(path, model, domain, x0, gamma_sim, grid);
}

int resolve_threads(int threads) {
  if (threads > 0) return threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

PathEnsemble simulate_ensemble(const SdeModel& model, const Domain& domain,
                               const Eigen::VectorXd& x0, const PerturbationField* gamma_sim,
                               const TimeGrid& grid, long n_paths, std::uint64_t seed,
                               int threads) {
  if (n_paths < 1) throw InputError("simulate_ensemble: n_paths must be >= 1");
  const double doubles = static_cast<double>(n_paths) * (grid.n_steps + 1) * model.dim * 2.0;
  if (doubles > 2.5e8)
    throw InputError(
        "simulate_ensemble would materialize > 2 GB of paths; use for_each_path streaming");

  PathEnsemble ens;
  ens.paths.resize(static_cast<std::size_t>(n_paths));
  ens.grid = grid;
  ens.x0 = x0;
  ens.seed = seed;
  ens.model_id = model.id;
  ens.gamma_id = gamma_sim ? gamma_sim->id : "zero";

  for_each_path(model, domain, x0, gamma_sim, grid, n_paths, seed, threads,
                [&](long i, const SamplePath& p) { ens.paths[static_cast<std::size_t>(i)] = p; });
  return ens;
}

// ---------------------------------------------------------------------------
// Coefficient-bound sampling
// ---------------------------------------------------------------------------

namespace {

// Visits the full resolution^d lattice of a box (endpoints included).
template <class F>
void visit_lattice(const Domain& domain, int resolution, F&& fn) {
  const int d = static_cast<int>(domain.lower.size());
  std::vector<int> idx(static_cast<std::size_t>(d), 0);
  Eigen::VectorXd y(d);
  const double denom = static_cast<double>(resolution - 1);
  double total = 1;
  for (int a = 0; a < d; ++a) total *= resolution;
  if (total > 2e7) throw InputError("lattice sampling: resolution^dim too large");
  for (;;) {
    for (int a = 0; a < d; ++a)
      y[a] = domain.lower[a] +
             (domain.upper[a] - domain.lower[a]) * static_cast<double>(idx[static_cast<std::size_t>(a)]) / denom;
    fn(y, idx);
    int a = 0;
    while (a < d) {
      if (++idx[static_cast<std::size_t>(a)] < resolution) break;
      idx[static_cast<std::size_t>(a)] = 0;
      ++a;
    }
    if (a == d) return;
  }
}

}  // namespace

double estimate_v_norm(const PerturbationField& field, const Domain& domain, int resolution,
                       const std::vector<double>& time_samples) {
  if (domain.kind != Domain::Kind::box)
    throw UnsupportedDomainError("estimate_v_norm: box domain required (sup over a compact set)");
  if (resolution < 2) throw InputError("estimate_v_norm: resolution must be >= 2");
  if (time_samples.empty()) throw InputError("estimate_v_norm: at least one time sample required");

  const int d = static_cast<int>(domain.lower.size());
  Eigen::VectorXd f(d), f_nb(d), y_nb(d);
  double norm = 0.0;
  for (const double t : time_samples) {
    visit_lattice(domain, resolution, [&](const Eigen::VectorXd& y, const std::vector<int>& idx) {
      field.gamma(t, y, f);
      norm = std::max(norm, f.cwiseAbs().maxCoeff());
      // Axis-neighbor difference quotients (lower bound on the Lipschitz part).
      for (int a = 0; a < d; ++a) {
        if (idx[static_cast<std::size_t>(a)] + 1 >= resolution) continue;
        const double h = (domain.upper[a] - domain.lower[a]) / static_cast<double>(resolution - 1);
        y_nb = y;
        y_nb[a] += h;
        field.gamma(t, y_nb, f_nb);
        norm = std::max(norm, (f_nb - f).cwiseAbs().maxCoeff() / h);
      }
    });
  }
  return norm;
}

AssumptionReport validate_model(const SdeModel& model, const Domain& domain, int resolution) {
  if (domain.kind != Domain::Kind::box)
    throw UnsupportedDomainError("validate_model: box domain required for sampling");
  if (resolution < 2) throw InputError("validate_model: resolution must be >= 2");

  const int d = model.dim;
  const std::vector<double> times = {0.0, 0.5 * model.horizon, model.horizon};
  AssumptionReport rep;
  Eigen::VectorXd b(d), b_nb(d), y_nb(d);
  Eigen::MatrixXd sig(d, d), sig_nb(d, d);

  for (const double t : times) {
    visit_lattice(domain, resolution, [&](const Eigen::VectorXd& y, const std::vector<int>& idx) {
      model.drift(t, y, b);
      model.diffusion(t, y, sig);
      const double growth_denom = 1.0 + y.norm();
      rep.max_growth_ratio = std::max(rep.max_growth_ratio, b.cwiseAbs().maxCoeff() / growth_denom);
      rep.max_growth_ratio =
          std::max(rep.max_growth_ratio, sig.cwiseAbs().maxCoeff() / growth_denom);

      Eigen::JacobiSVD<Eigen::MatrixXd> svd(sig);
      rep.min_singular_value =
          std::min(rep.min_singular_value, svd.singularValues().minCoeff());

      for (int a = 0; a < d; ++a) {
        if (idx[static_cast<std::size_t>(a)] + 1 >= resolution) continue;
        const double h = (domain.upper[a] - domain.lower[a]) / static_cast<double>(resolution - 1);
        y_nb = y;
        y_nb[a] += h;
        model.drift(t, y_nb, b_nb);
        model.diffusion(t, y_nb, sig_nb);
        rep.max_drift_lipschitz =
            std::max(rep.max_drift_lipschitz, (b_nb - b).cwiseAbs().maxCoeff() / h);
        rep.max_diffusion_lipschitz =
            std::max(rep.max_diffusion_lipschitz, (sig_nb - sig).cwiseAbs().maxCoeff() / h);
      }
    });
  }

  const double tol = 1e-9;
  const double L = model.lipschitz_bound;
  rep.lipschitz_ok = rep.max_drift_lipschitz <= L * (1.0 + tol) + tol &&
                     rep.max_diffusion_lipschitz <= L * (1.0 + tol) + tol;
  rep.growth_ok = rep.max_growth_ratio <= L * (1.0 + tol) + tol;
  rep.ellipticity_ok = rep.min_singular_value >= 1.0 / model.ellipticity_bound - tol;
  return rep;
}

std::string AssumptionReport::summary() const {
  std::ostringstream os;
  os << "lipschitz(b)=" << max_drift_lipschitz << " lipschitz(sigma)=" << max_diffusion_lipschitz
     << " growth=" << max_growth_ratio << " min_sv(sigma)=" << min_singular_value
     << " flags:" << (lipschitz_ok ? "" : " LIPSCHITZ") << (growth_ok ? "" : " GROWTH")
     << (ellipticity_ok ? "" : " ELLIPTICITY") << (all_ok() ? " ok" : "");
  return os.str();
}

// ---------------------------------------------------------------------------
// Path dump
// ---------------------------------------------------------------------------

namespace {

constexpr char kDumpMagic[4] = {'D', 'S', 'P', 'D'};

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void write_path_dump(const PathEnsemble& ensemble, const std::string& file, bool binary,
                     const std::vector<Eigen::MatrixXd>* series_per_time) {
  const long N = ensemble.n_paths();
  if (N == 0) throw InputError("write_path_dump: empty ensemble");
  const long n = ensemble.grid.n_steps;
  const int d = ensemble.paths.front().dim();
  const bool has_series = series_per_time != nullptr;
  if (has_series && static_cast<long>(series_per_time->size()) != n + 1)
    throw InputError("write_path_dump: series must have n_steps+1 time blocks");

  std::ofstream os(file, binary ? std::ios::binary : std::ios::out);
  if (!os) throw InputError("write_path_dump: cannot open " + file);

  if (binary) {
    os.write(kDumpMagic, 4);
    put<std::uint32_t>(os, 1);  // version
    put<std::uint8_t>(os, has_series ? 1 : 0);
    put<std::int64_t>(os, d);
    put<std::int64_t>(os, n);
    put<double>(os, ensemble.grid.dt);
    put<std::int64_t>(os, N);
    put<std::uint64_t>(os, ensemble.seed);
    for (long k = 0; k <= n; ++k)
      for (long i = 0; i < N; ++i)
        for (int a = 0; a < d; ++a) put<double>(os, ensemble.paths[static_cast<std::size_t>(i)].states(k, a));
    if (has_series)
      for (long k = 0; k <= n; ++k)
        for (long i = 0; i < N; ++i)
          for (int c = 0; c < 3; ++c) put<double>(os, (*series_per_time)[static_cast<std::size_t>(k)](i, c));
  } else {
    char buf[32];
    os << "DSPD 1 " << (has_series ? 1 : 0) << " " << d << " " << n << " ";
    std::snprintf(buf, sizeof(buf), "%.17g", ensemble.grid.dt);
    os << buf << " " << N << " " << ensemble.seed << "\n";
    for (long k = 0; k <= n; ++k) {
      for (long i = 0; i < N; ++i)
        for (int a = 0; a < d; ++a) {
          std::snprintf(buf, sizeof(buf), "%.17g", ensemble.paths[static_cast<std::size_t>(i)].states(k, a));
          os << buf << (i == N - 1 && a == d - 1 ? "" : " ");
        }
      os << "\n";
    }
    if (has_series)
      for (long k = 0; k <= n; ++k) {
        for (long i = 0; i < N; ++i)
          for (int c = 0; c < 3; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", (*series_per_time)[static_cast<std::size_t>(k)](i, c));
            os << buf << (i == N - 1 && c == 2 ? "" : " ");
          }
        os << "\n";
      }
  }
  if (!os) throw EstimationError("write_path_dump: write failed for " + file);
}

PathDump read_path_dump(const std::string& file) {
  std::ifstream probe(file, std::ios::binary);
  if (!probe) throw InputError("read_path_dump: cannot open " + file);
  char magic[4] = {0, 0, 0, 0};
  probe.read(magic, 4);
  const bool binary = std::memcmp(magic, kDumpMagic, 4) == 0 && probe.peek() != ' ';
  probe.close();

  PathDump dump;
  if (binary) {
    std::ifstream is(file, std::ios::binary);
    is.ignore(4);
    const auto version = get<std::uint32_t>(is);
    if (version != 1) throw InputError("read_path_dump: unsupported version");
    const bool has_series = get<std::uint8_t>(is) != 0;
    dump.d = get<std::int64_t>(is);
    dump.n_steps = get<std::int64_t>(is);
    dump.dt = get<double>(is);
    dump.n_paths = get<std::int64_t>(is);
    dump.seed = get<std::uint64_t>(is);
    dump.states.resize(static_cast<std::size_t>(dump.n_steps + 1));
    for (auto& block : dump.states) {
      block.resize(dump.n_paths, dump.d);
      for (long i = 0; i < dump.n_paths; ++i)
        for (long a = 0; a < dump.d; ++a) block(i, a) = get<double>(is);
    }
    if (has_series) {
      dump.series.resize(static_cast<std::size_t>(dump.n_steps + 1));
      for (auto& block : dump.series) {
        block.resize(dump.n_paths, 3);
        for (long i = 0; i < dump.n_paths; ++i)
          for (int c = 0; c < 3; ++c) block(i, c) = get<double>(is);
      }
    }
    if (!is) throw InputError("read_path_dump: truncated file");
  } else {
    std::ifstream is(file);
    std::string tag;
    int version = 0, has_series = 0;
    is >> tag >> version >> has_series >> dump.d >> dump.n_steps >> dump.dt >> dump.n_paths >>
        dump.seed;
    if (tag != "DSPD" || version != 1) throw InputError("read_path_dump: bad header");
    dump.states.resize(static_cast<std::size_t>(dump.n_steps + 1));
    for (auto& block : dump.states) {
      block.resize(dump.n_paths, dump.d);
      for (long i = 0; i < dump.n_paths; ++i)
        for (long a = 0; a < dump.d; ++a) is >> block(i, a);
    }
    if (has_series) {
      dump.series.resize(static_cast<std::size_t>(dump.n_steps + 1));
      for (auto& block : dump.series) {
        block.resize(dump.n_paths, 3);
        for (long i = 0; i < dump.n_paths; ++i)
          for (int c = 0; c < 3; ++c) is >> block(i, c);
      }
    }
    if (!is) throw InputError("read_path_dump: truncated file");
  }
  return dump;
}

}  // namespace driftsens
