#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>

#include "driftsens/sde.hpp"

namespace driftsens {

/// Observable of a path with a declared sup bound. The bound is checked on
/// every evaluated path; estimators reject evaluations that exceed it, so an
/// estimate never silently uses an inadmissible observable. Marginal
/// observables read the state at t_marker and their sensitivity estimators
/// truncate the Ito weight at that time.
struct Observable {
  enum class Kind { path_functional, time_marginal };

  Kind kind = Kind::path_functional;
  std::function<double(const SamplePath&)> eval;
  double bound = 0.0;
  double t_marker = std::numeric_limits<double>::quiet_NaN();
  std::string id;

  static Observable marginal(std::function<double(const Eigen::VectorXd&)> g, double t,
                             double bound, std::string id) {
    Observable o;
    o.kind = Kind::time_marginal;
    o.t_marker = t;
    o.bound = bound;
    o.id = std::move(id);
    o.eval = [g = std::move(g), t](const SamplePath& path) {
      const long k = marker_index(path.grid, t);
      return g(path.states.row(k).transpose());
    };
    return o;
  }

  static Observable path_functional(std::function<double(const SamplePath&)> f, double bound,
                                    std::string id) {
    Observable o;
    o.kind = Kind::path_functional;
    o.eval = std::move(f);
    o.bound = bound;
    o.id = std::move(id);
    return o;
  }

  /// Nearest grid index of a marker time; the marker must lie on the grid.
  static long marker_index(const TimeGrid& grid, double t) {
    if (grid.n_steps == 0) return 0;
    const long k = std::lround(t / grid.dt);
    if (k < 0 || k > grid.n_steps || std::abs(grid.time(k) - t) > 0.5 * grid.dt)
      throw InputError("observable marker time not on the time grid");
    return k;
  }

  double evaluate_checked(const SamplePath& path) const {
    const double v = eval(path);
    if (!(std::abs(v) <= bound))
      throw InputError("observable '" + id + "' exceeded its declared bound");
    return v;
  }
};

}  // namespace driftsens
