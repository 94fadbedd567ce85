#pragma once

#include <stdexcept>
#include <string>

namespace driftsens {

/// A simulated state left the admissible region (|X| > explosion guard).
/// Usually indicates a growth-condition violation of the drift.
class ExplosionError : public std::runtime_error {
 public:
  ExplosionError(long step, double magnitude, long path_index = -1)
      : std::runtime_error("state explosion at step " + std::to_string(step) +
                           (path_index >= 0 ? " of path " + std::to_string(path_index) : "") +
                           " (|X| = " + std::to_string(magnitude) + ")"),
        step_(step),
        magnitude_(magnitude),
        path_index_(path_index) {}

  long step() const { return step_; }
  double magnitude() const { return magnitude_; }
  long path_index() const { return path_index_; }
  void set_path_index(long i) { path_index_ = i; }

 private:
  long step_;
  double magnitude_;
  long path_index_;
};

class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnsupportedDomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// sigma * sigma^T too close to singular for the change-of-measure weights.
class IllConditionedDiffusionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Too few usable points for a log-log decay fit.
class InconclusiveFitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An eigenpair failed the simplicity requirement of the response formula.
class DegenerateEigenpairError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ResolutionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line = -1, const std::string& field = "")
      : std::runtime_error(format(what, line, field)), line_(line), field_(field) {}

  int line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  static std::string format(const std::string& what, int line, const std::string& field) {
    std::string msg = "config error";
    if (line >= 0) msg += " (line " + std::to_string(line) + ")";
    if (!field.empty()) msg += " [" + field + "]";
    return msg + ": " + what;
  }
  int line_;
  std::string field_;
};

}  // namespace driftsens
