#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "driftsens/models.hpp"
#include "driftsens/sensitivity.hpp"
#include "driftsens/spectral.hpp"

namespace driftsens {

/// Flat key = value configuration (documented in the README). No embedded
/// code: models, directions and observables are named registry entries, so a
/// run is reproducible from the config file alone.
struct ExperimentConfig {
  std::string kind;
  std::map<std::string, std::string> values;
  std::map<std::string, int> lines;  // field -> config line, for error messages

  bool has(const std::string& key) const { return values.count(key) > 0; }
  int line_of(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  std::string get_string_or(const std::string& key, const std::string& def) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double def) const;
  long get_long(const std::string& key) const;
  long get_long_or(const std::string& key, long def) const;
  bool get_bool_or(const std::string& key, bool def) const;
  std::uint64_t get_seed() const;  // required field, no wall-clock default
  std::vector<double> get_list(const std::string& key) const;
  /// Positive, strictly decreasing list (epsilon sweeps, shift sweeps).
  std::vector<double> get_decreasing_list(const std::string& key) const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

extern const std::vector<std::string> kExperimentKinds;

struct ExperimentCheck {
  std::string name;
  double value = 0.0;
  std::string requirement;
  bool pass = false;
};

struct ExperimentResult {
  bool pass = false;
  std::vector<ExperimentCheck> checks;
  nlohmann::json summary;
  std::filesystem::path out_dir;
};

/// Runs one experiment, writes CSV tables plus summary.json into out_dir and
/// returns the machine-checkable result. Downstream errors are recorded in
/// the summary with the experiment marked failed rather than escaping, except
/// for configuration errors, which throw.
ExperimentResult run_experiment(const ExperimentConfig& config, const std::string& out_dir,
                                std::optional<std::uint64_t> seed_override = {},
                                int threads_override = 0);

/// Registry construction helpers shared with the CLI and tests.
SdeModel model_from_config(const ExperimentConfig& cfg);
Domain domain_from_config(const ExperimentConfig& cfg, int dim);
PerturbationField gamma_from_config(const ExperimentConfig& cfg, double horizon);
Observable observable_from_config(const ExperimentConfig& cfg, const Domain& domain,
                                  double t_default);

}  // namespace driftsens
