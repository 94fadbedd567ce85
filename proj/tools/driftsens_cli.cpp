// Command-line front end: one subcommand per experiment kind, each driven by
// a flat key=value config file. Exit code 0 means every bundled check passed.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <optional>

#include "driftsens/experiments.hpp"

int main(int argc, char** argv) {
  CLI::App app{"driftsens - drift sensitivity of SDE path functionals and transfer operators"};
  app.require_subcommand(1);

  struct Options {
    std::string config;
    std::string out = "run_output";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
  };

  std::vector<std::pair<CLI::App*, std::shared_ptr<Options>>> subs;
  for (const std::string& kind : driftsens::kExperimentKinds) {
    auto opts = std::make_shared<Options>();
    CLI::App* sub = app.add_subcommand(kind, "run a " + kind + " experiment");
    sub->add_option("--config", opts->config, "config file (key = value lines)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--out", opts->out, "output directory");
    sub->add_option("--seed", opts->seed, "override the config seed")
        ->each([opts](const std::string&) { opts->seed_set = true; });
    sub->add_option("--threads", opts->threads, "worker cap (results are thread-count invariant)");
    subs.emplace_back(sub, opts);
  }

  CLI11_PARSE(app, argc, argv);

  for (auto& [sub, opts] : subs) {
    if (!sub->parsed()) continue;
    try {
      driftsens::ExperimentConfig cfg = driftsens::parse_config_file(opts->config);
      if (cfg.kind != sub->get_name())
        throw driftsens::ConfigError("config kind '" + cfg.kind + "' does not match subcommand '" +
                                     sub->get_name() + "'");
      std::optional<std::uint64_t> seed;
      if (opts->seed_set) seed = opts->seed;
      const driftsens::ExperimentResult result =
          driftsens::run_experiment(cfg, opts->out, seed, opts->threads);
      for (const driftsens::ExperimentCheck& c : result.checks)
        std::printf("[%s] %s = %.6g (%s)\n", c.pass ? "PASS" : "FAIL", c.name.c_str(), c.value,
                    c.requirement.c_str());
      std::printf("%s -> %s\n", result.pass ? "PASS" : "FAIL", result.out_dir.string().c_str());
      return result.pass ? 0 : 1;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 2;
    }
  }
  return 2;
}
