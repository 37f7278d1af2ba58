// cvh: scenario runner. See README.md for the configuration schema.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cvh/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Two-scale viscoplasticity scenarios"};
  app.require_subcommand(1, 1);
  std::string config;
  int threads = 0;
  bool snapshots = false;
  for (const auto& name : cvh::subcommands()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config, "scenario file (INI)")->required()->check(CLI::ExistingFile);
    sub->add_option("--threads", threads, "OpenMP threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
    sub->add_flag("--emit-snapshots", snapshots, "write binary field snapshots");
  }
  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#endif

  std::ifstream f(config, std::ios::binary);
  std::stringstream text;
  text << f.rdbuf();
  if (!f) {
    std::cerr << "cannot read " << config << '\n';
    return 2;
  }

  cvh::RunRequest req;
  req.command = command;
  req.config_text = text.str();
  req.snapshots = snapshots;
  const cvh::RunOutcome out = cvh::run_scenario(req);
  if (out.exit_code >= 2) {
    std::cerr << (out.exit_code == 2 ? "configuration error: " : "error: ") << out.message << '\n';
    return out.exit_code;
  }
  for (const auto& c : out.checks)
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ' ' << cvh::format_real(c.value) << ' '
              << cvh::relation_symbol(c.relation) << ' ' << cvh::format_real(c.threshold) << '\n';
  std::cout << out.checks.size() << " checks, " << out.files.size() << " files + manifest in " << out.dir.string()
            << '\n';
  return out.exit_code;
}
