#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <omp.h>

#include "mtcs/errors.hpp"
#include "mtcs/experiments.hpp"

namespace {

struct Args {
  std::string config;
  std::string out;
  long long seed = -1;
  int threads = 0;
  bool validate_only = false;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-terminal compressed sensing experiments"};
  app.require_subcommand(1);

  static const std::map<std::string, std::string> kinds = {
      {"rid", "exact information dimensions of the source"},
      {"se-sweep", "state-evolution fixed points over a rate grid"},
      {"mamp-run", "message passing on one sampled instance"},
      {"coupled-run", "coupled state evolution, optionally with message passing"},
      {"phase-boundary", "bisect the coupled recovery boundary"},
      {"fresh-se-check", "effective noise of the resampled-matrix iteration"},
  };

  std::map<std::string, Args> args;
  for (const auto& [kind, help] : kinds) {
    CLI::App* sub = app.add_subcommand(kind, help);
    Args& a = args[kind];
    sub->add_option("--config", a.config, "json config file")->required();
    sub->add_option("--out", a.out, "output csv path");
    sub->add_option("--seed", a.seed, "override the config seed");
    sub->add_option("--threads", a.threads, "openmp thread count");
    sub->add_flag("--validate-only", a.validate_only, "check the config and exit");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string kind = app.get_subcommands().front()->get_name();
  Args& a = args[kind];
  try {
    if (a.threads > 0) omp_set_num_threads(a.threads);
    mtcs::Json config = mtcs::load_config_file(a.config);
    if (!config.is_object()) throw std::invalid_argument("config: must be a json object");
    if (config.contains("kind")) {
      if (!config.at("kind").is_string() || config.at("kind").get<std::string>() != kind) {
        throw std::invalid_argument("kind: config does not match the '" + kind +
                                    "' subcommand");
      }
    } else {
      config["kind"] = kind;
    }
    if (a.seed >= 0) config["seed"] = a.seed;

    if (a.validate_only) {
      const auto diags = mtcs::validate_config(config);
      for (const auto& d : diags) std::cerr << d << "\n";
      return diags.empty() ? 0 : 2;
    }
    if (a.out.empty()) throw std::invalid_argument("--out: required to run an experiment");

    const auto outputs = mtcs::run_experiment(config, a.out);
    for (const auto& f : outputs.files) std::cout << f << "\n";
    return 0;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mtcs::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
