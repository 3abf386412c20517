#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gvn/experiments.hpp"

int main(int argc, char** argv) {
  CLI::App app{"gvn: anchor-based layer constructions and sufficiency diagnostics"};
  app.require_subcommand(1);

  struct Args {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
  };
  Args args;

  // One config-driven runner behind each pipeline kind; the subcommand must
  // match the config's "kind" field.
  for (const std::string name : {"generate", "construct", "train", "evaluate", "sweep", "conv"}) {
    CLI::App* sub = app.add_subcommand(name, "run a '" + name + "' config");
    sub->add_option("--config", args.config, "path to a JSON experiment config")->required();
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { args.seed = s; }, "override the config seed");
    sub->add_option_function<std::string>(
        "--out", [&](const std::string& dir) { args.out = dir; }, "output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string kind = app.get_subcommands().front()->get_name();
  return gvn::run_config_file(args.config, args.out, args.seed, std::cout, kind);
}
