#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "varexp/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Variable-exponent estimates and p(x)-Laplacian experiments"};
  app.set_version_flag("--version", varexp::cli::kVersion);
  std::string command;
  varexp::cli::RunOptions opts;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  app.add_option("command", command, "solve | verify | gehring | goodlambda | sweep | denoise")
      ->required()
      ->check(CLI::IsMember({"solve", "verify", "gehring", "goodlambda", "sweep", "denoise"}));
  app.add_option("--config", opts.config, "key=value configuration file")->required();
  app.add_option("--out", opts.out, "output directory")->default_str(".");
  app.add_option("--seed", seed, "random seed (overrides run.seed)");
  app.add_option("--threads", threads, "worker threads (overrides run.threads)")->check(CLI::PositiveNumber);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : varexp::cli::kConfigError;
  }
  opts.seed = seed;
  opts.threads = threads;
  return varexp::cli::run(command, opts, std::cerr);
}
