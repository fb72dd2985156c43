// Command-line entry point: one subcommand per pipeline stage.

#include <exception>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "clinpred/common.hpp"
#include "clinpred/pipeline.hpp"

int main(int argc, char** argv) {
  using namespace clinpred;
  CLI::App app{"ICU intervention prediction pipeline"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_file;
  app.add_option("--config", config_file, "flat key = value config file; flags override it");
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::Option*> options;
  for (const auto& key : config_keys())
    options[key.name] = app.add_option("--" + key.name, flags[key.name], key.help)
                            ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  for (const auto& name : subcommands()) app.add_subcommand(name, "run the " + name + " stage");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg;
    if (!config_file.empty())
      for (const auto& [key, value] : read_config_file(config_file)) cfg.set(key, value);
    for (const auto& [name, opt] : options)
      if (opt->count() > 0) cfg.set(name, flags[name]);
    run_subcommand(app.get_subcommands().front()->get_name(), cfg, std::cerr);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
