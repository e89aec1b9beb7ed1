// mvlov: run, validate and describe experiment configs.

#include <CLI11.hpp>

#include <iostream>

#include "mvlov/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"McKean-Vlasov particle and Fokker-Planck experiment runner"};
  app.require_subcommand(1);

  std::string run_path, validate_path;
  auto* run = app.add_subcommand("run", "run an experiment config");
  run->add_option("config", run_path, "config file (JSON)")->required();
  auto* validate = app.add_subcommand("validate", "parse and validate a config without running it");
  validate->add_option("config", validate_path, "config file (JSON)")->required();
  app.add_subcommand("schema", "print the config schema");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("schema")) {
      std::cout << mvlov::config_schema().dump(2) << "\n";
      return mvlov::kExitOk;
    }
    if (app.got_subcommand("validate")) {
      const auto cfg = mvlov::load_config(validate_path);
      std::cout << "ok " << cfg.experiment << " config_hash=" << cfg.config_hash << "\n";
      return mvlov::kExitOk;
    }
    const auto cfg = mvlov::load_config(run_path);
    const auto st = mvlov::run(cfg);
    if (st.exit_code != mvlov::kExitOk) {
      std::cerr << "mvlov: " << st.message << "\n";
      return st.exit_code;
    }
    std::cout << st.summary.dump(2) << "\n";
    return mvlov::kExitOk;
  } catch (const mvlov::ValidationError& e) {
    std::cerr << "mvlov: invalid config: " << e.what() << "\n";
    return mvlov::kExitValidation;
  } catch (const mvlov::NumericalAbort& e) {
    std::cerr << "mvlov: numerical abort: " << e.what() << "\n";
    return mvlov::kExitNumerical;
  }
}
