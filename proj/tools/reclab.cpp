#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "reclab/config.hpp"
#include "reclab/error.hpp"
#include "reclab/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kIo = 1, kConfig = 2, kProvenance = 3, kDivergence = 4 };

reclab::RunConfig resolve(const std::string& path, const std::string& output_dir) {
  reclab::RunConfig c = path.empty() ? reclab::RunConfig{} : reclab::load_run_config(path);
  if (!output_dir.empty()) c.output_dir = output_dir;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reclab: synthetic reciprocal recommendation pipeline"};
  app.require_subcommand(0, 1);
  std::string config_path, output_dir, stage;
  bool dump_config = false;
  app.add_option("-c,--config", config_path, "run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("-o,--output-dir", output_dir, "override output_dir from the config");
  app.add_flag("--dump-config", dump_config, "print the effective configuration and exit");

  auto* gen = app.add_subcommand("generate", "write world manifest, event log, splits and photos");
  auto* train = app.add_subcommand("train", "train one stage");
  train->add_option("--stage", stage, "siamese | tirr | baselines")
      ->required()
      ->check(CLI::IsMember({"siamese", "tirr", "baselines"}));
  auto* eval = app.add_subcommand("evaluate", "score every configured model on the eval split");
  auto* project = app.add_subcommand("project", "export 2-d projection of Siamese difference vectors");
  auto* report = app.add_subcommand("report", "collect reports and print the comparison table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    const auto config = resolve(config_path, output_dir);
    if (dump_config) {
      std::cout << reclab::to_json(config).dump(2) << "\n";
      return kOk;
    }
    if (gen->parsed()) {
      reclab::cmd_generate(config);
    } else if (train->parsed()) {
      reclab::cmd_train(config, stage);
    } else if (eval->parsed()) {
      reclab::cmd_evaluate(config);
      std::cout << reclab::cmd_report(config);
    } else if (project->parsed()) {
      reclab::cmd_project(config);
    } else if (report->parsed()) {
      std::cout << reclab::cmd_report(config);
    } else {
      std::cout << app.help();
    }
    return kOk;
  } catch (const reclab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const reclab::ProvenanceError& e) {
    std::cerr << "provenance error: " << e.what() << "\n";
    return kProvenance;
  } catch (const reclab::MissingUpstream& e) {
    std::cerr << "missing upstream artifact: " << e.what() << "\n";
    return kProvenance;
  } catch (const reclab::Divergence& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }
}
