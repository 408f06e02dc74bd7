/* Copyright 2026 The ragtrap Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Command-line driver: one subcommand per pipeline stage plus `run` for the
// whole experiment.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ragtrap/harness/config.hpp"
#include "ragtrap/harness/pipeline.hpp"
#include "ragtrap/parallel.hpp"

namespace {

constexpr int kExitStageFailure = 2;
constexpr int kExitUsage = 64;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ragtrap: retrieval backdoor red-team and defense harness"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  std::string out = "out";
  bool quiet = false;
  app.add_option("--config", config_path, "experiment config (YAML)");
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--workers", workers, "upper bound on worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", out, "output directory");
  app.add_flag("-q,--quiet", quiet, "suppress stage progress on stderr");

  const char* stages[][2] = {{"gen-data", "generate the synthetic dataset"},
                             {"train-clean", "train the clean baseline retriever"},
                             {"attack-phase1", "poisoned contrastive training of the query encoder"},
                             {"craft", "beam-search crafting of poisoned documents"},
                             {"inject", "inject crafted documents into the knowledge base"},
                             {"evaluate", "attack, utility and retrieval metrics"},
                             {"defend", "apply each configured defense and re-evaluate"},
                             {"persist", "clean fine-tuning persistence protocol"},
                             {"run", "full pipeline including ablations"},
                             {"report", "assemble report.json, tables and summary from stage results"}};
  for (const auto& s : stages) app.add_subcommand(s[0], s[1]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }
  ragtrap::log_enabled() = !quiet;
  ragtrap::worker_count() = workers;

  std::string current = "config";
  try {
    ragtrap::ExperimentConfig cfg = config_path.empty() ? ragtrap::ExperimentConfig{} : ragtrap::load_config(config_path);
    if (seed) cfg.seed = *seed;
    cfg.workers = workers;
    cfg.validate();
    const std::filesystem::path dir(out);
    std::filesystem::create_directories(dir);
    const std::string cmd = app.get_subcommands().front()->get_name();
    current = cmd;

    if (cmd == "run") {
      const auto r = ragtrap::run_experiment(cfg, dir);
      ragtrap::write_report(dir, r.report);
      if (!r.ok) {
        std::cerr << "ragtrap: stage '" << r.failed_stage << "' failed: " << r.error << "\n";
        return kExitStageFailure;
      }
      std::cout << (dir / "report.json").string() << "\n";
      return 0;
    }
    ragtrap::StagedRunner runner(cfg, dir);
    if (cmd == "gen-data") runner.gen_data();
    if (cmd == "train-clean") runner.train_clean();
    if (cmd == "attack-phase1") runner.attack_phase1();
    if (cmd == "craft") runner.craft();
    if (cmd == "inject") runner.inject();
    if (cmd == "evaluate") runner.evaluate();
    if (cmd == "defend") runner.defend();
    if (cmd == "persist") runner.persist();
    if (cmd == "report") {
      runner.report();
      std::cout << (dir / "report.json").string() << "\n";
    }
    return 0;
  } catch (const ragtrap::StageError& e) {
    std::cerr << "ragtrap: stage '" << e.stage() << "' failed: " << e.what() << "\n";
    return kExitStageFailure;
  } catch (const std::exception& e) {
    std::cerr << "ragtrap: stage '" << current << "' failed: " << e.what() << "\n";
    return kExitStageFailure;
  }
}
