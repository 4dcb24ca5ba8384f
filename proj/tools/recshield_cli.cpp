// Copyright 2026 The recshield Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "recshield/recshield.hpp"

namespace {

int cmd_run(const std::string& config_path,
            const std::vector<std::pair<std::string, std::string>>& overrides) {
  recshield::ExperimentConfig config;
  try {
    config = recshield::parse_config_file(config_path);
    for (const auto& [key, value] : overrides) {
      recshield::apply_config_key(config, key, value);
    }
    config.validate();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }

  try {
    recshield::ExperimentResult result = recshield::run_experiment(config);
    int failed = result.aggregate.failed_cells;
    std::printf("wrote %s/{results.csv,results.json,rank_shift.csv} (%zu cells",
                config.out_dir.c_str(), result.cells.size());
    if (failed > 0) std::printf(", %d failed", failed);
    std::printf(")\n");
    auto show = [](const char* name, const recshield::MeanStd& m) {
      if (m.n > 0) std::printf("  %-18s %.4f +- %.4f (n=%d)\n", name, m.mean, m.std, m.n);
    };
    show("hr_origin_test", result.aggregate.hr_origin_test);
    show("hr_origin_target", result.aggregate.hr_origin_target);
    show("hr_attack_target", result.aggregate.hr_attack_target);
    show("hr_defense_target", result.aggregate.hr_defense_target);
    show("hr_defense_test", result.aggregate.hr_defense_test);
    show("ri", result.aggregate.ri);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}

int cmd_list() {
  auto print_names = [](const char* what, const std::vector<std::string>& v) {
    std::printf("%s:", what);
    for (const auto& n : v) std::printf(" %s", n.c_str());
    std::printf("\n");
  };
  print_names("attacks", recshield::attack_registry());
  print_names("defenses", recshield::defense_registry());
  print_names("datasets", recshield::dataset_registry());
  return 0;
}

int cmd_inspect(const std::string& path) {
  try {
    if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
      recshield::TcdEnsemble ensemble = recshield::load_ensemble(path);
      std::printf("tcd ensemble: designated member %d\n", ensemble.designated);
      for (int j = 0; j < 3; ++j) {
        const auto& m = ensemble.models[j];
        std::printf("  member %d: %d user rows x %d items, d=%d\n", j,
                    m.user_rows(), m.n_items(), m.dim());
      }
      return 0;
    }
    recshield::Checkpoint ckpt = recshield::load_checkpoint(path);
    const auto& m = ckpt.model;
    std::printf("checkpoint: %d user rows x %d items, d=%d, clamp_floor=%g\n",
                m.user_rows(), m.n_items(), m.dim(), m.clamp_floor);
    std::printf("user factor fro-norm %.6f, item factor fro-norm %.6f\n",
                m.user_factors.norm(), m.item_factors.norm());
    std::printf("metadata: %s\n", ckpt.meta.dump(2).c_str());
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "inspect error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"recommender poisoning attack/defense workbench"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run a configured experiment sweep");
  std::string config_path;
  run->add_option("--config", config_path, "experiment config file")
      ->required();
  std::string seed_opt, attack_opt, defense_opt, dataset_opt, format_opt,
      out_opt;
  run->add_option("--seed", seed_opt, "override: single training seed");
  run->add_option("--attack", attack_opt, "override: attack name");
  run->add_option("--defense", defense_opt, "override: defense name");
  run->add_option("--dataset", dataset_opt, "override: dataset path");
  run->add_option("--format", format_opt, "override: dataset format");
  run->add_option("--out", out_opt, "override: output directory");
  std::vector<std::string> sets;
  run->add_option("--set", sets, "override: any config key as key=value");

  auto* list = app.add_subcommand("list", "list attack/defense/dataset names");

  auto* inspect = app.add_subcommand("inspect", "describe a checkpoint file");
  std::string ckpt_path;
  inspect->add_option("--checkpoint", ckpt_path, "checkpoint or ensemble manifest")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (list->parsed()) return cmd_list();
  if (inspect->parsed()) return cmd_inspect(ckpt_path);

  std::vector<std::pair<std::string, std::string>> overrides;
  if (!seed_opt.empty()) overrides.emplace_back("seeds", seed_opt);
  if (!attack_opt.empty()) overrides.emplace_back("attack", attack_opt);
  if (!defense_opt.empty()) overrides.emplace_back("defense", defense_opt);
  if (!dataset_opt.empty()) overrides.emplace_back("dataset", dataset_opt);
  if (!format_opt.empty()) overrides.emplace_back("format", format_opt);
  if (!out_opt.empty()) overrides.emplace_back("out", out_opt);
  for (const auto& kv : sets) {
    std::size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "config error: --set expects key=value, got '" << kv
                << "'\n";
      return 1;
    }
    overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cmd_run(config_path, overrides);
}
