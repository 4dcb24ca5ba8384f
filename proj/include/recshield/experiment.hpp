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
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "recshield/attack.hpp"
#include "recshield/checkpoint.hpp"
#include "recshield/common.hpp"
#include "recshield/dataset.hpp"
#include "recshield/defense.hpp"
#include "recshield/metrics.hpp"
#include "recshield/model.hpp"

namespace recshield {

namespace seed_tag {
inline constexpr std::uint64_t kAttackRun = 0x20;
inline constexpr std::uint64_t kTcdBase = 0x21;
}  // namespace seed_tag

// ---------------------------------------------------------------------------
// Registries
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& attack_registry() {
  static const std::vector<std::string> names = {
      "average", "co_attack", "gco_attack", "none", "pga", "random"};
  return names;
}

inline const std::vector<std::string>& defense_registry() {
  static const std::vector<std::string> names = {"at", "none", "rat", "tcd"};
  return names;
}

inline const std::vector<std::string>& dataset_registry() {
  static const std::vector<std::string> names = {"filmtrust", "ml100k",
                                                 "ml1m"};
  return names;
}

namespace detail {

inline int edit_distance(const std::string& a, const std::string& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      int sub = prev[j - 1] + (a[i - 1] != b[j - 1]);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::string nearest_name(const std::string& name,
                                const std::vector<std::string>& candidates) {
  int best = std::numeric_limits<int>::max();
  std::string who;
  for (const auto& c : candidates) {
    int d = edit_distance(name, c);
    if (d < best) {
      best = d;
      who = c;
    }
  }
  return who;
}

inline void validate_name(const std::string& name,
                          const std::vector<std::string>& registry,
                          const std::string& what) {
  if (std::find(registry.begin(), registry.end(), name) != registry.end()) {
    return;
  }
  throw ConfigError("unknown " + what + " '" + name + "' (did you mean '" +
                    nearest_name(name, registry) + "'?)");
}

inline std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", x);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Configuration: a flat key space, readable from "key = value" files with
// '#' comments. CLI flags override keys one-for-one.
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::string dataset_path;
  DatasetFormat format = DatasetFormat::kMl100k;
  std::string out_dir = "results";

  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  TargetSpec::Kind target_kind = TargetSpec::Kind::kUnpopular;
  int target_count = 5;
  std::uint64_t target_seed = 7;
  bool targets_per_seed = false;  // default: fixed targets, reseeded training

  std::string attack = "random";
  std::string defense = "none";

  // Budget; negative values fall back to the protocol defaults
  // n' = ceil(attack_size * n) and m' = round(mean per-user rating count).
  double attack_size = 0.03;
  int n_fake = -1;
  int fillers = -1;
  double knowledge = 0.4;
  double kappa = 0.2;
  int loss_topk = 50;

  TrainConfig train;

  // TCD; negative values auto-select the per-dataset defaults.
  int tcd_pretrain_epochs = -1;   // 1 / 4 / 2 for filmtrust / ml100k / ml1m
  double tcd_pseudo_ratio = -1.0; // 1.0 / 1.0 / 0.2
  long long tcd_candidate_cap = -1;

  double at_epsilon = 0.03;
  double rat_sigma = 0.01;
  double rat_cap = 0.03;

  PgaOptions pga;

  bool save_checkpoints = false;

  int resolved_tcd_pretrain() const {
    if (tcd_pretrain_epochs >= 0) return tcd_pretrain_epochs;
    switch (format) {
      case DatasetFormat::kFilmTrust: return 1;
      case DatasetFormat::kMl100k: return 4;
      case DatasetFormat::kMl1m: return 2;
    }
    return 1;
  }
  double resolved_tcd_ratio() const {
    if (tcd_pseudo_ratio >= 0.0) return tcd_pseudo_ratio;
    return format == DatasetFormat::kMl1m ? 0.2 : 1.0;
  }

  void validate() const {
    if (dataset_path.empty()) throw ConfigError("config: dataset is required");
    detail::validate_name(attack, attack_registry(), "attack");
    detail::validate_name(defense, defense_registry(), "defense");
    if (seeds.empty()) throw ConfigError("config: at least one seed");
    if (target_count < 1) throw ConfigError("config: target_count must be >= 1");
    if (!(knowledge > 0.0 && knowledge <= 1.0)) {
      throw ConfigError("config: knowledge must be in (0,1]");
    }
    if (kappa <= 0.0) throw ConfigError("config: kappa must be > 0");
    if (loss_topk < 1) throw ConfigError("config: loss_topk must be >= 1");
    train.validate();
    if ((defense == "tcd" || attack == "gco_attack") &&
        resolved_tcd_pretrain() > train.epochs) {
      throw ConfigError("config: tcd_pretrain_epochs must not exceed epochs");
    }
  }
};

namespace detail {

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "dataset",       "format",          "out",
      "seeds",         "target_kind",     "target_count",
      "target_seed",   "targets_per_seed", "attack",
      "defense",       "attack_size",     "n_fake",
      "fillers",       "knowledge",       "kappa",
      "loss_topk",     "d",               "batch_size",
      "l2_reg",        "epochs",          "pretrain_epochs",
      "learning_rate", "tcd_pretrain_epochs", "tcd_pseudo_ratio",
      "tcd_candidate_cap", "at_epsilon",  "rat_sigma",
      "rat_cap",       "pga_steps",       "pga_step_size",
      "save_checkpoints"};
  return keys;
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline long long parse_ll(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" +
                      v + "'");
  }
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v +
                      "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + v +
                    "'");
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& key,
                                                  const std::string& v) {
  std::vector<std::uint64_t> out;
  std::size_t pos = 0;
  while (pos <= v.size()) {
    std::size_t next = v.find(',', pos);
    if (next == std::string::npos) next = v.size();
    std::string tok = trim(v.substr(pos, next - pos));
    if (!tok.empty()) {
      out.push_back(static_cast<std::uint64_t>(parse_ll(key, tok)));
    }
    pos = next + 1;
  }
  if (out.empty()) throw ConfigError("config: empty seed list");
  return out;
}

}  // namespace detail

// Applies one flat key. Unknown keys fail with a nearest-match hint.
inline void apply_config_key(ExperimentConfig& c, const std::string& key,
                             const std::string& value) {
  using detail::parse_bool;
  using detail::parse_ll;
  using detail::parse_real;
  if (key == "dataset") c.dataset_path = value;
  else if (key == "format") {
    detail::validate_name(value, dataset_registry(), "dataset format");
    c.format = parse_format(value);
  } else if (key == "out") c.out_dir = value;
  else if (key == "seeds") c.seeds = detail::parse_seed_list(key, value);
  else if (key == "target_kind") c.target_kind = parse_target_kind(value);
  else if (key == "target_count") c.target_count = static_cast<int>(parse_ll(key, value));
  else if (key == "target_seed") c.target_seed = static_cast<std::uint64_t>(parse_ll(key, value));
  else if (key == "targets_per_seed") c.targets_per_seed = parse_bool(key, value);
  else if (key == "attack") {
    detail::validate_name(value, attack_registry(), "attack");
    c.attack = value;
  } else if (key == "defense") {
    detail::validate_name(value, defense_registry(), "defense");
    c.defense = value;
  } else if (key == "attack_size") c.attack_size = parse_real(key, value);
  else if (key == "n_fake") c.n_fake = static_cast<int>(parse_ll(key, value));
  else if (key == "fillers") c.fillers = static_cast<int>(parse_ll(key, value));
  else if (key == "knowledge") c.knowledge = parse_real(key, value);
  else if (key == "kappa") c.kappa = parse_real(key, value);
  else if (key == "loss_topk") c.loss_topk = static_cast<int>(parse_ll(key, value));
  else if (key == "d") c.train.d = static_cast<int>(parse_ll(key, value));
  else if (key == "batch_size") c.train.batch_size = static_cast<int>(parse_ll(key, value));
  else if (key == "l2_reg") c.train.l2_reg = parse_real(key, value);
  else if (key == "epochs") c.train.epochs = static_cast<int>(parse_ll(key, value));
  else if (key == "pretrain_epochs") c.train.pretrain_epochs = static_cast<int>(parse_ll(key, value));
  else if (key == "learning_rate") c.train.learning_rate = parse_real(key, value);
  else if (key == "tcd_pretrain_epochs") c.tcd_pretrain_epochs = static_cast<int>(parse_ll(key, value));
  else if (key == "tcd_pseudo_ratio") c.tcd_pseudo_ratio = parse_real(key, value);
  else if (key == "tcd_candidate_cap") c.tcd_candidate_cap = parse_ll(key, value);
  else if (key == "at_epsilon") c.at_epsilon = parse_real(key, value);
  else if (key == "rat_sigma") c.rat_sigma = parse_real(key, value);
  else if (key == "rat_cap") c.rat_cap = parse_real(key, value);
  else if (key == "pga_steps") c.pga.steps = static_cast<int>(parse_ll(key, value));
  else if (key == "pga_step_size") c.pga.step_size = parse_real(key, value);
  else if (key == "save_checkpoints") c.save_checkpoints = parse_bool(key, value);
  else {
    throw ConfigError("config: unknown key '" + key + "' (did you mean '" +
                      detail::nearest_name(key, detail::config_keys()) +
                      "'?)");
  }
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  ExperimentConfig c;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected 'key = value'");
    }
    apply_config_key(c, detail::trim(line.substr(0, eq)),
                     detail::trim(line.substr(eq + 1)));
  }
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  return {{"dataset", c.dataset_path},
          {"format", to_string(c.format)},
          {"out", c.out_dir},
          {"seeds", c.seeds},
          {"target_kind", to_string(c.target_kind)},
          {"target_count", c.target_count},
          {"target_seed", c.target_seed},
          {"targets_per_seed", c.targets_per_seed},
          {"attack", c.attack},
          {"defense", c.defense},
          {"attack_size", c.attack_size},
          {"n_fake", c.n_fake},
          {"fillers", c.fillers},
          {"knowledge", c.knowledge},
          {"kappa", c.kappa},
          {"loss_topk", c.loss_topk},
          {"train", to_json(c.train)},
          {"tcd_pretrain_epochs", c.resolved_tcd_pretrain()},
          {"tcd_pseudo_ratio", c.resolved_tcd_ratio()},
          {"tcd_candidate_cap", c.tcd_candidate_cap},
          {"at_epsilon", c.at_epsilon},
          {"rat_sigma", c.rat_sigma},
          {"rat_cap", c.rat_cap},
          {"pga_steps", c.pga.steps},
          {"pga_step_size", c.pga.step_size},
          {"save_checkpoints", c.save_checkpoints}};
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

inline constexpr const char* kResultsCsvHeader =
    "dataset,attack,defense,target_kind,target_item,seed,hr_origin_test,"
    "hr_origin_target,hr_attack_target,hr_defense_target,hr_defense_test,ri,"
    "mean_rank_shift";

inline void emit_report(std::span<const CellReport> cells,
                        const AggregateReport& agg,
                        const ExperimentConfig& config,
                        const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  {
    std::ofstream csv(fs::path(out_dir) / "results.csv");
    if (!csv) throw IoError("cannot write results.csv in " + out_dir);
    csv << kResultsCsvHeader << "\n";
    for (const auto& c : cells) {
      csv << c.dataset << ',' << c.attack << ',' << c.defense << ','
          << c.target_kind << ',' << c.target_item << ',' << c.seed << ',';
      if (c.failed) {
        csv << ",,,,,,";  // metrics unavailable for failed cells
      } else {
        csv << detail::fmt_double(c.hr_origin_test) << ','
            << detail::fmt_double(c.hr_origin_target) << ','
            << detail::fmt_double(c.hr_attack_target) << ','
            << detail::fmt_double(c.hr_defense_target) << ','
            << detail::fmt_double(c.hr_defense_test) << ','
            << (c.ri ? detail::fmt_double(*c.ri) : "") << ','
            << detail::fmt_double(c.mean_rank_shift);
      }
      csv << "\n";
    }
  }

  {
    std::ofstream csv(fs::path(out_dir) / "rank_shift.csv");
    if (!csv) throw IoError("cannot write rank_shift.csv in " + out_dir);
    csv << "dataset,attack,defense,target_kind,target_item,seed,user_index,"
           "rank_shift\n";
    for (const auto& c : cells) {
      if (c.failed) continue;
      for (const auto& s : c.rank_shifts) {
        csv << c.dataset << ',' << c.attack << ',' << c.defense << ','
            << c.target_kind << ',' << c.target_item << ',' << c.seed << ','
            << s.user << ',' << s.shift << "\n";
      }
    }
  }

  {
    auto ms_json = [](const MeanStd& m) {
      return nlohmann::json{{"mean", m.mean}, {"std", m.std}, {"n", m.n}};
    };
    nlohmann::json j;
    j["library_version"] = kVersion;
    std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ",
                  std::gmtime(&now));
    j["generated_at"] = stamp;  // timestamps live only in the JSON metadata
    j["config"] = config_to_json(config);
    j["aggregate"] = {{"hr_origin_test", ms_json(agg.hr_origin_test)},
                      {"hr_origin_target", ms_json(agg.hr_origin_target)},
                      {"hr_attack_target", ms_json(agg.hr_attack_target)},
                      {"hr_defense_target", ms_json(agg.hr_defense_target)},
                      {"hr_defense_test", ms_json(agg.hr_defense_test)},
                      {"ri", ms_json(agg.ri)},
                      {"mean_rank_shift", ms_json(agg.mean_rank_shift)},
                      {"ri_excluded", agg.ri_excluded},
                      {"failed_cells", agg.failed_cells}};
    j["cells"] = nlohmann::json::array();
    for (const auto& c : cells) {
      nlohmann::json cj = {{"dataset", c.dataset},
                           {"attack", c.attack},
                           {"defense", c.defense},
                           {"target_kind", c.target_kind},
                           {"target_item", c.target_item},
                           {"seed", c.seed},
                           {"failed", c.failed}};
      if (c.failed) {
        cj["error"] = c.error;
      } else {
        cj["hr_origin_test"] = c.hr_origin_test;
        cj["hr_origin_target"] = c.hr_origin_target;
        cj["hr_attack_target"] = c.hr_attack_target;
        cj["hr_defense_target"] = c.hr_defense_target;
        cj["hr_defense_test"] = c.hr_defense_test;
        if (c.ri) cj["ri"] = *c.ri; else cj["ri"] = nullptr;
        cj["mean_rank_shift"] = c.mean_rank_shift;
        cj["rank_shift_count"] = c.rank_shifts.size();
      }
      j["cells"].push_back(std::move(cj));
    }
    std::ofstream js(fs::path(out_dir) / "results.json");
    if (!js) throw IoError("cannot write results.json in " + out_dir);
    js << j.dump(2) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Protocol driver: split, clean victim, surrogate + attack, poisoned
// retraining from scratch, optional defense, metrics. Surrogate and victim
// never share model state; only the generated profiles cross the boundary.
// ---------------------------------------------------------------------------

struct ExperimentResult {
  std::vector<CellReport> cells;
  AggregateReport aggregate;
};

namespace detail {

inline FakeProfileSet dispatch_attack(const std::string& name,
                                      const InteractionSet& surrogate,
                                      const RatingStats& surrogate_stats,
                                      const AttackBudget& budget,
                                      const ExperimentConfig& config,
                                      std::uint64_t seed) {
  if (name == "none") {
    FakeProfileSet empty;
    empty.target_item = budget.target_item;
    return empty;
  }
  if (name == "random") return random_attack(surrogate_stats, budget, seed);
  if (name == "average") return average_attack(surrogate_stats, budget, seed);
  if (name == "pga") {
    return pga_attack(surrogate, budget, config.train, seed, config.pga);
  }
  if (name == "co_attack") {
    return co_attack(surrogate, budget, config.train, seed);
  }
  if (name == "gco_attack") {
    TcdConfig game;
    game.base = config.train;
    game.pretrain_epochs = config.resolved_tcd_pretrain();
    game.pseudo_label_ratio = config.resolved_tcd_ratio();
    game.unlabeled_candidate_cap = config.tcd_candidate_cap;
    return gco_attack(surrogate, budget, config.train, game, seed);
  }
  throw ConfigError("unknown attack: " + name);
}

}  // namespace detail

inline ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  InteractionSet data = load_dataset(config.dataset_path, config.format);
  RatingStats full_stats = rating_stats(data);

  const int n_users = data.n_users;
  const int n_fake =
      config.n_fake > 0
          ? config.n_fake
          : static_cast<int>(std::ceil(config.attack_size * n_users));
  const int fillers =
      config.fillers >= 0
          ? config.fillers
          : static_cast<int>(std::llround(full_stats.mean_user_count()));

  TargetSpec fixed_targets;
  if (!config.targets_per_seed) {
    fixed_targets = select_targets(data, config.target_kind,
                                   config.target_count, config.target_seed);
  }

  ExperimentResult result;
  for (std::uint64_t seed : config.seeds) {
    SplitSet parts;
    std::optional<TrainResult> clean;
    InteractionSet surrogate;
    RatingStats surrogate_stats;
    ObservedSets observed_train;
    TargetSpec targets = fixed_targets;
    double hr_origin_test = 0.0;
    std::string seed_error;
    try {
      parts = split(data, seed);
      TrainConfig victim_cfg = config.train;
      victim_cfg.seed = derive_seed(seed, seed_tag::kVictim);
      clean = train(init_model(n_users, data.n_items, victim_cfg,
                               victim_cfg.seed),
                    parts.train.interactions, parts.validation.interactions,
                    victim_cfg);
      observed_train = ObservedSets(parts.train);
      hr_origin_test =
          hr_test(clean->model, observed_train, parts.test, kDefaultHrK);
      surrogate = sample_knowledge(parts.train, config.knowledge,
                                   derive_seed(seed, seed_tag::kKnowledge));
      surrogate_stats = rating_stats(surrogate);
      if (config.targets_per_seed) {
        targets = select_targets(surrogate, config.target_kind,
                                 config.target_count,
                                 derive_seed(seed, seed_tag::kTargets));
      }
    } catch (const std::exception& e) {
      seed_error = e.what();
      targets = fixed_targets;
      if (config.targets_per_seed && targets.items.empty()) {
        targets.items.assign(config.target_count, -1);
      }
    }

    for (std::size_t ti = 0; ti < targets.items.size(); ++ti) {
      CellReport cell;
      cell.dataset = to_string(config.format);
      cell.attack = config.attack;
      cell.defense = config.defense;
      cell.target_kind = to_string(config.target_kind);
      cell.target_item = targets.items[ti];
      cell.seed = seed;
      if (!seed_error.empty()) {
        cell.failed = true;
        cell.error = seed_error;
        result.cells.push_back(std::move(cell));
        continue;
      }
      try {
        const int t = targets.items[ti];
        cell.hr_origin_test = hr_origin_test;
        cell.hr_origin_target =
            hr_target(clean->model, observed_train, n_users, t, kDefaultHrK);

        AttackBudget budget;
        budget.n_fake = n_fake;
        budget.fillers_per_user = fillers;
        budget.knowledge_fraction = config.knowledge;
        budget.target_item = t;
        budget.kappa = config.kappa;
        budget.topk_for_loss = config.loss_topk;
        if (config.attack != "none") {
          budget.validate(n_users, data.n_items);
        }

        std::uint64_t attack_seed =
            derive_seed(seed, seed_tag::kAttackRun, ti);
        FakeProfileSet profiles = detail::dispatch_attack(
            config.attack, surrogate, surrogate_stats, budget, config,
            attack_seed);
        if (config.attack != "none") {
          profiles.check_invariants(budget, data.n_items);
        }

        // The victim retrains from scratch on the poisoned data; it is never
        // warm-started from the clean model.
        InteractionSet poisoned = parts.train.like();
        poisoned.n_users = n_users + static_cast<int>(profiles.profiles.size());
        poisoned.interactions = parts.train.interactions;
        auto injected = profiles.as_interactions(n_users);
        poisoned.interactions.insert(poisoned.interactions.end(),
                                     injected.begin(), injected.end());

        TrainConfig victim_cfg = config.train;
        victim_cfg.seed = derive_seed(seed, seed_tag::kVictim);
        TrainResult attacked =
            train(init_model(poisoned.n_users, data.n_items, victim_cfg,
                             victim_cfg.seed),
                  poisoned.interactions, parts.validation.interactions,
                  victim_cfg);
        cell.hr_attack_target = hr_target(attacked.model, observed_train,
                                          n_users, t, kDefaultHrK);

        SplitSet poisoned_parts{poisoned, parts.validation, parts.test};
        const FactorModel* defended = &attacked.model;
        TrainResult defense_result;
        TcdEnsemble ensemble;
        if (config.defense == "at") {
          defense_result =
              adversarial_train(poisoned_parts, victim_cfg, config.at_epsilon);
          defended = &defense_result.model;
        } else if (config.defense == "rat") {
          defense_result = random_adversarial_train(
              poisoned_parts, victim_cfg, config.rat_sigma, config.rat_cap);
          defended = &defense_result.model;
        } else if (config.defense == "tcd") {
          TcdConfig tcd;
          tcd.base = config.train;
          tcd.base.seed = derive_seed(seed, seed_tag::kTcdBase);
          tcd.pretrain_epochs = config.resolved_tcd_pretrain();
          tcd.pseudo_label_ratio = config.resolved_tcd_ratio();
          tcd.unlabeled_candidate_cap = config.tcd_candidate_cap;
          for (int j = 0; j < 3; ++j) {
            tcd.seeds[j] = derive_seed(seed, seed_tag::kTcdMember,
                                       static_cast<std::uint64_t>(j));
          }
          ensemble = tcd_train(poisoned_parts, tcd);
          defended = &ensemble.output();
        }
        cell.hr_defense_target =
            hr_target(*defended, observed_train, n_users, t, kDefaultHrK);
        cell.hr_defense_test =
            hr_test(*defended, observed_train, parts.test, kDefaultHrK);
        cell.ri = robustness_improvement(
            cell.hr_origin_target, cell.hr_attack_target,
            cell.hr_defense_target);
        cell.rank_shifts = rank_shift_samples(clean->model, attacked.model,
                                              observed_train, n_users, t);
        double sum = 0.0;
        for (const auto& s : cell.rank_shifts) sum += s.shift;
        cell.mean_rank_shift =
            cell.rank_shifts.empty() ? 0.0 : sum / cell.rank_shifts.size();

        if (config.save_checkpoints) {
          namespace fs = std::filesystem;
          fs::create_directories(config.out_dir);
          std::string stem = to_string(config.format) + std::string("_s") +
                             std::to_string(seed) + "_t" + std::to_string(t);
          save_checkpoint(
              (fs::path(config.out_dir) / (stem + "_clean.ckpt")).string(),
              clean->model,
              {{"kind", "victim_clean"}, {"train_config", to_json(victim_cfg)}});
          save_checkpoint(
              (fs::path(config.out_dir) / (stem + "_attacked.ckpt")).string(),
              attacked.model,
              {{"kind", "victim_attacked"}, {"attack", config.attack}});
          if (config.defense == "tcd") {
            save_ensemble(
                (fs::path(config.out_dir) / (stem + "_tcd.json")).string(),
                (fs::path(config.out_dir) / (stem + "_tcd_m")).string(),
                ensemble, config_to_json(config));
          } else if (config.defense != "none") {
            save_checkpoint(
                (fs::path(config.out_dir) / (stem + "_defended.ckpt"))
                    .string(),
                *defended, {{"kind", "victim_defended"},
                            {"defense", config.defense}});
          }
          std::ofstream pf(fs::path(config.out_dir) / (stem + "_profiles.tsv"));
          profiles.serialize(pf);
        }
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
      }
      result.cells.push_back(std::move(cell));
    }
  }

  result.aggregate = aggregate(result.cells);
  emit_report(result.cells, result.aggregate, config, config.out_dir);
  return result;
}

}  // namespace recshield
