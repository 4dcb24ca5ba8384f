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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "recshield/common.hpp"
#include "recshield/dataset.hpp"
#include "recshield/defense.hpp"
#include "recshield/model.hpp"
#include "recshield/projection.hpp"

namespace recshield {

// Threat-model budget: n' fake users, m' filler items each, a knowledge
// fraction rho, one target item, the loss threshold kappa and the list
// length k used by the attack loss.
struct AttackBudget {
  int n_fake = 0;             // n'
  int fillers_per_user = 0;   // m'
  double knowledge_fraction = 0.4;
  int target_item = -1;
  double kappa = 0.2;
  int topk_for_loss = 50;
  // n' << n and m' << m enforced as configurable caps.
  double max_fake_user_ratio = 0.2;
  double max_filler_ratio = 0.5;

  void validate(int n_users, int n_items) const {
    if (n_fake < 1) throw std::invalid_argument("budget: n_fake must be >= 1");
    if (fillers_per_user < 0) {
      throw std::invalid_argument("budget: fillers_per_user must be >= 0");
    }
    if (target_item < 0 || target_item >= n_items) {
      throw std::invalid_argument("budget: target item out of range");
    }
    if (!(knowledge_fraction > 0.0 && knowledge_fraction <= 1.0)) {
      throw std::invalid_argument("budget: knowledge fraction must be in (0,1]");
    }
    if (kappa <= 0.0) throw std::invalid_argument("budget: kappa must be > 0");
    if (topk_for_loss < 1) {
      throw std::invalid_argument("budget: topk_for_loss must be >= 1");
    }
    if (fillers_per_user + 1 > n_items) {
      throw std::invalid_argument(
          "budget: fillers_per_user + target exceed the item count");
    }
    if (static_cast<double>(n_fake) > max_fake_user_ratio * n_users) {
      throw std::invalid_argument("budget: n_fake violates n' << n cap");
    }
    if (static_cast<double>(fillers_per_user) > max_filler_ratio * n_items) {
      throw std::invalid_argument("budget: fillers violate m' << m cap");
    }
  }
};

// One generated poisoning profile: the target item at the maximum rating
// plus exactly m' filler items, all at discrete levels, sorted by item.
struct FakeProfile {
  std::vector<std::pair<int, double>> ratings;
};

struct FakeProfileSet {
  int target_item = -1;
  std::vector<FakeProfile> profiles;

  // Flattens profiles into interactions with fake users mapped onto rows
  // first_fake_row, first_fake_row + 1, ...
  std::vector<Interaction> as_interactions(int first_fake_row) const {
    std::vector<Interaction> out;
    for (std::size_t f = 0; f < profiles.size(); ++f) {
      for (const auto& [item, rating] : profiles[f].ratings) {
        out.push_back({first_fake_row + static_cast<int>(f), item, rating});
      }
    }
    return out;
  }

  // Audit format: one "fake_user<TAB>item<TAB>rating" line per rating.
  void serialize(std::ostream& os) const {
    char buf[64];
    for (std::size_t f = 0; f < profiles.size(); ++f) {
      for (const auto& [item, rating] : profiles[f].ratings) {
        std::snprintf(buf, sizeof(buf), "%zu\t%d\t%.1f\n", f, item, rating);
        os << buf;
      }
    }
  }

  static FakeProfileSet parse(std::istream& is, int target_item) {
    FakeProfileSet out;
    out.target_item = target_item;
    std::size_t f;
    int item;
    double rating;
    while (is >> f >> item >> rating) {
      if (f >= out.profiles.size()) out.profiles.resize(f + 1);
      out.profiles[f].ratings.emplace_back(item, project(rating));
    }
    return out;
  }

  void check_invariants(const AttackBudget& budget, int n_items) const {
    if (static_cast<int>(profiles.size()) != budget.n_fake) {
      throw std::logic_error("profile set: wrong profile count");
    }
    for (const auto& p : profiles) {
      if (static_cast<int>(p.ratings.size()) != budget.fillers_per_user + 1) {
        throw std::logic_error("profile set: wrong profile length");
      }
      bool has_target = false;
      for (std::size_t idx = 0; idx < p.ratings.size(); ++idx) {
        auto [item, rating] = p.ratings[idx];
        if (item < 0 || item >= n_items || !is_rating_level(rating)) {
          throw std::logic_error("profile set: invalid entry");
        }
        if (idx > 0 && p.ratings[idx - 1].first >= item) {
          throw std::logic_error("profile set: duplicate or unsorted items");
        }
        if (item == budget.target_item) {
          has_target = rating == kMaxRating;
        }
      }
      if (!has_target) {
        throw std::logic_error("profile set: target missing or not maximal");
      }
    }
  }
};

// Attack target selection: either uniform over all items, or uniform over
// the items with fewer than five observed ratings in the visible data.
struct TargetSpec {
  enum class Kind { kRandom, kUnpopular };
  Kind kind = Kind::kUnpopular;
  std::vector<int> items;
};

inline const char* to_string(TargetSpec::Kind k) {
  return k == TargetSpec::Kind::kRandom ? "random" : "unpopular";
}

inline TargetSpec::Kind parse_target_kind(const std::string& s) {
  if (s == "random") return TargetSpec::Kind::kRandom;
  if (s == "unpopular") return TargetSpec::Kind::kUnpopular;
  throw ConfigError("unknown target kind: " + s);
}

inline TargetSpec select_targets(const InteractionSet& visible,
                                 TargetSpec::Kind kind, int count,
                                 std::uint64_t seed) {
  std::vector<int> pool;
  if (kind == TargetSpec::Kind::kRandom) {
    pool.resize(visible.n_items);
    std::iota(pool.begin(), pool.end(), 0);
  } else {
    std::vector<int> rating_count(visible.n_items, 0);
    for (const auto& x : visible.interactions) ++rating_count[x.item];
    for (int i = 0; i < visible.n_items; ++i) {
      if (rating_count[i] < 5) pool.push_back(i);
    }
  }
  if (static_cast<int>(pool.size()) < count) {
    throw DatasetError("select_targets: not enough eligible items");
  }
  Rng rng(derive_seed(seed, seed_tag::kTargets));
  for (int j = 0; j < count; ++j) {
    std::uniform_int_distribution<std::size_t> pick(j, pool.size() - 1);
    std::swap(pool[j], pool[pick(rng)]);
  }
  TargetSpec spec;
  spec.kind = kind;
  spec.items.assign(pool.begin(), pool.begin() + count);
  return spec;
}

// ---------------------------------------------------------------------------
// Attack loss
//
//   L_atk = sum_u max{ min_{i in L_u} log h(u,i) - log h(u,t), -kappa }
//
// where L_u is the user's top-k list over unobserved items. The target is
// removed from the min candidates when it already appears in the list.
// ---------------------------------------------------------------------------

struct RecommendationLists {
  std::vector<int> users;
  std::vector<std::vector<int>> lists;
};

inline RecommendationLists build_attack_lists(const FactorModel& model,
                                              std::span<const int> users,
                                              const ObservedSets& observed,
                                              int k) {
  RecommendationLists out;
  out.users.assign(users.begin(), users.end());
  out.lists.resize(users.size());
#pragma omp parallel for schedule(static)
  for (std::size_t idx = 0; idx < out.users.size(); ++idx) {
    int u = out.users[idx];
    auto excl = observed.items_of(u);
    int avail = model.n_items() - static_cast<int>(excl.size());
    out.lists[idx] = recommend_topk(model, u, std::min(k, avail), excl);
  }
  return out;
}

namespace detail {

// The argmin over list candidates, skipping the target; ties resolve to the
// first candidate in list order (and the list itself orders equal scores by
// ascending item index).
inline int arg_min_candidate(const FactorModel& m, int u,
                             std::span<const int> list, int t) {
  int best = -1;
  double best_score = std::numeric_limits<double>::infinity();
  for (int i : list) {
    if (i == t) continue;
    double s = m.predict(u, i);
    if (s < best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

}  // namespace detail

inline double attack_loss(const FactorModel& model,
                          const RecommendationLists& lists, int t,
                          double kappa) {
  if (lists.users.empty()) {
    throw std::invalid_argument("attack_loss: empty user set");
  }
  double loss = 0.0;
  for (std::size_t idx = 0; idx < lists.users.size(); ++idx) {
    int u = lists.users[idx];
    int i_min = detail::arg_min_candidate(model, u, lists.lists[idx], t);
    if (i_min < 0) continue;  // no candidates besides the target
    double expr =
        std::log(model.predict(u, i_min)) - std::log(model.predict(u, t));
    loss += std::max(expr, -kappa);
  }
  return loss;
}

// Convenience form that builds the per-user lists itself.
inline double attack_loss(const FactorModel& model, std::span<const int> users,
                          const ObservedSets& observed, int t, double kappa,
                          int k) {
  if (users.empty()) throw std::invalid_argument("attack_loss: empty user set");
  return attack_loss(model, build_attack_lists(model, users, observed, k), t,
                     kappa);
}

// Subgradient of the attack loss with the lists held fixed: users clamped at
// -kappa contribute nothing; otherwise the gradient flows through the argmin
// list item and the target only. Scaled by `weight` and accumulated into
// `grad`; returns the (unweighted) loss value.
inline double accumulate_attack_gradient(const FactorModel& model,
                                         const RecommendationLists& lists,
                                         int t, double kappa, double weight,
                                         FactorGrad& grad) {
  if (lists.users.empty()) {
    throw std::invalid_argument("attack gradient: empty user set");
  }
  double loss = 0.0;
  for (std::size_t idx = 0; idx < lists.users.size(); ++idx) {
    int u = lists.users[idx];
    int i_min = detail::arg_min_candidate(model, u, lists.lists[idx], t);
    if (i_min < 0) continue;
    double dot_min = model.raw_score(u, i_min);
    double dot_t = model.raw_score(u, t);
    double h_min = model.clamp(dot_min);
    double h_t = model.clamp(dot_t);
    double expr = std::log(h_min) - std::log(h_t);
    if (expr <= -kappa) {
      loss += -kappa;
      continue;  // clamped: zero subgradient
    }
    loss += expr;
    double s_min =
        (dot_min > model.clamp_floor && dot_min < 1.0) ? 1.0 / h_min : 0.0;
    double s_t = (dot_t > model.clamp_floor && dot_t < 1.0) ? 1.0 / h_t : 0.0;
    if (s_min != 0.0) {
      grad.users.row(u) += (weight * s_min) * model.item_factors.row(i_min);
      grad.items.row(i_min) += (weight * s_min) * model.user_factors.row(u);
    }
    if (s_t != 0.0) {
      grad.users.row(u) -= (weight * s_t) * model.item_factors.row(t);
      grad.items.row(t) -= (weight * s_t) * model.user_factors.row(u);
    }
  }
  return loss;
}

// Joint-training hook: refreshes the per-user lists once per epoch and adds
// the attack subgradient to every batch.
class AttackObjective final : public AuxObjective {
 public:
  AttackObjective(std::vector<int> users, const InteractionSet& visible,
                  int target, double kappa, int k, double weight = 1.0)
      : users_(std::move(users)), observed_(visible), target_(target),
        kappa_(kappa), k_(k), weight_(weight) {}

  void epoch_begin(const FactorModel& model) override {
    lists_ = build_attack_lists(model, users_, observed_, k_);
  }

  double accumulate(const FactorModel& model, FactorGrad& grad) const override {
    return accumulate_attack_gradient(model, lists_, target_, kappa_, weight_,
                                      grad);
  }

  const RecommendationLists& lists() const { return lists_; }

 private:
  std::vector<int> users_;
  ObservedSets observed_;
  int target_;
  double kappa_;
  int k_;
  double weight_;
  RecommendationLists lists_;
};

// ---------------------------------------------------------------------------
// Profile generators
// ---------------------------------------------------------------------------

namespace detail {

// m' distinct filler items excluding the target, by partial Fisher-Yates.
inline std::vector<int> sample_filler_items(int n_items, int target, int count,
                                            Rng& rng) {
  std::vector<int> pool;
  pool.reserve(n_items - 1);
  for (int i = 0; i < n_items; ++i) {
    if (i != target) pool.push_back(i);
  }
  for (int j = 0; j < count; ++j) {
    std::uniform_int_distribution<std::size_t> pick(j, pool.size() - 1);
    std::swap(pool[j], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

inline FakeProfile assemble_profile(std::vector<std::pair<int, double>> fillers,
                                    int target) {
  fillers.emplace_back(target, kMaxRating);
  std::sort(fillers.begin(), fillers.end());
  FakeProfile p;
  p.ratings = std::move(fillers);
  return p;
}

inline double sample_normal_level(Rng& rng, double mean, double std) {
  if (std == 0.0) return project(mean);
  std::normal_distribution<double> dist(mean, std);
  return project(dist(rng));
}

}  // namespace detail

// D_c initialization: uniform filler items rated by sampling the empirical
// distribution of real rating levels; target at the maximum rating.
inline FakeProfileSet init_fake_profiles(const RatingStats& stats,
                                         const AttackBudget& budget,
                                         std::uint64_t seed) {
  int n_items = static_cast<int>(stats.per_item_mean.size());
  if (budget.fillers_per_user + 1 > n_items) {
    throw std::invalid_argument("init_fake_profiles: m' + 1 exceeds item count");
  }
  double total = 0.0;
  for (long long c : stats.level_counts) total += static_cast<double>(c);
  if (total <= 0.0) throw DatasetError("init_fake_profiles: empty stats");

  Rng rng(derive_seed(seed, seed_tag::kFakeInit));
  std::discrete_distribution<int> level(stats.level_counts.begin(),
                                        stats.level_counts.end());
  FakeProfileSet out;
  out.target_item = budget.target_item;
  out.profiles.reserve(budget.n_fake);
  for (int f = 0; f < budget.n_fake; ++f) {
    auto items = detail::sample_filler_items(n_items, budget.target_item,
                                             budget.fillers_per_user, rng);
    std::vector<std::pair<int, double>> fillers;
    fillers.reserve(items.size());
    for (int i : items) fillers.emplace_back(i, kRatingLevels[level(rng)]);
    out.profiles.push_back(
        detail::assemble_profile(std::move(fillers), budget.target_item));
  }
  return out;
}

// Random attack: uniform fillers rated from N(global mean, global std),
// projected onto the discrete levels; target at the maximum rating.
inline FakeProfileSet random_attack(const RatingStats& stats,
                                    const AttackBudget& budget,
                                    std::uint64_t seed) {
  int n_items = static_cast<int>(stats.per_item_mean.size());
  if (budget.fillers_per_user + 1 > n_items) {
    throw std::invalid_argument("random_attack: m' + 1 exceeds item count");
  }
  Rng rng(derive_seed(seed, seed_tag::kRatings));
  FakeProfileSet out;
  out.target_item = budget.target_item;
  out.profiles.reserve(budget.n_fake);
  for (int f = 0; f < budget.n_fake; ++f) {
    auto items = detail::sample_filler_items(n_items, budget.target_item,
                                             budget.fillers_per_user, rng);
    std::vector<std::pair<int, double>> fillers;
    fillers.reserve(items.size());
    for (int i : items) {
      fillers.emplace_back(i, detail::sample_normal_level(
                                  rng, stats.global_mean, stats.global_std));
    }
    out.profiles.push_back(
        detail::assemble_profile(std::move(fillers), budget.target_item));
  }
  return out;
}

// Average attack: like the random attack but each filler is rated from that
// item's N(mean, std); unrated items already fall back to the global stats.
inline FakeProfileSet average_attack(const RatingStats& stats,
                                     const AttackBudget& budget,
                                     std::uint64_t seed) {
  int n_items = static_cast<int>(stats.per_item_mean.size());
  if (budget.fillers_per_user + 1 > n_items) {
    throw std::invalid_argument("average_attack: m' + 1 exceeds item count");
  }
  Rng rng(derive_seed(seed, seed_tag::kRatings));
  FakeProfileSet out;
  out.target_item = budget.target_item;
  out.profiles.reserve(budget.n_fake);
  for (int f = 0; f < budget.n_fake; ++f) {
    auto items = detail::sample_filler_items(n_items, budget.target_item,
                                             budget.fillers_per_user, rng);
    std::vector<std::pair<int, double>> fillers;
    fillers.reserve(items.size());
    for (int i : items) {
      fillers.emplace_back(i, detail::sample_normal_level(
                                  rng, stats.per_item_mean[i],
                                  stats.per_item_std[i]));
    }
    out.profiles.push_back(
        detail::assemble_profile(std::move(fillers), budget.target_item));
  }
  return out;
}

namespace detail {

// Reads a fake user's profile off a trained model: top-m' predicted items
// (target excluded), projected, plus the target at the maximum rating.
inline FakeProfileSet extract_profiles(const FactorModel& model,
                                       int first_fake_row,
                                       const AttackBudget& budget) {
  check_finite(model, "profile extraction");
  FakeProfileSet out;
  out.target_item = budget.target_item;
  out.profiles.reserve(budget.n_fake);
  for (int f = 0; f < budget.n_fake; ++f) {
    Vector scores = model.user_scores(first_fake_row + f);
    std::vector<int> idx;
    idx.reserve(model.n_items() - 1);
    for (int i = 0; i < model.n_items(); ++i) {
      if (i != budget.target_item) idx.push_back(i);
    }
    auto better = [&](int a, int b) {
      return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
    };
    int m = budget.fillers_per_user;
    std::partial_sort(idx.begin(), idx.begin() + m, idx.end(), better);
    std::vector<std::pair<int, double>> fillers;
    fillers.reserve(m);
    for (int j = 0; j < m; ++j) {
      fillers.emplace_back(idx[j], project(scores[idx[j]]));
    }
    out.profiles.push_back(
        assemble_profile(std::move(fillers), budget.target_item));
  }
  return out;
}

inline std::uint64_t attack_member_seed(std::uint64_t seed, int j) {
  return derive_seed(seed, seed_tag::kAttackModel,
                     static_cast<std::uint64_t>(j));
}

}  // namespace detail

struct AttackTrace {
  // Attack loss evaluated with fresh lists after every epoch.
  std::vector<double> attack_loss;
};

// ---------------------------------------------------------------------------
// Co-training attack: inject initialized profiles, pretrain on the training
// loss alone, then train the remaining epochs on training loss + attack
// loss, and finally read each fake user's profile off the optimized model.
// ---------------------------------------------------------------------------
inline FakeProfileSet co_attack(const InteractionSet& surrogate,
                                const AttackBudget& budget,
                                const TrainConfig& config, std::uint64_t seed,
                                AttackTrace* trace = nullptr) {
  config.validate();
  budget.validate(surrogate.n_users, surrogate.n_items);
  RatingStats stats = rating_stats(surrogate);
  FakeProfileSet init_profiles = init_fake_profiles(stats, budget, seed);

  const int first_fake_row = surrogate.n_users;
  std::vector<Interaction> joint = surrogate.interactions;
  auto fake_interactions = init_profiles.as_interactions(first_fake_row);
  joint.insert(joint.end(), fake_interactions.begin(), fake_interactions.end());

  ObservedSets observed(surrogate);
  AttackObjective objective(observed.users_with_items(), surrogate,
                            budget.target_item, budget.kappa,
                            budget.topk_for_loss);

  TrainConfig cfg = config;
  cfg.seed = detail::attack_member_seed(seed, 0);
  FactorModel model = init_model(first_fake_row + budget.n_fake,
                                 surrogate.n_items, cfg, cfg.seed);
  AdamState adam = AdamState::like(model);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    AuxObjective* aux = epoch >= cfg.pretrain_epochs ? &objective : nullptr;
    try {
      run_epoch(model, adam, joint, cfg, epoch_shuffle_seed(cfg, epoch), aux);
    } catch (const DivergenceError&) {
      throw DivergenceError("co_attack diverged at epoch " +
                            std::to_string(epoch));
    }
    if (trace) {
      trace->attack_loss.push_back(
          attack_loss(model, observed.users_with_items(), observed,
                      budget.target_item, budget.kappa, budget.topk_for_loss));
    }
  }
  return detail::extract_profiles(model, first_fake_row, budget);
}

// ---------------------------------------------------------------------------
// Game-based co-training attack: three models play the cooperative-defense
// game against the attack objective. Pretraining runs on the labeled data
// plus injected profiles; each later round rebuilds every member's
// pseudo-labels from the other two members' agreements and trains one epoch
// on training loss + attack loss. Profiles are read off member 0.
// ---------------------------------------------------------------------------
inline FakeProfileSet gco_attack(const InteractionSet& surrogate,
                                 const AttackBudget& budget,
                                 const TrainConfig& config,
                                 const TcdConfig& tcd, std::uint64_t seed,
                                 AttackTrace* trace = nullptr) {
  config.validate();
  budget.validate(surrogate.n_users, surrogate.n_items);
  if (tcd.pseudo_label_ratio < 0.0 || tcd.pseudo_label_ratio > 1.0) {
    throw ConfigError("gco_attack: pseudo_label_ratio must be in [0,1]");
  }
  RatingStats stats = rating_stats(surrogate);
  FakeProfileSet init_profiles = init_fake_profiles(stats, budget, seed);

  const int first_fake_row = surrogate.n_users;
  std::vector<Interaction> labeled = surrogate.interactions;
  auto fake_interactions = init_profiles.as_interactions(first_fake_row);
  labeled.insert(labeled.end(), fake_interactions.begin(),
                 fake_interactions.end());

  ObservedSets observed(surrogate);
  const std::vector<int>& users = observed.users_with_items();

  std::array<FactorModel, 3> models;
  std::array<AdamState, 3> adam;
  std::array<TrainConfig, 3> member_cfg;
  std::vector<AttackObjective> objectives;
  objectives.reserve(3);
  for (int j = 0; j < 3; ++j) {
    member_cfg[j] = config;
    member_cfg[j].seed = detail::attack_member_seed(seed, j);
    models[j] = init_model(first_fake_row + budget.n_fake, surrogate.n_items,
                           config, member_cfg[j].seed);
    adam[j] = AdamState::like(models[j]);
    objectives.emplace_back(users, surrogate, budget.target_item, budget.kappa,
                            budget.topk_for_loss);
  }

  auto run_member_epoch = [&](int j, int epoch,
                              std::span<const Interaction> set,
                              AuxObjective* aux) {
    try {
      run_epoch(models[j], adam[j], set, member_cfg[j],
                epoch_shuffle_seed(member_cfg[j], epoch), aux);
    } catch (const DivergenceError&) {
      throw DivergenceError("gco_attack member " + std::to_string(j) +
                            " diverged at epoch " + std::to_string(epoch));
    }
  };

  for (int epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
    for (int j = 0; j < 3; ++j) run_member_epoch(j, epoch, labeled, nullptr);
  }

  // Unlabeled candidates are the attacker-visible users' unrated pairs.
  std::vector<std::pair<int, int>> all_pairs =
      unlabeled_pairs(observed, surrogate.n_users, surrogate.n_items);
  std::vector<Interaction> augmented;
  for (int epoch = config.pretrain_epochs; epoch < config.epochs; ++epoch) {
    for (int j = 0; j < 3; ++j) {
      std::uint64_t round =
          static_cast<std::uint64_t>(epoch) * 3 + static_cast<std::uint64_t>(j);
      std::vector<std::pair<int, int>> capped;
      const std::vector<std::pair<int, int>>* cand_ptr = &all_pairs;
      if (tcd.unlabeled_candidate_cap >= 0 &&
          static_cast<std::size_t>(tcd.unlabeled_candidate_cap) <
              all_pairs.size()) {
        Rng rng(derive_seed(seed, seed_tag::kCandidates, round));
        capped = detail::subsample_candidates(
            all_pairs, tcd.unlabeled_candidate_cap, rng);
        cand_ptr = &capped;
      }
      std::vector<Interaction> labels;
      try {
        labels = pseudo_labels_for(
            j, models, *cand_ptr, tcd.pseudo_label_ratio,
            derive_seed(seed, seed_tag::kPseudoSelect, round));
      } catch (const DivergenceError&) {
        throw DivergenceError("gco_attack member " + std::to_string(j) +
                              " diverged at epoch " + std::to_string(epoch));
      }
      augmented.clear();
      augmented.reserve(labeled.size() + labels.size());
      augmented.insert(augmented.end(), labeled.begin(), labeled.end());
      augmented.insert(augmented.end(), labels.begin(), labels.end());
      run_member_epoch(j, epoch, augmented, &objectives[j]);
    }
    if (trace) {
      trace->attack_loss.push_back(
          attack_loss(models[0], users, observed, budget.target_item,
                      budget.kappa, budget.topk_for_loss));
    }
  }
  return detail::extract_profiles(models[0], first_fake_row, budget);
}

// ---------------------------------------------------------------------------
// PGA baseline: the surrogate is trained once on real + initialized fake
// data and then held fixed; each fake user's dense rating vector is the free
// variable. The attack loss is evaluated through a one-virtual-SGD-step
// response of the item factors to the fake ratings, and projected gradient
// steps (clipped to [0.2, 1.0], with step-halving backtracking) descend it.
// Fillers are the top-m' entries of the optimized vectors.
// ---------------------------------------------------------------------------
struct PgaOptions {
  int steps = 40;
  double step_size = 0.05;
  double virtual_lr = -1.0;  // < 0: use the training learning rate
  int max_backtracks = 8;
};

inline FakeProfileSet pga_attack(const InteractionSet& surrogate,
                                 const AttackBudget& budget,
                                 const TrainConfig& config, std::uint64_t seed,
                                 const PgaOptions& options = {},
                                 AttackTrace* trace = nullptr) {
  config.validate();
  budget.validate(surrogate.n_users, surrogate.n_items);
  RatingStats stats = rating_stats(surrogate);
  FakeProfileSet init_profiles = init_fake_profiles(stats, budget, seed);

  const int n = surrogate.n_users;
  const int m = surrogate.n_items;
  const int n_fake = budget.n_fake;
  std::vector<Interaction> joint = surrogate.interactions;
  auto fake_interactions = init_profiles.as_interactions(n);
  joint.insert(joint.end(), fake_interactions.begin(), fake_interactions.end());

  TrainConfig cfg = config;
  cfg.seed = detail::attack_member_seed(seed, 0);
  TrainResult trained =
      train(init_model(n + n_fake, m, cfg, cfg.seed), joint, {}, cfg);
  const FactorModel& base = trained.model;
  check_finite(base, "pga_attack surrogate");

  // Dense rating variables, seeded from the initialized profiles.
  Matrix ratings = Matrix::Zero(n_fake, m);
  for (int f = 0; f < n_fake; ++f) {
    for (const auto& [item, rating] : init_profiles.profiles[f].ratings) {
      ratings(f, item) = rating;
    }
  }

  ObservedSets observed(surrogate);
  const std::vector<int>& users = observed.users_with_items();
  const double eta =
      options.virtual_lr > 0.0 ? options.virtual_lr : config.learning_rate;
  const double response_scale =
      2.0 * eta / (static_cast<double>(n_fake) * static_cast<double>(m));
  const Matrix fake_rows = base.user_factors.bottomRows(n_fake);

  // Item factors after one virtual gradient step of the fake rows' squared
  // error toward the dense ratings.
  auto virtual_model = [&](const Matrix& x) {
    FactorModel vm = base;
    Matrix residual = x - fake_rows * base.item_factors.transpose();
    vm.item_factors += response_scale * (residual.transpose() * fake_rows);
    return vm;
  };
  auto loss_at = [&](const Matrix& x) {
    FactorModel vm = virtual_model(x);
    return attack_loss(vm, users, observed, budget.target_item, budget.kappa,
                       budget.topk_for_loss);
  };

  double current = loss_at(ratings);
  if (trace) trace->attack_loss.push_back(current);
  double step = options.step_size;
  for (int s = 0; s < options.steps; ++s) {
    FactorModel vm = virtual_model(ratings);
    FactorGrad vgrad = FactorGrad::like(vm);
    accumulate_attack_gradient(
        vm, build_attack_lists(vm, users, observed, budget.topk_for_loss),
        budget.target_item, budget.kappa, 1.0, vgrad);
    // Chain rule through the virtual response: dL/dX = c * G_items * P_fake^T
    Matrix gx = response_scale * (fake_rows * vgrad.items.transpose());
    if (!gx.allFinite()) throw DivergenceError("pga_attack: non-finite grad");

    bool accepted = false;
    double trial_step = step;
    for (int bt = 0; bt <= options.max_backtracks; ++bt) {
      Matrix candidate =
          (ratings - trial_step * gx).cwiseMax(kMinRating).cwiseMin(kMaxRating);
      double cand_loss = loss_at(candidate);
      if (cand_loss <= current) {
        ratings = std::move(candidate);
        current = cand_loss;
        accepted = true;
        break;
      }
      trial_step *= 0.5;
    }
    if (trace) trace->attack_loss.push_back(current);
    if (!accepted) break;  // no descent direction left at this scale
  }

  // Assemble: top-m' dense entries (target excluded) become the fillers.
  FakeProfileSet out;
  out.target_item = budget.target_item;
  out.profiles.reserve(n_fake);
  for (int f = 0; f < n_fake; ++f) {
    std::vector<int> idx;
    idx.reserve(m - 1);
    for (int i = 0; i < m; ++i) {
      if (i != budget.target_item) idx.push_back(i);
    }
    auto better = [&](int a, int b) {
      return ratings(f, a) != ratings(f, b) ? ratings(f, a) > ratings(f, b)
                                            : a < b;
    };
    std::partial_sort(idx.begin(), idx.begin() + budget.fillers_per_user,
                      idx.end(), better);
    std::vector<std::pair<int, double>> fillers;
    for (int j = 0; j < budget.fillers_per_user; ++j) {
      fillers.emplace_back(idx[j], project(ratings(f, idx[j])));
    }
    out.profiles.push_back(
        detail::assemble_profile(std::move(fillers), budget.target_item));
  }
  return out;
}

}  // namespace recshield
