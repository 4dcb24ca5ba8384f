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

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "recshield/common.hpp"
#include "recshield/dataset.hpp"
#include "recshield/model.hpp"
#include "recshield/projection.hpp"

namespace recshield {

struct TcdConfig {
  // Per-dataset defaults from the co-training protocol: pretraining epochs
  // 1 / 4 / 2 and pseudo-label ratios 1.0 / 1.0 / 0.2 for FilmTrust /
  // ML-100K / ML-1M.
  int pretrain_epochs = 4;
  double pseudo_label_ratio = 1.0;
  long long unlabeled_candidate_cap = -1;  // -1 = test every unlabeled pair
  TrainConfig base;
  std::array<std::uint64_t, 3> seeds = {11, 22, 33};

  void validate() const {
    base.validate();
    if (pretrain_epochs < 0 || pretrain_epochs > base.epochs) {
      throw ConfigError("TcdConfig: pretrain epochs must be in [0, epochs]");
    }
    if (pseudo_label_ratio < 0.0 || pseudo_label_ratio > 1.0) {
      throw ConfigError("TcdConfig: pseudo_label_ratio must be in [0,1]");
    }
  }
};

// Three co-trained models; recommendations come from the designated member.
struct TcdEnsemble {
  std::array<FactorModel, 3> models;
  int designated = 0;

  const FactorModel& output() const { return models[designated]; }
};

// Every (u, i) pair absent from `observed`, in (user, item) order.
inline std::vector<std::pair<int, int>> unlabeled_pairs(
    const ObservedSets& observed, int n_user_rows, int n_items) {
  std::vector<std::pair<int, int>> out;
  for (int u = 0; u < n_user_rows; ++u) {
    auto items = u < observed.n_users() ? observed.items_of(u)
                                        : std::span<const int>();
    std::size_t pos = 0;
    for (int i = 0; i < n_items; ++i) {
      if (pos < items.size() && items[pos] == i) {
        ++pos;
        continue;
      }
      out.emplace_back(u, i);
    }
  }
  return out;
}

// Pairwise-agreement pseudo-labels for member j: a candidate (u, i) is
// labeled with the projected prediction when the other two members agree on
// it after projection, then a uniform `ratio` fraction of the labels is
// kept. Candidates must be (user, item)-ordered for deterministic output.
inline std::vector<Interaction> pseudo_labels_for(
    int j, const std::array<FactorModel, 3>& models,
    std::span<const std::pair<int, int>> candidates, double ratio,
    std::uint64_t seed) {
  if (j < 0 || j > 2) throw std::invalid_argument("pseudo_labels_for: bad j");
  if (ratio < 0.0 || ratio > 1.0) {
    throw std::invalid_argument("pseudo_labels_for: ratio must be in [0,1]");
  }
  const FactorModel& a = models[(j + 1) % 3];
  const FactorModel& b = models[(j + 2) % 3];

  check_finite(a, "pseudo_labels_for");
  check_finite(b, "pseudo_labels_for");

  std::vector<Interaction> emitted;
  // Dense candidate sets amortize better through two full score products.
  bool dense = !candidates.empty() &&
               candidates.size() * 4 >=
                   static_cast<std::size_t>(a.user_rows()) *
                       static_cast<std::size_t>(a.n_items());
  if (dense) {
    Matrix sa = a.score_block(0, a.user_rows());
    Matrix sb = b.score_block(0, b.user_rows());
    if (!sa.allFinite() || !sb.allFinite()) {
      throw DivergenceError("pseudo_labels_for: non-finite predictions");
    }
    for (const auto& [u, i] : candidates) {
      double pa = project(sa(u, i));
      if (pa == project(sb(u, i))) emitted.push_back({u, i, pa});
    }
  } else {
    for (const auto& [u, i] : candidates) {
      double pa = project(a.predict(u, i));
      if (pa == project(b.predict(u, i))) emitted.push_back({u, i, pa});
    }
  }

  if (ratio >= 1.0) return emitted;
  std::size_t keep = static_cast<std::size_t>(
      std::floor(ratio * static_cast<double>(emitted.size())));
  std::vector<std::uint32_t> order(emitted.size());
  std::iota(order.begin(), order.end(), 0u);
  Rng rng(derive_seed(seed, seed_tag::kPseudoSelect));
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(keep);
  std::sort(order.begin(), order.end());
  std::vector<Interaction> kept;
  kept.reserve(keep);
  for (auto idx : order) kept.push_back(emitted[idx]);
  return kept;
}

namespace detail {

inline std::vector<std::pair<int, int>> subsample_candidates(
    const std::vector<std::pair<int, int>>& all, long long cap, Rng& rng) {
  if (cap < 0 || static_cast<std::size_t>(cap) >= all.size()) return all;
  std::vector<std::uint32_t> order(all.size());
  std::iota(order.begin(), order.end(), 0u);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(static_cast<std::size_t>(cap));
  std::sort(order.begin(), order.end());
  std::vector<std::pair<int, int>> out;
  out.reserve(order.size());
  for (auto idx : order) out.push_back(all[idx]);
  return out;
}

}  // namespace detail

// Triple Cooperative Defense. Three independently seeded models pretrain on
// the full training set, then co-train: in turn order j = 0, 1, 2 each
// member trains one epoch per round on the training set augmented with the
// other two members' agreement pseudo-labels, rebuilt from scratch every
// round. The training set is never culled, only augmented.
inline TcdEnsemble tcd_train(const SplitSet& data, const TcdConfig& cfg) {
  cfg.validate();
  if (data.train.empty()) throw DatasetError("tcd_train: empty train split");
  const int n_rows = data.train.n_users;
  const int n_items = data.train.n_items;

  TcdEnsemble ensemble;
  std::array<AdamState, 3> adam;
  std::array<TrainConfig, 3> member_cfg;
  for (int j = 0; j < 3; ++j) {
    member_cfg[j] = cfg.base;
    member_cfg[j].seed = cfg.seeds[j];
    ensemble.models[j] =
        init_model(n_rows, n_items, cfg.base, cfg.seeds[j]);
    adam[j] = AdamState::like(ensemble.models[j]);
  }

  auto run_member_epoch = [&](int j, int epoch,
                              std::span<const Interaction> set) {
    try {
      run_epoch(ensemble.models[j], adam[j], set, member_cfg[j],
                epoch_shuffle_seed(member_cfg[j], epoch));
    } catch (const DivergenceError&) {
      throw DivergenceError("TCD member " + std::to_string(j) +
                            " diverged at epoch " + std::to_string(epoch));
    }
  };

  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    for (int j = 0; j < 3; ++j) {
      run_member_epoch(j, epoch, data.train.interactions);
    }
  }
  if (cfg.pretrain_epochs == cfg.base.epochs) return ensemble;

  ObservedSets observed(data.train);
  std::vector<std::pair<int, int>> all_pairs =
      unlabeled_pairs(observed, n_rows, n_items);
  std::vector<Interaction> augmented;
  for (int epoch = cfg.pretrain_epochs; epoch < cfg.base.epochs; ++epoch) {
    for (int j = 0; j < 3; ++j) {
      std::uint64_t round =
          static_cast<std::uint64_t>(epoch) * 3 + static_cast<std::uint64_t>(j);
      std::vector<std::pair<int, int>> candidates;
      const std::vector<std::pair<int, int>>* cand_ptr = &all_pairs;
      if (cfg.unlabeled_candidate_cap >= 0 &&
          static_cast<std::size_t>(cfg.unlabeled_candidate_cap) <
              all_pairs.size()) {
        Rng rng(derive_seed(cfg.base.seed, seed_tag::kCandidates, round));
        candidates = detail::subsample_candidates(
            all_pairs, cfg.unlabeled_candidate_cap, rng);
        cand_ptr = &candidates;
      }
      std::vector<Interaction> labels;
      try {
        labels = pseudo_labels_for(
            j, ensemble.models, *cand_ptr, cfg.pseudo_label_ratio,
            derive_seed(cfg.base.seed, seed_tag::kPseudoSelect, round));
      } catch (const DivergenceError&) {
        throw DivergenceError("TCD member " + std::to_string(j) +
                              " diverged at epoch " + std::to_string(epoch));
      }
      augmented.clear();
      augmented.reserve(data.train.size() + labels.size());
      augmented.insert(augmented.end(), data.train.interactions.begin(),
                       data.train.interactions.end());
      augmented.insert(augmented.end(), labels.begin(), labels.end());
      run_member_epoch(j, epoch, augmented);
    }
  }
  return ensemble;
}

namespace detail {

inline double truncated_normal(Rng& rng, double sigma, double cap) {
  if (sigma == 0.0 || cap <= 0.0) return 0.0;
  std::normal_distribution<double> dist(0.0, sigma);
  for (;;) {
    double x = dist(rng);
    if (x >= -cap && x <= cap) return x;
  }
}

// Delta = epsilon * g / ||g|| from the unperturbed training gradient.
class AtPerturber final : public StepPerturber {
 public:
  explicit AtPerturber(double epsilon, std::vector<double>* trace = nullptr)
      : epsilon_(epsilon), trace_(trace) {}

  bool wants_gradient() const override { return true; }

  void make_delta(const FactorModel&, const FactorGrad* grad,
                  FactorGrad& delta) override {
    double norm = std::sqrt(grad->squared_norm());
    if (norm == 0.0 || epsilon_ == 0.0) {
      delta.set_zero();  // zero-gradient step: skip the perturbation
      if (trace_) trace_->push_back(0.0);
      return;
    }
    double scale = epsilon_ / norm;
    delta.users = scale * grad->users;
    delta.items = scale * grad->items;
    if (trace_) trace_->push_back(std::sqrt(delta.squared_norm()));
  }

 private:
  double epsilon_;
  std::vector<double>* trace_;
};

// I.i.d. truncated-normal parameter noise ahead of each gradient step.
class RatPerturber final : public StepPerturber {
 public:
  RatPerturber(double sigma, double cap, std::uint64_t seed,
               std::vector<double>* trace = nullptr)
      : sigma_(sigma), cap_(cap), rng_(derive_seed(seed, seed_tag::kNoise)),
        trace_(trace) {}

  bool wants_gradient() const override { return false; }

  void make_delta(const FactorModel&, const FactorGrad*,
                  FactorGrad& delta) override {
    if (sigma_ == 0.0) {
      delta.set_zero();
      if (trace_) trace_->push_back(0.0);
      return;
    }
    for (Eigen::Index k = 0; k < delta.users.size(); ++k) {
      delta.users.data()[k] = truncated_normal(rng_, sigma_, cap_);
    }
    for (Eigen::Index k = 0; k < delta.items.size(); ++k) {
      delta.items.data()[k] = truncated_normal(rng_, sigma_, cap_);
    }
    if (trace_) trace_->push_back(std::sqrt(delta.squared_norm()));
  }

 private:
  double sigma_;
  double cap_;
  Rng rng_;
  std::vector<double>* trace_;
};

}  // namespace detail

inline constexpr double kMaxPerturbation = 0.03;

struct AdvTrace {
  std::vector<double> delta_norms;  // one entry per optimizer step
};

// Adversarial training: each step evaluates the training gradient at
// theta + epsilon * g/||g|| and updates theta with it.
inline TrainResult adversarial_train(const SplitSet& data,
                                     const TrainConfig& cfg, double epsilon,
                                     AdvTrace* trace = nullptr) {
  if (epsilon < 0.0 || epsilon > kMaxPerturbation) {
    throw std::invalid_argument("adversarial_train: epsilon must be in [0, " +
                                std::to_string(kMaxPerturbation) + "]");
  }
  detail::AtPerturber perturber(epsilon, trace ? &trace->delta_norms : nullptr);
  FactorModel model =
      init_model(data.train.n_users, data.train.n_items, cfg, cfg.seed);
  return train(std::move(model), data.train.interactions,
               data.validation.interactions, cfg, nullptr, &perturber);
}

// Random adversarial training: i.i.d. truncated-normal(0, sigma) noise,
// truncated to [-cap, cap], is added to the factors before each gradient
// step. The noise stream is independent of the batch shuffles, so sigma = 0
// reproduces plain training exactly.
inline TrainResult random_adversarial_train(const SplitSet& data,
                                            const TrainConfig& cfg,
                                            double sigma, double cap,
                                            AdvTrace* trace = nullptr) {
  if (sigma < 0.0) {
    throw std::invalid_argument("random_adversarial_train: sigma must be >= 0");
  }
  if (cap < 0.0 || cap > kMaxPerturbation) {
    throw std::invalid_argument("random_adversarial_train: cap must be in [0, " +
                                std::to_string(kMaxPerturbation) + "]");
  }
  detail::RatPerturber perturber(sigma, cap, cfg.seed,
                                 trace ? &trace->delta_norms : nullptr);
  FactorModel model =
      init_model(data.train.n_users, data.train.n_items, cfg, cfg.seed);
  return train(std::move(model), data.train.interactions,
               data.validation.interactions, cfg, nullptr, &perturber);
}

}  // namespace recshield
