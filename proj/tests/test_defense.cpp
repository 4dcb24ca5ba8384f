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

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "recshield/defense.hpp"
#include "test_util.hpp"

using namespace recshield;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.d = 4;
  cfg.batch_size = 32;
  cfg.epochs = 6;
  cfg.pretrain_epochs = 0;
  cfg.learning_rate = 0.05;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("unlabeled_pairs enumerates the complement of the training set") {
  InteractionSet data = testutil::synth_dataset(6, 9, 4, 12);
  ObservedSets obs(data);
  auto pairs = unlabeled_pairs(obs, 6, 9);
  REQUIRE(pairs.size() == 6 * 9 - data.size());
  REQUIRE(std::is_sorted(pairs.begin(), pairs.end()));
  for (const auto& [u, i] : pairs) {
    REQUIRE_FALSE(obs.contains(u, i));
  }
}

TEST_CASE("pseudo_labels_for emits exactly the pairwise agreements") {
  InteractionSet data = testutil::synth_dataset(8, 10, 4, 19);
  ObservedSets obs(data);
  auto candidates = unlabeled_pairs(obs, 8, 10);

  std::array<FactorModel, 3> models = {
      testutil::random_model(8, 10, 3, 1),
      testutil::random_model(8, 10, 3, 2),
      testutil::random_model(8, 10, 3, 2),  // members 1 and 2 identical
  };
  auto labels = pseudo_labels_for(0, models, candidates, 1.0, 7);
  REQUIRE(labels.size() == candidates.size());  // agreement by construction
  for (const auto& x : labels) {
    REQUIRE(is_rating_level(x.rating));
    REQUIRE_FALSE(obs.contains(x.user, x.item));
    REQUIRE(x.rating == project(models[1].predict(x.user, x.item)));
  }

  // Disjoint projected outputs produce no labels: one member is pinned at
  // the clamp floor (level 0.2), the other at 0.6.
  FactorModel low(8, 10, 1);
  low.user_factors.setZero();
  low.item_factors.setOnes();
  FactorModel mid(8, 10, 1);
  mid.user_factors.setConstant(0.6);
  mid.item_factors.setOnes();
  std::array<FactorModel, 3> disjoint = {testutil::random_model(8, 10, 1, 5),
                                         low, mid};
  REQUIRE(pseudo_labels_for(0, disjoint, candidates, 1.0, 7).empty());

  // ratio keeps exactly floor(ratio * emitted) labels, deterministically
  auto half = pseudo_labels_for(0, models, candidates, 0.5, 7);
  REQUIRE(half.size() == candidates.size() / 2);
  auto half_again = pseudo_labels_for(0, models, candidates, 0.5, 7);
  REQUIRE(half == half_again);
  REQUIRE(pseudo_labels_for(0, models, candidates, 0.0, 7).empty());
}

TEST_CASE("pseudo-label agreement is symmetric in the two voters") {
  InteractionSet data = testutil::synth_dataset(7, 9, 3, 23);
  ObservedSets obs(data);
  auto candidates = unlabeled_pairs(obs, 7, 9);
  std::array<FactorModel, 3> models = {
      testutil::random_model(7, 9, 3, 31),
      testutil::random_model(7, 9, 3, 32),
      testutil::random_model(7, 9, 3, 33),
  };
  std::array<FactorModel, 3> swapped = {models[0], models[2], models[1]};
  auto a = pseudo_labels_for(0, models, candidates, 1.0, 7);
  auto b = pseudo_labels_for(0, swapped, candidates, 1.0, 7);
  REQUIRE(a == b);
}

TEST_CASE("tcd_train with T = T_pre yields three plain models") {
  InteractionSet data = testutil::synth_dataset(15, 12, 6, 41);
  SplitSet parts = split(data, 2);
  TcdConfig cfg;
  cfg.base = tiny_config();
  cfg.pretrain_epochs = cfg.base.epochs;  // degenerate schedule
  cfg.seeds = {101, 102, 103};

  TcdEnsemble ensemble = tcd_train(parts, cfg);
  for (int j = 0; j < 3; ++j) {
    TrainConfig plain = cfg.base;
    plain.seed = cfg.seeds[j];
    TrainResult want = train(
        init_model(parts.train.n_users, parts.train.n_items, plain, plain.seed),
        parts.train.interactions, {}, plain);
    REQUIRE(ensemble.models[j].user_factors == want.model.user_factors);
    REQUIRE(ensemble.models[j].item_factors == want.model.item_factors);
  }
}

TEST_CASE("tcd_train co-trains deterministically") {
  InteractionSet data = testutil::synth_dataset(15, 12, 6, 43);
  SplitSet parts = split(data, 5);
  TcdConfig cfg;
  cfg.base = tiny_config();
  cfg.pretrain_epochs = 2;
  cfg.seeds = {7, 8, 9};

  TcdEnsemble a = tcd_train(parts, cfg);
  TcdEnsemble b = tcd_train(parts, cfg);
  for (int j = 0; j < 3; ++j) {
    REQUIRE(a.models[j].user_factors == b.models[j].user_factors);
    REQUIRE(a.models[j].item_factors == b.models[j].item_factors);
  }
  REQUIRE(&a.output() == &a.models[0]);

  // the candidate cap bounds the agreement test without changing semantics
  TcdConfig capped = cfg;
  capped.unlabeled_candidate_cap = 20;
  REQUIRE_NOTHROW(tcd_train(parts, capped));

  TcdConfig bad = cfg;
  bad.pretrain_epochs = cfg.base.epochs + 1;
  REQUIRE_THROWS_AS(tcd_train(parts, bad), ConfigError);
}

TEST_CASE("tcd_train names the diverging member") {
  InteractionSet data = testutil::synth_dataset(10, 8, 4, 47);
  SplitSet parts = split(data, 3);
  TcdConfig cfg;
  cfg.base = tiny_config();
  cfg.base.learning_rate = 1e155;
  cfg.pretrain_epochs = 1;
  try {
    tcd_train(parts, cfg);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    std::string msg = e.what();
    REQUIRE(msg.find("member") != std::string::npos);
    REQUIRE(msg.find("epoch") != std::string::npos);
  }
}

TEST_CASE("adversarial_train with zero epsilon equals plain training") {
  InteractionSet data = testutil::synth_dataset(15, 12, 6, 53);
  SplitSet parts = split(data, 9);
  TrainConfig cfg = tiny_config();

  TrainResult plain = train(
      init_model(parts.train.n_users, parts.train.n_items, cfg, cfg.seed),
      parts.train.interactions, parts.validation.interactions, cfg);
  TrainResult at = adversarial_train(parts, cfg, 0.0);
  REQUIRE(at.model.user_factors == plain.model.user_factors);
  REQUIRE(at.model.item_factors == plain.model.item_factors);
  REQUIRE(at.best_epoch == plain.best_epoch);
}

TEST_CASE("adversarial_train perturbs by exactly epsilon each step") {
  InteractionSet data = testutil::synth_dataset(15, 12, 6, 59);
  SplitSet parts = split(data, 13);
  TrainConfig cfg = tiny_config();
  AdvTrace trace;
  TrainResult at = adversarial_train(parts, cfg, 0.02, &trace);
  REQUIRE_FALSE(trace.delta_norms.empty());
  for (double norm : trace.delta_norms) {
    REQUIRE(norm == Catch::Approx(0.02).margin(1e-12));
  }
  // and it actually changes the trajectory
  TrainResult plain = train(
      init_model(parts.train.n_users, parts.train.n_items, cfg, cfg.seed),
      parts.train.interactions, parts.validation.interactions, cfg);
  REQUIRE(at.model.user_factors != plain.model.user_factors);

  REQUIRE_THROWS_AS(adversarial_train(parts, cfg, 0.05), std::invalid_argument);
  REQUIRE_THROWS_AS(adversarial_train(parts, cfg, -0.01), std::invalid_argument);
}

TEST_CASE("random_adversarial_train bounds and shapes its noise") {
  InteractionSet data = testutil::synth_dataset(15, 12, 6, 61);
  SplitSet parts = split(data, 17);
  TrainConfig cfg = tiny_config();

  TrainResult plain = train(
      init_model(parts.train.n_users, parts.train.n_items, cfg, cfg.seed),
      parts.train.interactions, parts.validation.interactions, cfg);
  TrainResult quiet = random_adversarial_train(parts, cfg, 0.0, 0.03);
  REQUIRE(quiet.model.user_factors == plain.model.user_factors);
  REQUIRE(quiet.model.item_factors == plain.model.item_factors);

  TrainResult noisy = random_adversarial_train(parts, cfg, 0.01, 0.03);
  REQUIRE(noisy.model.user_factors != plain.model.user_factors);

  REQUIRE_THROWS_AS(random_adversarial_train(parts, cfg, 0.01, 0.05),
                    std::invalid_argument);

  // truncation bounds and, for cap >> sigma, a nearly untruncated std
  Rng rng(99);
  double sum = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double x = detail::truncated_normal(rng, 0.01, 0.03);
    REQUIRE(x >= -0.03);
    REQUIRE(x <= 0.03);
    sum += x;
    sq += x * x;
  }
  double mean = sum / n;
  double std = std::sqrt(sq / n - mean * mean);
  REQUIRE(std == Catch::Approx(0.01).epsilon(0.05));

  Rng rng2(100);
  double extreme = 0.0;
  for (int i = 0; i < 1000; ++i) {
    extreme = std::max(std::abs(detail::truncated_normal(rng2, 0.5, 0.03)),
                       extreme);
  }
  REQUIRE(extreme <= 0.03);
}
