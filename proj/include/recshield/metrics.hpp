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
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "recshield/common.hpp"
#include "recshield/dataset.hpp"
#include "recshield/model.hpp"

namespace recshield {

inline constexpr int kDefaultHrK = 50;

// Fraction of test users whose held-out item appears in their top-k list
// over items unobserved in training. Fake user rows never enter: only users
// present in the test split are evaluated.
inline double hr_test(const FactorModel& model, const ObservedSets& observed,
                      const InteractionSet& test, int k = kDefaultHrK) {
  if (test.empty()) throw DatasetError("hr_test: empty test split");
  const auto& entries = test.interactions;
  std::vector<char> hit(entries.size(), 0);
#pragma omp parallel for schedule(static)
  for (std::size_t idx = 0; idx < entries.size(); ++idx) {
    int u = entries[idx].user;
    auto excl = observed.items_of(u);
    int avail = model.n_items() - static_cast<int>(excl.size());
    auto list = recommend_topk(model, u, std::min(k, avail), excl);
    hit[idx] =
        std::find(list.begin(), list.end(), entries[idx].item) != list.end();
  }
  long hits = std::count(hit.begin(), hit.end(), 1);
  return static_cast<double>(hits) / static_cast<double>(entries.size());
}

inline double hr_test(const FactorModel& model, const InteractionSet& train,
                      const InteractionSet& test, int k = kDefaultHrK) {
  return hr_test(model, ObservedSets(train), test, k);
}

inline double hr_test(const FactorModel& model, const SplitSet& data,
                      int k = kDefaultHrK) {
  return hr_test(model, data.train, data.test, k);
}

// Fraction of real users whose top-k list (over their unobserved items)
// contains the target. A user who already rated the target cannot hit.
inline double hr_target(const FactorModel& model, const ObservedSets& observed,
                        int n_real_users, int target, int k = kDefaultHrK) {
  if (n_real_users <= 0) throw DatasetError("hr_target: no users");
  if (target < 0 || target >= model.n_items()) {
    throw std::out_of_range("hr_target: target out of range");
  }
  std::vector<char> hit(n_real_users, 0);
#pragma omp parallel for schedule(static)
  for (int u = 0; u < n_real_users; ++u) {
    auto excl = observed.items_of(u);
    if (observed.contains(u, target)) continue;
    int avail = model.n_items() - static_cast<int>(excl.size());
    auto list = recommend_topk(model, u, std::min(k, avail), excl);
    hit[u] = std::find(list.begin(), list.end(), target) != list.end();
  }
  long hits = std::count(hit.begin(), hit.end(), 1);
  return static_cast<double>(hits) / static_cast<double>(n_real_users);
}

inline double hr_target(const FactorModel& model, const InteractionSet& train,
                        int target, int k = kDefaultHrK) {
  return hr_target(model, ObservedSets(train), train.n_users, target, k);
}

// RI = 1 - (HR_defense - HR_origin) / (HR_attack - HR_origin); undefined
// when the attack had no measurable effect.
inline std::optional<double> robustness_improvement(double hr_origin,
                                                    double hr_attack,
                                                    double hr_defense) {
  if (hr_attack == hr_origin) return std::nullopt;
  return 1.0 - (hr_defense - hr_origin) / (hr_attack - hr_origin);
}

namespace detail {

// 1-based rank of `target` among the user's unobserved items, ties broken
// toward lower item indices (matching recommend_topk ordering).
inline int rank_of(const FactorModel& model, int u,
                   std::span<const int> observed_items, int target) {
  Vector scores = model.user_scores(u);
  double st = scores[target];
  int rank = 1;
  std::size_t pos = 0;
  for (int i = 0; i < model.n_items(); ++i) {
    if (pos < observed_items.size() && observed_items[pos] == i) {
      ++pos;
      continue;
    }
    if (i == target) continue;
    if (scores[i] > st || (scores[i] == st && i < target)) ++rank;
  }
  return rank;
}

}  // namespace detail

struct RankShiftSample {
  int user;
  int shift;  // rank before - rank after; positive = promoted
};

// Per-user change of the target's rank between two models, over each user's
// unobserved items. Users who rated the target are skipped.
inline std::vector<RankShiftSample> rank_shift_samples(
    const FactorModel& before, const FactorModel& after,
    const ObservedSets& observed, int n_real_users, int target) {
  std::vector<int> eligible;
  for (int u = 0; u < n_real_users; ++u) {
    if (!observed.contains(u, target)) eligible.push_back(u);
  }
  std::vector<RankShiftSample> out(eligible.size());
#pragma omp parallel for schedule(static)
  for (std::size_t idx = 0; idx < eligible.size(); ++idx) {
    int u = eligible[idx];
    auto items = observed.items_of(u);
    out[idx] = {u, detail::rank_of(before, u, items, target) -
                       detail::rank_of(after, u, items, target)};
  }
  return out;
}

inline std::vector<int> rank_shift(const FactorModel& before,
                                   const FactorModel& after,
                                   const InteractionSet& train, int target) {
  auto samples = rank_shift_samples(before, after, ObservedSets(train),
                                    train.n_users, target);
  std::vector<int> shifts;
  shifts.reserve(samples.size());
  for (const auto& s : samples) shifts.push_back(s.shift);
  return shifts;
}

// One (seed, target) experiment cell.
struct CellReport {
  std::string dataset;
  std::string attack;
  std::string defense;
  std::string target_kind;
  int target_item = -1;
  std::uint64_t seed = 0;

  double hr_origin_test = 0.0;
  double hr_origin_target = 0.0;
  double hr_attack_target = 0.0;
  double hr_defense_target = 0.0;
  double hr_defense_test = 0.0;
  std::optional<double> ri;
  double mean_rank_shift = 0.0;
  std::vector<RankShiftSample> rank_shifts;

  bool failed = false;
  std::string error;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 when n < 2
  int n = 0;
};

namespace detail {

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  out.n = static_cast<int>(xs.size());
  if (xs.empty()) return out;
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / xs.size();
  if (xs.size() > 1) {
    double sq = 0.0;
    for (double x : xs) sq += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(sq / (xs.size() - 1));
  }
  return out;
}

}  // namespace detail

// Cross-seed aggregation; undefined RIs are excluded from the RI mean and
// counted.
struct AggregateReport {
  MeanStd hr_origin_test, hr_origin_target, hr_attack_target,
      hr_defense_target, hr_defense_test, ri, mean_rank_shift;
  int ri_excluded = 0;
  int failed_cells = 0;
};

inline AggregateReport aggregate(std::span<const CellReport> cells) {
  AggregateReport out;
  std::vector<double> ot, og, at, dg, dt, ri, rs;
  for (const auto& c : cells) {
    if (c.failed) {
      ++out.failed_cells;
      continue;
    }
    ot.push_back(c.hr_origin_test);
    og.push_back(c.hr_origin_target);
    at.push_back(c.hr_attack_target);
    dg.push_back(c.hr_defense_target);
    dt.push_back(c.hr_defense_test);
    rs.push_back(c.mean_rank_shift);
    if (c.ri.has_value()) {
      ri.push_back(*c.ri);
    } else {
      ++out.ri_excluded;
    }
  }
  out.hr_origin_test = detail::mean_std(ot);
  out.hr_origin_target = detail::mean_std(og);
  out.hr_attack_target = detail::mean_std(at);
  out.hr_defense_target = detail::mean_std(dg);
  out.hr_defense_test = detail::mean_std(dt);
  out.ri = detail::mean_std(ri);
  out.mean_rank_shift = detail::mean_std(rs);
  return out;
}

}  // namespace recshield
