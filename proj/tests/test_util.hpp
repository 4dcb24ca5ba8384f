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
//
// Shared helpers for the test suites. The "naive_*" functions are
// independent scalar-loop oracles: they deliberately avoid the library's
// code paths (no Eigen products, no partial sorts) so the main
// implementations can be checked against exhaustive enumeration.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "recshield/dataset.hpp"
#include "recshield/model.hpp"

namespace testutil {

using recshield::FactorModel;
using recshield::Interaction;
using recshield::InteractionSet;

inline std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "recshield_tests";
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string write_temp_file(const std::string& name,
                                   const std::string& contents) {
  auto path = temp_dir() / name;
  std::ofstream out(path);
  out << contents;
  return path.string();
}

// Synthetic interaction set: every user rates a seeded random subset of
// items with level ratings biased by item popularity.
inline InteractionSet synth_dataset(int n_users, int n_items,
                                    int ratings_per_user, std::uint64_t seed) {
  InteractionSet data;
  data.n_users = n_users;
  data.n_items = n_items;
  for (int i = 0; i < n_users; ++i) data.user_id_map[i + 1] = i;
  for (int i = 0; i < n_items; ++i) data.item_id_map[i + 1] = i;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> level(0, 4);
  std::vector<int> items(n_items);
  std::iota(items.begin(), items.end(), 0);
  for (int u = 0; u < n_users; ++u) {
    std::shuffle(items.begin(), items.end(), rng);
    int count = std::min(ratings_per_user, n_items);
    std::vector<int> chosen(items.begin(), items.begin() + count);
    std::sort(chosen.begin(), chosen.end());
    for (int i : chosen) {
      int lv = std::min(4, level(rng) / 2 + level(rng) / 2 + 1);
      data.interactions.push_back({u, i, recshield::kRatingLevels[lv]});
    }
  }
  return data;
}

// Writes a dataset in ml100k format (tab separated, 1-based raw ids,
// ratings de-normalized back to 1..5 stars).
inline std::string write_ml100k_file(const InteractionSet& data,
                                     const std::string& name) {
  std::string contents;
  char buf[64];
  for (const auto& x : data.interactions) {
    std::snprintf(buf, sizeof(buf), "%d\t%d\t%d\t0\n", x.user + 1, x.item + 1,
                  static_cast<int>(std::llround(x.rating * 5.0)));
    contents += buf;
  }
  return write_temp_file(name, contents);
}

// Small model with entries in a controlled band so that dot products stay
// strictly inside the clamp's active range.
inline FactorModel random_model(int n_users, int n_items, int d,
                                std::uint64_t seed, double scale = 0.25) {
  FactorModel m(n_users, n_items, d);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.05, scale);
  for (Eigen::Index r = 0; r < m.user_factors.rows(); ++r)
    for (Eigen::Index c = 0; c < m.user_factors.cols(); ++c)
      m.user_factors(r, c) = dist(rng);
  for (Eigen::Index r = 0; r < m.item_factors.rows(); ++r)
    for (Eigen::Index c = 0; c < m.item_factors.cols(); ++c)
      m.item_factors(r, c) = dist(rng);
  return m;
}

// --- independent oracles ----------------------------------------------------

inline double naive_predict(const FactorModel& m, int u, int i) {
  double dot = 0.0;
  for (int k = 0; k < m.dim(); ++k) {
    dot += m.user_factors(u, k) * m.item_factors(i, k);
  }
  if (dot < m.clamp_floor) dot = m.clamp_floor;
  if (dot > 1.0) dot = 1.0;
  return dot;
}

inline double naive_mse(const FactorModel& m,
                        const std::vector<Interaction>& batch, double l2) {
  double total = 0.0;
  for (const auto& x : batch) {
    double err = naive_predict(m, x.user, x.item) - x.rating;
    double reg = 0.0;
    for (int k = 0; k < m.dim(); ++k) {
      reg += m.user_factors(x.user, k) * m.user_factors(x.user, k);
      reg += m.item_factors(x.item, k) * m.item_factors(x.item, k);
    }
    total += err * err + l2 * reg;
  }
  return total / static_cast<double>(batch.size());
}

// Full-sort top-k with the library's tie rule (score desc, index asc).
inline std::vector<int> naive_topk(const FactorModel& m, int u, int k,
                                   const std::vector<int>& exclude) {
  std::vector<std::pair<double, int>> scored;
  for (int i = 0; i < m.n_items(); ++i) {
    if (std::find(exclude.begin(), exclude.end(), i) != exclude.end()) continue;
    scored.emplace_back(naive_predict(m, u, i), i);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<int> out;
  for (int j = 0; j < k && j < static_cast<int>(scored.size()); ++j) {
    out.push_back(scored[j].second);
  }
  return out;
}

// Exhaustive evaluation of the attack loss: recompute each user's list by
// full sort, scan for the minimum candidate, apply the formula directly.
inline double naive_attack_loss(const FactorModel& m,
                                const std::vector<int>& users,
                                const std::vector<std::vector<int>>& observed,
                                int t, double kappa, int k) {
  double loss = 0.0;
  for (int u : users) {
    auto list = naive_topk(m, u, k, observed[u]);
    double min_h = std::numeric_limits<double>::infinity();
    for (int i : list) {
      if (i == t) continue;
      min_h = std::min(min_h, naive_predict(m, u, i));
    }
    if (!std::isfinite(min_h)) continue;
    double expr = std::log(min_h) - std::log(naive_predict(m, u, t));
    loss += std::max(expr, -kappa);
  }
  return loss;
}

// 1-based rank of t among unobserved items by exhaustive comparison.
inline int naive_rank(const FactorModel& m, int u,
                      const std::vector<int>& observed, int t) {
  double st = naive_predict(m, u, t);
  int rank = 1;
  for (int i = 0; i < m.n_items(); ++i) {
    if (i == t) continue;
    if (std::find(observed.begin(), observed.end(), i) != observed.end())
      continue;
    double s = naive_predict(m, u, i);
    if (s > st || (s == st && i < t)) ++rank;
  }
  return rank;
}

// Central finite difference of `f` with respect to one matrix entry.
template <typename F>
double finite_diff(recshield::Matrix& mat, Eigen::Index r, Eigen::Index c,
                   F&& f, double h = 1e-4) {
  double original = mat(r, c);
  mat(r, c) = original + h;
  double up = f();
  mat(r, c) = original - h;
  double down = f();
  mat(r, c) = original;
  return (up - down) / (2.0 * h);
}

inline double rel_err(double a, double b) {
  double denom = std::max({std::abs(a), std::abs(b), 1e-10});
  return std::abs(a - b) / denom;
}

}  // namespace testutil
