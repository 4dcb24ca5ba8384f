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
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "recshield/common.hpp"
#include "recshield/projection.hpp"

namespace recshield {

struct Interaction {
  int user = 0;
  int item = 0;
  double rating = 0.0;  // one of kRatingLevels

  friend bool operator==(const Interaction& a, const Interaction& b) {
    return a.user == b.user && a.item == b.item && a.rating == b.rating;
  }
};

inline bool by_user_item(const Interaction& a, const Interaction& b) {
  return a.user != b.user ? a.user < b.user : a.item < b.item;
}

enum class DatasetFormat { kMl100k, kMl1m, kFilmTrust };

inline const char* to_string(DatasetFormat f) {
  switch (f) {
    case DatasetFormat::kMl100k: return "ml100k";
    case DatasetFormat::kMl1m: return "ml1m";
    case DatasetFormat::kFilmTrust: return "filmtrust";
  }
  return "?";
}

inline DatasetFormat parse_format(const std::string& name) {
  if (name == "ml100k") return DatasetFormat::kMl100k;
  if (name == "ml1m") return DatasetFormat::kMl1m;
  if (name == "filmtrust") return DatasetFormat::kFilmTrust;
  throw ConfigError("unknown dataset format: " + name);
}

// Sparse collection of (user, item, normalized rating) triples over a dense
// index space, plus the raw-id -> dense-index maps that created it. Splits
// and knowledge samples preserve (n_users, n_items) so every derived set
// shares coordinates with its source.
struct InteractionSet {
  std::vector<Interaction> interactions;
  int n_users = 0;
  int n_items = 0;
  std::unordered_map<long long, int> user_id_map;
  std::unordered_map<long long, int> item_id_map;

  std::size_t size() const { return interactions.size(); }
  bool empty() const { return interactions.empty(); }

  // Same dims/maps, no interactions.
  InteractionSet like() const {
    InteractionSet out;
    out.n_users = n_users;
    out.n_items = n_items;
    out.user_id_map = user_id_map;
    out.item_id_map = item_id_map;
    return out;
  }
};

struct SplitSet {
  InteractionSet train;
  InteractionSet validation;
  InteractionSet test;  // exactly one interaction per user
};

namespace detail {

struct RawRecord {
  long long user;
  long long item;
  double rating;
};

inline bool parse_fields(const std::string& line, char sep, bool collapse_sep,
                         std::array<std::string, 4>& out, int& count) {
  count = 0;
  std::size_t pos = 0;
  while (pos <= line.size() && count < 4) {
    std::size_t next = line.find(sep, pos);
    if (next == std::string::npos) next = line.size();
    if (!(collapse_sep && next == pos)) {
      out[count++] = line.substr(pos, next - pos);
    }
    pos = next + 1;
    if (collapse_sep) {
      while (pos < line.size() && line[pos] == sep) ++pos;
    }
  }
  return count >= 3;
}

inline bool parse_ml1m_fields(const std::string& line,
                              std::array<std::string, 4>& out, int& count) {
  count = 0;
  std::size_t pos = 0;
  while (pos <= line.size() && count < 4) {
    std::size_t next = line.find("::", pos);
    if (next == std::string::npos) next = line.size();
    out[count++] = line.substr(pos, next - pos);
    pos = next + 2;
  }
  return count >= 3;
}

inline long long to_id(const std::string& s, const char* what, int line_no) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) {
    throw ParseError(std::string("line ") + std::to_string(line_no) +
                     ": malformed " + what + " '" + s + "'");
  }
  return v;
}

inline double to_rating(const std::string& s, int line_no) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty() || !std::isfinite(v)) {
    throw ParseError("line " + std::to_string(line_no) +
                     ": malformed rating '" + s + "'");
  }
  if (v <= 0.0 || v > 5.0) {
    throw ParseError("line " + std::to_string(line_no) +
                     ": rating out of range: " + s);
  }
  return v;
}

}  // namespace detail

// Loads a rating file, normalizes raw ratings onto the five discrete levels
// (r/5, snapped to the nearest level for FilmTrust's half-star scale), keeps
// the last occurrence of duplicate (user, item) pairs, and for FilmTrust
// drops users with fewer than 15 ratings before indexing. Dense indices are
// assigned in ascending raw-id order.
inline InteractionSet load_dataset(const std::string& path,
                                   DatasetFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);

  std::vector<detail::RawRecord> records;
  std::unordered_map<long long, std::unordered_map<long long, std::size_t>>
      seen;  // user -> item -> index into records (last-write-wins)
  std::string line;
  int line_no = 0;
  std::array<std::string, 4> fields;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    int count = 0;
    bool ok = false;
    switch (format) {
      case DatasetFormat::kMl100k:
        ok = detail::parse_fields(line, '\t', false, fields, count);
        break;
      case DatasetFormat::kMl1m:
        ok = detail::parse_ml1m_fields(line, fields, count);
        break;
      case DatasetFormat::kFilmTrust:
        ok = detail::parse_fields(line, ' ', true, fields, count);
        break;
    }
    if (!ok) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": expected at least 3 fields, got '" + line + "'");
    }
    detail::RawRecord rec;
    rec.user = detail::to_id(fields[0], "user id", line_no);
    rec.item = detail::to_id(fields[1], "item id", line_no);
    rec.rating = detail::to_rating(fields[2], line_no);
    auto& per_user = seen[rec.user];
    auto it = per_user.find(rec.item);
    if (it != per_user.end()) {
      records[it->second].rating = rec.rating;  // keep last occurrence
    } else {
      per_user.emplace(rec.item, records.size());
      records.push_back(rec);
    }
  }

  if (format == DatasetFormat::kFilmTrust) {
    std::unordered_map<long long, int> counts;
    for (const auto& r : records) ++counts[r.user];
    std::erase_if(records, [&](const detail::RawRecord& r) {
      return counts[r.user] < 15;
    });
  }
  if (records.empty()) {
    throw DatasetError("dataset is empty after parsing/filtering: " + path);
  }

  std::vector<long long> user_ids, item_ids;
  user_ids.reserve(records.size());
  for (const auto& r : records) {
    user_ids.push_back(r.user);
    item_ids.push_back(r.item);
  }
  auto dedup_sort = [](std::vector<long long>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  };
  dedup_sort(user_ids);
  dedup_sort(item_ids);

  InteractionSet out;
  out.n_users = static_cast<int>(user_ids.size());
  out.n_items = static_cast<int>(item_ids.size());
  for (int i = 0; i < out.n_users; ++i) out.user_id_map[user_ids[i]] = i;
  for (int i = 0; i < out.n_items; ++i) out.item_id_map[item_ids[i]] = i;
  out.interactions.reserve(records.size());
  for (const auto& r : records) {
    out.interactions.push_back({out.user_id_map[r.user],
                                out.item_id_map[r.item],
                                project(normalize_rating(r.rating))});
  }
  std::sort(out.interactions.begin(), out.interactions.end(), by_user_item);
  return out;
}

// Leave-one-out split: one uniformly chosen interaction per user goes to
// test; the rest are shuffled and divided 9:1 into train/validation.
// A user with a single interaction contributes only its test sample.
inline SplitSet split(const InteractionSet& data, std::uint64_t seed) {
  if (data.empty()) throw DatasetError("split: empty dataset");
  std::vector<std::vector<std::size_t>> per_user(data.n_users);
  for (std::size_t idx = 0; idx < data.interactions.size(); ++idx) {
    per_user[data.interactions[idx].user].push_back(idx);
  }

  Rng rng(derive_seed(seed, seed_tag::kSplit));
  std::vector<char> is_test(data.interactions.size(), 0);
  for (int u = 0; u < data.n_users; ++u) {
    if (per_user[u].empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, per_user[u].size() - 1);
    is_test[per_user[u][pick(rng)]] = 1;
  }

  std::vector<std::size_t> rest;
  rest.reserve(data.interactions.size());
  for (std::size_t idx = 0; idx < data.interactions.size(); ++idx) {
    if (!is_test[idx]) rest.push_back(idx);
  }
  std::shuffle(rest.begin(), rest.end(), rng);
  std::size_t n_val = rest.size() / 10;

  SplitSet out{data.like(), data.like(), data.like()};
  for (std::size_t idx = 0; idx < data.interactions.size(); ++idx) {
    if (is_test[idx]) out.test.interactions.push_back(data.interactions[idx]);
  }
  for (std::size_t i = 0; i < rest.size(); ++i) {
    auto& dst = i < n_val ? out.validation : out.train;
    dst.interactions.push_back(data.interactions[rest[i]]);
  }
  std::sort(out.train.interactions.begin(), out.train.interactions.end(),
            by_user_item);
  std::sort(out.validation.interactions.begin(),
            out.validation.interactions.end(), by_user_item);
  std::sort(out.test.interactions.begin(), out.test.interactions.end(),
            by_user_item);
  return out;
}

// Uniform sample without replacement of floor(fraction * N) interactions;
// the index space is preserved so a surrogate trained on the sample shares
// coordinates with the victim.
inline InteractionSet sample_knowledge(const InteractionSet& data,
                                       double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("sample_knowledge: fraction must be in (0,1]");
  }
  std::size_t keep = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(data.size())));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, seed_tag::kSample));
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(keep);
  std::sort(order.begin(), order.end());

  InteractionSet out = data.like();
  out.interactions.reserve(keep);
  for (std::size_t idx : order) out.interactions.push_back(data.interactions[idx]);
  return out;
}

// Empirical rating statistics. Items with no observed ratings fall back to
// the global mean/std. Standard deviations are population deviations.
struct RatingStats {
  double global_mean = 0.0;
  double global_std = 0.0;
  std::vector<double> per_item_mean;
  std::vector<double> per_item_std;
  std::vector<int> per_user_count;
  std::array<long long, 5> level_counts{};  // histogram over kRatingLevels

  double mean_user_count() const {
    long long total = 0;
    for (int c : per_user_count) total += c;
    return per_user_count.empty()
               ? 0.0
               : static_cast<double>(total) / per_user_count.size();
  }
};

inline RatingStats rating_stats(const InteractionSet& data) {
  if (data.empty()) throw DatasetError("rating_stats: empty dataset");
  RatingStats s;
  s.per_user_count.assign(data.n_users, 0);
  std::vector<double> item_sum(data.n_items, 0.0), item_sq(data.n_items, 0.0);
  std::vector<long long> item_count(data.n_items, 0);
  double sum = 0.0, sq = 0.0;
  for (const auto& x : data.interactions) {
    sum += x.rating;
    sq += x.rating * x.rating;
    item_sum[x.item] += x.rating;
    item_sq[x.item] += x.rating * x.rating;
    ++item_count[x.item];
    ++s.per_user_count[x.user];
    ++s.level_counts[rating_level_index(x.rating)];
  }
  double n = static_cast<double>(data.size());
  s.global_mean = sum / n;
  s.global_std = std::sqrt(std::max(0.0, sq / n - s.global_mean * s.global_mean));
  s.per_item_mean.assign(data.n_items, s.global_mean);
  s.per_item_std.assign(data.n_items, s.global_std);
  for (int i = 0; i < data.n_items; ++i) {
    if (item_count[i] == 0) continue;
    double m = item_sum[i] / item_count[i];
    s.per_item_mean[i] = m;
    s.per_item_std[i] =
        std::sqrt(std::max(0.0, item_sq[i] / item_count[i] - m * m));
  }
  return s;
}

// Per-user sorted item lists for exclusion and membership tests.
class ObservedSets {
 public:
  ObservedSets() = default;
  explicit ObservedSets(const InteractionSet& data)
      : items_(data.n_users) {
    for (const auto& x : data.interactions) items_[x.user].push_back(x.item);
    for (int u = 0; u < data.n_users; ++u) {
      std::sort(items_[u].begin(), items_[u].end());
      if (!items_[u].empty()) users_with_items_.push_back(u);
    }
  }

  int n_users() const { return static_cast<int>(items_.size()); }
  std::span<const int> items_of(int u) const { return items_[u]; }
  bool contains(int u, int i) const {
    return std::binary_search(items_[u].begin(), items_[u].end(), i);
  }
  const std::vector<int>& users_with_items() const {
    return users_with_items_;
  }

 private:
  std::vector<std::vector<int>> items_;
  std::vector<int> users_with_items_;
};

}  // namespace recshield
