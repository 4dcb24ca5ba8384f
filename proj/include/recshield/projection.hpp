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
#include <cmath>
#include <stdexcept>

namespace recshield {

// The five admissible normalized rating levels, i.e. raw stars {1..5} scaled
// by 1/5. Every stored rating, fake-profile rating and pseudo-label is one of
// these values.
inline constexpr std::array<double, 5> kRatingLevels = {0.2, 0.4, 0.6, 0.8,
                                                        1.0};
inline constexpr double kMinRating = 0.2;
inline constexpr double kMaxRating = 1.0;

inline double normalize_rating(double raw) { return raw / 5.0; }
inline double denormalize_rating(double rating) { return rating * 5.0; }

// Projection onto the discrete rating levels: nearest level, exact midpoints
// round up, values outside [0.2, 1.0] clamp to the nearest endpoint.
inline double project(double x) {
  if (!std::isfinite(x)) {
    throw std::invalid_argument("project: non-finite rating");
  }
  double steps = std::round(x * 5.0);  // half-away-from-zero = round up here
  if (steps < 1.0) steps = 1.0;
  if (steps > 5.0) steps = 5.0;
  return steps / 5.0;
}

inline bool is_rating_level(double x) {
  for (double level : kRatingLevels) {
    if (x == level) return true;
  }
  return false;
}

// Index of the level nearest to `x` in kRatingLevels.
inline int rating_level_index(double x) {
  int steps = static_cast<int>(std::lround(project(x) * 5.0));
  return steps - 1;
}

}  // namespace recshield
