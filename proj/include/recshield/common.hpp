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

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace recshield {

inline constexpr const char* kVersion = "0.1.0";

// Factor matrices are row-major so per-user/per-item rows are contiguous.
using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// All randomness flows through explicitly seeded engines. A fixed seed gives
// bit-identical results run-to-run on the same build.
using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream seeds derived from a base seed and a stream tag, so
// unrelated consumers never share an engine state.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  return splitmix64(base ^ splitmix64(tag));
}
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag,
                                 std::uint64_t sub) {
  return derive_seed(derive_seed(base, tag), sub);
}

namespace seed_tag {
inline constexpr std::uint64_t kSplit = 0x01;
inline constexpr std::uint64_t kSample = 0x02;
inline constexpr std::uint64_t kInitModel = 0x03;
inline constexpr std::uint64_t kShuffle = 0x04;
inline constexpr std::uint64_t kFakeInit = 0x05;
inline constexpr std::uint64_t kAttackModel = 0x06;
inline constexpr std::uint64_t kPseudoSelect = 0x07;
inline constexpr std::uint64_t kCandidates = 0x08;
inline constexpr std::uint64_t kNoise = 0x09;
inline constexpr std::uint64_t kTargets = 0x0a;
inline constexpr std::uint64_t kVictim = 0x0b;
inline constexpr std::uint64_t kKnowledge = 0x0c;
inline constexpr std::uint64_t kRatings = 0x0d;
inline constexpr std::uint64_t kTcdMember = 0x0e;
inline constexpr std::uint64_t kPga = 0x0f;
}  // namespace seed_tag

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thrown when a training loss turns non-finite; the message names the epoch
// (and the ensemble member, where applicable).
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace recshield
