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
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "recshield/common.hpp"
#include "recshield/defense.hpp"
#include "recshield/model.hpp"

namespace recshield {

// Model checkpoint layout (little-endian, stable across versions):
//   bytes 0..3   magic "RSCK"
//   uint32       format version (1)
//   uint64       metadata length in bytes
//   ...          metadata, UTF-8 JSON (dims, hyperparameters, free labels)
//   int64 x2     user matrix rows, cols; then rows*cols doubles, row-major
//   int64 x2     item matrix rows, cols; then rows*cols doubles, row-major

inline constexpr char kCheckpointMagic[4] = {'R', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  FactorModel model;
  nlohmann::json meta;
};

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

inline void write_matrix(std::ostream& os, const Matrix& m) {
  write_pod<std::int64_t>(os, m.rows());
  write_pod<std::int64_t>(os, m.cols());
  os.write(reinterpret_cast<const char*>(m.data()),
           static_cast<std::streamsize>(sizeof(double) * m.size()));
}

inline Matrix read_matrix(std::istream& is) {
  std::int64_t rows = 0, cols = 0;
  read_pod(is, rows);
  read_pod(is, cols);
  if (!is || rows < 0 || cols < 0 || rows * cols > (1LL << 32)) {
    throw IoError("checkpoint: corrupt matrix header");
  }
  Matrix m(rows, cols);
  is.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!is) throw IoError("checkpoint: truncated matrix payload");
  return m;
}

}  // namespace detail

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"d", c.d},
          {"batch_size", c.batch_size},
          {"l2_reg", c.l2_reg},
          {"epochs", c.epochs},
          {"pretrain_epochs", c.pretrain_epochs},
          {"learning_rate", c.learning_rate},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"seed", c.seed}};
}

inline void save_checkpoint(const std::string& path, const FactorModel& model,
                            nlohmann::json meta = {}) {
  meta["n_user_rows"] = model.user_rows();
  meta["n_items"] = model.n_items();
  meta["d"] = model.dim();
  meta["clamp_floor"] = model.clamp_floor;
  meta["library_version"] = kVersion;
  std::string blob = meta.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint: " + path);
  os.write(kCheckpointMagic, 4);
  detail::write_pod(os, kCheckpointVersion);
  detail::write_pod<std::uint64_t>(os, blob.size());
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  detail::write_matrix(os, model.user_factors);
  detail::write_matrix(os, model.item_factors);
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kCheckpointMagic, 4)) {
    throw IoError("not a recshield checkpoint: " + path);
  }
  std::uint32_t version = 0;
  detail::read_pod(is, version);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version in " + path);
  }
  std::uint64_t meta_len = 0;
  detail::read_pod(is, meta_len);
  std::string blob(meta_len, '\0');
  is.read(blob.data(), static_cast<std::streamsize>(meta_len));
  if (!is) throw IoError("checkpoint: truncated metadata");

  Checkpoint out;
  out.meta = nlohmann::json::parse(blob);
  out.model.user_factors = detail::read_matrix(is);
  out.model.item_factors = detail::read_matrix(is);
  out.model.clamp_floor = out.meta.value("clamp_floor", kClampFloor);
  return out;
}

// Ensemble checkpoint: three member files plus a JSON manifest.
inline void save_ensemble(const std::string& manifest_path,
                          const std::string& member_prefix,
                          const TcdEnsemble& ensemble,
                          nlohmann::json meta = {}) {
  nlohmann::json manifest;
  manifest["kind"] = "tcd_ensemble";
  manifest["designated"] = ensemble.designated;
  manifest["library_version"] = kVersion;
  manifest["config"] = std::move(meta);
  for (int j = 0; j < 3; ++j) {
    std::string member_path = member_prefix + std::to_string(j) + ".ckpt";
    save_checkpoint(member_path, ensemble.models[j],
                    {{"kind", "tcd_member"}, {"member", j}});
    manifest["members"].push_back(member_path);
  }
  std::ofstream os(manifest_path);
  if (!os) throw IoError("cannot write manifest: " + manifest_path);
  os << manifest.dump(2) << "\n";
}

inline TcdEnsemble load_ensemble(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open manifest: " + manifest_path);
  nlohmann::json manifest = nlohmann::json::parse(is);
  if (manifest.value("kind", "") != "tcd_ensemble") {
    throw IoError("not an ensemble manifest: " + manifest_path);
  }
  TcdEnsemble out;
  out.designated = manifest.value("designated", 0);
  auto members = manifest.at("members");
  if (members.size() != 3) throw IoError("manifest must list three members");
  for (int j = 0; j < 3; ++j) {
    out.models[j] = load_checkpoint(members[j].get<std::string>()).model;
  }
  return out;
}

}  // namespace recshield
