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
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "recshield/common.hpp"
#include "recshield/dataset.hpp"
#include "recshield/projection.hpp"

namespace recshield {

inline constexpr double kClampFloor = 1e-6;

struct TrainConfig {
  int d = 128;
  int batch_size = 2048;
  double l2_reg = 0.005;
  int epochs = 40;          // T
  int pretrain_epochs = 1;  // T_pre; epochs before an auxiliary loss kicks in
  double learning_rate = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 1;

  void validate() const {
    if (d <= 0 || batch_size <= 0 || learning_rate <= 0.0 || l2_reg < 0.0 ||
        epochs < 0 || pretrain_epochs < 0) {
      throw ConfigError("TrainConfig: fields must be positive");
    }
    if (pretrain_epochs > epochs) {
      throw ConfigError("TrainConfig: pretrain_epochs must not exceed epochs");
    }
  }
};

// Matrix-factorization predictor. User rows may extend past the real user
// count when fake profiles are injected; item rows always match the dataset.
// Predictions are dot products clamped to [clamp_floor, 1] so log h stays
// finite.
class FactorModel {
 public:
  FactorModel() = default;
  FactorModel(int n_user_rows, int n_items, int d)
      : user_factors(Matrix::Zero(n_user_rows, d)),
        item_factors(Matrix::Zero(n_items, d)) {}

  Matrix user_factors;
  Matrix item_factors;
  double clamp_floor = kClampFloor;

  int user_rows() const { return static_cast<int>(user_factors.rows()); }
  int n_items() const { return static_cast<int>(item_factors.rows()); }
  int dim() const { return static_cast<int>(item_factors.cols()); }

  double raw_score(int u, int i) const {
    return user_factors.row(u).dot(item_factors.row(i));
  }

  double clamp(double x) const {
    return std::min(1.0, std::max(clamp_floor, x));
  }

  double predict(int u, int i) const {
    if (u < 0 || u >= user_rows() || i < 0 || i >= n_items()) {
      throw std::out_of_range("predict: index out of range");
    }
    return clamp(raw_score(u, i));
  }

  // Clamped scores of one user against every item.
  Vector user_scores(int u) const {
    Vector s = item_factors * user_factors.row(u).transpose();
    return s.cwiseMax(clamp_floor).cwiseMin(1.0);
  }

  // Clamped score matrix for user rows [first, first+count) x all items.
  Matrix score_block(int first, int count) const {
    Matrix s = user_factors.middleRows(first, count) * item_factors.transpose();
    return s.cwiseMax(clamp_floor).cwiseMin(1.0);
  }
};

// Enforces the finite-factors invariant; training and pseudo-labeling call
// this so a blown-up model surfaces as a divergence, not as NaN downstream.
inline void check_finite(const FactorModel& m, const std::string& what) {
  if (!m.user_factors.allFinite() || !m.item_factors.allFinite()) {
    throw DivergenceError(what + ": non-finite factors");
  }
}

// Factors drawn i.i.d. from N(0, 1/d) so entries have scale 1/sqrt(d).
inline FactorModel init_model(int n_user_rows, int n_items,
                              const TrainConfig& config, std::uint64_t seed) {
  if (n_user_rows <= 0 || n_items <= 0 || config.d <= 0) {
    throw std::invalid_argument("init_model: dimensions must be positive");
  }
  FactorModel m(n_user_rows, n_items, config.d);
  Rng rng(derive_seed(seed, seed_tag::kInitModel));
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(config.d));
  for (Eigen::Index r = 0; r < m.user_factors.rows(); ++r)
    for (Eigen::Index c = 0; c < m.user_factors.cols(); ++c)
      m.user_factors(r, c) = dist(rng);
  for (Eigen::Index r = 0; r < m.item_factors.rows(); ++r)
    for (Eigen::Index c = 0; c < m.item_factors.cols(); ++c)
      m.item_factors(r, c) = dist(rng);
  return m;
}

struct FactorGrad {
  Matrix users;
  Matrix items;

  static FactorGrad like(const FactorModel& m) {
    FactorGrad g;
    g.users = Matrix::Zero(m.user_factors.rows(), m.user_factors.cols());
    g.items = Matrix::Zero(m.item_factors.rows(), m.item_factors.cols());
    return g;
  }
  void set_zero() {
    users.setZero();
    items.setZero();
  }
  double squared_norm() const {
    return users.squaredNorm() + items.squaredNorm();
  }
};

// Per-sample squared error plus L2 on the touched factor rows, averaged over
// the batch. This is the training loss minimized by the inner problem.
inline double mse_loss(const FactorModel& m, std::span<const Interaction> batch,
                       double l2_reg) {
  if (batch.empty()) throw std::invalid_argument("mse_loss: empty batch");
  double loss = 0.0;
  for (const auto& x : batch) {
    double err = m.predict(x.user, x.item) - x.rating;
    loss += err * err +
            l2_reg * (m.user_factors.row(x.user).squaredNorm() +
                      m.item_factors.row(x.item).squaredNorm());
  }
  return loss / static_cast<double>(batch.size());
}

// Accumulates d(mse_loss)/d(factors) into `grad` and returns the loss value.
// The clamp uses the zero-outside-active-range subgradient.
inline double accumulate_mse_gradient(const FactorModel& m,
                                      std::span<const Interaction> batch,
                                      double l2_reg, FactorGrad& grad) {
  if (batch.empty()) throw std::invalid_argument("mse gradient: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& x : batch) {
    double dot = m.raw_score(x.user, x.item);
    double pred = m.clamp(dot);
    double err = pred - x.rating;
    bool active = dot > m.clamp_floor && dot < 1.0;
    auto p = m.user_factors.row(x.user);
    auto q = m.item_factors.row(x.item);
    loss += (err * err + l2_reg * (p.squaredNorm() + q.squaredNorm())) * inv_b;
    if (active) {
      grad.users.row(x.user) += (2.0 * err * inv_b) * q;
      grad.items.row(x.item) += (2.0 * err * inv_b) * p;
    }
    grad.users.row(x.user) += (2.0 * l2_reg * inv_b) * p;
    grad.items.row(x.item) += (2.0 * l2_reg * inv_b) * q;
  }
  return loss;
}

// Plain (unregularized) mean squared error; used for validation snapshots.
inline double validation_mse(const FactorModel& m,
                             std::span<const Interaction> data) {
  if (data.empty()) throw std::invalid_argument("validation_mse: empty set");
  double loss = 0.0;
  for (const auto& x : data) {
    double err = m.predict(x.user, x.item) - x.rating;
    loss += err * err;
  }
  return loss / static_cast<double>(data.size());
}

struct AdamState {
  Matrix m_users, v_users, m_items, v_items;
  long step = 0;

  static AdamState like(const FactorModel& m) {
    AdamState s;
    s.m_users = Matrix::Zero(m.user_factors.rows(), m.user_factors.cols());
    s.v_users = s.m_users;
    s.m_items = Matrix::Zero(m.item_factors.rows(), m.item_factors.cols());
    s.v_items = s.m_items;
    return s;
  }
};

namespace detail {

inline void adam_apply(double* theta, double* mom, double* vel,
                       const double* grad, Eigen::Index n, double lr,
                       double b1, double b2, double eps, double bc1,
                       double bc2) {
#pragma omp parallel for schedule(static)
  for (Eigen::Index k = 0; k < n; ++k) {
    double g = grad[k];
    double mk = b1 * mom[k] + (1.0 - b1) * g;
    double vk = b2 * vel[k] + (1.0 - b2) * g * g;
    mom[k] = mk;
    vel[k] = vk;
    theta[k] -= lr * (mk / bc1) / (std::sqrt(vk / bc2) + eps);
  }
}

}  // namespace detail

// One dense Adam step over both factor matrices.
inline void adam_update(FactorModel& model, AdamState& state,
                        const FactorGrad& grad, const TrainConfig& cfg) {
  ++state.step;
  double bc1 = 1.0 - std::pow(cfg.adam_beta1, state.step);
  double bc2 = 1.0 - std::pow(cfg.adam_beta2, state.step);
  detail::adam_apply(model.user_factors.data(), state.m_users.data(),
                     state.v_users.data(), grad.users.data(),
                     model.user_factors.size(), cfg.learning_rate,
                     cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, bc1,
                     bc2);
  detail::adam_apply(model.item_factors.data(), state.m_items.data(),
                     state.v_items.data(), grad.items.data(),
                     model.item_factors.size(), cfg.learning_rate,
                     cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, bc1,
                     bc2);
}

// Auxiliary objective added to the training loss (the attack loss during
// joint attack/model training). epoch_begin may refresh cached structures
// such as per-user recommendation lists.
class AuxObjective {
 public:
  virtual ~AuxObjective() = default;
  virtual void epoch_begin(const FactorModel& model) = 0;
  // Adds the gradient at the model's current parameters; returns the loss.
  virtual double accumulate(const FactorModel& model,
                            FactorGrad& grad) const = 0;
};

// Per-step parameter perturbation hook (adversarial / random adversarial
// training). The gradient used for the Adam step is evaluated at
// theta + delta while theta itself stays untouched.
class StepPerturber {
 public:
  virtual ~StepPerturber() = default;
  // Whether make_delta needs the unperturbed gradient.
  virtual bool wants_gradient() const = 0;
  virtual void make_delta(const FactorModel& model,
                          const FactorGrad* unperturbed_grad,
                          FactorGrad& delta) = 0;
};

inline std::uint64_t epoch_shuffle_seed(const TrainConfig& cfg, int epoch) {
  return derive_seed(cfg.seed, seed_tag::kShuffle,
                     static_cast<std::uint64_t>(epoch));
}

struct EpochResult {
  double train_loss = 0.0;  // mean regularized squared error over the epoch
  double aux_loss = 0.0;    // mean auxiliary loss over batches (if any)
};

// One pass of mini-batch Adam over `data` in a freshly shuffled order.
// `aux` adds its gradient to every batch; `perturber` shifts the evaluation
// point of the training gradient. The two are mutually exclusive.
inline EpochResult run_epoch(FactorModel& model, AdamState& adam,
                             std::span<const Interaction> data,
                             const TrainConfig& cfg,
                             std::uint64_t shuffle_seed,
                             AuxObjective* aux = nullptr,
                             StepPerturber* perturber = nullptr) {
  if (data.empty()) throw std::invalid_argument("run_epoch: empty data");
  if (aux && perturber) {
    throw std::invalid_argument(
        "run_epoch: auxiliary loss and perturbation are mutually exclusive");
  }
  std::vector<std::uint32_t> order(data.size());
  std::iota(order.begin(), order.end(), 0u);
  {
    Rng rng(shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  if (aux) aux->epoch_begin(model);

  FactorGrad grad = FactorGrad::like(model);
  FactorGrad scratch;  // perturbation buffers, allocated on demand
  FactorModel perturbed;
  std::vector<Interaction> batch;
  batch.reserve(cfg.batch_size);

  double loss_sum = 0.0, aux_sum = 0.0;
  std::size_t n_batches = 0;
  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(cfg.batch_size)) {
    std::size_t end =
        std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
    batch.clear();
    for (std::size_t k = start; k < end; ++k)
      batch.push_back(data[order[k]]);

    grad.set_zero();
    double batch_loss = 0.0;
    if (perturber) {
      const FactorGrad* base_grad = nullptr;
      if (perturber->wants_gradient()) {
        accumulate_mse_gradient(model, batch, cfg.l2_reg, grad);
        base_grad = &grad;
      }
      if (scratch.users.size() == 0) scratch = FactorGrad::like(model);
      perturber->make_delta(model, base_grad, scratch);
      perturbed.user_factors = model.user_factors + scratch.users;
      perturbed.item_factors = model.item_factors + scratch.items;
      perturbed.clamp_floor = model.clamp_floor;
      grad.set_zero();
      batch_loss = accumulate_mse_gradient(perturbed, batch, cfg.l2_reg, grad);
    } else {
      batch_loss = accumulate_mse_gradient(model, batch, cfg.l2_reg, grad);
      if (aux) aux_sum += aux->accumulate(model, grad);
    }
    loss_sum += batch_loss * static_cast<double>(batch.size());
    ++n_batches;
    if (!std::isfinite(loss_sum)) {
      throw DivergenceError("non-finite training loss");
    }
    adam_update(model, adam, grad, cfg);
  }
  EpochResult r;
  r.train_loss = loss_sum / static_cast<double>(data.size());
  r.aux_loss = n_batches ? aux_sum / static_cast<double>(n_batches) : 0.0;
  return r;
}

struct TrainResult {
  FactorModel model;
  int best_epoch = -1;  // -1 when no validation set was provided
  std::vector<double> train_loss;
  std::vector<double> val_mse;
  std::vector<double> aux_loss;
};

// Runs cfg.epochs epochs of mini-batch Adam. With a validation set, the
// snapshot with the lowest validation MSE is returned; otherwise the final
// state. When `aux` is given it becomes active after cfg.pretrain_epochs
// epochs of plain training.
inline TrainResult train(FactorModel model, std::span<const Interaction> data,
                         std::span<const Interaction> validation,
                         const TrainConfig& cfg, AuxObjective* aux = nullptr,
                         StepPerturber* perturber = nullptr) {
  cfg.validate();
  if (cfg.epochs > 0 && data.empty()) {
    throw std::invalid_argument("train: empty training data");
  }
  TrainResult result;
  AdamState adam = AdamState::like(model);
  double best = std::numeric_limits<double>::infinity();
  FactorModel best_model;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    AuxObjective* epoch_aux =
        (aux && epoch >= cfg.pretrain_epochs) ? aux : nullptr;
    EpochResult er;
    try {
      er = run_epoch(model, adam, data, cfg, epoch_shuffle_seed(cfg, epoch),
                     epoch_aux, perturber);
    } catch (const DivergenceError&) {
      throw DivergenceError("training diverged (non-finite loss) at epoch " +
                            std::to_string(epoch));
    }
    result.train_loss.push_back(er.train_loss);
    if (epoch_aux) result.aux_loss.push_back(er.aux_loss);
    if (!validation.empty()) {
      double v = validation_mse(model, validation);
      if (!std::isfinite(v)) {
        throw DivergenceError(
            "training diverged (non-finite validation MSE) at epoch " +
            std::to_string(epoch));
      }
      result.val_mse.push_back(v);
      if (v < best) {
        best = v;
        best_model = model;
        result.best_epoch = epoch;
      }
    }
  }
  result.model = (!validation.empty() && result.best_epoch >= 0)
                     ? std::move(best_model)
                     : std::move(model);
  return result;
}

// Top-k items by clamped predicted rating, excluding `exclude` (sorted,
// unique). Ties break toward the lower item index.
inline std::vector<int> recommend_topk(const FactorModel& model, int u, int k,
                                       std::span<const int> exclude) {
  if (u < 0 || u >= model.user_rows()) {
    throw std::out_of_range("recommend_topk: user index out of range");
  }
  int m = model.n_items();
  if (k < 0 || k > m - static_cast<int>(exclude.size())) {
    throw std::invalid_argument(
        "recommend_topk: k exceeds the number of candidate items");
  }
  Vector scores = model.user_scores(u);
  for (int e : exclude) scores[e] = -std::numeric_limits<double>::infinity();
  std::vector<int> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  auto better = [&](int a, int b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), better);
  idx.resize(k);
  return idx;
}

}  // namespace recshield
