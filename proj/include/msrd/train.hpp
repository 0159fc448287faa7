/*
 * Copyright 2026 The msrd authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "msrd/masking.hpp"
#include "msrd/model.hpp"

namespace msrd {

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 32;
  int patience = 8;
  int max_epochs = 40;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  LossWeights weights;
  LossCombo combo;
  MissingPolicy missing;  // training-time masking (student)
  Setting setting = Setting::kIncomplete;

  void validate() const {
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
    if (lr <= 0) throw ConfigError("train: lr must be positive");
    if (seeds.empty()) throw ConfigError("train: at least one seed required");
    weights.validate();
  }
};

struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t steps = 0;

  void step(ParamSet<float>& params);
};

struct EpochStats {
  int epoch = 0;  // 1-based
  LossBreakdown train_mean;
  double val_mae = 0;
};

struct TrainResult {
  ModelBundle<float> model;  // parameters of the best validation epoch
  std::vector<EpochStats> history;
  int best_epoch = 0;
  double best_val_mae = 0;
  int stopped_epoch = 0;
};

/// Complete-modality training on the task objective alone, Adam, early
/// stopping on validation MAE; the returned model is the best-epoch snapshot.
TrainResult train_teacher(const FeatureArchive& archive, const ModelDims& dims,
                          const TrainConfig& config, std::uint64_t seed);

/// Missing-modality training against a frozen teacher. Per batch the masks
/// are freshly drawn under the config policy, the teacher's outputs on the
/// complete inputs drive the distillation/similarity terms, and the full
/// composed objective is optimized. Teacher parameters are never touched.
TrainResult train_student(const FeatureArchive& archive, const ModelBundle<float>& teacher,
                          const TrainConfig& config, std::uint64_t seed);

/// Deterministic forward pass over the listed samples; when a policy is given
/// the inputs are masked first (per-sample streams derived from mask_seed).
std::vector<float> predict(const ModelBundle<float>& model, const FeatureArchive& archive,
                           const std::vector<std::size_t>& idx,
                           const MissingPolicy* mask_policy = nullptr,
                           std::uint64_t mask_seed = 0);

/// Teacher activations cached over the whole archive (the teacher is frozen
/// and its inputs are complete, so per-epoch recomputation is pure waste).
struct TeacherCache {
  std::array<Tensor<float>, kNumModalities> rep;         // [N,T,d]
  std::array<Tensor<float>, kNumModalities> rep_pooled;  // [N,d]
  std::array<Tensor<float>, kNumModalities> enc_pooled;  // [N,d]
  Tensor<float> fused_pooled;                            // [N,d]
};

TeacherCache build_teacher_cache(const ModelBundle<float>& teacher,
                                 const FeatureArchive& archive);

/// Writes checkpoint.json plus a single f32le parameter blob. Round-trips are
/// bitwise. provenance_json must be a JSON object (stored verbatim).
void save_checkpoint(const ModelBundle<float>& model, const std::filesystem::path& dir,
                     const std::string& provenance_json = "{}");

struct Checkpoint {
  ModelBundle<float> model;
  std::string provenance_json;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace msrd
