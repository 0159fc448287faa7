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

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "msrd/tensor.hpp"

namespace msrd {

enum class Modality : int { kAudio = 0, kText = 1, kVision = 2 };

inline const char* modality_name(Modality m) {
  switch (m) {
    case Modality::kAudio: return "a";
    case Modality::kText: return "t";
    case Modality::kVision: return "v";
  }
  return "?";
}

inline Modality modality_from_name(const std::string& s) {
  if (s == "a") return Modality::kAudio;
  if (s == "t") return Modality::kText;
  if (s == "v") return Modality::kVision;
  throw FormatError("unknown modality name: " + s);
}

constexpr int kNumModalities = 3;

/// One modality's feature matrix [T, f]. complete=false marks a sequence that
/// went through apply_mask with at least one missing step.
struct ModalitySequence {
  Modality modality = Modality::kAudio;
  Tensor<float> features;  // [T, f]
  bool complete = true;

  std::int64_t time_steps() const { return features.shape[0]; }
  std::int64_t feature_dim() const { return features.shape[1]; }
};

struct MultimodalSample {
  std::array<ModalitySequence, kNumModalities> mods;  // indexed by Modality
  float label = 0.0f;
};

struct ArchiveMeta {
  std::array<std::int64_t, kNumModalities> time_steps{};
  std::array<std::int64_t, kNumModalities> feature_dims{};
  double label_lo = -3.0;
  double label_hi = 3.0;
  std::string provenance;
};

struct FeatureArchive {
  std::vector<MultimodalSample> samples;
  std::vector<std::size_t> train, val, test;
  ArchiveMeta meta;
  /// Set by load_archive when a declared split is empty (load succeeds).
  bool empty_split_warning = false;
};

/// Synthetic generation recipe. Each sample embeds one latent sentiment value
/// into all three modalities via fixed affine maps, plus smooth per-sample
/// distractor dynamics and Gaussian noise.
struct SynthSpec {
  std::int64_t sample_count = 30;
  std::array<std::int64_t, kNumModalities> time_steps{12, 12, 12};
  std::array<std::int64_t, kNumModalities> feature_dims{5, 8, 6};
  std::array<double, kNumModalities> noise{0.1, 0.1, 0.1};
  double label_lo = -3.0;
  double label_hi = 3.0;
  double train_fraction = 0.7;
  double val_fraction = 0.15;
  std::uint64_t seed = 1;
};

FeatureArchive generate_synthetic(const SynthSpec& spec);

/// Writes manifest.json, splits.json, labels.bin and one f32le binary per
/// modality (layout [sample][time][feature]) into `dir`.
void save_archive(const FeatureArchive& archive, const std::filesystem::path& dir);

FeatureArchive load_archive(const std::filesystem::path& dir);

/// Gathers one modality across the listed samples into a [B,T,f] batch.
Tensor<float> gather_batch(const FeatureArchive& archive, const std::vector<std::size_t>& idx,
                           Modality m);

std::vector<float> gather_labels(const FeatureArchive& archive,
                                 const std::vector<std::size_t>& idx);

SynthSpec synth_spec_from_json_file(const std::filesystem::path& file);
void write_synth_spec_json(const SynthSpec& spec, const std::filesystem::path& file);

}  // namespace msrd
