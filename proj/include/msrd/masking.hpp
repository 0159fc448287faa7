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
#include <vector>

#include "msrd/data.hpp"
#include "msrd/rng.hpp"

namespace msrd {

/// Per-time-step missingness for one sequence. The availability mask is the
/// complement: availability()[t] = 1 - missing[t] for every t.
struct TimeMask {
  std::vector<std::uint8_t> missing;  // 1 = time step missing
  double realized_rate = 0.0;

  std::int64_t length() const { return static_cast<std::int64_t>(missing.size()); }

  std::size_t missing_count() const {
    std::size_t c = 0;
    for (auto m : missing) c += m;
    return c;
  }

  std::vector<float> availability() const {
    std::vector<float> a(missing.size());
    for (std::size_t i = 0; i < missing.size(); ++i) a[i] = missing[i] ? 0.0f : 1.0f;
    return a;
  }
};

struct MissingPolicy {
  enum class Mode { kFixedRate, kUniformRange };
  Mode mode = Mode::kFixedRate;
  double rate = 0.0;      // fixed_rate
  double rate_lo = 0.0;   // uniform_range
  double rate_hi = 0.0;
  bool per_modality_independent = true;
  std::uint64_t seed_stream = 0;
};

/// Draws a mask with exactly round(rate*T) missing steps, chosen uniformly
/// without replacement. realized_rate is round(rate*T)/T.
TimeMask sample_mask(std::int64_t T, double rate, Rng& rng);

/// Zeroes the feature rows at missing steps; all other rows are untouched
/// bytes. complete flips to false iff any step is missing.
ModalitySequence apply_mask(const ModalitySequence& x, const TimeMask& mask);

struct MaskedBatch {
  std::vector<MultimodalSample> samples;
  // masks[i][m] is the mask applied to sample i, modality m.
  std::vector<std::array<TimeMask, kNumModalities>> masks;
};

/// Masks every sample under the policy. Under uniform_range each sample draws
/// its own rate; with per_modality_independent each modality draws its own
/// mask, otherwise one mask layout is shared where lengths agree. Each sample
/// uses a seed stream derived from (policy.seed_stream, sample position), so
/// results do not depend on batch partitioning.
MaskedBatch mask_batch(const std::vector<MultimodalSample>& samples, const MissingPolicy& policy,
                       std::uint64_t batch_seed);

}  // namespace msrd
