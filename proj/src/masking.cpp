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

#include "msrd/masking.hpp"

#include <cmath>

#include "msrd/error.hpp"

namespace msrd {

TimeMask sample_mask(std::int64_t T, double rate, Rng& rng) {
  if (T <= 0) throw ParamError("sample_mask: T must be positive");
  if (rate < 0.0 || rate > 1.0) throw ParamError("sample_mask: rate must lie in [0,1]");
  const auto k = static_cast<std::size_t>(std::llround(rate * static_cast<double>(T)));
  TimeMask mask;
  mask.missing.assign(static_cast<std::size_t>(T), 0);
  if (k > 0) {
    for (std::size_t pos : rng.sample_without_replacement(static_cast<std::size_t>(T), k))
      mask.missing[pos] = 1;
  }
  mask.realized_rate = static_cast<double>(k) / static_cast<double>(T);
  return mask;
}

ModalitySequence apply_mask(const ModalitySequence& x, const TimeMask& mask) {
  if (mask.length() != x.time_steps())
    throw ShapeError("apply_mask: mask length does not match sequence time steps");
  ModalitySequence out = x;
  const std::int64_t f = x.feature_dim();
  bool any = false;
  for (std::int64_t t = 0; t < mask.length(); ++t) {
    if (!mask.missing[static_cast<std::size_t>(t)]) continue;
    any = true;
    for (std::int64_t j = 0; j < f; ++j) out.features.at(t, j) = 0.0f;
  }
  if (any) out.complete = false;
  return out;
}

MaskedBatch mask_batch(const std::vector<MultimodalSample>& samples, const MissingPolicy& policy,
                       std::uint64_t batch_seed) {
  if (policy.mode == MissingPolicy::Mode::kFixedRate) {
    if (policy.rate < 0.0 || policy.rate > 1.0)
      throw ParamError("mask_batch: rate must lie in [0,1]");
  } else {
    if (policy.rate_lo < 0.0 || policy.rate_hi > 1.0 || policy.rate_lo > policy.rate_hi)
      throw ParamError("mask_batch: invalid uniform_range bounds");
  }
  MaskedBatch out;
  out.samples.reserve(samples.size());
  out.masks.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Rng rng(derive_seed(policy.seed_stream, batch_seed, i));
    double rate = policy.rate;
    if (policy.mode == MissingPolicy::Mode::kUniformRange)
      rate = rng.uniform(policy.rate_lo, policy.rate_hi);
    MultimodalSample masked = samples[i];
    std::array<TimeMask, kNumModalities> masks;
    if (policy.per_modality_independent) {
      for (int m = 0; m < kNumModalities; ++m) {
        masks[m] = sample_mask(samples[i].mods[m].time_steps(), rate, rng);
        masked.mods[m] = apply_mask(samples[i].mods[m], masks[m]);
      }
    } else {
      // One layout per sample; re-drawn only where lengths differ.
      TimeMask shared = sample_mask(samples[i].mods[0].time_steps(), rate, rng);
      for (int m = 0; m < kNumModalities; ++m) {
        if (samples[i].mods[m].time_steps() == shared.length())
          masks[m] = shared;
        else
          masks[m] = sample_mask(samples[i].mods[m].time_steps(), rate, rng);
        masked.mods[m] = apply_mask(samples[i].mods[m], masks[m]);
      }
    }
    out.samples.push_back(std::move(masked));
    out.masks.push_back(std::move(masks));
  }
  return out;
}

}  // namespace msrd
