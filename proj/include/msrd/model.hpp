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
#include <string>

#include "msrd/encoder.hpp"
#include "msrd/fusion.hpp"
#include "msrd/losses.hpp"
#include "msrd/temporal.hpp"

namespace msrd {

struct ModelDims {
  std::int64_t d = 32;
  int heads = 4;
  std::int64_t n_blocks = 4;
  std::int64_t kernel_size = 2;
  bool use_fusion = true;
  bool positional = true;
  std::array<std::int64_t, kNumModalities> feature_dims{5, 8, 6};
  std::array<std::int64_t, kNumModalities> time_steps{12, 12, 12};

  /// Every stream is resampled to the text modality's length before fusion.
  std::int64_t fused_len() const { return time_steps[static_cast<int>(Modality::kText)]; }
};

enum class Role { kTeacher, kStudent };

/// The complete parameter bundle for one network. Teacher and student are
/// architecturally identical; the teacher simply never evaluates its
/// reconstruction decoders.
template <class T>
struct ModelBundle {
  ModelDims dims;
  Role role = Role::kTeacher;
  std::uint64_t init_seed = 0;
  ParamSet<T> params;
  std::array<EncoderParams<T>, kNumModalities> encoders;
  std::array<BiTemporalParams<T>, kNumModalities> temporal;
  FusionParams<T> fusion;    // when dims.use_fusion
  MlpParams<T> pooled_head;  // substitute head when fusion is disabled
  std::array<MlpParams<T>, kNumModalities> dec_enc, dec_rep;
  SimSiamHeads<T> simsiam;

  static ModelBundle create(const ModelDims& dims, std::uint64_t seed, Role role) {
    ModelBundle b;
    b.dims = dims;
    b.role = role;
    b.init_seed = seed;
    b.params = ParamSet<T>(seed);
    for (int m = 0; m < kNumModalities; ++m) {
      const std::string tag = modality_name(static_cast<Modality>(m));
      b.encoders[m] = EncoderParams<T>::create(b.params, "enc." + tag, dims.feature_dims[m],
                                               dims.d, dims.heads, dims.positional);
      b.temporal[m] = BiTemporalParams<T>::create(b.params, "tmp." + tag, dims.d, dims.n_blocks,
                                                  dims.kernel_size);
    }
    if (dims.use_fusion)
      b.fusion = FusionParams<T>::create(b.params, "fus", dims.d, dims.heads);
    else
      b.pooled_head = MlpParams<T>::create(b.params, "pooled_head", 3 * dims.d, dims.d, 1);
    for (int m = 0; m < kNumModalities; ++m) {
      const std::string tag = modality_name(static_cast<Modality>(m));
      b.dec_enc[m] = MlpParams<T>::create(b.params, "dec_enc." + tag, dims.d, dims.d,
                                          dims.feature_dims[m]);
      b.dec_rep[m] = MlpParams<T>::create(b.params, "dec_rep." + tag, dims.d, dims.d,
                                          dims.feature_dims[m]);
    }
    b.simsiam = SimSiamHeads<T>::create(b.params, "sim", dims.d);
    return b;
  }
};

template <class T>
struct ModelForward {
  Var pred;                                        // [B]
  std::array<Var, kNumModalities> enc_out;         // [B,T,d] each
  std::array<Var, kNumModalities> rep_out;         // [B,T,d] each
  std::array<Var, kNumModalities> dec_enc{{Var{-1}, Var{-1}, Var{-1}}};
  std::array<Var, kNumModalities> dec_rep{{Var{-1}, Var{-1}, Var{-1}}};
  FusionOut<T> fused;
  bool has_fusion = false;
};

struct ForwardOptions {
  bool with_decoders = false;
};

/// Runs the full network on one batch of per-modality features [B,T_m,f_m].
/// Sequences whose length differs from the text stream are linearly resampled
/// to it on entry.
template <class T>
ModelForward<T> model_forward(Graph<T>& g, const ModelBundle<T>& model,
                              const std::array<Tensor<T>, kNumModalities>& feats,
                              const ForwardOptions& opt = {}) {
  ModelForward<T> out;
  const std::int64_t t_len = model.dims.fused_len();
  for (int m = 0; m < kNumModalities; ++m) {
    if (feats[m].rank() != 3)
      throw ShapeError("model_forward: features must be [B,T,f]");
    Var x = g.input(feats[m]);
    if (feats[m].shape[1] != t_len) x = g.resample_time(x, t_len);
    out.enc_out[m] = encode(g, x, model.encoders[m]);
    out.rep_out[m] = bitemporal_forward(g, out.enc_out[m], model.temporal[m]).z;
    if (opt.with_decoders) {
      out.dec_enc[m] = model.dec_enc[m].apply(g, out.enc_out[m]);
      out.dec_rep[m] = model.dec_rep[m].apply(g, out.rep_out[m]);
    }
  }
  const int a = static_cast<int>(Modality::kAudio);
  const int t = static_cast<int>(Modality::kText);
  const int v = static_cast<int>(Modality::kVision);
  if (model.dims.use_fusion) {
    out.fused = fusion_forward(g, out.rep_out[t], out.rep_out[a], out.rep_out[v], model.fusion);
    out.has_fusion = true;
    out.pred = predict_head(g, out.fused.y, model.fusion.head);
  } else {
    Var pooled = g.concat_last(
        {g.mean_time(out.rep_out[a]), g.mean_time(out.rep_out[t]), g.mean_time(out.rep_out[v])});
    Var y = model.pooled_head.apply(g, pooled);
    out.pred = g.reshape(y, {g.val(y).shape[0]});
  }
  return out;
}

/// Non-graph linear time resample of a [B,T,D] or [T,D] tensor (used to build
/// loss targets at the fused length).
template <class T>
Tensor<T> resample_time_tensor(const Tensor<T>& x, std::int64_t t_new) {
  const bool batched = x.rank() == 3;
  const std::int64_t B = batched ? x.shape[0] : 1;
  const std::int64_t t_old = batched ? x.shape[1] : x.shape[0];
  const std::int64_t D = batched ? x.shape[2] : x.shape[1];
  if (t_old == t_new) return x;
  Tensor<T> out(batched ? std::vector<std::int64_t>{B, t_new, D}
                        : std::vector<std::int64_t>{t_new, D});
  for (std::int64_t u = 0; u < t_new; ++u) {
    const auto [i0, i1, w] = resample_linear_coef(t_old, t_new, u);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t d = 0; d < D; ++d) {
        const T x0 = batched ? x.at(b, i0, d) : x.at(i0, d);
        const T x1 = batched ? x.at(b, i1, d) : x.at(i1, d);
        const T val = (T(1) - static_cast<T>(w)) * x0 + static_cast<T>(w) * x1;
        if (batched)
          out.at(b, u, d) = val;
        else
          out.at(u, d) = val;
      }
  }
  return out;
}

/// Nearest-neighbor resample of a per-step flag vector.
inline std::vector<std::uint8_t> resample_mask_nearest(const std::vector<std::uint8_t>& flags,
                                                       std::int64_t t_new) {
  const auto t_old = static_cast<std::int64_t>(flags.size());
  if (t_old == t_new) return flags;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(t_new));
  for (std::int64_t u = 0; u < t_new; ++u) {
    const auto [i0, i1, w] = resample_linear_coef(t_old, t_new, u);
    out[static_cast<std::size_t>(u)] = flags[static_cast<std::size_t>(w < 0.5 ? i0 : i1)];
  }
  return out;
}

}  // namespace msrd
