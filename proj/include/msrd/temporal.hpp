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

#include <string>
#include <vector>

#include "msrd/layers.hpp"

namespace msrd {

/// One gated dilated-causal residual block: a dilated causal convolution
/// whose single output drives both tanh and sigmoid gates, a 1x1 mixing
/// convolution, and a residual add. The 1x1 conv is zero-initialized, so a
/// fresh block is the identity map.
template <class T>
struct TemporalBlockParams {
  typename ParamSet<T>::Ptr conv_w, conv_b;  // [K,d,d]
  typename ParamSet<T>::Ptr mix_w, mix_b;    // [1,d,d], zero-init
  std::int64_t dilation = 1;
  std::int64_t kernel_size = 2;

  static TemporalBlockParams create(ParamSet<T>& set, const std::string& prefix, std::int64_t d,
                                    std::int64_t dilation, std::int64_t kernel_size) {
    if (dilation <= 0) throw ParamError("temporal block: dilation must be positive");
    if (kernel_size <= 0) throw ParamError("temporal block: kernel_size must be positive");
    TemporalBlockParams p;
    p.dilation = dilation;
    p.kernel_size = kernel_size;
    p.conv_w = set.create(prefix + ".conv_w", {kernel_size, d, d}, Init::kUniformFanIn,
                          kernel_size * d);
    p.conv_b = set.create(prefix + ".conv_b", {d}, Init::kZeros);
    p.mix_w = set.create(prefix + ".mix_w", {1, d, d}, Init::kZeros);
    p.mix_b = set.create(prefix + ".mix_b", {d}, Init::kZeros);
    return p;
  }
};

template <class T>
struct TemporalBlockOut {
  Var y_next;  // residual output y' = mix(gate(dconv(y))) + y
  Var block_out;  // the stream integrated across directions; equals y_next
};

template <class T>
TemporalBlockOut<T> temporal_block_forward(Graph<T>& g, Var y, const TemporalBlockParams<T>& p) {
  Var y_dc = g.conv1d(y, g.param(p.conv_w), g.param(p.conv_b), p.dilation,
                      (p.kernel_size - 1) * p.dilation);
  Var gate = g.gated(y_dc);
  Var mixed = g.conv1d(gate, g.param(p.mix_w), g.param(p.mix_b), 1, 0);
  Var y_next = g.add(mixed, y);
  return {y_next, y_next};
}

/// Bidirectional temporal representation stack: two identically configured
/// entry convolutions in sequence, then the stream splits into a forward
/// chain and a time-reversed chain of n blocks each (block i at dilation
/// 2^(i-1)). Matching block outputs from the two directions are summed into
/// per-level streams, and the level streams sum to the output.
template <class T>
struct BiTemporalParams {
  typename ParamSet<T>::Ptr entry1_w, entry1_b, entry2_w, entry2_b;  // [3,d,d] same-padding
  std::vector<TemporalBlockParams<T>> forward_chain, backward_chain;
  std::int64_t n = 1;
  std::int64_t kernel_size = 2;

  static BiTemporalParams create(ParamSet<T>& set, const std::string& prefix, std::int64_t d,
                                 std::int64_t n, std::int64_t kernel_size = 2) {
    if (n <= 0) throw ParamError("bitemporal: n must be positive");
    BiTemporalParams p;
    p.n = n;
    p.kernel_size = kernel_size;
    p.entry1_w = set.create(prefix + ".entry1_w", {3, d, d}, Init::kUniformFanIn, 3 * d);
    p.entry1_b = set.create(prefix + ".entry1_b", {d}, Init::kZeros);
    p.entry2_w = set.create(prefix + ".entry2_w", {3, d, d}, Init::kUniformFanIn, 3 * d);
    p.entry2_b = set.create(prefix + ".entry2_b", {d}, Init::kZeros);
    for (std::int64_t i = 1; i <= n; ++i) {
      const std::int64_t dilation = std::int64_t(1) << (i - 1);
      p.forward_chain.push_back(TemporalBlockParams<T>::create(
          set, prefix + ".fwd" + std::to_string(i), d, dilation, kernel_size));
      p.backward_chain.push_back(TemporalBlockParams<T>::create(
          set, prefix + ".bwd" + std::to_string(i), d, dilation, kernel_size));
    }
    return p;
  }
};

template <class T>
struct BiTemporalOut {
  Var z;                       // sum over levels
  std::vector<Var> z_levels;   // per-level integrated streams
  Var entry_out;               // stream right after the entry convolutions
};

/// The post-entry part: split, run both chains, integrate, sum.
template <class T>
BiTemporalOut<T> bitemporal_chains(Graph<T>& g, Var stream, const BiTemporalParams<T>& p) {
  BiTemporalOut<T> out;
  out.entry_out = stream;
  std::vector<Var> fwd_outs, bwd_outs;
  Var y = stream;
  for (const auto& block : p.forward_chain) {
    auto r = temporal_block_forward(g, y, block);
    fwd_outs.push_back(r.block_out);
    y = r.y_next;
  }
  Var yr = g.reverse_time(stream);
  for (const auto& block : p.backward_chain) {
    auto r = temporal_block_forward(g, yr, block);
    bwd_outs.push_back(g.reverse_time(r.block_out));
    yr = r.y_next;
  }
  for (std::int64_t i = 0; i < p.n; ++i)
    out.z_levels.push_back(g.add(fwd_outs[static_cast<std::size_t>(i)],
                                 bwd_outs[static_cast<std::size_t>(i)]));
  out.z = out.z_levels[0];
  for (std::size_t i = 1; i < out.z_levels.size(); ++i) out.z = g.add(out.z, out.z_levels[i]);
  return out;
}

template <class T>
BiTemporalOut<T> bitemporal_forward(Graph<T>& g, Var e, const BiTemporalParams<T>& p) {
  Var s = g.conv1d(e, g.param(p.entry1_w), g.param(p.entry1_b), 1, 1);
  s = g.conv1d(s, g.param(p.entry2_w), g.param(p.entry2_b), 1, 1);
  return bitemporal_chains(g, s, p);
}

}  // namespace msrd
