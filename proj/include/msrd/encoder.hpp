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

#include <cmath>
#include <string>

#include "msrd/layers.hpp"

namespace msrd {

/// Unimodal self-attentive encoder: input projection, sinusoidal positions,
/// one multi-head self-attention block with residual + layer norm, and a
/// feed-forward block with residual + layer norm. Output is [B,T,d].
template <class T>
struct EncoderParams {
  typename ParamSet<T>::Ptr w_in, b_in;
  AttnParams<T> attn;
  typename ParamSet<T>::Ptr ln1_g, ln1_b;
  typename ParamSet<T>::Ptr ff_w1, ff_b1, ff_w2, ff_b2;
  typename ParamSet<T>::Ptr ln2_g, ln2_b;
  std::int64_t d = 0;
  int heads = 4;
  bool positional = true;

  static EncoderParams create(ParamSet<T>& set, const std::string& prefix, std::int64_t f,
                              std::int64_t d, int heads, bool positional) {
    if (heads <= 0 || d % heads != 0) throw ParamError("encoder: width must divide by heads");
    EncoderParams p;
    p.d = d;
    p.heads = heads;
    p.positional = positional;
    p.w_in = set.create(prefix + ".w_in", {f, d}, Init::kUniformFanIn, f);
    p.b_in = set.create(prefix + ".b_in", {d}, Init::kZeros);
    p.attn = AttnParams<T>::create(set, prefix + ".attn", d);
    p.ln1_g = set.create(prefix + ".ln1_g", {d}, Init::kOnes);
    p.ln1_b = set.create(prefix + ".ln1_b", {d}, Init::kZeros);
    p.ff_w1 = set.create(prefix + ".ff_w1", {d, 2 * d}, Init::kUniformFanIn, d);
    p.ff_b1 = set.create(prefix + ".ff_b1", {2 * d}, Init::kZeros);
    p.ff_w2 = set.create(prefix + ".ff_w2", {2 * d, d}, Init::kUniformFanIn, 2 * d);
    p.ff_b2 = set.create(prefix + ".ff_b2", {d}, Init::kZeros);
    p.ln2_g = set.create(prefix + ".ln2_g", {d}, Init::kOnes);
    p.ln2_b = set.create(prefix + ".ln2_b", {d}, Init::kZeros);
    return p;
  }
};

/// Sinusoidal positional table, tiled over the batch: [B,T,d].
template <class T>
Tensor<T> positional_encoding(std::int64_t batch, std::int64_t t_len, std::int64_t d) {
  Tensor<T> out({batch, t_len, d});
  for (std::int64_t t = 0; t < t_len; ++t) {
    for (std::int64_t i = 0; i < d; ++i) {
      const double angle = static_cast<double>(t) /
                           std::pow(10000.0, static_cast<double>(2 * (i / 2)) /
                                                 static_cast<double>(d));
      const double val = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
      for (std::int64_t b = 0; b < batch; ++b) out.at(b, t, i) = static_cast<T>(val);
    }
  }
  return out;
}

template <class T>
Var encode(Graph<T>& g, Var x, const EncoderParams<T>& p) {
  const auto xs = g.val(x).shape;  // copied: node storage moves as the graph grows
  if (xs.size() != 3) throw ShapeError("encode: input must be [B,T,f]");
  if (xs[2] != p.w_in->value.shape[0])
    throw ShapeError("encode: input width " + std::to_string(xs[2]) +
                     " does not match encoder projection " +
                     std::to_string(p.w_in->value.shape[0]));
  Var h = g.linear(x, g.param(p.w_in), g.param(p.b_in));
  if (p.positional)
    h = g.add(h, g.input(positional_encoding<T>(xs[0], xs[1], p.d)));
  Var att = g.attention(h, h, h, p.attn.vars(g), p.heads);
  Var h1 = g.layer_norm(g.add(h, att), g.param(p.ln1_g), g.param(p.ln1_b));
  Var ff = g.linear(g.tanh_(g.linear(h1, g.param(p.ff_w1), g.param(p.ff_b1))), g.param(p.ff_w2),
                    g.param(p.ff_b2));
  return g.layer_norm(g.add(h1, ff), g.param(p.ln2_g), g.param(p.ln2_b));
}

}  // namespace msrd
