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

#include "msrd/layers.hpp"

namespace msrd {

/// One text-anchored pair block: self-attention over the elementwise sum of
/// the two streams, residual, and the pair transform.
template <class T>
struct PairBlockParams {
  AttnParams<T> sa;
  MlpParams<T> mlp_pair;

  static PairBlockParams create(ParamSet<T>& set, const std::string& prefix, std::int64_t d) {
    PairBlockParams p;
    p.sa = AttnParams<T>::create(set, prefix + ".sa", d);
    p.mlp_pair = MlpParams<T>::create(set, prefix + ".mlp_pair", d, d, d);
    return p;
  }
};

/// One auxiliary direction: cross-attention from the anchor pair into the
/// other pair, a transform on the attended stream, and the output transform
/// that is applied twice around the cross term.
template <class T>
struct DirectionParams {
  AttnParams<T> cross;
  MlpParams<T> mlp_cross;
  MlpParams<T> mlp_out;

  static DirectionParams create(ParamSet<T>& set, const std::string& prefix, std::int64_t d) {
    DirectionParams p;
    p.cross = AttnParams<T>::create(set, prefix + ".cross", d);
    p.mlp_cross = MlpParams<T>::create(set, prefix + ".mlp_cross", d, d, d);
    p.mlp_out = MlpParams<T>::create(set, prefix + ".mlp_out", d, d, d);
    return p;
  }
};

template <class T>
struct FusionParams {
  PairBlockParams<T> pair_tv, pair_ta;
  DirectionParams<T> dir_vta, dir_atv;
  MlpParams<T> head;  // prediction head on the temporal mean
  int heads = 4;

  static FusionParams create(ParamSet<T>& set, const std::string& prefix, std::int64_t d,
                             int heads) {
    FusionParams p;
    p.heads = heads;
    p.pair_tv = PairBlockParams<T>::create(set, prefix + ".pair_tv", d);
    p.pair_ta = PairBlockParams<T>::create(set, prefix + ".pair_ta", d);
    p.dir_vta = DirectionParams<T>::create(set, prefix + ".dir_vta", d);
    p.dir_atv = DirectionParams<T>::create(set, prefix + ".dir_atv", d);
    p.head = MlpParams<T>::create(set, prefix + ".head", d, d, 1);
    return p;
  }
};

template <class T>
struct PairOut {
  Var sa_out;  // SA(Z_t + Z_other) + (Z_t + Z_other)
  Var y_pair;  // pair transform of sa_out
};

template <class T>
PairOut<T> pairwise_sa(Graph<T>& g, Var z_t, Var z_other, const PairBlockParams<T>& p,
                       int heads) {
  require_same_shape(g.val(z_t), g.val(z_other), "pairwise_sa");
  Var sum = g.add(z_t, z_other);
  Var sa = g.attention(sum, sum, sum, p.sa.vars(g), heads);
  Var sa_out = g.add(sa, sum);
  return {sa_out, p.mlp_pair.apply(g, sa_out)};
}

template <class T>
struct FusionOut {
  Var y;  // sum of the two direction outputs
  Var y_dir_vta, y_dir_atv;
  Var y_cross_vta, y_cross_atv;  // transformed cross-attention streams
  Var mlp_out_vta, mlp_out_atv;  // the doubled pair term, one instance each
  PairOut<T> pair_tv, pair_ta;
};

/// Text-anchored transformer fusion over the three representations.
///
/// Direction v-t-a queries with the (t,v) pair stream against the (t,a) pair
/// stream (which provides both keys and values); direction a-t-v mirrors it.
/// Each direction output adds the transformed pair stream twice around the
/// cross term, and the fused output is the sum of the two directions.
template <class T>
FusionOut<T> fusion_forward(Graph<T>& g, Var z_t, Var z_a, Var z_v, const FusionParams<T>& p) {
  FusionOut<T> out;
  out.pair_tv = pairwise_sa(g, z_t, z_v, p.pair_tv, p.heads);
  out.pair_ta = pairwise_sa(g, z_t, z_a, p.pair_ta, p.heads);

  Var ca_vta = g.attention(out.pair_tv.sa_out, out.pair_ta.sa_out, out.pair_ta.sa_out,
                           p.dir_vta.cross.vars(g), p.heads);
  out.y_cross_vta = p.dir_vta.mlp_cross.apply(g, ca_vta);
  out.mlp_out_vta = p.dir_vta.mlp_out.apply(g, out.pair_tv.y_pair);
  out.y_dir_vta = g.add(g.add(out.mlp_out_vta, out.y_cross_vta), out.mlp_out_vta);

  Var ca_atv = g.attention(out.pair_ta.sa_out, out.pair_tv.sa_out, out.pair_tv.sa_out,
                           p.dir_atv.cross.vars(g), p.heads);
  out.y_cross_atv = p.dir_atv.mlp_cross.apply(g, ca_atv);
  out.mlp_out_atv = p.dir_atv.mlp_out.apply(g, out.pair_ta.y_pair);
  out.y_dir_atv = g.add(g.add(out.mlp_out_atv, out.y_cross_atv), out.mlp_out_atv);

  out.y = g.add(out.y_dir_vta, out.y_dir_atv);
  return out;
}

/// Regression head: temporal mean of the fused stream through a two-layer
/// transform to one value per sample. Returns [B].
template <class T>
Var predict_head(Graph<T>& g, Var y, const MlpParams<T>& head) {
  Var pooled = g.mean_time(y);
  Var out = head.apply(g, pooled);  // [B,1]
  return g.reshape(out, {g.val(y).shape[0]});
}

}  // namespace msrd
