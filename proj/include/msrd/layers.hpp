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

#include "msrd/graph.hpp"
#include "msrd/params.hpp"

namespace msrd {

/// Attention projection parameters (query/key/value/output).
template <class T>
struct AttnParams {
  typename ParamSet<T>::Ptr wq, bq, wk, bk, wv, bv, wo, bo;

  static AttnParams create(ParamSet<T>& set, const std::string& prefix, std::int64_t d) {
    AttnParams p;
    p.wq = set.create(prefix + ".wq", {d, d}, Init::kUniformFanIn, d);
    p.bq = set.create(prefix + ".bq", {d}, Init::kZeros);
    p.wk = set.create(prefix + ".wk", {d, d}, Init::kUniformFanIn, d);
    p.bk = set.create(prefix + ".bk", {d}, Init::kZeros);
    p.wv = set.create(prefix + ".wv", {d, d}, Init::kUniformFanIn, d);
    p.bv = set.create(prefix + ".bv", {d}, Init::kZeros);
    p.wo = set.create(prefix + ".wo", {d, d}, Init::kUniformFanIn, d);
    p.bo = set.create(prefix + ".bo", {d}, Init::kZeros);
    return p;
  }

  typename Graph<T>::AttnVars vars(Graph<T>& g) const {
    return {g.param(wq), g.param(bq), g.param(wk), g.param(bk),
            g.param(wv), g.param(bv), g.param(wo), g.param(bo)};
  }
};

/// Two-layer fully connected transform with tanh hidden activation.
template <class T>
struct MlpParams {
  typename ParamSet<T>::Ptr w1, b1, w2, b2;

  static MlpParams create(ParamSet<T>& set, const std::string& prefix, std::int64_t d_in,
                          std::int64_t d_hidden, std::int64_t d_out) {
    MlpParams p;
    p.w1 = set.create(prefix + ".w1", {d_in, d_hidden}, Init::kUniformFanIn, d_in);
    p.b1 = set.create(prefix + ".b1", {d_hidden}, Init::kZeros);
    p.w2 = set.create(prefix + ".w2", {d_hidden, d_out}, Init::kUniformFanIn, d_hidden);
    p.b2 = set.create(prefix + ".b2", {d_out}, Init::kZeros);
    return p;
  }

  Var apply(Graph<T>& g, Var x) const {
    Var h = g.tanh_(g.linear(x, g.param(w1), g.param(b1)));
    return g.linear(h, g.param(w2), g.param(b2));
  }
};

}  // namespace msrd
