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

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "msrd/params.hpp"
#include "msrd/tensor.hpp"

namespace msrd {

/// Handle to a node in a Graph.
struct Var {
  int id = -1;
};

/// Shared coefficients for endpoint-aligned linear time resampling: output
/// step u of t_new reads (1-w)*x[i0] + w*x[i1] from a length t_old input.
inline std::tuple<std::int64_t, std::int64_t, double> resample_linear_coef(std::int64_t t_old,
                                                                           std::int64_t t_new,
                                                                           std::int64_t u) {
  if (t_old == 1) return {0, 0, 0.0};
  const double pos = t_new == 1 ? static_cast<double>(t_old - 1) / 2.0
                                : static_cast<double>(u) * static_cast<double>(t_old - 1) /
                                      static_cast<double>(t_new - 1);
  std::int64_t i0 = static_cast<std::int64_t>(std::floor(pos));
  if (i0 >= t_old - 1) i0 = t_old - 2;
  return {i0, i0 + 1, pos - static_cast<double>(i0)};
}

/// Reverse-mode autodiff tape over dense tensors.
///
/// Nodes are appended in evaluation order (define-by-run), each carrying a
/// forward closure that recomputes its value from its parents and a backward
/// closure that scatters its gradient to them. `recompute()` re-executes all
/// forward closures, which is what the finite-difference harness and the
/// perturbation tests use after mutating a leaf value in place.
///
/// Single-threaded by construction; all loops run in a fixed order so that
/// identical seeds and inputs give bitwise-identical values.
template <class T>
class Graph {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Mat>;
  using CMap = Eigen::Map<const Mat>;
  using Fn = std::function<void(Graph&, int)>;

  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    std::vector<int> parents;
    Fn fwd;   // recompute val from parents; null for leaves
    Fn bwd;   // scatter grad to parents; null for leaves / stop_gradient
    std::vector<Tensor<T>> aux;
    typename ParamSet<T>::Ptr bound;  // set for parameter leaves
    bool requires_grad = false;
  };

  // ---- leaves ----

  Var input(Tensor<T> t, bool requires_grad = false) {
    Node n;
    n.val = std::move(t);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var param(const typename ParamSet<T>::Ptr& p) {
    Node n;
    n.val = p->value;
    n.bound = p;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  // ---- access ----

  const Tensor<T>& val(Var x) const { return nodes_[x.id].val; }
  const Tensor<T>& grad(Var x) const { return nodes_[x.id].grad; }
  Tensor<T>& mutable_val(Var x) { return nodes_[x.id].val; }
  const Tensor<T>& aux(Var x, std::size_t i) const { return nodes_[x.id].aux[i]; }
  bool requires_grad(Var x) const { return nodes_[x.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Name of the parameter a leaf is bound to; empty for other nodes.
  std::string leaf_param_name(Var x) const {
    return nodes_[x.id].bound ? nodes_[x.id].bound->name : std::string();
  }

  /// All parameter-bound leaves, in creation order. A parameter applied in
  /// several places appears once per application.
  std::vector<Var> param_leaves() const {
    std::vector<Var> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].bound) out.push_back(Var{static_cast<int>(i)});
    return out;
  }

  // ---- elementwise and structural ops ----

  Var add(Var a, Var b) {
    require_same_shape(nodes_[a.id].val, nodes_[b.id].val, "add");
    return make(nodes_[a.id].val.shape, {a.id, b.id},
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& x = g.nodes_[n.parents[0]].val.v;
                  const auto& y = g.nodes_[n.parents[1]].val.v;
                  for (std::size_t i = 0; i < n.val.v.size(); ++i) n.val.v[i] = x[i] + y[i];
                },
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  g.scatter_each(n.parents[0], n.grad, T(1));
                  g.scatter_each(n.parents[1], n.grad, T(1));
                });
  }

  Var sub(Var a, Var b) {
    require_same_shape(nodes_[a.id].val, nodes_[b.id].val, "sub");
    return make(nodes_[a.id].val.shape, {a.id, b.id},
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& x = g.nodes_[n.parents[0]].val.v;
                  const auto& y = g.nodes_[n.parents[1]].val.v;
                  for (std::size_t i = 0; i < n.val.v.size(); ++i) n.val.v[i] = x[i] - y[i];
                },
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  g.scatter_each(n.parents[0], n.grad, T(1));
                  g.scatter_each(n.parents[1], n.grad, T(-1));
                });
  }

  Var ewmul(Var a, Var b) {
    require_same_shape(nodes_[a.id].val, nodes_[b.id].val, "ewmul");
    return make(nodes_[a.id].val.shape, {a.id, b.id},
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& x = g.nodes_[n.parents[0]].val.v;
                  const auto& y = g.nodes_[n.parents[1]].val.v;
                  for (std::size_t i = 0; i < n.val.v.size(); ++i) n.val.v[i] = x[i] * y[i];
                },
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& x = g.nodes_[n.parents[0]].val.v;
                  const auto& y = g.nodes_[n.parents[1]].val.v;
                  if (g.nodes_[n.parents[0]].requires_grad) {
                    auto& da = g.nodes_[n.parents[0]].grad.v;
                    for (std::size_t i = 0; i < da.size(); ++i) da[i] += n.grad.v[i] * y[i];
                  }
                  if (g.nodes_[n.parents[1]].requires_grad) {
                    auto& db = g.nodes_[n.parents[1]].grad.v;
                    for (std::size_t i = 0; i < db.size(); ++i) db[i] += n.grad.v[i] * x[i];
                  }
                });
  }

  Var scale(Var a, double c) {
    const T cc = static_cast<T>(c);
    return make(nodes_[a.id].val.shape, {a.id},
                [cc](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& x = g.nodes_[n.parents[0]].val.v;
                  for (std::size_t i = 0; i < n.val.v.size(); ++i) n.val.v[i] = cc * x[i];
                },
                [cc](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  g.scatter_each(n.parents[0], n.grad, cc);
                });
  }

  /// Forward identity; contributes exactly zero gradient to its parent.
  Var stop_gradient(Var a) {
    Var out = make(nodes_[a.id].val.shape, {a.id},
                   [](Graph& g, int id) {
                     auto& n = g.nodes_[id];
                     n.val.v = g.nodes_[n.parents[0]].val.v;
                   },
                   nullptr);
    nodes_[out.id].requires_grad = false;
    return out;
  }

  Var reshape(Var a, std::vector<std::int64_t> shape) {
    if (Tensor<T>::numel_of(shape) != nodes_[a.id].val.numel())
      throw ShapeError("reshape: element count mismatch");
    return make(std::move(shape), {a.id},
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  n.val.v = g.nodes_[n.parents[0]].val.v;
                },
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  g.scatter_each(n.parents[0], n.grad, T(1));
                });
  }

  /// Reverses the time axis of a [B,T,D] tensor.
  Var reverse_time(Var a) {
    check_rank(a, 3, "reverse_time");
    return make(nodes_[a.id].val.shape, {a.id},
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& x = g.nodes_[n.parents[0]].val;
                  const auto B = x.shape[0], Tn = x.shape[1], D = x.shape[2];
                  for (std::int64_t b = 0; b < B; ++b)
                    for (std::int64_t t = 0; t < Tn; ++t)
                      for (std::int64_t d = 0; d < D; ++d)
                        n.val.at(b, t, d) = x.at(b, Tn - 1 - t, d);
                },
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  auto& p = g.nodes_[n.parents[0]];
                  if (!p.requires_grad) return;
                  const auto B = n.val.shape[0], Tn = n.val.shape[1], D = n.val.shape[2];
                  for (std::int64_t b = 0; b < B; ++b)
                    for (std::int64_t t = 0; t < Tn; ++t)
                      for (std::int64_t d = 0; d < D; ++d)
                        p.grad.at(b, Tn - 1 - t, d) += n.grad.at(b, t, d);
                });
  }

  /// Concatenates rank-2 tensors [R,Di] along the last dimension.
  Var concat_last(const std::vector<Var>& parts) {
    if (parts.empty()) throw ParamError("concat_last: no inputs");
    std::int64_t rows = nodes_[parts[0].id].val.shape[0];
    std::int64_t cols = 0;
    std::vector<int> ids;
    for (Var p : parts) {
      check_rank(p, 2, "concat_last");
      if (nodes_[p.id].val.shape[0] != rows) throw ShapeError("concat_last: row mismatch");
      cols += nodes_[p.id].val.shape[1];
      ids.push_back(p.id);
    }
    return make({rows, cols}, ids,
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto R = n.val.shape[0];
                  std::int64_t off = 0;
                  for (int pid : n.parents) {
                    const auto& x = g.nodes_[pid].val;
                    const auto C = x.shape[1];
                    for (std::int64_t r = 0; r < R; ++r)
                      for (std::int64_t c = 0; c < C; ++c) n.val.at(r, off + c) = x.at(r, c);
                    off += C;
                  }
                },
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto R = n.val.shape[0];
                  std::int64_t off = 0;
                  for (int pid : n.parents) {
                    auto& p = g.nodes_[pid];
                    const auto C = p.val.shape[1];
                    if (p.requires_grad)
                      for (std::int64_t r = 0; r < R; ++r)
                        for (std::int64_t c = 0; c < C; ++c) p.grad.at(r, c) += n.grad.at(r, off + c);
                    off += C;
                  }
                });
  }

  // ---- activations ----

  Var tanh_(Var a) {
    return make(nodes_[a.id].val.shape, {a.id},
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& x = g.nodes_[n.parents[0]].val.v;
                  for (std::size_t i = 0; i < n.val.v.size(); ++i)
                    n.val.v[i] = std::tanh(x[i]);
                },
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  auto& p = g.nodes_[n.parents[0]];
                  if (!p.requires_grad) return;
                  for (std::size_t i = 0; i < n.val.v.size(); ++i)
                    p.grad.v[i] += n.grad.v[i] * (T(1) - n.val.v[i] * n.val.v[i]);
                });
  }

  Var sigmoid_(Var a) {
    return make(nodes_[a.id].val.shape, {a.id},
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& x = g.nodes_[n.parents[0]].val.v;
                  for (std::size_t i = 0; i < n.val.v.size(); ++i) n.val.v[i] = sigmoid_scalar(x[i]);
                },
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  auto& p = g.nodes_[n.parents[0]];
                  if (!p.requires_grad) return;
                  for (std::size_t i = 0; i < n.val.v.size(); ++i)
                    p.grad.v[i] += n.grad.v[i] * n.val.v[i] * (T(1) - n.val.v[i]);
                });
  }

  Var relu(Var a) {
    return make(nodes_[a.id].val.shape, {a.id},
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& x = g.nodes_[n.parents[0]].val.v;
                  for (std::size_t i = 0; i < n.val.v.size(); ++i)
                    n.val.v[i] = x[i] > T(0) ? x[i] : T(0);
                },
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  auto& p = g.nodes_[n.parents[0]];
                  if (!p.requires_grad) return;
                  const auto& x = p.val.v;
                  for (std::size_t i = 0; i < n.val.v.size(); ++i)
                    if (x[i] > T(0)) p.grad.v[i] += n.grad.v[i];
                });
  }

  /// tanh(x) * sigmoid(x), elementwise. Output lies in (-1, 1).
  Var gated(Var a) {
    Var out = make(nodes_[a.id].val.shape, {a.id},
                   [](Graph& g, int id) {
                     auto& n = g.nodes_[id];
                     const auto& x = g.nodes_[n.parents[0]].val.v;
                     auto& th = n.aux[0].v;
                     auto& sg = n.aux[1].v;
                     for (std::size_t i = 0; i < n.val.v.size(); ++i) {
                       th[i] = std::tanh(x[i]);
                       sg[i] = sigmoid_scalar(x[i]);
                       n.val.v[i] = th[i] * sg[i];
                     }
                   },
                   [](Graph& g, int id) {
                     auto& n = g.nodes_[id];
                     auto& p = g.nodes_[n.parents[0]];
                     if (!p.requires_grad) return;
                     const auto& th = n.aux[0].v;
                     const auto& sg = n.aux[1].v;
                     for (std::size_t i = 0; i < n.val.v.size(); ++i) {
                       const T dth = (T(1) - th[i] * th[i]) * sg[i];
                       const T dsg = th[i] * sg[i] * (T(1) - sg[i]);
                       p.grad.v[i] += n.grad.v[i] * (dth + dsg);
                     }
                   },
                   /*aux_shapes=*/{nodes_[a.id].val.shape, nodes_[a.id].val.shape});
    return out;
  }

  // ---- dense layers ----

  /// y = x @ W + b over the last dimension. x is rank 2 or 3; W is [Din,Dout].
  /// Pass b.id = -1 for no bias.
  Var linear(Var x, Var w, Var b) {
    const auto& xs = nodes_[x.id].val.shape;
    const auto& ws = nodes_[w.id].val.shape;
    if (ws.size() != 2) throw ShapeError("linear: weight must be rank 2");
    if (xs.empty() || xs.back() != ws[0])
      throw ShapeError("linear: input width " + nodes_[x.id].val.shape_str() +
                       " does not match weight " + nodes_[w.id].val.shape_str());
    std::vector<std::int64_t> out_shape = xs;
    out_shape.back() = ws[1];
    std::vector<int> parents = {x.id, w.id};
    if (b.id >= 0) {
      if (nodes_[b.id].val.shape != std::vector<std::int64_t>{ws[1]})
        throw ShapeError("linear: bias shape mismatch");
      parents.push_back(b.id);
    }
    return make(std::move(out_shape), parents,
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& xt = g.nodes_[n.parents[0]].val;
                  const auto& wt = g.nodes_[n.parents[1]].val;
                  const std::int64_t din = wt.shape[0], dout = wt.shape[1];
                  const std::int64_t rows = xt.numel() / din;
                  CMap X(xt.v.data(), rows, din);
                  CMap W(wt.v.data(), din, dout);
                  Map Y(n.val.v.data(), rows, dout);
                  Y.noalias() = X * W;
                  if (n.parents.size() > 2) {
                    const auto& bt = g.nodes_[n.parents[2]].val;
                    CMap B(bt.v.data(), 1, dout);
                    Y.rowwise() += B.row(0);
                  }
                },
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  auto& xp = g.nodes_[n.parents[0]];
                  auto& wp = g.nodes_[n.parents[1]];
                  const std::int64_t din = wp.val.shape[0], dout = wp.val.shape[1];
                  const std::int64_t rows = xp.val.numel() / din;
                  CMap X(xp.val.v.data(), rows, din);
                  CMap W(wp.val.v.data(), din, dout);
                  CMap G(n.grad.v.data(), rows, dout);
                  if (xp.requires_grad) {
                    Map DX(xp.grad.v.data(), rows, din);
                    DX.noalias() += G * W.transpose();
                  }
                  if (wp.requires_grad) {
                    Map DW(wp.grad.v.data(), din, dout);
                    DW.noalias() += X.transpose() * G;
                  }
                  if (n.parents.size() > 2 && g.nodes_[n.parents[2]].requires_grad) {
                    auto& bp = g.nodes_[n.parents[2]];
                    Map DB(bp.grad.v.data(), 1, dout);
                    DB.row(0) += G.colwise().sum();
                  }
                });
  }

  /// 1-D convolution over time with dilation and explicit left padding.
  ///
  /// x: [B,T,Din], w: [K,Din,Dout], b: [Dout] (b.id = -1 for none).
  /// out[b,t] = bias + sum_j x[b, t + j*dilation - pad_left] @ w[j], rows
  /// outside [0,T) read as zero. pad_left = (K-1)*dilation gives a causal
  /// layer; pad_left = (K-1)*dilation/2 with dilation 1 gives same-padding.
  Var conv1d(Var x, Var w, Var b, std::int64_t dilation, std::int64_t pad_left) {
    if (dilation <= 0) throw ParamError("conv1d: dilation must be positive");
    check_rank(x, 3, "conv1d");
    const auto& ws = nodes_[w.id].val.shape;
    if (ws.size() != 3) throw ShapeError("conv1d: weight must be [K,Din,Dout]");
    if (ws[0] <= 0) throw ParamError("conv1d: kernel_size must be positive");
    if (nodes_[x.id].val.shape[2] != ws[1]) throw ShapeError("conv1d: channel mismatch");
    std::vector<int> parents = {x.id, w.id};
    if (b.id >= 0) parents.push_back(b.id);
    std::vector<std::int64_t> out_shape = nodes_[x.id].val.shape;
    out_shape[2] = ws[2];
    return make(std::move(out_shape), parents,
                [dilation, pad_left](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& xt = g.nodes_[n.parents[0]].val;
                  const auto& wt = g.nodes_[n.parents[1]].val;
                  const std::int64_t B = xt.shape[0], Tn = xt.shape[1];
                  const std::int64_t K = wt.shape[0], din = wt.shape[1], dout = wt.shape[2];
                  n.val.fill(T(0));
                  for (std::int64_t bb = 0; bb < B; ++bb) {
                    CMap X(&xt.v[static_cast<std::size_t>(bb * Tn * din)], Tn, din);
                    Map Y(&n.val.v[static_cast<std::size_t>(bb * Tn * dout)], Tn, dout);
                    for (std::int64_t j = 0; j < K; ++j) {
                      const std::int64_t off = j * dilation - pad_left;
                      const std::int64_t t0 = std::max<std::int64_t>(0, -off);
                      const std::int64_t t1 = std::min<std::int64_t>(Tn, Tn - off);
                      if (t0 >= t1) continue;
                      CMap Wj(&wt.v[static_cast<std::size_t>(j * din * dout)], din, dout);
                      Y.middleRows(t0, t1 - t0).noalias() +=
                          X.middleRows(t0 + off, t1 - t0) * Wj;
                    }
                    if (n.parents.size() > 2) {
                      const auto& bt = g.nodes_[n.parents[2]].val;
                      CMap Bv(bt.v.data(), 1, dout);
                      Y.rowwise() += Bv.row(0);
                    }
                  }
                },
                [dilation, pad_left](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  auto& xp = g.nodes_[n.parents[0]];
                  auto& wp = g.nodes_[n.parents[1]];
                  const std::int64_t B = xp.val.shape[0], Tn = xp.val.shape[1];
                  const std::int64_t K = wp.val.shape[0], din = wp.val.shape[1],
                                     dout = wp.val.shape[2];
                  for (std::int64_t bb = 0; bb < B; ++bb) {
                    CMap X(&xp.val.v[static_cast<std::size_t>(bb * Tn * din)], Tn, din);
                    CMap G(&n.grad.v[static_cast<std::size_t>(bb * Tn * dout)], Tn, dout);
                    for (std::int64_t j = 0; j < K; ++j) {
                      const std::int64_t off = j * dilation - pad_left;
                      const std::int64_t t0 = std::max<std::int64_t>(0, -off);
                      const std::int64_t t1 = std::min<std::int64_t>(Tn, Tn - off);
                      if (t0 >= t1) continue;
                      CMap Wj(&wp.val.v[static_cast<std::size_t>(j * din * dout)], din, dout);
                      if (xp.requires_grad) {
                        Map DX(&xp.grad.v[static_cast<std::size_t>(bb * Tn * din)], Tn, din);
                        DX.middleRows(t0 + off, t1 - t0).noalias() +=
                            G.middleRows(t0, t1 - t0) * Wj.transpose();
                      }
                      if (wp.requires_grad) {
                        Map DW(&wp.grad.v[static_cast<std::size_t>(j * din * dout)], din, dout);
                        DW.noalias() += X.middleRows(t0 + off, t1 - t0).transpose() *
                                        G.middleRows(t0, t1 - t0);
                      }
                    }
                    if (n.parents.size() > 2 && g.nodes_[n.parents[2]].requires_grad) {
                      auto& bp = g.nodes_[n.parents[2]];
                      Map DB(bp.grad.v.data(), 1, dout);
                      DB.row(0) += G.colwise().sum();
                    }
                  }
                });
  }

  /// Layer normalization over the last dimension with learned scale and shift.
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
    const auto& xs = nodes_[x.id].val.shape;
    const std::int64_t D = xs.back();
    if (nodes_[gamma.id].val.shape != std::vector<std::int64_t>{D} ||
        nodes_[beta.id].val.shape != std::vector<std::int64_t>{D})
      throw ShapeError("layer_norm: scale/shift must be [D]");
    const std::int64_t rows = nodes_[x.id].val.numel() / D;
    const T teps = static_cast<T>(eps);
    return make(xs, {x.id, gamma.id, beta.id},
                [teps](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& xt = g.nodes_[n.parents[0]].val;
                  const auto& gt = g.nodes_[n.parents[1]].val;
                  const auto& bt = g.nodes_[n.parents[2]].val;
                  const std::int64_t D = gt.shape[0];
                  const std::int64_t rows = xt.numel() / D;
                  auto& xhat = n.aux[0];
                  auto& istd = n.aux[1];
                  for (std::int64_t r = 0; r < rows; ++r) {
                    const T* xr = &xt.v[static_cast<std::size_t>(r * D)];
                    T mu = 0;
                    for (std::int64_t i = 0; i < D; ++i) mu += xr[i];
                    mu /= static_cast<T>(D);
                    T var = 0;
                    for (std::int64_t i = 0; i < D; ++i) var += (xr[i] - mu) * (xr[i] - mu);
                    var /= static_cast<T>(D);
                    const T is = T(1) / std::sqrt(var + teps);
                    istd.v[static_cast<std::size_t>(r)] = is;
                    for (std::int64_t i = 0; i < D; ++i) {
                      const T xh = (xr[i] - mu) * is;
                      xhat.v[static_cast<std::size_t>(r * D + i)] = xh;
                      n.val.v[static_cast<std::size_t>(r * D + i)] = gt.v[i] * xh + bt.v[i];
                    }
                  }
                },
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  auto& xp = g.nodes_[n.parents[0]];
                  auto& gp = g.nodes_[n.parents[1]];
                  auto& bp = g.nodes_[n.parents[2]];
                  const std::int64_t D = gp.val.shape[0];
                  const std::int64_t rows = xp.val.numel() / D;
                  const auto& xhat = n.aux[0];
                  const auto& istd = n.aux[1];
                  for (std::int64_t r = 0; r < rows; ++r) {
                    const T* gr = &n.grad.v[static_cast<std::size_t>(r * D)];
                    const T* xh = &xhat.v[static_cast<std::size_t>(r * D)];
                    if (gp.requires_grad)
                      for (std::int64_t i = 0; i < D; ++i) gp.grad.v[i] += gr[i] * xh[i];
                    if (bp.requires_grad)
                      for (std::int64_t i = 0; i < D; ++i) bp.grad.v[i] += gr[i];
                    if (xp.requires_grad) {
                      T m1 = 0, m2 = 0;
                      for (std::int64_t i = 0; i < D; ++i) {
                        const T dxh = gr[i] * gp.val.v[i];
                        m1 += dxh;
                        m2 += dxh * xh[i];
                      }
                      m1 /= static_cast<T>(D);
                      m2 /= static_cast<T>(D);
                      const T is = istd.v[static_cast<std::size_t>(r)];
                      T* dx = &xp.grad.v[static_cast<std::size_t>(r * D)];
                      for (std::int64_t i = 0; i < D; ++i) {
                        const T dxh = gr[i] * gp.val.v[i];
                        dx[i] += is * (dxh - m1 - xh[i] * m2);
                      }
                    }
                  }
                },
                {{rows, D}, {rows}});
  }

  struct AttnVars {
    Var wq, bq, wk, bk, wv, bv, wo, bo;
  };

  /// Multi-head scaled dot-product attention with input/output projections.
  ///
  /// q: [B,Tq,D], k,v: [B,Tk,D]. Softmax uses max subtraction; every score row
  /// therefore sums to one. Output time length equals the query's.
  Var attention(Var q, Var k, Var v, const AttnVars& p, int heads) {
    check_rank(q, 3, "attention");
    check_rank(k, 3, "attention");
    check_rank(v, 3, "attention");
    const auto& qs = nodes_[q.id].val.shape;
    const auto& ks = nodes_[k.id].val.shape;
    const auto& vs = nodes_[v.id].val.shape;
    const std::int64_t D = nodes_[p.wq.id].val.shape[0];
    if (qs[2] != D || ks[2] != D || vs[2] != D)
      throw ShapeError("attention: channel dim mismatch");
    if (ks[1] != vs[1] || ks[0] != vs[0] || qs[0] != ks[0])
      throw ShapeError("attention: key/value time or batch mismatch");
    if (heads <= 0 || D % heads != 0) throw ParamError("attention: heads must divide width");
    const std::int64_t B = qs[0], Tq = qs[1], Tk = ks[1];
    std::vector<int> parents = {q.id,    k.id,    v.id,    p.wq.id, p.bq.id, p.wk.id,
                                p.bk.id, p.wv.id, p.bv.id, p.wo.id, p.bo.id};
    const int H = heads;
    // aux: projected Q, K, V, context C, softmax probs P.
    return make({B, Tq, D}, parents,
                [H](Graph& g, int id) { g.attention_fwd(id, H); },
                [H](Graph& g, int id) { g.attention_bwd(id, H); },
                {{B, Tq, D}, {B, Tk, D}, {B, Tk, D}, {B, Tq, D}, {B * H, Tq, Tk}});
  }

  // ---- reductions ----

  /// Mean over the time axis: [B,T,D] -> [B,D].
  Var mean_time(Var x) {
    check_rank(x, 3, "mean_time");
    const auto& s = nodes_[x.id].val.shape;
    return make({s[0], s[2]}, {x.id},
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& xt = g.nodes_[n.parents[0]].val;
                  const auto B = xt.shape[0], Tn = xt.shape[1], D = xt.shape[2];
                  const T inv = T(1) / static_cast<T>(Tn);
                  for (std::int64_t b = 0; b < B; ++b)
                    for (std::int64_t d = 0; d < D; ++d) {
                      T acc = 0;
                      for (std::int64_t t = 0; t < Tn; ++t) acc += xt.at(b, t, d);
                      n.val.at(b, d) = acc * inv;
                    }
                },
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  auto& p = g.nodes_[n.parents[0]];
                  if (!p.requires_grad) return;
                  const auto B = p.val.shape[0], Tn = p.val.shape[1], D = p.val.shape[2];
                  const T inv = T(1) / static_cast<T>(Tn);
                  for (std::int64_t b = 0; b < B; ++b)
                    for (std::int64_t t = 0; t < Tn; ++t)
                      for (std::int64_t d = 0; d < D; ++d)
                        p.grad.at(b, t, d) += n.grad.at(b, d) * inv;
                });
  }

  /// Mean of all elements -> scalar.
  Var mean_all(Var x) {
    return make({}, {x.id},
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& xv = g.nodes_[n.parents[0]].val.v;
                  T acc = 0;
                  for (const T& e : xv) acc += e;
                  n.val.v[0] = acc / static_cast<T>(xv.size());
                },
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  auto& p = g.nodes_[n.parents[0]];
                  if (!p.requires_grad) return;
                  const T go = n.grad.v[0] / static_cast<T>(p.val.v.size());
                  for (auto& e : p.grad.v) e += go;
                });
  }

  /// Linear time resampling of [B,T,D] to length t_new (endpoints aligned).
  Var resample_time(Var x, std::int64_t t_new) {
    check_rank(x, 3, "resample_time");
    if (t_new <= 0) throw ParamError("resample_time: target length must be positive");
    const auto& s = nodes_[x.id].val.shape;
    return make({s[0], t_new, s[2]}, {x.id},
                [t_new](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& xt = g.nodes_[n.parents[0]].val;
                  const auto B = xt.shape[0], Tn = xt.shape[1], D = xt.shape[2];
                  for (std::int64_t u = 0; u < t_new; ++u) {
                    const auto [i0, i1, w] = resample_linear_coef(Tn, t_new, u);
                    for (std::int64_t b = 0; b < B; ++b)
                      for (std::int64_t d = 0; d < D; ++d)
                        n.val.at(b, u, d) = (T(1) - static_cast<T>(w)) * xt.at(b, i0, d) +
                                            static_cast<T>(w) * xt.at(b, i1, d);
                  }
                },
                [t_new](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  auto& p = g.nodes_[n.parents[0]];
                  if (!p.requires_grad) return;
                  const auto B = p.val.shape[0], Tn = p.val.shape[1], D = p.val.shape[2];
                  for (std::int64_t u = 0; u < t_new; ++u) {
                    const auto [i0, i1, w] = resample_linear_coef(Tn, t_new, u);
                    for (std::int64_t b = 0; b < B; ++b)
                      for (std::int64_t d = 0; d < D; ++d) {
                        p.grad.at(b, i0, d) += (T(1) - static_cast<T>(w)) * n.grad.at(b, u, d);
                        p.grad.at(b, i1, d) += static_cast<T>(w) * n.grad.at(b, u, d);
                      }
                  }
                });
  }

  // ---- losses ----

  /// Mean absolute error between predictions [B] and a constant target.
  Var mae_loss(Var pred, Tensor<T> target) {
    if (nodes_[pred.id].val.numel() != target.numel())
      throw ShapeError("mae_loss: batch size mismatch");
    auto tgt = std::make_shared<Tensor<T>>(std::move(target));
    return make({}, {pred.id},
                [tgt](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& pv = g.nodes_[n.parents[0]].val.v;
                  T acc = 0;
                  for (std::size_t i = 0; i < pv.size(); ++i) acc += std::abs(pv[i] - tgt->v[i]);
                  n.val.v[0] = acc / static_cast<T>(pv.size());
                },
                [tgt](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  auto& p = g.nodes_[n.parents[0]];
                  if (!p.requires_grad) return;
                  const T go = n.grad.v[0] / static_cast<T>(p.val.v.size());
                  for (std::size_t i = 0; i < p.val.v.size(); ++i) {
                    const T e = p.val.v[i] - tgt->v[i];
                    p.grad.v[i] += go * (e > T(0) ? T(1) : (e < T(0) ? T(-1) : T(0)));
                  }
                });
  }

  /// Mean of squared elementwise differences -> scalar.
  Var sqdiff_mean(Var a, Var b) {
    require_same_shape(nodes_[a.id].val, nodes_[b.id].val, "sqdiff_mean");
    return make({}, {a.id, b.id},
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& x = g.nodes_[n.parents[0]].val.v;
                  const auto& y = g.nodes_[n.parents[1]].val.v;
                  T acc = 0;
                  for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
                  n.val.v[0] = acc / static_cast<T>(x.size());
                },
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  auto& pa = g.nodes_[n.parents[0]];
                  auto& pb = g.nodes_[n.parents[1]];
                  const auto& x = pa.val.v;
                  const auto& y = pb.val.v;
                  const T go = T(2) * n.grad.v[0] / static_cast<T>(x.size());
                  for (std::size_t i = 0; i < x.size(); ++i) {
                    const T d = go * (x[i] - y[i]);
                    if (pa.requires_grad) pa.grad.v[i] += d;
                    if (pb.requires_grad) pb.grad.v[i] -= d;
                  }
                });
  }

  /// Mean of absolute elementwise differences -> scalar.
  Var absdiff_mean(Var a, Var b) {
    require_same_shape(nodes_[a.id].val, nodes_[b.id].val, "absdiff_mean");
    return make({}, {a.id, b.id},
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& x = g.nodes_[n.parents[0]].val.v;
                  const auto& y = g.nodes_[n.parents[1]].val.v;
                  T acc = 0;
                  for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(x[i] - y[i]);
                  n.val.v[0] = acc / static_cast<T>(x.size());
                },
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  auto& pa = g.nodes_[n.parents[0]];
                  auto& pb = g.nodes_[n.parents[1]];
                  const auto& x = pa.val.v;
                  const auto& y = pb.val.v;
                  const T go = n.grad.v[0] / static_cast<T>(x.size());
                  for (std::size_t i = 0; i < x.size(); ++i) {
                    const T e = x[i] - y[i];
                    const T s = e > T(0) ? T(1) : (e < T(0) ? T(-1) : T(0));
                    if (pa.requires_grad) pa.grad.v[i] += go * s;
                    if (pb.requires_grad) pb.grad.v[i] -= go * s;
                  }
                });
  }

  /// Smooth-L1 between a prediction [B,T,F] and a constant target, evaluated
  /// only at time steps flagged missing, averaged over the selected elements.
  /// With no missing steps the value is 0 and no gradient flows.
  Var smooth_l1_masked(Var pred, Tensor<T> target, std::vector<std::uint8_t> missing,
                       double beta = 1.0) {
    check_rank(pred, 3, "smooth_l1_masked");
    const auto& s = nodes_[pred.id].val.shape;
    if (nodes_[pred.id].val.numel() != target.numel())
      throw ShapeError("smooth_l1_masked: target shape mismatch");
    if (static_cast<std::int64_t>(missing.size()) != s[0] * s[1])
      throw ShapeError("smooth_l1_masked: mask length mismatch");
    auto tgt = std::make_shared<Tensor<T>>(std::move(target));
    auto msk = std::make_shared<std::vector<std::uint8_t>>(std::move(missing));
    const T tb = static_cast<T>(beta);
    return make({}, {pred.id},
                [tgt, msk, tb](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& pt = g.nodes_[n.parents[0]].val;
                  const std::int64_t F = pt.shape[2];
                  std::int64_t count = 0;
                  T acc = 0;
                  for (std::size_t r = 0; r < msk->size(); ++r) {
                    if (!(*msk)[r]) continue;
                    count += F;
                    for (std::int64_t f = 0; f < F; ++f) {
                      const std::size_t i = r * static_cast<std::size_t>(F) +
                                            static_cast<std::size_t>(f);
                      const T e = pt.v[i] - tgt->v[i];
                      const T ae = std::abs(e);
                      acc += ae < tb ? T(0.5) * e * e / tb : ae - T(0.5) * tb;
                    }
                  }
                  n.val.v[0] = count ? acc / static_cast<T>(count) : T(0);
                },
                [tgt, msk, tb](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  auto& p = g.nodes_[n.parents[0]];
                  if (!p.requires_grad) return;
                  const std::int64_t F = p.val.shape[2];
                  std::int64_t count = 0;
                  for (std::size_t r = 0; r < msk->size(); ++r)
                    if ((*msk)[r]) count += F;
                  if (!count) return;
                  const T go = n.grad.v[0] / static_cast<T>(count);
                  for (std::size_t r = 0; r < msk->size(); ++r) {
                    if (!(*msk)[r]) continue;
                    for (std::int64_t f = 0; f < F; ++f) {
                      const std::size_t i = r * static_cast<std::size_t>(F) +
                                            static_cast<std::size_t>(f);
                      const T e = p.val.v[i] - tgt->v[i];
                      const T d = std::abs(e) < tb ? e / tb
                                                   : (e > T(0) ? T(1) : (e < T(0) ? T(-1) : T(0)));
                      p.grad.v[i] += go * d;
                    }
                  }
                });
  }

  /// Mean over rows of the negative cosine similarity between p and z
  /// ([B,D] each). Rows where either norm falls below 1e-12 contribute 0.
  Var neg_cosine_rowmean(Var p, Var z) {
    check_rank(p, 2, "neg_cosine_rowmean");
    require_same_shape(nodes_[p.id].val, nodes_[z.id].val, "neg_cosine_rowmean");
    return make({}, {p.id, z.id},
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  const auto& pt = g.nodes_[n.parents[0]].val;
                  const auto& zt = g.nodes_[n.parents[1]].val;
                  const std::int64_t B = pt.shape[0], D = pt.shape[1];
                  T acc = 0;
                  for (std::int64_t b = 0; b < B; ++b) {
                    T dot = 0, np = 0, nz = 0;
                    for (std::int64_t d = 0; d < D; ++d) {
                      dot += pt.at(b, d) * zt.at(b, d);
                      np += pt.at(b, d) * pt.at(b, d);
                      nz += zt.at(b, d) * zt.at(b, d);
                    }
                    np = std::sqrt(np);
                    nz = std::sqrt(nz);
                    if (np < T(1e-12) || nz < T(1e-12)) continue;
                    acc += -dot / (np * nz);
                  }
                  n.val.v[0] = acc / static_cast<T>(B);
                },
                [](Graph& g, int id) {
                  auto& n = g.nodes_[id];
                  auto& pp = g.nodes_[n.parents[0]];
                  auto& pz = g.nodes_[n.parents[1]];
                  const std::int64_t B = pp.val.shape[0], D = pp.val.shape[1];
                  const T go = n.grad.v[0] / static_cast<T>(B);
                  for (std::int64_t b = 0; b < B; ++b) {
                    T dot = 0, np2 = 0, nz2 = 0;
                    for (std::int64_t d = 0; d < D; ++d) {
                      dot += pp.val.at(b, d) * pz.val.at(b, d);
                      np2 += pp.val.at(b, d) * pp.val.at(b, d);
                      nz2 += pz.val.at(b, d) * pz.val.at(b, d);
                    }
                    const T np = std::sqrt(np2);
                    const T nz = std::sqrt(nz2);
                    if (np < T(1e-12) || nz < T(1e-12)) continue;
                    const T inv = T(1) / (np * nz);
                    for (std::int64_t d = 0; d < D; ++d) {
                      if (pp.requires_grad)
                        pp.grad.at(b, d) +=
                            go * (-pz.val.at(b, d) * inv + dot * pp.val.at(b, d) / (np2 * np * nz));
                      if (pz.requires_grad)
                        pz.grad.at(b, d) +=
                            go * (-pp.val.at(b, d) * inv + dot * pz.val.at(b, d) / (nz2 * nz * np));
                    }
                  }
                });
  }

  // ---- engine ----

  /// Backpropagates from a scalar loss node. Gradients accumulate in node
  /// grad buffers; call sync_param_grads afterwards to push them into bound
  /// parameter tensors.
  void backward(Var loss) {
    if (nodes_[loss.id].val.numel() != 1)
      throw ShapeError("backward: loss must be a scalar");
    for (auto& n : nodes_) {
      if (n.requires_grad) {
        if (!n.grad.same_shape(n.val)) n.grad = Tensor<T>(n.val.shape);
        n.grad.fill(T(0));
      }
    }
    if (!nodes_[loss.id].requires_grad) return;  // constant graph
    nodes_[loss.id].grad.v[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      auto& n = nodes_[i];
      if (n.requires_grad && n.bwd) n.bwd(*this, i);
    }
  }

  /// Adds every bound parameter leaf's gradient into its ParamTensor.grad.
  /// Frozen (non-trainable) parameters are skipped and keep zero updates.
  void sync_param_grads() {
    for (auto& n : nodes_) {
      if (!n.bound || !n.bound->trainable) continue;
      for (std::size_t i = 0; i < n.grad.v.size(); ++i) n.bound->grad.v[i] += n.grad.v[i];
    }
  }

  /// Re-executes every forward closure in creation order. Leaf values may be
  /// mutated in place beforehand.
  void recompute() {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].fwd) nodes_[i].fwd(*this, static_cast<int>(i));
  }

 private:
  std::vector<Node> nodes_;

  static T sigmoid_scalar(T x) {
    if (x >= T(0)) {
      const T e = std::exp(-x);
      return T(1) / (T(1) + e);
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
  }

  void check_rank(Var x, int r, const char* where) const {
    if (nodes_[x.id].val.rank() != r)
      throw ShapeError(std::string(where) + ": expected rank " + std::to_string(r) + ", got " +
                       nodes_[x.id].val.shape_str());
  }

  void scatter_each(int pid, const Tensor<T>& g, T factor) {
    auto& p = nodes_[pid];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < g.v.size(); ++i) p.grad.v[i] += factor * g.v[i];
  }

  Var make(std::vector<std::int64_t> shape, std::vector<int> parents, Fn fwd, Fn bwd,
           std::vector<std::vector<std::int64_t>> aux_shapes = {}) {
    Node n;
    n.val = Tensor<T>(std::move(shape));
    n.parents = std::move(parents);
    n.fwd = std::move(fwd);
    n.bwd = std::move(bwd);
    for (auto& s : aux_shapes) n.aux.emplace_back(std::move(s));
    for (int pid : n.parents)
      if (nodes_[pid].requires_grad) n.requires_grad = true;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    nodes_[id].fwd(*this, id);
    return Var{id};
  }

  void attention_fwd(int id, int H) {
    auto& n = nodes_[id];
    const auto& qt = nodes_[n.parents[0]].val;
    const auto& kt = nodes_[n.parents[1]].val;
    const auto& vt = nodes_[n.parents[2]].val;
    const std::int64_t B = qt.shape[0], Tq = qt.shape[1], Tk = kt.shape[1];
    const std::int64_t D = nodes_[n.parents[3]].val.shape[0];
    const std::int64_t Dh = D / H;
    auto& Q = n.aux[0];
    auto& K = n.aux[1];
    auto& V = n.aux[2];
    auto& C = n.aux[3];
    auto& P = n.aux[4];
    project(qt, n.parents[3], n.parents[4], Q);
    project(kt, n.parents[5], n.parents[6], K);
    project(vt, n.parents[7], n.parents[8], V);
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(Dh));
    Mat S(Tq, Tk);
    for (std::int64_t b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        CMap Qb(&Q.v[static_cast<std::size_t>(b * Tq * D)], Tq, D);
        CMap Kb(&K.v[static_cast<std::size_t>(b * Tk * D)], Tk, D);
        CMap Vb(&V.v[static_cast<std::size_t>(b * Tk * D)], Tk, D);
        auto Qh = Qb.middleCols(h * Dh, Dh);
        auto Kh = Kb.middleCols(h * Dh, Dh);
        S.noalias() = Qh * Kh.transpose() * inv_sqrt;
        Map Pm(&P.v[static_cast<std::size_t>((b * H + h) * Tq * Tk)], Tq, Tk);
        for (std::int64_t r = 0; r < Tq; ++r) {
          const T mx = S.row(r).maxCoeff();
          T sum = 0;
          for (std::int64_t c = 0; c < Tk; ++c) {
            const T e = std::exp(S(r, c) - mx);
            Pm(r, c) = e;
            sum += e;
          }
          Pm.row(r) /= sum;
        }
        Map Cb(&C.v[static_cast<std::size_t>(b * Tq * D)], Tq, D);
        Cb.middleCols(h * Dh, Dh).noalias() = Pm * Vb.middleCols(h * Dh, Dh);
      }
    }
    // output projection
    CMap Cm(C.v.data(), B * Tq, D);
    CMap Wo(nodes_[n.parents[9]].val.v.data(), D, D);
    CMap Bo(nodes_[n.parents[10]].val.v.data(), 1, D);
    Map Y(n.val.v.data(), B * Tq, D);
    Y.noalias() = Cm * Wo;
    Y.rowwise() += Bo.row(0);
  }

  void attention_bwd(int id, int H) {
    auto& n = nodes_[id];
    auto& qp = nodes_[n.parents[0]];
    auto& kp = nodes_[n.parents[1]];
    auto& vp = nodes_[n.parents[2]];
    const std::int64_t B = qp.val.shape[0], Tq = qp.val.shape[1], Tk = kp.val.shape[1];
    const std::int64_t D = nodes_[n.parents[3]].val.shape[0];
    const std::int64_t Dh = D / H;
    const auto& Q = n.aux[0];
    const auto& K = n.aux[1];
    const auto& V = n.aux[2];
    const auto& C = n.aux[3];
    const auto& P = n.aux[4];
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(Dh));

    // through output projection
    CMap G(n.grad.v.data(), B * Tq, D);
    CMap Cm(C.v.data(), B * Tq, D);
    CMap Wo(nodes_[n.parents[9]].val.v.data(), D, D);
    Mat dC(B * Tq, D);
    dC.noalias() = G * Wo.transpose();
    if (nodes_[n.parents[9]].requires_grad) {
      Map DWo(nodes_[n.parents[9]].grad.v.data(), D, D);
      DWo.noalias() += Cm.transpose() * G;
    }
    if (nodes_[n.parents[10]].requires_grad) {
      Map DBo(nodes_[n.parents[10]].grad.v.data(), 1, D);
      DBo.row(0) += G.colwise().sum();
    }

    Mat dQ = Mat::Zero(B * Tq, D);
    Mat dK = Mat::Zero(B * Tk, D);
    Mat dV = Mat::Zero(B * Tk, D);
    Mat dP(Tq, Tk), dS(Tq, Tk);
    for (std::int64_t b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        CMap Qb(&Q.v[static_cast<std::size_t>(b * Tq * D)], Tq, D);
        CMap Kb(&K.v[static_cast<std::size_t>(b * Tk * D)], Tk, D);
        CMap Vb(&V.v[static_cast<std::size_t>(b * Tk * D)], Tk, D);
        CMap Pm(&P.v[static_cast<std::size_t>((b * H + h) * Tq * Tk)], Tq, Tk);
        auto dCh = dC.middleRows(b * Tq, Tq).middleCols(h * Dh, Dh);
        dP.noalias() = dCh * Vb.middleCols(h * Dh, Dh).transpose();
        dV.middleRows(b * Tk, Tk).middleCols(h * Dh, Dh).noalias() += Pm.transpose() * dCh;
        for (std::int64_t r = 0; r < Tq; ++r) {
          const T rowdot = (dP.row(r).array() * Pm.row(r).array()).sum();
          dS.row(r) = Pm.row(r).array() * (dP.row(r).array() - rowdot);
        }
        dQ.middleRows(b * Tq, Tq).middleCols(h * Dh, Dh).noalias() +=
            dS * Kh_block(Kb, h, Dh) * inv_sqrt;
        dK.middleRows(b * Tk, Tk).middleCols(h * Dh, Dh).noalias() +=
            dS.transpose() * Qb.middleCols(h * Dh, Dh) * inv_sqrt;
      }
    }
    project_bwd(qp, n.parents[3], n.parents[4], dQ);
    project_bwd(kp, n.parents[5], n.parents[6], dK);
    project_bwd(vp, n.parents[7], n.parents[8], dV);
  }

  static Mat Kh_block(CMap Kb, int h, std::int64_t Dh) { return Kb.middleCols(h * Dh, Dh); }

  void project(const Tensor<T>& x, int wid, int bid, Tensor<T>& out) {
    const auto& wt = nodes_[wid].val;
    const std::int64_t din = wt.shape[0], dout = wt.shape[1];
    const std::int64_t rows = x.numel() / din;
    CMap X(x.v.data(), rows, din);
    CMap W(wt.v.data(), din, dout);
    CMap Bv(nodes_[bid].val.v.data(), 1, dout);
    Map Y(out.v.data(), rows, dout);
    Y.noalias() = X * W;
    Y.rowwise() += Bv.row(0);
  }

  void project_bwd(Node& xp, int wid, int bid, const Mat& dY) {
    const auto& wt = nodes_[wid].val;
    const std::int64_t din = wt.shape[0], dout = wt.shape[1];
    const std::int64_t rows = xp.val.numel() / din;
    CMap X(xp.val.v.data(), rows, din);
    CMap W(wt.v.data(), din, dout);
    if (xp.requires_grad) {
      Map DX(xp.grad.v.data(), rows, din);
      DX.noalias() += dY * W.transpose();
    }
    if (nodes_[wid].requires_grad) {
      Map DW(nodes_[wid].grad.v.data(), din, dout);
      DW.noalias() += X.transpose() * dY;
    }
    if (nodes_[bid].requires_grad) {
      Map DB(nodes_[bid].grad.v.data(), 1, dout);
      DB.row(0) += dY.colwise().sum();
    }
  }
};

}  // namespace msrd
