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

#include "msrd/gradcheck.hpp"

#include <limits>

#include "msrd/model.hpp"

namespace msrd {

double run_grad_check(const UnitBuilder& builder, std::uint64_t seed, double epsilon) {
  Graph<double> g;
  Rng rng(derive_seed(seed, hash_name("gradcheck")));
  CheckUnit unit = builder(g, rng);
  if (g.val(unit.loss).numel() != 1) throw ShapeError("grad check unit must end in a scalar");
  g.backward(unit.loss);

  for (Var leaf : unit.zero_leaves)
    for (double x : g.grad(leaf).v)
      if (x != 0.0) return std::numeric_limits<double>::infinity();

  double worst = 0.0;
  for (Var leaf : unit.fd_leaves) {
    const Tensor<double> analytic = g.grad(leaf);
    auto& value = g.mutable_val(leaf);
    for (std::int64_t i = 0; i < value.numel(); ++i) {
      const double saved = value.v[static_cast<std::size_t>(i)];
      value.v[static_cast<std::size_t>(i)] = saved + epsilon;
      g.recompute();
      const double f_plus = g.val(unit.loss).v[0];
      value.v[static_cast<std::size_t>(i)] = saved - epsilon;
      g.recompute();
      const double f_minus = g.val(unit.loss).v[0];
      value.v[static_cast<std::size_t>(i)] = saved;
      const double fd = (f_plus - f_minus) / (2.0 * epsilon);
      const double an = analytic.v[static_cast<std::size_t>(i)];
      const double rel = std::abs(an - fd) / std::max(1.0, std::abs(an));
      if (rel > worst) worst = rel;
    }
    g.recompute();
  }
  return worst;
}

GradCheckRegistry& GradCheckRegistry::instance() {
  static GradCheckRegistry registry;
  return registry;
}

void GradCheckRegistry::add(const std::string& name, UnitBuilder builder) {
  units_[name] = std::move(builder);
}

const UnitBuilder& GradCheckRegistry::find(const std::string& name) const {
  auto it = units_.find(name);
  if (it == units_.end()) throw LookupError("unknown grad check unit: " + name);
  return it->second;
}

std::vector<std::string> GradCheckRegistry::names() const {
  std::vector<std::string> out;
  out.reserve(units_.size());
  for (const auto& [name, _] : units_) out.push_back(name);
  return out;
}

double grad_check(const std::string& op_name, std::uint64_t seed, double epsilon) {
  if (epsilon < 1e-7 || epsilon > 1e-3)
    throw ParamError("grad_check: epsilon must lie in [1e-7, 1e-3]");
  return run_grad_check(GradCheckRegistry::instance().find(op_name), seed, epsilon);
}

namespace {

using G = Graph<double>;

Tensor<double> rand_t(std::vector<std::int64_t> shape, Rng& rng) {
  return Tensor<double>::normal(std::move(shape), rng);
}

/// Fixed random projection turning a tensor output into a scalar objective;
/// catches gradient errors that a plain sum would cancel.
Var project_scalar(G& g, Var out, Rng& rng) {
  Var weights = g.input(rand_t(g.val(out).shape, rng));
  return g.mean_all(g.ewmul(out, weights));
}

void add_once(const std::string& name, UnitBuilder b) {
  auto& reg = GradCheckRegistry::instance();
  if (!reg.contains(name)) reg.add(name, std::move(b));
}

}  // namespace

void register_kernel_units() {
  add_once("linear", [](G& g, Rng& rng) {
    Var x = g.input(rand_t({2, 3, 4}, rng), true);
    Var w = g.input(rand_t({4, 5}, rng), true);
    Var b = g.input(rand_t({5}, rng), true);
    Var y = g.linear(x, w, b);
    return CheckUnit{project_scalar(g, y, rng), {x, w, b}, {}};
  });

  add_once("conv1x1", [](G& g, Rng& rng) {
    Var x = g.input(rand_t({2, 5, 3}, rng), true);
    Var w = g.input(rand_t({1, 3, 4}, rng), true);
    Var b = g.input(rand_t({4}, rng), true);
    Var y = g.conv1d(x, w, b, 1, 0);
    return CheckUnit{project_scalar(g, y, rng), {x, w, b}, {}};
  });

  add_once("dilated_causal_conv", [](G& g, Rng& rng) {
    Var x = g.input(rand_t({2, 8, 3}, rng), true);
    Var w = g.input(rand_t({2, 3, 3}, rng), true);
    Var b = g.input(rand_t({3}, rng), true);
    Var y = g.conv1d(x, w, b, 2, 2);  // K=2, dilation 2, causal padding
    return CheckUnit{project_scalar(g, y, rng), {x, w, b}, {}};
  });

  add_once("gated_activation", [](G& g, Rng& rng) {
    Var x = g.input(rand_t({2, 4, 3}, rng), true);
    Var y = g.gated(x);
    return CheckUnit{project_scalar(g, y, rng), {x}, {}};
  });

  add_once("attention_block", [](G& g, Rng& rng) {
    Var q = g.input(rand_t({2, 3, 4}, rng), true);
    Var k = g.input(rand_t({2, 5, 4}, rng), true);
    Var v = g.input(rand_t({2, 5, 4}, rng), true);
    G::AttnVars p;
    std::vector<Var> leaves = {q, k, v};
    auto mk = [&](std::vector<std::int64_t> s) {
      Var w = g.input(rand_t(std::move(s), rng), true);
      leaves.push_back(w);
      return w;
    };
    p.wq = mk({4, 4}); p.bq = mk({4});
    p.wk = mk({4, 4}); p.bk = mk({4});
    p.wv = mk({4, 4}); p.bv = mk({4});
    p.wo = mk({4, 4}); p.bo = mk({4});
    Var y = g.attention(q, k, v, p, 2);
    return CheckUnit{project_scalar(g, y, rng), leaves, {}};
  });

  add_once("layer_norm", [](G& g, Rng& rng) {
    Var x = g.input(rand_t({3, 6}, rng), true);
    Var gamma = g.input(rand_t({6}, rng), true);
    Var beta = g.input(rand_t({6}, rng), true);
    Var y = g.layer_norm(x, gamma, beta);
    return CheckUnit{project_scalar(g, y, rng), {x, gamma, beta}, {}};
  });

  add_once("mlp", [](G& g, Rng& rng) {
    Var x = g.input(rand_t({3, 4}, rng), true);
    Var w1 = g.input(rand_t({4, 6}, rng), true);
    Var b1 = g.input(rand_t({6}, rng), true);
    Var w2 = g.input(rand_t({6, 2}, rng), true);
    Var b2 = g.input(rand_t({2}, rng), true);
    Var y = g.linear(g.tanh_(g.linear(x, w1, b1)), w2, b2);
    return CheckUnit{project_scalar(g, y, rng), {x, w1, b1, w2, b2}, {}};
  });

  add_once("smooth_l1", [](G& g, Rng& rng) {
    Var pred = g.input(rand_t({2, 5, 3}, rng), true);
    Tensor<double> target = rand_t({2, 5, 3}, rng);
    std::vector<std::uint8_t> missing(10, 0);
    for (std::size_t i = 0; i < missing.size(); ++i) missing[i] = rng.uniform() < 0.5 ? 1 : 0;
    missing[3] = 1;  // at least one selected step
    Var y = g.smooth_l1_masked(pred, std::move(target), std::move(missing));
    return CheckUnit{y, {pred}, {}};
  });

  add_once("l1_distance", [](G& g, Rng& rng) {
    Var a = g.input(rand_t({3, 4}, rng), true);
    Var b = g.input(rand_t({3, 4}, rng), true);
    return CheckUnit{g.absdiff_mean(a, b), {a, b}, {}};
  });

  add_once("l2_distance", [](G& g, Rng& rng) {
    Var a = g.input(rand_t({3, 4}, rng), true);
    Var b = g.input(rand_t({3, 4}, rng), true);
    return CheckUnit{g.sqdiff_mean(a, b), {a, b}, {}};
  });

  add_once("cosine_similarity", [](G& g, Rng& rng) {
    Var p = g.input(rand_t({3, 5}, rng), true);
    Var z = g.input(rand_t({3, 5}, rng), true);
    return CheckUnit{g.neg_cosine_rowmean(p, z), {p, z}, {}};
  });

  add_once("mean_time", [](G& g, Rng& rng) {
    Var x = g.input(rand_t({2, 5, 3}, rng), true);
    return CheckUnit{project_scalar(g, g.mean_time(x), rng), {x}, {}};
  });

  add_once("resample_time", [](G& g, Rng& rng) {
    Var x = g.input(rand_t({2, 5, 3}, rng), true);
    return CheckUnit{project_scalar(g, g.resample_time(x, 8), rng), {x}, {}};
  });

  add_once("reverse_time", [](G& g, Rng& rng) {
    Var x = g.input(rand_t({2, 5, 3}, rng), true);
    return CheckUnit{project_scalar(g, g.reverse_time(x), rng), {x}, {}};
  });

  add_once("mae", [](G& g, Rng& rng) {
    Var pred = g.input(rand_t({6}, rng), true);
    return CheckUnit{g.mae_loss(pred, rand_t({6}, rng)), {pred}, {}};
  });

  // The defined derivative through stop_gradient is zero, so a finite
  // difference over its argument disagrees by design. The weights outside the
  // marker are FD-checked; the argument is asserted exactly zero.
  add_once("stop_gradient", [](G& g, Rng& rng) {
    Var x = g.input(rand_t({3, 4}, rng), true);
    Var w = g.input(rand_t({3, 4}, rng), true);
    Var y = g.ewmul(w, g.stop_gradient(g.tanh_(x)));
    return CheckUnit{g.mean_all(y), {w}, {x}};
  });

  add_once("constant", [](G& g, Rng& rng) {
    Var x = g.input(rand_t({3, 4}, rng), true);
    Var y = g.scale(x, 0.0);
    return CheckUnit{g.mean_all(y), {x}, {x}};
  });
}

void register_model_units() {
  add_once("encoder", [](G& g, Rng& rng) {
    ParamSet<double> set(rng.next_u64());
    auto enc = EncoderParams<double>::create(set, "enc", 3, 8, 2, true);
    Var x = g.input(rand_t({2, 4, 3}, rng), true);
    Var y = encode(g, x, enc);
    std::vector<Var> leaves = {x};
    for (Var p : g.param_leaves()) leaves.push_back(p);
    return CheckUnit{project_scalar(g, y, rng), leaves, {}};
  });

  add_once("temporal_stack", [](G& g, Rng& rng) {
    ParamSet<double> set(rng.next_u64());
    auto params = BiTemporalParams<double>::create(set, "tmp", 4, 3);
    // Zero-initialized mixing convs would hide gradient errors; randomize.
    for (auto& p : set.items())
      if (p->init == Init::kZeros)
        for (auto& x : p->value.v) x = rng.normal(0.0, 0.3);
    Var x = g.input(rand_t({2, 6, 4}, rng), true);
    Var z = bitemporal_forward(g, x, params).z;
    std::vector<Var> leaves = {x};
    for (Var p : g.param_leaves()) leaves.push_back(p);
    return CheckUnit{project_scalar(g, z, rng), leaves, {}};
  });

  add_once("fusion", [](G& g, Rng& rng) {
    ParamSet<double> set(rng.next_u64());
    auto params = FusionParams<double>::create(set, "fus", 8, 2);
    Var zt = g.input(rand_t({2, 4, 8}, rng), true);
    Var za = g.input(rand_t({2, 4, 8}, rng), true);
    Var zv = g.input(rand_t({2, 4, 8}, rng), true);
    auto out = fusion_forward(g, zt, za, zv, params);
    Var pred = predict_head(g, out.y, params.head);
    Var obj = g.add(project_scalar(g, out.y, rng), project_scalar(g, pred, rng));
    std::vector<Var> leaves = {zt, za, zv};
    for (Var p : g.param_leaves()) leaves.push_back(p);
    return CheckUnit{obj, leaves, {}};
  });

  // Full objective composition. Student features feeding the similarity
  // term's stop-gradient branches are untied into separate leaves so the
  // differentiable paths stay finite-difference checkable; the sg-only leaves
  // and the predictor head are asserted exactly zero.
  add_once("losses", [](G& g, Rng& rng) {
    const std::int64_t B = 2, Tn = 3, D = 4;
    ParamSet<double> set(rng.next_u64());
    std::array<MlpParams<double>, 3> dec_enc, dec_rep;
    std::array<std::int64_t, 3> fdim = {3, 4, 2};
    for (int m = 0; m < 3; ++m) {
      dec_enc[m] = MlpParams<double>::create(set, "de" + std::to_string(m), D, D, fdim[m]);
      dec_rep[m] = MlpParams<double>::create(set, "dr" + std::to_string(m), D, D, fdim[m]);
    }
    auto heads = SimSiamHeads<double>::create(set, "sim", D);

    CheckUnit unit;
    std::array<Var, 3> student_rep, student_enc, d_enc, d_rep;
    std::array<Var, 3> teacher_rep;
    std::array<Tensor<double>, 3> originals;
    std::array<std::vector<std::uint8_t>, 3> missing;
    for (int m = 0; m < 3; ++m) {
      student_rep[m] = g.input(rand_t({B, Tn, D}, rng), true);
      student_enc[m] = g.input(rand_t({B, Tn, D}, rng), true);
      teacher_rep[m] = g.input(rand_t({B, Tn, D}, rng));
      originals[m] = rand_t({B, Tn, fdim[m]}, rng);
      missing[m].assign(static_cast<std::size_t>(B * Tn), 0);
      for (auto& f : missing[m]) f = rng.uniform() < 0.4 ? 1 : 0;
      missing[m][1] = 1;
      d_enc[m] = dec_enc[m].apply(g, student_enc[m]);
      d_rep[m] = dec_rep[m].apply(g, student_rep[m]);
      unit.fd_leaves.push_back(student_rep[m]);
      unit.fd_leaves.push_back(student_enc[m]);
    }
    Var student_fused = g.input(rand_t({B, Tn, D}, rng), true);
    Var teacher_fused_pooled = g.input(rand_t({B, D}, rng));
    Var pred = g.input(rand_t({B}, rng), true);
    unit.fd_leaves.push_back(student_fused);
    unit.fd_leaves.push_back(pred);

    LossTerms<double> terms;
    terms.task = task_loss(g, pred, {0.3, -0.8});
    auto dis = distill_loss(g, teacher_rep, teacher_fused_pooled, student_rep, student_fused);
    terms.distill_rep = dis.rep;
    terms.distill_fused = dis.fused;
    terms.self_distill = dis.self_d;
    auto rec = rec_loss(g, originals, d_enc, d_rep, missing);
    terms.rec_enc = rec.enc;
    terms.rec_rep = rec.rep;

    // untied similarity features
    Var sim_enc{-1}, sim_rep{-1};
    for (int m = 0; m < 3; ++m) {
      for (int level = 0; level < 2; ++level) {
        Var s_f = g.input(rand_t({B, D}, rng), true);   // student through projector
        Var s_h = g.input(rand_t({B, D}, rng), true);   // student through sg(predictor)
        Var t_f = g.input(rand_t({B, D}, rng), true);   // teacher through projector
        Var t_h = g.input(rand_t({B, D}, rng), true);   // teacher through sg(predictor)
        Var p1 = heads.projector.apply(g, s_f);
        Var z2 = g.stop_gradient(heads.predictor.apply(g, t_h));
        Var p2 = heads.projector.apply(g, t_f);
        Var z1 = g.stop_gradient(heads.predictor.apply(g, s_h));
        Var pair = g.add(g.scale(g.neg_cosine_rowmean(p1, z2), 0.5),
                         g.scale(g.neg_cosine_rowmean(p2, z1), 0.5));
        Var& slot = level == 0 ? sim_enc : sim_rep;
        slot = slot.id < 0 ? pair : g.add(slot, pair);
        unit.fd_leaves.push_back(s_f);
        unit.fd_leaves.push_back(t_f);
        unit.zero_leaves.push_back(s_h);
        unit.zero_leaves.push_back(t_h);
      }
    }
    terms.sim_enc = sim_enc;
    terms.sim_rep = sim_rep;

    LossWeights weights;  // 0.01, 0.1, 0.1
    auto composed = total_loss(g, terms, weights, Setting::kIncomplete);
    unit.loss = composed.total;
    for (Var p : g.param_leaves()) {
      if (g.leaf_param_name(p).find("sim.pred") == 0)
        unit.zero_leaves.push_back(p);
      else
        unit.fd_leaves.push_back(p);
    }
    return unit;
  });
}

}  // namespace msrd
