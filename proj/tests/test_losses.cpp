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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "msrd/gradcheck.hpp"
#include "msrd/losses.hpp"

using namespace msrd;

namespace {

using G = Graph<double>;

Tensor<double> rand_t(std::vector<std::int64_t> shape, Rng& rng) {
  return Tensor<double>::normal(std::move(shape), rng);
}

/// Heads that act as the identity in tanh's linear regime: w1 scales by a
/// tiny eps, w2 undoes it. The predictor's bottleneck can only preserve its
/// first hidden-many coordinates, so callers must keep features inside that
/// subspace.
SimSiamHeads<double> identity_like_heads(ParamSet<double>& set, std::int64_t d) {
  auto heads = SimSiamHeads<double>::create(set, "heads", d);
  const double eps = 1e-4;
  for (auto& x : heads.projector.w1->value.v) x = 0;
  for (std::int64_t i = 0; i < d; ++i) heads.projector.w1->value.at(i, i) = eps;
  for (auto& x : heads.projector.w2->value.v) x = 0;
  for (std::int64_t i = 0; i < d; ++i) heads.projector.w2->value.at(i, i) = 1.0 / eps;
  const std::int64_t h = heads.predictor.w1->value.shape[1];
  for (auto& x : heads.predictor.w1->value.v) x = 0;
  for (std::int64_t i = 0; i < std::min(d, h); ++i) heads.predictor.w1->value.at(i, i) = eps;
  for (auto& x : heads.predictor.w2->value.v) x = 0;
  for (std::int64_t i = 0; i < std::min(d, h); ++i) heads.predictor.w2->value.at(i, i) = 1.0 / eps;
  return heads;
}

}  // namespace

TEST_CASE("task loss basics") {
  G g;
  Rng rng(1);
  Tensor<double> same = rand_t({5}, rng);
  Var p_same = g.input(same);
  CHECK(g.val(task_loss(g, p_same, same.v)).v[0] == 0.0);

  Tensor<double> p({2});
  p.at(0) = 1;
  p.at(1) = -1;
  Var pv = g.input(p);
  CHECK(g.val(task_loss(g, pv, {0.0, 0.0})).v[0] == 1.0);
}

TEST_CASE("task loss equals an independently summed scalar oracle") {
  G g;
  Rng rng(2);
  Tensor<double> p = rand_t({32}, rng);
  Tensor<double> y = rand_t({32}, rng);
  Var loss = task_loss(g, g.input(p), y.v);
  double want = 0;
  for (int i = 0; i < 32; ++i) want += std::abs(p.v[i] - y.v[i]);
  want /= 32;
  CHECK(g.val(loss).v[0] == doctest::Approx(want).epsilon(1e-15));
}

TEST_CASE("distillation terms vanish when every compared pair agrees") {
  G g;
  Rng rng(3);
  // all representations and the fused stream share one tensor, so every
  // compared pair (rep vs rep, pooled fused vs pooled rep) is equal
  Tensor<double> z = rand_t({2, 4, 5}, rng);
  std::array<Var, 3> teacher{g.input(z), g.input(z), g.input(z)};
  std::array<Var, 3> student{g.input(z), g.input(z), g.input(z)};
  Var student_fused = g.input(z);
  Var teacher_fused_pooled = g.mean_time(g.input(z));
  auto dis = distill_loss(g, teacher, teacher_fused_pooled, student, student_fused);
  CHECK(g.val(dis.rep).v[0] == 0.0);
  CHECK(g.val(dis.fused).v[0] == 0.0);
  CHECK(g.val(dis.self_d).v[0] == 0.0);
}

TEST_CASE("distillation hand-arithmetic oracle on single-element tensors") {
  // one modality, all tensors holding a single value:
  // teacher rep 1, student rep 0, teacher fused 2, student fused 0.5
  G g;
  auto scalar3 = [&](double x) {
    Tensor<double> t({1, 1, 1});
    t.at(0, 0, 0) = x;
    return t;
  };
  std::array<Var, 3> teacher{g.input(scalar3(1.0)), g.input(scalar3(0.0)), g.input(scalar3(0.0))};
  std::array<Var, 3> student{g.input(scalar3(0.0)), g.input(scalar3(0.0)), g.input(scalar3(0.0))};
  Tensor<double> tf({1, 1});
  tf.at(0, 0) = 2.0;
  auto dis = distill_loss(g, teacher, g.input(tf), student, g.input(scalar3(0.5)));
  // per modality: rep (1-0)^2 + 0 + 0 ; fused |2-0| * 3 ; self (0.5-0)^2 * 3
  CHECK(g.val(dis.rep).v[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(g.val(dis.fused).v[0] == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(g.val(dis.self_d).v[0] == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("no gradient reaches teacher tensors") {
  G g;
  Rng rng(4);
  std::array<Var, 3> teacher, student;
  for (int m = 0; m < 3; ++m) {
    teacher[m] = g.input(rand_t({2, 3, 4}, rng), /*requires_grad=*/true);
    student[m] = g.input(rand_t({2, 3, 4}, rng), true);
  }
  Var teacher_fused_pooled = g.input(rand_t({2, 4}, rng), true);
  Var student_fused = g.input(rand_t({2, 3, 4}, rng), true);
  auto dis = distill_loss(g, teacher, teacher_fused_pooled, student, student_fused);
  Var loss = g.add(g.add(dis.rep, dis.fused), dis.self_d);
  g.backward(loss);
  for (int m = 0; m < 3; ++m) {
    for (double v : g.grad(teacher[m]).v) CHECK(v == 0.0);
    bool nonzero = false;
    for (double v : g.grad(student[m]).v) nonzero |= v != 0.0;
    CHECK(nonzero);
  }
  for (double v : g.grad(teacher_fused_pooled).v) CHECK(v == 0.0);
}

TEST_CASE("reconstruction loss selects only missing steps") {
  G g;
  Rng rng(5);
  const std::int64_t B = 2, T = 4, F = 3;
  std::array<Tensor<double>, 3> originals;
  std::array<Var, 3> dec_enc, dec_rep;
  std::array<std::vector<std::uint8_t>, 3> missing;
  for (int m = 0; m < 3; ++m) {
    originals[m] = rand_t({B, T, F}, rng);
    dec_enc[m] = g.input(originals[m]);  // perfect reconstruction
    dec_rep[m] = g.input(originals[m]);
    missing[m].assign(B * T, 0);
    missing[m][1] = 1;
    missing[m][6] = 1;
  }
  auto rec = rec_loss(g, originals, dec_enc, dec_rep, missing);
  CHECK(g.val(rec.enc).v[0] == 0.0);
  CHECK(g.val(rec.rep).v[0] == 0.0);
}

TEST_CASE("reconstruction loss is zero without missing steps, whatever the decoder says") {
  G g;
  Rng rng(6);
  std::array<Tensor<double>, 3> originals;
  std::array<Var, 3> dec_enc, dec_rep;
  std::array<std::vector<std::uint8_t>, 3> missing;
  for (int m = 0; m < 3; ++m) {
    originals[m] = rand_t({2, 4, 3}, rng);
    dec_enc[m] = g.input(rand_t({2, 4, 3}, rng));  // garbage decodes
    dec_rep[m] = g.input(rand_t({2, 4, 3}, rng));
    missing[m].assign(8, 0);
  }
  auto rec = rec_loss(g, originals, dec_enc, dec_rep, missing);
  CHECK(g.val(rec.enc).v[0] == 0.0);
  CHECK(g.val(rec.rep).v[0] == 0.0);
}

TEST_CASE("smooth-L1 quadratic zone: single missing element with error 0.5") {
  G g;
  Tensor<double> target({1, 1, 1});
  Tensor<double> pred({1, 1, 1});
  pred.at(0, 0, 0) = 0.5;
  Var loss = g.smooth_l1_masked(g.input(pred), target, {1}, 1.0);
  CHECK(g.val(loss).v[0] == doctest::Approx(0.125).epsilon(1e-15));
}

TEST_CASE("reconstruction loss ignores decoder values at available steps bitwise") {
  Rng rng(7);
  const std::int64_t B = 2, T = 5, F = 3;
  Tensor<double> original = rand_t({B, T, F}, rng);
  Tensor<double> decoded = rand_t({B, T, F}, rng);
  std::vector<std::uint8_t> missing(B * T, 0);
  missing[2] = 1;
  missing[7] = 1;
  auto run = [&](const Tensor<double>& dec) {
    G g;
    return g.val(g.smooth_l1_masked(g.input(dec), original, missing, 1.0)).v[0];
  };
  const double base = run(decoded);
  Tensor<double> perturbed = decoded;
  for (std::int64_t r = 0; r < B * T; ++r) {
    if (missing[static_cast<std::size_t>(r)]) continue;
    for (std::int64_t f = 0; f < F; ++f)
      perturbed.v[static_cast<std::size_t>(r * F + f)] += rng.normal();
  }
  CHECK(run(perturbed) == base);
}

TEST_CASE("simsiam_D values") {
  std::vector<double> p = {1.0, 2.0, -0.5};
  std::vector<double> minus_p = {-1.0, -2.0, 0.5};
  CHECK(simsiam_D(p, p).value == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(simsiam_D(p, minus_p).value == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(simsiam_D({1.0, 0.0}, {0.0, 1.0}).value == 0.0);
  auto degenerate = simsiam_D({0.0, 0.0}, {1.0, 1.0});
  CHECK(degenerate.degenerate);
  CHECK(degenerate.value == 0.0);
  CHECK_FALSE(simsiam_D(p, p).degenerate);
}

TEST_CASE("simsiam pair with identical features and identity-like heads is -1") {
  const std::int64_t d = 8;  // predictor bottleneck d/4 = 2
  ParamSet<double> set(8);
  auto heads = identity_like_heads(set, d);
  G g;
  Rng rng(9);
  // features inside the bottleneck-preserved subspace (first two coordinates)
  Tensor<double> feat({3, d});
  for (std::int64_t b = 0; b < 3; ++b) {
    feat.at(b, 0) = rng.normal() + 2.0;
    feat.at(b, 1) = rng.normal();
  }
  Var loss = simsiam_pair(g, g.input(feat), g.input(feat), heads);
  CHECK(g.val(loss).v[0] == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("simsiam pair lies in [-1, 1] for random inputs") {
  ParamSet<double> set(10);
  auto heads = SimSiamHeads<double>::create(set, "h", 6);
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    G g;
    Var loss = simsiam_pair(g, g.input(rand_t({4, 6}, rng)), g.input(rand_t({4, 6}, rng)), heads);
    CHECK(g.val(loss).v[0] >= -1.0 - 1e-12);
    CHECK(g.val(loss).v[0] <= 1.0 + 1e-12);
  }
}

TEST_CASE("parameters reachable only through stop-gradient get exactly zero gradient") {
  ParamSet<double> set(12);
  auto heads = SimSiamHeads<double>::create(set, "h", 4);
  Rng rng(13);
  Tensor<double> a = rand_t({2, 4}, rng);
  Tensor<double> b = rand_t({2, 4}, rng);

  auto grads_for = [&](bool with_sg) {
    G g;
    Var sa = g.input(a);
    Var tb = g.input(b);
    Var p1 = heads.projector.apply(g, sa);
    Var h2 = heads.predictor.apply(g, tb);
    Var z2 = with_sg ? g.stop_gradient(h2) : h2;
    Var p2 = heads.projector.apply(g, tb);
    Var h1 = heads.predictor.apply(g, sa);
    Var z1 = with_sg ? g.stop_gradient(h1) : h1;
    Var loss = g.add(g.scale(g.neg_cosine_rowmean(p1, z2), 0.5),
                     g.scale(g.neg_cosine_rowmean(p2, z1), 0.5));
    set.zero_grads();
    g.backward(loss);
    g.sync_param_grads();
    double pred_abs = 0, proj_abs = 0;
    for (const auto& p : set.items()) {
      double s = 0;
      for (double v : p->grad.v) s += std::abs(v);
      if (p->name.find("h.pred") == 0)
        pred_abs += s;
      else
        proj_abs += s;
    }
    return std::pair{pred_abs, proj_abs};
  };

  auto [pred_sg, proj_sg] = grads_for(true);
  CHECK(pred_sg == 0.0);  // predictor is only ever inside sg
  CHECK(proj_sg > 0.0);
  auto [pred_plain, proj_plain] = grads_for(false);
  CHECK(pred_plain > 0.0);  // removing the marker re-opens the path
}

TEST_CASE("total loss composition and weight validation") {
  LossWeights mosi;  // 0.01, 0.1, 0.1
  CHECK(mosi.lambda1 == 0.01);
  CHECK(mosi.lambda2 == 0.1);
  CHECK(mosi.lambda3 == 0.1);

  G g;
  Rng rng(14);
  LossTerms<double> terms;
  auto scalar_input = [&](double x) { return g.input(Tensor<double>::scalar(x)); };
  terms.task = scalar_input(0.5);
  terms.distill_rep = scalar_input(1.0);
  terms.distill_fused = scalar_input(2.0);
  terms.self_distill = scalar_input(3.0);
  terms.rec_enc = scalar_input(4.0);
  terms.rec_rep = scalar_input(5.0);
  terms.sim_enc = scalar_input(-0.5);
  terms.sim_rep = scalar_input(-0.25);

  auto composed = total_loss(g, terms, mosi, Setting::kIncomplete);
  const double want = 0.5 + 0.01 * (1 + 2 + 3) + 0.1 * 4 + 5 + (-0.25) + 0.1 * (-0.5);
  CHECK(composed.breakdown.total == doctest::Approx(want).epsilon(1e-15));
  CHECK(composed.breakdown.total ==
        LossBreakdown::compose(composed.breakdown, mosi));  // bitwise recomputation

  // SIMS weights: lambda2 = lambda3 = 0 must keep the unweighted terms alive
  LossWeights sims{0.3, 0.0, 0.0};
  auto sims_composed = total_loss(g, terms, sims, Setting::kIncomplete);
  const double sims_want = 0.5 + 0.3 * 6 + 0.0 * 4 + 5 + (-0.25) + 0.0 * (-0.5);
  CHECK(sims_composed.breakdown.total == doctest::Approx(sims_want).epsilon(1e-15));
  CHECK(sims_composed.breakdown.rec_rep == 5.0);
  CHECK(sims_composed.breakdown.sim_rep == -0.25);

  // complete setting: task only
  auto complete = total_loss(g, terms, mosi, Setting::kComplete);
  CHECK(complete.breakdown.total == 0.5);
  CHECK(complete.breakdown.rec_enc == 0.0);

  LossWeights bad{-0.1, 0, 0};
  CHECK_THROWS_AS(total_loss(g, terms, bad, Setting::kIncomplete), ParamError);
}

TEST_CASE("composition identity holds on random batches") {
  Rng rng(15);
  for (int trial = 0; trial < 200; ++trial) {
    G g;
    LossTerms<double> terms;
    auto scalar_input = [&](double x) { return g.input(Tensor<double>::scalar(x)); };
    terms.task = scalar_input(std::abs(rng.normal()));
    terms.distill_rep = scalar_input(std::abs(rng.normal()));
    terms.distill_fused = scalar_input(std::abs(rng.normal()));
    terms.self_distill = scalar_input(std::abs(rng.normal()));
    terms.rec_enc = scalar_input(std::abs(rng.normal()));
    terms.rec_rep = scalar_input(std::abs(rng.normal()));
    terms.sim_enc = scalar_input(rng.uniform(-1, 1));
    terms.sim_rep = scalar_input(rng.uniform(-1, 1));
    LossWeights w{std::abs(rng.normal()), std::abs(rng.normal()), std::abs(rng.normal())};
    auto composed = total_loss(g, terms, w, Setting::kIncomplete);
    CHECK(composed.breakdown.total == LossBreakdown::compose(composed.breakdown, w));
    CHECK(composed.breakdown.all_finite());
  }
}

TEST_CASE("distance ops reject mismatched shapes") {
  G g;
  Rng rng(16);
  Var a = g.input(rand_t({2, 3}, rng));
  Var b = g.input(rand_t({3, 2}, rng));
  CHECK_THROWS_AS(g.sqdiff_mean(a, b), ShapeError);
  CHECK_THROWS_AS(g.absdiff_mean(a, b), ShapeError);
  Var pred = g.input(rand_t({2, 4, 3}, rng));
  CHECK_THROWS_AS(g.smooth_l1_masked(pred, rand_t({2, 4, 3}, rng), std::vector<std::uint8_t>(5, 0)),
                  ShapeError);
  CHECK_THROWS_AS(g.smooth_l1_masked(pred, rand_t({2, 4, 2}, rng), std::vector<std::uint8_t>(8, 0)),
                  ShapeError);
}

TEST_CASE("losses composite passes finite differences end to end") {
  register_model_units();
  for (std::uint64_t seed : {1, 2, 3}) CHECK(grad_check("losses", seed, 1e-6) < 1e-4);
}
