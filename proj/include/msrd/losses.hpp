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
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "msrd/data.hpp"
#include "msrd/layers.hpp"

namespace msrd {

struct LossWeights {
  double lambda1 = 0.01;
  double lambda2 = 0.1;
  double lambda3 = 0.1;

  void validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0)
      throw ParamError("loss weights must be nonnegative");
  }
};

/// On/off switches for the three auxiliary loss families. Switching a family
/// off removes both its weighted and unweighted terms from the objective.
struct LossCombo {
  bool distill = true;
  bool reconstruct = true;
  bool similar = true;
};

enum class Setting { kComplete, kIncomplete };

/// Every individual term plus the composed total for one batch.
///
/// total is defined as the double-precision composition
///   task + l1*(distill_rep + distill_fused + self_distill)
///        + l2*rec_enc + rec_rep + sim_rep + l3*sim_enc
/// of the recorded terms; disabled terms are recorded as zero.
struct LossBreakdown {
  double task = 0;
  double distill_rep = 0;    // teacher->student representation distance (squared, element mean)
  double distill_fused = 0;  // teacher fused output vs student representations (L1 on pooled)
  double self_distill = 0;   // student fused output vs its own representations (squared, pooled)
  double rec_enc = 0;
  double rec_rep = 0;
  double sim_enc = 0;
  double sim_rep = 0;
  double total = 0;

  static double compose(const LossBreakdown& b, const LossWeights& w) {
    return b.task + w.lambda1 * (b.distill_rep + b.distill_fused + b.self_distill) +
           w.lambda2 * b.rec_enc + b.rec_rep + b.sim_rep + w.lambda3 * b.sim_enc;
  }

  bool all_finite() const {
    for (double x : {task, distill_rep, distill_fused, self_distill, rec_enc, rec_rep, sim_enc,
                     sim_rep, total})
      if (!std::isfinite(x)) return false;
    return true;
  }
};

/// Projector/predictor pair used by the similarity loss. The projector maps
/// d -> 2d -> d_p and the predictor bottlenecks d_p -> d_p/4 -> d_p, so the
/// two transforms never share mapping dimensions.
template <class T>
struct SimSiamHeads {
  MlpParams<T> projector;
  MlpParams<T> predictor;
  std::int64_t d_p = 0;

  static SimSiamHeads create(ParamSet<T>& set, const std::string& prefix, std::int64_t d) {
    SimSiamHeads h;
    h.d_p = d;
    h.projector = MlpParams<T>::create(set, prefix + ".proj", d, 2 * d, d);
    h.predictor =
        MlpParams<T>::create(set, prefix + ".pred", d, std::max<std::int64_t>(1, d / 4), d);
    return h;
  }
};

/// Negative cosine similarity of two plain vectors. Either norm below 1e-12
/// flags the pair degenerate and yields 0.
struct SimSiamD {
  double value = 0;
  bool degenerate = false;
};

inline SimSiamD simsiam_D(const std::vector<double>& p1, const std::vector<double>& z2) {
  if (p1.size() != z2.size()) throw ShapeError("simsiam_D: length mismatch");
  double dot = 0, np = 0, nz = 0;
  for (std::size_t i = 0; i < p1.size(); ++i) {
    dot += p1[i] * z2[i];
    np += p1[i] * p1[i];
    nz += z2[i] * z2[i];
  }
  np = std::sqrt(np);
  nz = std::sqrt(nz);
  if (np < 1e-12 || nz < 1e-12) return {0.0, true};
  return {-dot / (np * nz), false};
}

template <class T>
Var task_loss(Graph<T>& g, Var pred, const std::vector<T>& labels) {
  Tensor<T> target({static_cast<std::int64_t>(labels.size())});
  target.v = labels;
  return g.mae_loss(pred, std::move(target));
}

template <class T>
struct DistillTerms {
  Var rep;     // sum_m element-mean squared distance between representations
  Var fused;   // sum_m L1 distance between pooled teacher output and pooled student reps
  Var self_d;  // sum_m squared distance between pooled student output and pooled student reps
};

/// Teacher values are wrapped in stop_gradient here, so no gradient ever
/// reaches them regardless of how the caller built them.
template <class T>
DistillTerms<T> distill_loss(Graph<T>& g, const std::array<Var, kNumModalities>& teacher_rep,
                             Var teacher_fused_pooled,
                             const std::array<Var, kNumModalities>& student_rep,
                             Var student_fused) {
  DistillTerms<T> out{};
  Var tf_pooled = g.stop_gradient(teacher_fused_pooled);
  Var sf_pooled = g.mean_time(student_fused);
  for (int m = 0; m < kNumModalities; ++m) {
    Var t_rep = g.stop_gradient(teacher_rep[m]);
    Var s_pooled = g.mean_time(student_rep[m]);
    Var rep = g.sqdiff_mean(t_rep, student_rep[m]);
    Var fused = g.absdiff_mean(tf_pooled, s_pooled);
    Var self_d = g.sqdiff_mean(sf_pooled, s_pooled);
    out.rep = m == 0 ? rep : g.add(out.rep, rep);
    out.fused = m == 0 ? fused : g.add(out.fused, fused);
    out.self_d = m == 0 ? self_d : g.add(out.self_d, self_d);
  }
  return out;
}

template <class T>
struct RecTerms {
  Var enc;
  Var rep;
};

/// Smooth-L1 reconstruction of the complete sequences at missing steps only,
/// once from encoder features and once from the temporal representations.
/// A batch with no missing steps yields exactly zero for both terms.
template <class T>
RecTerms<T> rec_loss(Graph<T>& g, const std::array<Tensor<T>, kNumModalities>& originals,
                     const std::array<Var, kNumModalities>& decoded_enc,
                     const std::array<Var, kNumModalities>& decoded_rep,
                     const std::array<std::vector<std::uint8_t>, kNumModalities>& missing,
                     double beta = 1.0) {
  RecTerms<T> out{};
  for (int m = 0; m < kNumModalities; ++m) {
    Var e = g.smooth_l1_masked(decoded_enc[m], originals[m], missing[m], beta);
    Var r = g.smooth_l1_masked(decoded_rep[m], originals[m], missing[m], beta);
    out.enc = m == 0 ? e : g.add(out.enc, e);
    out.rep = m == 0 ? r : g.add(out.rep, r);
  }
  return out;
}

/// Symmetric similarity term for one (student, teacher) feature pair, both
/// pooled to [B,d]. The predictor sits inside the stop-gradient branch on
/// both sides, exactly as the objective is stated.
template <class T>
Var simsiam_pair(Graph<T>& g, Var student_feat, Var teacher_feat, const SimSiamHeads<T>& heads) {
  Var p1 = heads.projector.apply(g, student_feat);
  Var z2 = g.stop_gradient(heads.predictor.apply(g, teacher_feat));
  Var p2 = heads.projector.apply(g, teacher_feat);
  Var z1 = g.stop_gradient(heads.predictor.apply(g, student_feat));
  return g.add(g.scale(g.neg_cosine_rowmean(p1, z2), 0.5),
               g.scale(g.neg_cosine_rowmean(p2, z1), 0.5));
}

template <class T>
struct SimTerms {
  Var enc;
  Var rep;
};

template <class T>
SimTerms<T> simsiam_loss(Graph<T>& g, const std::array<Var, kNumModalities>& student_enc_pooled,
                         const std::array<Var, kNumModalities>& teacher_enc_pooled,
                         const std::array<Var, kNumModalities>& student_rep_pooled,
                         const std::array<Var, kNumModalities>& teacher_rep_pooled,
                         const SimSiamHeads<T>& heads) {
  SimTerms<T> out{};
  for (int m = 0; m < kNumModalities; ++m) {
    Var e = simsiam_pair(g, student_enc_pooled[m], teacher_enc_pooled[m], heads);
    Var r = simsiam_pair(g, student_rep_pooled[m], teacher_rep_pooled[m], heads);
    out.enc = m == 0 ? e : g.add(out.enc, e);
    out.rep = m == 0 ? r : g.add(out.rep, r);
  }
  return out;
}

/// Scalar terms feeding the composed objective. Vars with id < 0 stand for
/// absent terms.
template <class T>
struct LossTerms {
  Var task{-1};
  Var distill_rep{-1}, distill_fused{-1}, self_distill{-1};
  Var rec_enc{-1}, rec_rep{-1};
  Var sim_enc{-1}, sim_rep{-1};
};

template <class T>
struct ComposedLoss {
  Var total;
  LossBreakdown breakdown;
};

/// Builds the weighted total on the graph and records the breakdown. In the
/// complete setting the objective is the task term alone.
template <class T>
ComposedLoss<T> total_loss(Graph<T>& g, const LossTerms<T>& terms, const LossWeights& weights,
                           Setting setting, const LossCombo& combo = {}) {
  weights.validate();
  ComposedLoss<T> out;
  auto value = [&](Var v) { return v.id >= 0 ? static_cast<double>(g.val(v).v[0]) : 0.0; };
  out.breakdown.task = value(terms.task);
  Var total = terms.task;
  if (setting == Setting::kIncomplete) {
    if (combo.distill && terms.distill_rep.id >= 0) {
      out.breakdown.distill_rep = value(terms.distill_rep);
      out.breakdown.distill_fused = value(terms.distill_fused);
      out.breakdown.self_distill = value(terms.self_distill);
      Var dis = g.add(g.add(terms.distill_rep, terms.distill_fused), terms.self_distill);
      total = g.add(total, g.scale(dis, weights.lambda1));
    }
    if (combo.reconstruct && terms.rec_enc.id >= 0) {
      out.breakdown.rec_enc = value(terms.rec_enc);
      out.breakdown.rec_rep = value(terms.rec_rep);
      total = g.add(total, g.scale(terms.rec_enc, weights.lambda2));
      total = g.add(total, terms.rec_rep);
    }
    if (combo.similar && terms.sim_enc.id >= 0) {
      out.breakdown.sim_enc = value(terms.sim_enc);
      out.breakdown.sim_rep = value(terms.sim_rep);
      total = g.add(total, terms.sim_rep);
      total = g.add(total, g.scale(terms.sim_enc, weights.lambda3));
    }
  }
  out.total = total;
  out.breakdown.total = LossBreakdown::compose(out.breakdown, weights);
  return out;
}

}  // namespace msrd
