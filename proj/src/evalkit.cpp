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

#include "msrd/evalkit.hpp"

#include <algorithm>
#include <cmath>

namespace msrd {

namespace {

int bin5(double x) {
  const double c = std::clamp(x, -2.0, 2.0);
  return static_cast<int>(std::lround(c));
}

int bin3(double x, double threshold) {
  if (x < -threshold) return -1;
  if (x > threshold) return 1;
  return 0;
}

/// Weighted-average F1 over a two-class split given per-sample boolean
/// classes (true = positive class).
double weighted_f1(const std::vector<bool>& pred_pos, const std::vector<bool>& true_pos) {
  const double n = static_cast<double>(true_pos.size());
  double out = 0;
  for (bool cls : {false, true}) {
    double tp = 0, fp = 0, fn = 0, support = 0;
    for (std::size_t i = 0; i < true_pos.size(); ++i) {
      const bool is_true = true_pos[i] == cls;
      const bool is_pred = pred_pos[i] == cls;
      if (is_true) support += 1;
      if (is_true && is_pred) tp += 1;
      if (!is_true && is_pred) fp += 1;
      if (is_true && !is_pred) fn += 1;
    }
    const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    out += (support / n) * f1;
  }
  return out;
}

}  // namespace

LabelStyle label_style_from_name(const std::string& name) {
  if (name == "mosi") return LabelStyle::kMosi;
  if (name == "sims") return LabelStyle::kSims;
  throw ConfigError("unknown label style: " + name);
}

const char* label_style_name(LabelStyle style) {
  return style == LabelStyle::kMosi ? "mosi" : "sims";
}

MetricReport regression_metrics(const std::vector<float>& pred, const std::vector<float>& label,
                                LabelStyle style, double sims_threshold) {
  if (pred.size() != label.size()) throw ShapeError("regression_metrics: length mismatch");
  if (pred.size() < 2) throw ParamError("regression_metrics: need at least 2 samples");
  const auto n = pred.size();
  MetricReport r;
  r.k = style == LabelStyle::kMosi ? 5 : 3;

  double abs_sum = 0;
  double mp = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    abs_sum += std::abs(static_cast<double>(pred[i]) - static_cast<double>(label[i]));
    mp += pred[i];
    my += label[i];
  }
  r.mae = abs_sum / static_cast<double>(n);
  mp /= static_cast<double>(n);
  my /= static_cast<double>(n);

  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = pred[i] - mp;
    const double dy = label[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx < 1e-12 || syy < 1e-12) {
    r.corr = 0;
    r.corr_degenerate = true;
  } else {
    r.corr = sxy / std::sqrt(sxx * syy);
  }

  std::vector<bool> pred_neg(n), true_neg(n);
  double hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    pred_neg[i] = pred[i] < 0;
    true_neg[i] = label[i] < 0;
    if (pred_neg[i] == true_neg[i]) hits += 1;
  }
  r.acc2_nonneg = hits / static_cast<double>(n);
  r.f1_nonneg = weighted_f1(pred_neg, true_neg);

  std::vector<bool> pn, tn;
  double hits2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] == 0.0f) continue;  // zero labels excluded in this convention
    pn.push_back(pred[i] < 0);
    tn.push_back(label[i] < 0);
    if (pn.back() == tn.back()) hits2 += 1;
  }
  if (!pn.empty()) {
    r.acc2_posneg = hits2 / static_cast<double>(pn.size());
    r.f1_posneg = weighted_f1(pn, tn);
  }

  double hitsk = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int bp = style == LabelStyle::kMosi ? bin5(pred[i]) : bin3(pred[i], sims_threshold);
    const int bt = style == LabelStyle::kMosi ? bin5(label[i]) : bin3(label[i], sims_threshold);
    if (bp == bt) hitsk += 1;
  }
  r.acck = hitsk / static_cast<double>(n);
  return r;
}

double metric_value(const MetricReport& r, const std::string& column) {
  if (column == "mae") return r.mae;
  if (column == "corr") return r.corr;
  if (column == "acc2a") return r.acc2_nonneg;
  if (column == "acc2b") return r.acc2_posneg;
  if (column == "f1a") return r.f1_nonneg;
  if (column == "f1b") return r.f1_posneg;
  if (column == "acck") return r.acck;
  throw LookupError("unknown metric column: " + column);
}

double auilc(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2) throw ParamError("auilc: need at least 2 points");
  for (std::size_t i = 1; i < points.size(); ++i)
    if (points[i].first <= points[i - 1].first)
      throw ParamError("auilc: rates must be strictly increasing");
  double area = 0;
  for (std::size_t i = 1; i < points.size(); ++i)
    area += 0.5 * (points[i].second + points[i - 1].second) *
            (points[i].first - points[i - 1].first);
  return area;
}

std::vector<double> default_rates(LabelStyle style) {
  std::vector<double> rates;
  const int count = style == LabelStyle::kMosi ? 10 : 5;
  for (int i = 1; i <= count; ++i) rates.push_back(static_cast<double>(i) / 10.0);
  return rates;
}

SweepResult missing_rate_sweep(const ModelBundle<float>& model, const FeatureArchive& archive,
                               const std::vector<double>& rates,
                               const std::vector<std::uint64_t>& seeds, LabelStyle style) {
  if (archive.test.empty()) throw DataError("missing_rate_sweep: empty test split");
  if (rates.empty()) throw ParamError("missing_rate_sweep: no rates");
  if (seeds.empty()) throw ParamError("missing_rate_sweep: no seeds");
  const auto labels = gather_labels(archive, archive.test);

  SweepResult out;
  for (std::size_t ri = 0; ri < rates.size(); ++ri) {
    MetricReport mean;
    mean.k = style == LabelStyle::kMosi ? 5 : 3;
    bool degenerate = false;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      MissingPolicy policy;
      policy.mode = MissingPolicy::Mode::kFixedRate;
      policy.rate = rates[ri];
      policy.per_modality_independent = true;
      policy.seed_stream = derive_seed(seeds[si], hash_name("sweep-mask"), ri);
      const auto pred = predict(model, archive, archive.test, &policy, seeds[si]);
      const auto r = regression_metrics(pred, labels, style);
      mean.mae += r.mae;
      mean.corr += r.corr;
      mean.acc2_nonneg += r.acc2_nonneg;
      mean.acc2_posneg += r.acc2_posneg;
      mean.f1_nonneg += r.f1_nonneg;
      mean.f1_posneg += r.f1_posneg;
      mean.acck += r.acck;
      degenerate = degenerate || r.corr_degenerate;
    }
    const double inv = 1.0 / static_cast<double>(seeds.size());
    mean.mae *= inv;
    mean.corr *= inv;
    mean.acc2_nonneg *= inv;
    mean.acc2_posneg *= inv;
    mean.f1_nonneg *= inv;
    mean.f1_posneg *= inv;
    mean.acck *= inv;
    mean.corr_degenerate = degenerate;
    out.points.push_back({rates[ri], mean});
  }

  if (out.points.size() >= 2) {
    for (const auto& col : metric_columns()) {
      std::vector<std::pair<double, double>> curve;
      for (const auto& p : out.points) curve.emplace_back(p.rate, metric_value(p.metrics, col));
      out.auilc_by_metric[col] = auilc(curve);
    }
  }
  return out;
}

}  // namespace msrd
