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

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "msrd/train.hpp"

namespace msrd {

enum class LabelStyle { kMosi, kSims };

LabelStyle label_style_from_name(const std::string& name);
const char* label_style_name(LabelStyle style);

/// Regression metrics plus the discretized accuracy conventions.
///
/// acc2_nonneg classifies negative vs nonnegative over all samples;
/// acc2_posneg drops zero labels and classifies negative vs positive. Each
/// has a weighted F1. acck is 5-class for mosi-style labels (clamp to [-2,2],
/// round) and 3-class for sims-style (thresholds at +-0.1).
struct MetricReport {
  double mae = 0;
  double corr = 0;
  bool corr_degenerate = false;  // constant inputs; corr reported as 0
  double acc2_nonneg = 0;
  double acc2_posneg = 0;
  double f1_nonneg = 0;
  double f1_posneg = 0;
  double acck = 0;
  int k = 5;
};

MetricReport regression_metrics(const std::vector<float>& pred, const std::vector<float>& label,
                                LabelStyle style, double sims_threshold = 0.1);

/// Column order shared by every metric CSV this toolkit writes.
inline const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols = {"mae", "corr",  "acc2a", "acc2b",
                                                "f1a", "f1b", "acck"};
  return cols;
}

double metric_value(const MetricReport& r, const std::string& column);

/// Trapezoidal area under a metric curve over missing rates. Needs at least
/// two points with strictly increasing rates.
double auilc(const std::vector<std::pair<double, double>>& points);

struct SweepPoint {
  double rate = 0;
  MetricReport metrics;  // averaged over seeds
};

struct SweepResult {
  std::vector<SweepPoint> points;
  std::map<std::string, double> auilc_by_metric;
};

std::vector<double> default_rates(LabelStyle style);

/// Masks the test split at each fixed rate (fresh masks per seed, independent
/// across modalities), evaluates, and averages metrics over seeds; AUILC is
/// attached per metric column.
SweepResult missing_rate_sweep(const ModelBundle<float>& model, const FeatureArchive& archive,
                               const std::vector<double>& rates,
                               const std::vector<std::uint64_t>& seeds, LabelStyle style);

}  // namespace msrd
