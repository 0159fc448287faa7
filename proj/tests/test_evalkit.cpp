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
#include "msrd/evalkit.hpp"

using namespace msrd;

namespace {

/// Dense midpoint-rule oracle over the piecewise-linear interpolant.
double riemann_oracle(const std::vector<std::pair<double, double>>& pts, int samples) {
  const double lo = pts.front().first;
  const double hi = pts.back().first;
  const double h = (hi - lo) / samples;
  double acc = 0;
  std::size_t seg = 0;
  for (int i = 0; i < samples; ++i) {
    const double x = lo + (i + 0.5) * h;
    while (seg + 2 < pts.size() && x > pts[seg + 1].first) ++seg;
    const auto [x0, y0] = pts[seg];
    const auto [x1, y1] = pts[seg + 1];
    acc += (y0 + (y1 - y0) * (x - x0) / (x1 - x0)) * h;
  }
  return acc;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
      for (std::size_t j = 0; j < v.size(); ++j)
        if (v[j] < v[i]) r[i] += 1;
    return r;
  };
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= ra.size();
  mb /= rb.size();
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sxy += (ra[i] - ma) * (rb[i] - mb);
    sxx += (ra[i] - ma) * (ra[i] - ma);
    syy += (rb[i] - mb) * (rb[i] - mb);
  }
  return sxy / std::sqrt(sxx * syy);
}

FeatureArchive micro_archive() {
  SynthSpec spec;
  spec.sample_count = 48;
  spec.time_steps = {8, 8, 8};
  spec.feature_dims = {3, 4, 3};
  spec.noise = {0.2, 0.2, 0.2};
  spec.seed = 9;
  return generate_synthetic(spec);
}

}  // namespace

TEST_CASE("perfect and anti predictions") {
  std::vector<float> y = {-2.0f, -0.5f, 0.25f, 1.0f, 2.0f, -1.5f};
  auto perfect = regression_metrics(y, y, LabelStyle::kMosi);
  CHECK(perfect.mae == 0.0);
  CHECK(perfect.corr == doctest::Approx(1.0));
  CHECK(perfect.acc2_nonneg == 1.0);
  CHECK(perfect.acc2_posneg == 1.0);
  CHECK(perfect.f1_nonneg == doctest::Approx(1.0));
  CHECK(perfect.acck == 1.0);

  std::vector<float> anti(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) anti[i] = -y[i];
  CHECK(regression_metrics(anti, y, LabelStyle::kMosi).corr == doctest::Approx(-1.0));
}

TEST_CASE("hand-enumerated six-point oracle (mosi style)") {
  const std::vector<float> y = {-2.6f, -1.2f, -0.04f, 0.0f, 0.8f, 2.4f};
  const std::vector<float> p = {-2.0f, -0.3f, 0.2f, -0.1f, 1.2f, 1.6f};
  auto r = regression_metrics(p, y, LabelStyle::kMosi);
  // bins (clamp [-2,2], round): y -> {-2,-1,0,0,1,2}, p -> {-2,0,0,0,1,2}
  CHECK(r.acck == doctest::Approx(5.0 / 6.0));
  // negative vs nonnegative: y -> {n,n,n,p,p,p}, p -> {n,n,p,n,p,p}
  CHECK(r.acc2_nonneg == doctest::Approx(4.0 / 6.0));
  // zero label dropped: y -> {n,n,n,p,p}, p -> {n,n,p,p,p}
  CHECK(r.acc2_posneg == doctest::Approx(4.0 / 5.0));
  CHECK(r.f1_nonneg == doctest::Approx(2.0 / 3.0));
  CHECK(r.f1_posneg == doctest::Approx(0.8));
  const double mae = (0.6 + 0.9 + 0.24 + 0.1 + 0.4 + 0.8) / 6.0;
  CHECK(r.mae == doctest::Approx(mae).epsilon(1e-6));
}

TEST_CASE("sims style uses three bins at +-0.1") {
  const std::vector<float> y = {-0.6f, -0.05f, 0.05f, 0.3f};
  const std::vector<float> p = {-0.2f, 0.0f, 0.15f, 0.09f};
  auto r = regression_metrics(p, y, LabelStyle::kSims);
  CHECK(r.k == 3);
  // y bins {-1,0,0,1}, p bins {-1,0,1,0} -> 2/4 correct
  CHECK(r.acck == doctest::Approx(0.5));
}

TEST_CASE("constant labels flag a degenerate correlation") {
  const std::vector<float> y = {0.5f, 0.5f, 0.5f, 0.5f};
  const std::vector<float> p = {0.1f, 0.2f, 0.3f, 0.4f};
  auto r = regression_metrics(p, y, LabelStyle::kMosi);
  CHECK(r.corr == 0.0);
  CHECK(r.corr_degenerate);
  CHECK_FALSE(regression_metrics(p, {0.1f, 0.9f, 0.4f, 0.2f}, LabelStyle::kMosi).corr_degenerate);
}

TEST_CASE("regression_metrics validates its inputs") {
  CHECK_THROWS_AS(regression_metrics({1.0f}, {1.0f}, LabelStyle::kMosi), ParamError);
  CHECK_THROWS_AS(regression_metrics({1.0f, 2.0f}, {1.0f}, LabelStyle::kMosi), ShapeError);
}

TEST_CASE("metric ranges hold on random inputs") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> p(16), y(16);
    for (auto& x : p) x = static_cast<float>(rng.uniform(-3, 3));
    for (auto& x : y) x = static_cast<float>(rng.uniform(-3, 3));
    auto r = regression_metrics(p, y, trial % 2 ? LabelStyle::kMosi : LabelStyle::kSims);
    CHECK(r.corr >= -1.0 - 1e-12);
    CHECK(r.corr <= 1.0 + 1e-12);
    for (double acc : {r.acc2_nonneg, r.acc2_posneg, r.f1_nonneg, r.f1_posneg, r.acck}) {
      CHECK(acc >= 0.0);
      CHECK(acc <= 1.0);
    }
    CHECK(r.mae >= 0.0);
  }
}

TEST_CASE("auilc basics") {
  // constant over 0.1..0.5 -> v * 0.4
  std::vector<std::pair<double, double>> constant;
  for (int i = 1; i <= 5; ++i) constant.emplace_back(i / 10.0, 2.5);
  CHECK(auilc(constant) == doctest::Approx(2.5 * 0.4).epsilon(1e-12));

  // exactly representable rates: bitwise equality with v*(r_max - r_min)
  std::vector<std::pair<double, double>> dyadic = {{0.25, 1.75}, {0.5, 1.75}, {0.75, 1.75}, {1.0, 1.75}};
  CHECK(auilc(dyadic) == 1.75 * 0.75);

  // linear in r: trapezoid is exact
  std::vector<std::pair<double, double>> linear;
  for (int i = 0; i <= 8; ++i) {
    const double r = 0.1 + i * 0.1;
    linear.emplace_back(r, 3.0 * r + 0.5);
  }
  const double r0 = 0.1, r1 = 0.9;
  const double exact = 1.5 * (r1 * r1 - r0 * r0) + 0.5 * (r1 - r0);
  CHECK(auilc(linear) == doctest::Approx(exact).epsilon(1e-12));

  CHECK_THROWS_AS(auilc({{0.1, 1.0}}), ParamError);
  CHECK_THROWS_AS(auilc({{0.2, 1.0}, {0.1, 2.0}}), ParamError);
  CHECK_THROWS_AS(auilc({{0.1, 1.0}, {0.1, 2.0}}), ParamError);
}

TEST_CASE("auilc matches a dense Riemann oracle on random curves") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::pair<double, double>> pts;
    double r = rng.uniform(0.0, 0.1);
    for (int i = 0; i < 10; ++i) {
      pts.emplace_back(r, rng.uniform(-2.0, 2.0));
      r += rng.uniform(0.05, 0.15);
    }
    CHECK(std::abs(auilc(pts) - riemann_oracle(pts, 500000)) < 1e-9);
  }
}

TEST_CASE("auilc is linear in its values") {
  Rng rng(5);
  std::vector<double> rates = {0.1, 0.2, 0.4, 0.7, 1.0};
  std::vector<std::pair<double, double>> v, w, combo;
  const double a = 1.7, b = -0.6;
  for (double r : rates) {
    const double vv = rng.uniform(-1, 1);
    const double ww = rng.uniform(-1, 1);
    v.emplace_back(r, vv);
    w.emplace_back(r, ww);
    combo.emplace_back(r, a * vv + b * ww);
  }
  CHECK(auilc(combo) == doctest::Approx(a * auilc(v) + b * auilc(w)).epsilon(1e-12));
}

TEST_CASE("default sweep grids have 10 (mosi) and 5 (sims) points") {
  CHECK(default_rates(LabelStyle::kMosi).size() == 10);
  CHECK(default_rates(LabelStyle::kMosi).front() == doctest::Approx(0.1));
  CHECK(default_rates(LabelStyle::kMosi).back() == doctest::Approx(1.0));
  CHECK(default_rates(LabelStyle::kSims).size() == 5);
  CHECK(default_rates(LabelStyle::kSims).back() == doctest::Approx(0.5));
}

TEST_CASE("sweep at rate 0 equals the unmasked evaluation exactly") {
  auto archive = micro_archive();
  ModelDims dims;
  dims.d = 8;
  dims.heads = 2;
  dims.n_blocks = 1;
  dims.feature_dims = archive.meta.feature_dims;
  dims.time_steps = archive.meta.time_steps;
  auto model = ModelBundle<float>::create(dims, 3, Role::kTeacher);

  auto sweep = missing_rate_sweep(model, archive, {0.0, 0.5}, {1}, LabelStyle::kMosi);
  const auto labels = gather_labels(archive, archive.test);
  const auto clean = regression_metrics(predict(model, archive, archive.test), labels,
                                        LabelStyle::kMosi);
  CHECK(sweep.points[0].metrics.mae == clean.mae);
  CHECK(sweep.points[0].metrics.corr == clean.corr);
  CHECK(sweep.points[0].metrics.acck == clean.acck);
}

TEST_CASE("seed-averaged sweep equals the manual mean of single-seed sweeps") {
  auto archive = micro_archive();
  ModelDims dims;
  dims.d = 8;
  dims.heads = 2;
  dims.n_blocks = 1;
  dims.feature_dims = archive.meta.feature_dims;
  dims.time_steps = archive.meta.time_steps;
  auto model = ModelBundle<float>::create(dims, 3, Role::kTeacher);

  const std::vector<double> rates = {0.2, 0.6};
  const std::vector<std::uint64_t> seeds = {1, 2, 3};
  auto joint = missing_rate_sweep(model, archive, rates, seeds, LabelStyle::kMosi);
  for (std::size_t ri = 0; ri < rates.size(); ++ri) {
    double acc = 0;
    for (auto s : seeds)
      acc += missing_rate_sweep(model, archive, rates, {s}, LabelStyle::kMosi)
                 .points[ri]
                 .metrics.mae;
    CHECK(joint.points[ri].metrics.mae == doctest::Approx(acc / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("sweep needs a test split") {
  auto archive = micro_archive();
  archive.test.clear();
  ModelDims dims;
  dims.feature_dims = archive.meta.feature_dims;
  dims.time_steps = archive.meta.time_steps;
  dims.d = 8;
  dims.heads = 2;
  dims.n_blocks = 1;
  auto model = ModelBundle<float>::create(dims, 3, Role::kTeacher);
  CHECK_THROWS_AS(missing_rate_sweep(model, archive, {0.1, 0.2}, {1}, LabelStyle::kMosi),
                  DataError);
}

TEST_CASE("trained-model MAE trends upward with the missing rate") {
  auto archive = micro_archive();
  ModelDims dims;
  dims.d = 8;
  dims.heads = 2;
  dims.n_blocks = 1;
  dims.feature_dims = archive.meta.feature_dims;
  dims.time_steps = archive.meta.time_steps;
  TrainConfig cfg;
  cfg.setting = Setting::kComplete;
  cfg.batch_size = 8;
  cfg.max_epochs = 10;
  auto teacher = train_teacher(archive, dims, cfg, 1);

  const std::vector<double> rates = {0.1, 0.3, 0.5, 0.7, 0.9};
  auto sweep = missing_rate_sweep(teacher.model, archive, rates, {1, 2, 3}, LabelStyle::kMosi);
  std::vector<double> maes;
  for (const auto& p : sweep.points) maes.push_back(p.metrics.mae);
  CHECK(spearman(rates, maes) > 0.0);
  CHECK(sweep.auilc_by_metric.at("mae") > 0.0);
}
