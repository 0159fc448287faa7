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
#include <Eigen/Dense>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "msrd/data.hpp"

using namespace msrd;

namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("msrd_data_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// Independent closed-form ridge oracle on time-averaged features of one
/// modality (with intercept). Returns train-split MAE.
double ridge_oracle_mae(const FeatureArchive& archive, Modality m) {
  const auto& idx = archive.train;
  const int mi = static_cast<int>(m);
  const auto f = archive.meta.feature_dims[mi];
  const auto T = archive.meta.time_steps[mi];
  Eigen::MatrixXd phi(idx.size(), f + 1);
  Eigen::VectorXd y(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& seq = archive.samples[idx[r]].mods[mi];
    for (std::int64_t j = 0; j < f; ++j) {
      double acc = 0;
      for (std::int64_t t = 0; t < T; ++t) acc += seq.features.at(t, j);
      phi(static_cast<Eigen::Index>(r), j) = acc / static_cast<double>(T);
    }
    phi(static_cast<Eigen::Index>(r), f) = 1.0;
    y(static_cast<Eigen::Index>(r)) = archive.samples[idx[r]].label;
  }
  Eigen::MatrixXd a = phi.transpose() * phi;
  a.diagonal().array() += 1e-8;
  Eigen::VectorXd w = a.ldlt().solve(phi.transpose() * y);
  return (phi * w - y).cwiseAbs().mean();
}

SynthSpec base_spec() {
  SynthSpec spec;
  spec.sample_count = 60;
  spec.time_steps = {12, 12, 12};
  spec.feature_dims = {5, 8, 6};
  spec.noise = {0.0, 0.0, 0.0};
  spec.seed = 17;
  return spec;
}

}  // namespace

TEST_CASE("synthetic archive matches its spec") {
  SynthSpec spec = base_spec();
  spec.sample_count = 30;
  auto archive = generate_synthetic(spec);
  CHECK(archive.samples.size() == 30);
  CHECK(archive.meta.time_steps == spec.time_steps);
  CHECK(archive.meta.feature_dims == spec.feature_dims);
  CHECK(archive.meta.label_lo == spec.label_lo);
  CHECK(archive.meta.label_hi == spec.label_hi);
  CHECK(archive.train.size() + archive.val.size() + archive.test.size() == 30);
  for (const auto& s : archive.samples) {
    CHECK(s.label >= spec.label_lo);
    CHECK(s.label <= spec.label_hi);
    for (int m = 0; m < kNumModalities; ++m) {
      CHECK(s.mods[m].time_steps() == spec.time_steps[m]);
      CHECK(s.mods[m].feature_dim() == spec.feature_dims[m]);
      CHECK(s.mods[m].complete);
    }
  }
}

TEST_CASE("synthetic generation is deterministic per seed") {
  auto a = generate_synthetic(base_spec());
  auto b = generate_synthetic(base_spec());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].label == b.samples[i].label);
    for (int m = 0; m < kNumModalities; ++m)
      CHECK(a.samples[i].mods[m].features.v == b.samples[i].mods[m].features.v);
  }
}

TEST_CASE("with zero noise a linear oracle recovers labels from any one modality") {
  auto archive = generate_synthetic(base_spec());
  for (int m = 0; m < kNumModalities; ++m)
    CHECK(ridge_oracle_mae(archive, static_cast<Modality>(m)) < 0.05);
}

TEST_CASE("oracle error grows with the noise level") {
  for (std::uint64_t seed : {101, 202, 303}) {
    double prev = -1;
    for (double sigma : {0.0, 0.4, 1.2}) {
      SynthSpec spec = base_spec();
      spec.seed = seed;
      spec.noise = {sigma, sigma, sigma};
      auto archive = generate_synthetic(spec);
      const double err = ridge_oracle_mae(archive, Modality::kText);
      CHECK(err > prev);
      prev = err;
    }
  }
}

TEST_CASE("generate_synthetic rejects degenerate specs") {
  SynthSpec spec = base_spec();
  spec.sample_count = 2;
  CHECK_THROWS_AS(generate_synthetic(spec), ParamError);
  spec = base_spec();
  spec.noise[1] = -0.5;
  CHECK_THROWS_AS(generate_synthetic(spec), ParamError);
}

TEST_CASE("archive save/load round-trips bitwise") {
  auto dir = temp_dir("roundtrip");
  SynthSpec spec = base_spec();
  spec.noise = {0.2, 0.1, 0.3};
  auto archive = generate_synthetic(spec);
  save_archive(archive, dir);
  auto loaded = load_archive(dir);
  CHECK(loaded.samples.size() == archive.samples.size());
  CHECK(loaded.train == archive.train);
  CHECK(loaded.val == archive.val);
  CHECK(loaded.test == archive.test);
  CHECK(loaded.meta.label_lo == archive.meta.label_lo);
  for (std::size_t i = 0; i < archive.samples.size(); ++i) {
    CHECK(loaded.samples[i].label == archive.samples[i].label);
    for (int m = 0; m < kNumModalities; ++m)
      CHECK(loaded.samples[i].mods[m].features.v == archive.samples[i].mods[m].features.v);
  }
  fs::remove_all(dir);
}

TEST_CASE("manifest dimension inconsistency names the offending field") {
  auto dir = temp_dir("baddim");
  auto archive = generate_synthetic(base_spec());
  save_archive(archive, dir);
  // claim f_a = 6 while the binary was written with f_a = 5
  nlohmann::json manifest;
  std::ifstream(dir / "manifest.json") >> manifest;
  manifest["modalities"][0]["f"] = 6;
  std::ofstream(dir / "manifest.json") << manifest.dump(2);
  try {
    load_archive(dir);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("a.bin") != std::string::npos);
    CHECK(std::string(e.what()).find("modalities[0]") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("missing manifest field is reported by name") {
  auto dir = temp_dir("missingfield");
  auto archive = generate_synthetic(base_spec());
  save_archive(archive, dir);
  nlohmann::json manifest;
  std::ifstream(dir / "manifest.json") >> manifest;
  manifest.erase("sample_count");
  std::ofstream(dir / "manifest.json") << manifest.dump(2);
  try {
    load_archive(dir);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("sample_count") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("truncated binary is a format error") {
  auto dir = temp_dir("truncated");
  auto archive = generate_synthetic(base_spec());
  save_archive(archive, dir);
  fs::resize_file(dir / "t.bin", fs::file_size(dir / "t.bin") - 8);
  CHECK_THROWS_AS(load_archive(dir), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("overlapping splits are rejected") {
  auto dir = temp_dir("overlap");
  auto archive = generate_synthetic(base_spec());
  save_archive(archive, dir);
  nlohmann::json splits;
  std::ifstream(dir / "splits.json") >> splits;
  splits["val"].push_back(splits["train"][0]);
  std::ofstream(dir / "splits.json") << splits.dump(2);
  CHECK_THROWS_AS(load_archive(dir), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("archive with an empty test split loads with a warning flag") {
  auto dir = temp_dir("emptysplit");
  auto archive = generate_synthetic(base_spec());
  archive.train.insert(archive.train.end(), archive.test.begin(), archive.test.end());
  archive.test.clear();
  save_archive(archive, dir);
  auto loaded = load_archive(dir);
  CHECK(loaded.empty_split_warning);
  CHECK(loaded.test.empty());
  fs::remove_all(dir);
}

TEST_CASE("synth spec json round-trip") {
  auto dir = temp_dir("specjson");
  SynthSpec spec = base_spec();
  spec.noise = {0.5, 0.25, 0.75};
  spec.label_lo = -1;
  spec.label_hi = 1;
  write_synth_spec_json(spec, dir / "spec.json");
  auto back = synth_spec_from_json_file(dir / "spec.json");
  CHECK(back.sample_count == spec.sample_count);
  CHECK(back.time_steps == spec.time_steps);
  CHECK(back.feature_dims == spec.feature_dims);
  CHECK(back.noise == spec.noise);
  CHECK(back.label_lo == spec.label_lo);
  CHECK(back.seed == spec.seed);
  fs::remove_all(dir);
}
