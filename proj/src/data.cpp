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

#include "msrd/data.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "json.hpp"
#include "msrd/error.hpp"
#include "msrd/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "archive binaries are f32le; big-endian hosts are not supported");

namespace msrd {

using nlohmann::json;

namespace {

constexpr int kArchiveVersion = 1;
constexpr double kTwoPi = 6.283185307179586476925287;

void write_floats(const std::filesystem::path& file, const std::vector<float>& data) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw FormatError("cannot open for writing: " + file.string());
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!os) throw FormatError("short write: " + file.string());
}

std::vector<float> read_floats(const std::filesystem::path& file, std::size_t expected,
                               const std::string& field) {
  std::ifstream is(file, std::ios::binary | std::ios::ate);
  if (!is) throw FormatError(file.filename().string() + ": cannot open (field " + field + ")");
  const auto bytes = static_cast<std::size_t>(is.tellg());
  if (bytes != expected * sizeof(float))
    throw FormatError(file.filename().string() + ": size " + std::to_string(bytes) +
                      " bytes does not match " + std::to_string(expected * sizeof(float)) +
                      " implied by " + field);
  is.seekg(0);
  std::vector<float> data(expected);
  is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
  if (!is) throw FormatError(file.filename().string() + ": truncated read");
  return data;
}

json load_json(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw FormatError("cannot open: " + file.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw FormatError(file.filename().string() + ": invalid JSON: " + e.what());
  }
  return j;
}

template <class V>
V get_field(const json& j, const std::string& name, const std::string& where) {
  if (!j.contains(name)) throw FormatError(where + ": missing field '" + name + "'");
  try {
    return j.at(name).get<V>();
  } catch (const json::exception&) {
    throw FormatError(where + ": field '" + name + "' has the wrong type");
  }
}

std::vector<std::size_t> get_split(const json& j, const std::string& name, std::size_t n) {
  auto idx = get_field<std::vector<std::size_t>>(j, name, "splits");
  for (auto i : idx)
    if (i >= n)
      throw FormatError("splits: index " + std::to_string(i) + " in '" + name +
                        "' exceeds sample count");
  return idx;
}

}  // namespace

FeatureArchive generate_synthetic(const SynthSpec& spec) {
  if (spec.sample_count < 3)
    throw ParamError("generate_synthetic: need at least 3 samples (one per split)");
  if (spec.label_lo >= spec.label_hi) throw ParamError("generate_synthetic: empty label range");
  for (int m = 0; m < kNumModalities; ++m) {
    if (spec.time_steps[m] < 1 || spec.feature_dims[m] < 1)
      throw ParamError("generate_synthetic: T and f must be >= 1");
    if (spec.noise[m] < 0) throw ParamError("generate_synthetic: noise must be >= 0");
  }

  constexpr int kDistractors = 2;
  // Archive-level geometry: one signal direction, offset and distractor
  // directions per modality, fixed across samples.
  std::array<std::vector<double>, kNumModalities> signal_dir, offset;
  std::array<std::array<std::vector<double>, kDistractors>, kNumModalities> distractor_dir;
  {
    Rng rng(derive_seed(spec.seed, hash_name("synth-geometry")));
    for (int m = 0; m < kNumModalities; ++m) {
      const auto f = static_cast<std::size_t>(spec.feature_dims[m]);
      signal_dir[m].resize(f);
      offset[m].resize(f);
      for (auto& x : signal_dir[m]) x = rng.uniform(-1.0, 1.0);
      for (auto& x : offset[m]) x = rng.uniform(-0.5, 0.5);
      for (int k = 0; k < kDistractors; ++k) {
        distractor_dir[m][k].resize(f);
        for (auto& x : distractor_dir[m][k]) x = rng.uniform(-1.0, 1.0);
      }
    }
  }

  FeatureArchive archive;
  archive.meta.time_steps = spec.time_steps;
  archive.meta.feature_dims = spec.feature_dims;
  archive.meta.label_lo = spec.label_lo;
  archive.meta.label_hi = spec.label_hi;
  archive.meta.provenance = "synthetic seed=" + std::to_string(spec.seed);

  archive.samples.resize(static_cast<std::size_t>(spec.sample_count));
  for (std::int64_t i = 0; i < spec.sample_count; ++i) {
    Rng rng(derive_seed(spec.seed, hash_name("synth-sample"), static_cast<std::uint64_t>(i)));
    const double s = rng.uniform(spec.label_lo, spec.label_hi);
    auto& sample = archive.samples[static_cast<std::size_t>(i)];
    sample.label = static_cast<float>(s);
    for (int m = 0; m < kNumModalities; ++m) {
      const std::int64_t T = spec.time_steps[m];
      const std::int64_t f = spec.feature_dims[m];
      auto& seq = sample.mods[m];
      seq.modality = static_cast<Modality>(m);
      seq.complete = true;
      seq.features = Tensor<float>({T, f});
      double amp[kDistractors], freq[kDistractors], phase[kDistractors];
      for (int k = 0; k < kDistractors; ++k) {
        amp[k] = rng.normal(0.0, 0.6);
        freq[k] = rng.uniform(0.3, 1.5);
        phase[k] = rng.uniform(0.0, kTwoPi);
      }
      for (std::int64_t t = 0; t < T; ++t) {
        double wave[kDistractors];
        for (int k = 0; k < kDistractors; ++k)
          wave[k] = amp[k] * std::sin(freq[k] * static_cast<double>(t) + phase[k]);
        for (std::int64_t j = 0; j < f; ++j) {
          double x = signal_dir[m][static_cast<std::size_t>(j)] * s +
                     offset[m][static_cast<std::size_t>(j)];
          for (int k = 0; k < kDistractors; ++k)
            x += wave[k] * distractor_dir[m][k][static_cast<std::size_t>(j)];
          if (spec.noise[m] > 0) x += rng.normal(0.0, spec.noise[m]);
          seq.features.at(t, j) = static_cast<float>(x);
        }
      }
    }
  }

  const auto n = static_cast<std::size_t>(spec.sample_count);
  auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
  auto n_val = static_cast<std::size_t>(std::llround(spec.val_fraction * static_cast<double>(n)));
  n_train = std::max<std::size_t>(1, std::min(n_train, n - 2));
  n_val = std::max<std::size_t>(1, std::min(n_val, n - n_train - 1));
  for (std::size_t i = 0; i < n_train; ++i) archive.train.push_back(i);
  for (std::size_t i = n_train; i < n_train + n_val; ++i) archive.val.push_back(i);
  for (std::size_t i = n_train + n_val; i < n; ++i) archive.test.push_back(i);
  return archive;
}

void save_archive(const FeatureArchive& archive, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto n = archive.samples.size();

  json mods = json::array();
  for (int m = 0; m < kNumModalities; ++m) {
    const std::int64_t T = archive.meta.time_steps[m];
    const std::int64_t f = archive.meta.feature_dims[m];
    const std::string file = std::string(modality_name(static_cast<Modality>(m))) + ".bin";
    std::vector<float> flat;
    flat.reserve(n * static_cast<std::size_t>(T * f));
    for (const auto& sample : archive.samples) {
      const auto& seq = sample.mods[m];
      if (seq.time_steps() != T || seq.feature_dim() != f)
        throw FormatError("save_archive: sample does not conform to meta dimensions");
      flat.insert(flat.end(), seq.features.v.begin(), seq.features.v.end());
    }
    write_floats(dir / file, flat);
    mods.push_back({{"name", modality_name(static_cast<Modality>(m))},
                    {"T", T},
                    {"f", f},
                    {"file", file},
                    {"dtype", "f32le"}});
  }

  std::vector<float> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = archive.samples[i].label;
  write_floats(dir / "labels.bin", labels);

  json splits = {{"train", archive.train}, {"val", archive.val}, {"test", archive.test}};
  std::ofstream(dir / "splits.json") << splits.dump(2) << "\n";

  json manifest = {{"version", kArchiveVersion},
                   {"modalities", mods},
                   {"sample_count", n},
                   {"label_file", "labels.bin"},
                   {"label_range", {archive.meta.label_lo, archive.meta.label_hi}},
                   {"splits_file", "splits.json"},
                   {"provenance", archive.meta.provenance}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

FeatureArchive load_archive(const std::filesystem::path& dir) {
  const json manifest = load_json(dir / "manifest.json");
  const auto version = get_field<int>(manifest, "version", "manifest.json");
  if (version != kArchiveVersion)
    throw FormatError("manifest.json: unsupported version " + std::to_string(version));
  const auto n = get_field<std::size_t>(manifest, "sample_count", "manifest.json");
  const auto mods = get_field<json>(manifest, "modalities", "manifest.json");
  if (!mods.is_array() || mods.size() != kNumModalities)
    throw FormatError("manifest.json: 'modalities' must list exactly 3 entries");

  FeatureArchive archive;
  archive.samples.resize(n);
  const auto range = get_field<std::vector<double>>(manifest, "label_range", "manifest.json");
  if (range.size() != 2) throw FormatError("manifest.json: 'label_range' must have 2 entries");
  archive.meta.label_lo = range[0];
  archive.meta.label_hi = range[1];
  if (manifest.contains("provenance")) archive.meta.provenance = manifest["provenance"];

  for (std::size_t e = 0; e < mods.size(); ++e) {
    const std::string where = "manifest.json modalities[" + std::to_string(e) + "]";
    const auto name = get_field<std::string>(mods[e], "name", where);
    const auto m = static_cast<int>(modality_from_name(name));
    const auto T = get_field<std::int64_t>(mods[e], "T", where);
    const auto f = get_field<std::int64_t>(mods[e], "f", where);
    const auto file = get_field<std::string>(mods[e], "file", where);
    const auto dtype = get_field<std::string>(mods[e], "dtype", where);
    if (dtype != "f32le") throw FormatError(where + ": unsupported dtype '" + dtype + "'");
    if (T < 1 || f < 1) throw FormatError(where + ": T and f must be >= 1");
    archive.meta.time_steps[m] = T;
    archive.meta.feature_dims[m] = f;
    const auto flat = read_floats(dir / file, n * static_cast<std::size_t>(T * f),
                                  where + ".T*f*sample_count");
    for (std::size_t i = 0; i < n; ++i) {
      auto& seq = archive.samples[i].mods[m];
      seq.modality = static_cast<Modality>(m);
      seq.complete = true;
      seq.features = Tensor<float>({T, f});
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(i * static_cast<std::size_t>(T * f)),
                flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * static_cast<std::size_t>(T * f)),
                seq.features.v.begin());
    }
  }

  const auto label_file = get_field<std::string>(manifest, "label_file", "manifest.json");
  const auto labels = read_floats(dir / label_file, n, "manifest.json sample_count");
  const double slack = 1e-6 * std::max(1.0, archive.meta.label_hi - archive.meta.label_lo);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < archive.meta.label_lo - slack || labels[i] > archive.meta.label_hi + slack)
      throw FormatError("labels.bin: sample " + std::to_string(i) + " label " +
                        std::to_string(labels[i]) + " is outside the declared label_range");
    archive.samples[i].label = labels[i];
  }

  const auto splits_file = get_field<std::string>(manifest, "splits_file", "manifest.json");
  const json splits = load_json(dir / splits_file);
  archive.train = get_split(splits, "train", n);
  archive.val = get_split(splits, "val", n);
  archive.test = get_split(splits, "test", n);
  std::set<std::size_t> seen;
  for (const auto* split : {&archive.train, &archive.val, &archive.test})
    for (auto i : *split)
      if (!seen.insert(i).second)
        throw FormatError("splits: index " + std::to_string(i) + " appears in two splits");
  if (archive.train.empty() || archive.val.empty() || archive.test.empty()) {
    archive.empty_split_warning = true;
    std::fprintf(stderr, "warning: archive %s declares an empty split\n", dir.string().c_str());
  }
  return archive;
}

Tensor<float> gather_batch(const FeatureArchive& archive, const std::vector<std::size_t>& idx,
                           Modality m) {
  if (idx.empty()) throw DataError("gather_batch: empty index list");
  const auto mi = static_cast<int>(m);
  const std::int64_t T = archive.meta.time_steps[mi];
  const std::int64_t f = archive.meta.feature_dims[mi];
  Tensor<float> out({static_cast<std::int64_t>(idx.size()), T, f});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& seq = archive.samples[idx[b]].mods[mi];
    std::copy(seq.features.v.begin(), seq.features.v.end(),
              out.v.begin() + static_cast<std::ptrdiff_t>(b * static_cast<std::size_t>(T * f)));
  }
  return out;
}

std::vector<float> gather_labels(const FeatureArchive& archive,
                                 const std::vector<std::size_t>& idx) {
  std::vector<float> labels(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = archive.samples[idx[i]].label;
  return labels;
}

SynthSpec synth_spec_from_json_file(const std::filesystem::path& file) {
  const json j = load_json(file);
  SynthSpec spec;
  spec.sample_count = get_field<std::int64_t>(j, "sample_count", "synth spec");
  const auto t = get_field<std::vector<std::int64_t>>(j, "time_steps", "synth spec");
  const auto f = get_field<std::vector<std::int64_t>>(j, "feature_dims", "synth spec");
  const auto s = get_field<std::vector<double>>(j, "noise", "synth spec");
  if (t.size() != kNumModalities || f.size() != kNumModalities || s.size() != kNumModalities)
    throw FormatError("synth spec: time_steps/feature_dims/noise must list 3 entries (a,t,v)");
  for (int m = 0; m < kNumModalities; ++m) {
    spec.time_steps[m] = t[m];
    spec.feature_dims[m] = f[m];
    spec.noise[m] = s[m];
  }
  const auto range = get_field<std::vector<double>>(j, "label_range", "synth spec");
  if (range.size() != 2) throw FormatError("synth spec: label_range must have 2 entries");
  spec.label_lo = range[0];
  spec.label_hi = range[1];
  if (j.contains("train_fraction")) spec.train_fraction = j["train_fraction"];
  if (j.contains("val_fraction")) spec.val_fraction = j["val_fraction"];
  if (j.contains("seed")) spec.seed = j["seed"];
  return spec;
}

void write_synth_spec_json(const SynthSpec& spec, const std::filesystem::path& file) {
  json j = {{"sample_count", spec.sample_count},
            {"time_steps", spec.time_steps},
            {"feature_dims", spec.feature_dims},
            {"noise", spec.noise},
            {"label_range", {spec.label_lo, spec.label_hi}},
            {"train_fraction", spec.train_fraction},
            {"val_fraction", spec.val_fraction},
            {"seed", spec.seed}};
  std::ofstream(file) << j.dump(2) << "\n";
}

}  // namespace msrd
