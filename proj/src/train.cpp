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

#include "msrd/train.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace msrd {

using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;
constexpr std::size_t kEvalBatch = 64;

Tensor<float> gather_masked(const std::vector<MultimodalSample>& samples, int m) {
  const std::int64_t B = static_cast<std::int64_t>(samples.size());
  const std::int64_t T = samples[0].mods[m].time_steps();
  const std::int64_t f = samples[0].mods[m].feature_dim();
  Tensor<float> out({B, T, f});
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& seq = samples[static_cast<std::size_t>(b)].mods[m];
    std::copy(seq.features.v.begin(), seq.features.v.end(),
              out.v.begin() + static_cast<std::ptrdiff_t>(b * T * f));
  }
  return out;
}

/// Rows `idx` of a [N,...] tensor into a [B,...] tensor.
Tensor<float> slice_rows(const Tensor<float>& src, const std::vector<std::size_t>& idx) {
  std::vector<std::int64_t> shape = src.shape;
  const std::int64_t row = src.numel() / shape[0];
  shape[0] = static_cast<std::int64_t>(idx.size());
  Tensor<float> out(shape);
  for (std::size_t b = 0; b < idx.size(); ++b)
    std::copy(src.v.begin() + static_cast<std::ptrdiff_t>(idx[b] * static_cast<std::size_t>(row)),
              src.v.begin() + static_cast<std::ptrdiff_t>((idx[b] + 1) * static_cast<std::size_t>(row)),
              out.v.begin() + static_cast<std::ptrdiff_t>(b * static_cast<std::size_t>(row)));
  return out;
}

std::vector<Tensor<float>> snapshot_params(const ParamSet<float>& params) {
  std::vector<Tensor<float>> out;
  out.reserve(params.size());
  for (const auto& p : params.items()) out.push_back(p->value);
  return out;
}

void restore_params(ParamSet<float>& params, const std::vector<Tensor<float>>& snapshot) {
  for (std::size_t i = 0; i < params.size(); ++i) params.items()[i]->value = snapshot[i];
}

double mean_over_time(const Tensor<float>& x, std::int64_t b, std::int64_t d) {
  double acc = 0;
  for (std::int64_t t = 0; t < x.shape[1]; ++t) acc += x.at(b, t, d);
  return acc / static_cast<double>(x.shape[1]);
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

double mae_of(const std::vector<float>& pred, const std::vector<float>& labels) {
  double acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    acc += std::abs(static_cast<double>(pred[i]) - static_cast<double>(labels[i]));
  return acc / static_cast<double>(pred.size());
}

json dims_to_json(const ModelDims& d) {
  return {{"d", d.d},
          {"heads", d.heads},
          {"n_blocks", d.n_blocks},
          {"kernel_size", d.kernel_size},
          {"use_fusion", d.use_fusion},
          {"positional", d.positional},
          {"feature_dims", d.feature_dims},
          {"time_steps", d.time_steps}};
}

ModelDims dims_from_json(const json& j) {
  ModelDims d;
  try {
    d.d = j.at("d");
    d.heads = j.at("heads");
    d.n_blocks = j.at("n_blocks");
    d.kernel_size = j.at("kernel_size");
    d.use_fusion = j.at("use_fusion");
    d.positional = j.at("positional");
    const auto f = j.at("feature_dims").get<std::vector<std::int64_t>>();
    const auto t = j.at("time_steps").get<std::vector<std::int64_t>>();
    if (f.size() != kNumModalities || t.size() != kNumModalities)
      throw FormatError("checkpoint.json: dims arrays must have 3 entries");
    for (int m = 0; m < kNumModalities; ++m) {
      d.feature_dims[m] = f[m];
      d.time_steps[m] = t[m];
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint.json: bad dims: ") + e.what());
  }
  return d;
}

struct BatchLossOut {
  Var total;
  LossBreakdown breakdown;
};

BatchLossOut build_student_batch_loss(Graph<float>& g, const ModelBundle<float>& student,
                                      const FeatureArchive& archive,
                                      const std::vector<std::size_t>& idx, const MaskedBatch& mb,
                                      const TeacherCache& cache, const TrainConfig& cfg) {
  std::array<Tensor<float>, kNumModalities> feats;
  for (int m = 0; m < kNumModalities; ++m) feats[m] = gather_masked(mb.samples, m);
  ForwardOptions opt;
  opt.with_decoders = cfg.combo.reconstruct;
  auto fwd = model_forward(g, student, feats, opt);

  const std::int64_t t_len = student.dims.fused_len();
  LossTerms<float> terms;
  terms.task = task_loss(g, fwd.pred, gather_labels(archive, idx));

  if (cfg.combo.distill) {
    std::array<Var, kNumModalities> teacher_rep;
    for (int m = 0; m < kNumModalities; ++m)
      teacher_rep[m] = g.input(slice_rows(cache.rep[m], idx));
    if (fwd.has_fusion) {
      Var teacher_fused_pooled = g.input(slice_rows(cache.fused_pooled, idx));
      auto dis = distill_loss(g, teacher_rep, teacher_fused_pooled, fwd.rep_out, fwd.fused.y);
      terms.distill_rep = dis.rep;
      terms.distill_fused = dis.fused;
      terms.self_distill = dis.self_d;
    } else {
      // Without the fusion module there is no fused stream; only the
      // representation distillation applies.
      for (int m = 0; m < kNumModalities; ++m) {
        Var rep = g.sqdiff_mean(g.stop_gradient(teacher_rep[m]), fwd.rep_out[m]);
        terms.distill_rep = m == 0 ? rep : g.add(terms.distill_rep, rep);
      }
      terms.distill_fused = g.input(Tensor<float>::scalar(0.0f));
      terms.self_distill = g.input(Tensor<float>::scalar(0.0f));
    }
  }

  if (cfg.combo.reconstruct) {
    std::array<Tensor<float>, kNumModalities> originals;
    std::array<std::vector<std::uint8_t>, kNumModalities> missing;
    for (int m = 0; m < kNumModalities; ++m) {
      originals[m] = resample_time_tensor(gather_batch(archive, idx, static_cast<Modality>(m)),
                                          t_len);
      missing[m].reserve(idx.size() * static_cast<std::size_t>(t_len));
      for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto flags = resample_mask_nearest(mb.masks[b][m].missing, t_len);
        missing[m].insert(missing[m].end(), flags.begin(), flags.end());
      }
    }
    auto rec = rec_loss(g, originals, fwd.dec_enc, fwd.dec_rep, missing);
    terms.rec_enc = rec.enc;
    terms.rec_rep = rec.rep;
  }

  if (cfg.combo.similar) {
    std::array<Var, kNumModalities> s_enc, s_rep, t_enc, t_rep;
    for (int m = 0; m < kNumModalities; ++m) {
      s_enc[m] = g.mean_time(fwd.enc_out[m]);
      s_rep[m] = g.mean_time(fwd.rep_out[m]);
      t_enc[m] = g.input(slice_rows(cache.enc_pooled[m], idx));
      t_rep[m] = g.input(slice_rows(cache.rep_pooled[m], idx));
    }
    auto sim = simsiam_loss(g, s_enc, t_enc, s_rep, t_rep, student.simsiam);
    terms.sim_enc = sim.enc;
    terms.sim_rep = sim.rep;
  }

  auto composed = total_loss(g, terms, cfg.weights, Setting::kIncomplete, cfg.combo);
  return {composed.total, composed.breakdown};
}

}  // namespace

void Adam::step(ParamSet<float>& params) {
  ++steps;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
  for (auto& p : params.items()) {
    if (!p->trainable) continue;
    for (std::size_t i = 0; i < p->value.v.size(); ++i) {
      const double grad = p->grad.v[i];
      const double m = beta1 * p->adam_m.v[i] + (1.0 - beta1) * grad;
      const double v = beta2 * p->adam_v.v[i] + (1.0 - beta2) * grad * grad;
      p->adam_m.v[i] = static_cast<float>(m);
      p->adam_v.v[i] = static_cast<float>(v);
      p->value.v[i] = static_cast<float>(p->value.v[i] -
                                         lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
    }
  }
}

std::vector<float> predict(const ModelBundle<float>& model, const FeatureArchive& archive,
                           const std::vector<std::size_t>& idx, const MissingPolicy* mask_policy,
                           std::uint64_t mask_seed) {
  if (idx.empty()) throw DataError("predict: no samples");
  std::vector<MultimodalSample> samples;
  samples.reserve(idx.size());
  for (auto i : idx) samples.push_back(archive.samples[i]);
  if (mask_policy) {
    MaskedBatch mb = mask_batch(samples, *mask_policy, mask_seed);
    samples = std::move(mb.samples);
  }
  std::vector<float> out;
  out.reserve(idx.size());
  for (std::size_t start = 0; start < samples.size(); start += kEvalBatch) {
    const std::size_t stop = std::min(samples.size(), start + kEvalBatch);
    std::vector<MultimodalSample> chunk(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                        samples.begin() + static_cast<std::ptrdiff_t>(stop));
    std::array<Tensor<float>, kNumModalities> feats;
    for (int m = 0; m < kNumModalities; ++m) feats[m] = gather_masked(chunk, m);
    Graph<float> g;
    auto fwd = model_forward(g, model, feats);
    const auto& pred = g.val(fwd.pred).v;
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

TeacherCache build_teacher_cache(const ModelBundle<float>& teacher,
                                 const FeatureArchive& archive) {
  const auto n = archive.samples.size();
  const std::int64_t t_len = teacher.dims.fused_len();
  const std::int64_t d = teacher.dims.d;
  TeacherCache cache;
  for (int m = 0; m < kNumModalities; ++m) {
    cache.rep[m] = Tensor<float>({static_cast<std::int64_t>(n), t_len, d});
    cache.rep_pooled[m] = Tensor<float>({static_cast<std::int64_t>(n), d});
    cache.enc_pooled[m] = Tensor<float>({static_cast<std::int64_t>(n), d});
  }
  cache.fused_pooled = Tensor<float>({static_cast<std::int64_t>(n), d});

  const auto idx = all_indices(n);
  for (std::size_t start = 0; start < n; start += kEvalBatch) {
    const std::size_t stop = std::min(n, start + kEvalBatch);
    std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                   idx.begin() + static_cast<std::ptrdiff_t>(stop));
    std::array<Tensor<float>, kNumModalities> feats;
    for (int m = 0; m < kNumModalities; ++m)
      feats[m] = gather_batch(archive, chunk, static_cast<Modality>(m));
    Graph<float> g;
    auto fwd = model_forward(g, teacher, feats);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const std::size_t row = start + b;
      for (int m = 0; m < kNumModalities; ++m) {
        const auto& rep = g.val(fwd.rep_out[m]);
        const auto& enc = g.val(fwd.enc_out[m]);
        std::copy(rep.v.begin() + static_cast<std::ptrdiff_t>(b * static_cast<std::size_t>(t_len * d)),
                  rep.v.begin() + static_cast<std::ptrdiff_t>((b + 1) * static_cast<std::size_t>(t_len * d)),
                  cache.rep[m].v.begin() + static_cast<std::ptrdiff_t>(row * static_cast<std::size_t>(t_len * d)));
        for (std::int64_t j = 0; j < d; ++j) {
          cache.rep_pooled[m].at(static_cast<std::int64_t>(row), j) =
              static_cast<float>(mean_over_time(rep, static_cast<std::int64_t>(b), j));
          cache.enc_pooled[m].at(static_cast<std::int64_t>(row), j) =
              static_cast<float>(mean_over_time(enc, static_cast<std::int64_t>(b), j));
        }
      }
      if (fwd.has_fusion) {
        const auto& fused = g.val(fwd.fused.y);
        for (std::int64_t j = 0; j < d; ++j)
          cache.fused_pooled.at(static_cast<std::int64_t>(row), j) =
              static_cast<float>(mean_over_time(fused, static_cast<std::int64_t>(b), j));
      }
    }
  }
  return cache;
}

namespace {

/// Shared epoch driver for both roles. build_loss returns the scalar loss Var
/// plus the logged breakdown for one batch.
template <class BuildLoss>
TrainResult run_training(const FeatureArchive& archive, ModelBundle<float>&& model,
                         const TrainConfig& config, std::uint64_t seed, BuildLoss&& build_loss,
                         const MissingPolicy* val_policy) {
  if (archive.train.empty()) throw DataError("train: empty train split");
  if (archive.val.empty()) throw DataError("train: empty validation split");

  TrainResult result{std::move(model), {}, 0, std::numeric_limits<double>::infinity(), 0};
  Adam adam;
  adam.lr = config.lr;
  auto best = snapshot_params(result.model.params);
  const auto val_labels = gather_labels(archive, archive.val);
  const std::uint64_t val_mask_seed = derive_seed(seed, hash_name("val-mask"));

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::vector<std::size_t> order = archive.train;
    Rng shuffle_rng(derive_seed(seed, hash_name("shuffle"), static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    LossBreakdown sum;
    int steps = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(stop));
      Graph<float> g;
      BatchLossOut batch = build_loss(g, result.model, idx, epoch, steps);
      result.model.params.zero_grads();
      g.backward(batch.total);
      g.sync_param_grads();
      adam.step(result.model.params);
      sum.task += batch.breakdown.task;
      sum.distill_rep += batch.breakdown.distill_rep;
      sum.distill_fused += batch.breakdown.distill_fused;
      sum.self_distill += batch.breakdown.self_distill;
      sum.rec_enc += batch.breakdown.rec_enc;
      sum.rec_rep += batch.breakdown.rec_rep;
      sum.sim_enc += batch.breakdown.sim_enc;
      sum.sim_rep += batch.breakdown.sim_rep;
      ++steps;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_mean.task = sum.task / steps;
    stats.train_mean.distill_rep = sum.distill_rep / steps;
    stats.train_mean.distill_fused = sum.distill_fused / steps;
    stats.train_mean.self_distill = sum.self_distill / steps;
    stats.train_mean.rec_enc = sum.rec_enc / steps;
    stats.train_mean.rec_rep = sum.rec_rep / steps;
    stats.train_mean.sim_enc = sum.sim_enc / steps;
    stats.train_mean.sim_rep = sum.sim_rep / steps;
    stats.train_mean.total = LossBreakdown::compose(stats.train_mean, config.weights);

    const auto val_pred = predict(result.model, archive, archive.val, val_policy, val_mask_seed);
    stats.val_mae = mae_of(val_pred, val_labels);
    result.history.push_back(stats);
    result.stopped_epoch = epoch;

    if (stats.val_mae < result.best_val_mae) {
      result.best_val_mae = stats.val_mae;
      result.best_epoch = epoch;
      best = snapshot_params(result.model.params);
    }
    if (epoch - result.best_epoch >= config.patience) break;
  }
  restore_params(result.model.params, best);
  return result;
}

}  // namespace

TrainResult train_teacher(const FeatureArchive& archive, const ModelDims& dims,
                          const TrainConfig& config, std::uint64_t seed) {
  config.validate();
  auto model = ModelBundle<float>::create(dims, seed, Role::kTeacher);
  auto build = [&archive, &config](Graph<float>& g, const ModelBundle<float>& m,
                                   const std::vector<std::size_t>& idx, int, int) {
    std::array<Tensor<float>, kNumModalities> feats;
    for (int mm = 0; mm < kNumModalities; ++mm)
      feats[mm] = gather_batch(archive, idx, static_cast<Modality>(mm));
    auto fwd = model_forward(g, m, feats);
    LossTerms<float> terms;
    terms.task = task_loss(g, fwd.pred, gather_labels(archive, idx));
    auto composed = total_loss(g, terms, config.weights, Setting::kComplete);
    return BatchLossOut{composed.total, composed.breakdown};
  };
  return run_training(archive, std::move(model), config, seed, build, nullptr);
}

TrainResult train_student(const FeatureArchive& archive, const ModelBundle<float>& teacher,
                          const TrainConfig& config, std::uint64_t seed) {
  config.validate();
  if (config.setting != Setting::kIncomplete)
    throw ConfigError("train_student: setting must be incomplete");
  for (int m = 0; m < kNumModalities; ++m) {
    if (teacher.dims.feature_dims[m] != archive.meta.feature_dims[m] ||
        teacher.dims.time_steps[m] != archive.meta.time_steps[m])
      throw ConfigError("train_student: teacher architecture does not match the archive");
  }
  const TeacherCache cache = build_teacher_cache(teacher, archive);
  auto student = ModelBundle<float>::create(teacher.dims, seed, Role::kStudent);

  MissingPolicy train_policy = config.missing;
  train_policy.seed_stream = derive_seed(seed, hash_name("train-mask"));
  MissingPolicy val_policy = config.missing;
  val_policy.seed_stream = derive_seed(seed, hash_name("val-mask-stream"));

  auto build = [&archive, &config, &cache, train_policy](Graph<float>& g,
                                                         const ModelBundle<float>& m,
                                                         const std::vector<std::size_t>& idx,
                                                         int epoch, int step) {
    std::vector<MultimodalSample> samples;
    samples.reserve(idx.size());
    for (auto i : idx) samples.push_back(archive.samples[i]);
    const auto batch_seed =
        derive_seed(static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(step));
    MaskedBatch mb = mask_batch(samples, train_policy, batch_seed);
    return build_student_batch_loss(g, m, archive, idx, mb, cache, config);
  };
  return run_training(archive, std::move(student), config, seed, build, &val_policy);
}

void save_checkpoint(const ModelBundle<float>& model, const std::filesystem::path& dir,
                     const std::string& provenance_json) {
  std::filesystem::create_directories(dir);
  json params = json::array();
  std::vector<float> blob;
  blob.reserve(static_cast<std::size_t>(model.params.total_values()));
  for (const auto& p : model.params.items()) {
    params.push_back({{"name", p->name}, {"shape", p->value.shape}});
    blob.insert(blob.end(), p->value.v.begin(), p->value.v.end());
  }
  json meta = {{"version", kCheckpointVersion},
               {"role", model.role == Role::kTeacher ? "teacher" : "student"},
               {"init_seed", model.init_seed},
               {"dims", dims_to_json(model.dims)},
               {"params", params},
               {"param_file", "params.bin"},
               {"provenance", json::parse(provenance_json)}};
  std::ofstream(dir / "checkpoint.json") << meta.dump(2) << "\n";
  std::ofstream os(dir / "params.bin", std::ios::binary);
  os.write(reinterpret_cast<const char*>(blob.data()),
           static_cast<std::streamsize>(blob.size() * sizeof(float)));
  if (!os) throw FormatError("save_checkpoint: short write");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream is(dir / "checkpoint.json");
  if (!is) throw FormatError("checkpoint.json: cannot open in " + dir.string());
  json meta;
  try {
    is >> meta;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint.json: invalid JSON: ") + e.what());
  }
  try {
    if (meta.at("version").get<int>() != kCheckpointVersion)
      throw FormatError("checkpoint.json: unsupported version");
    const std::string role_str = meta.at("role");
    const auto dims = dims_from_json(meta.at("dims"));
    const std::uint64_t init_seed = meta.at("init_seed");
    auto model = ModelBundle<float>::create(
        dims, init_seed, role_str == "teacher" ? Role::kTeacher : Role::kStudent);
    const auto params = meta.at("params");
    if (params.size() != model.params.size())
      throw FormatError("checkpoint.json: parameter list does not match architecture");
    std::size_t total = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = model.params.items()[i];
      if (params[i].at("name").get<std::string>() != p->name)
        throw FormatError("checkpoint.json: parameter order mismatch at '" + p->name + "'");
      if (params[i].at("shape").get<std::vector<std::int64_t>>() != p->value.shape)
        throw FormatError("checkpoint.json: shape mismatch for '" + p->name + "'");
      total += p->value.v.size();
    }
    std::ifstream bin(dir / meta.at("param_file").get<std::string>(),
                      std::ios::binary | std::ios::ate);
    if (!bin) throw FormatError("params.bin: cannot open");
    if (static_cast<std::size_t>(bin.tellg()) != total * sizeof(float))
      throw FormatError("params.bin: size does not match the parameter manifest");
    bin.seekg(0);
    std::vector<float> blob(total);
    bin.read(reinterpret_cast<char*>(blob.data()),
             static_cast<std::streamsize>(total * sizeof(float)));
    if (!bin) throw FormatError("params.bin: truncated read");
    std::size_t off = 0;
    for (const auto& p : model.params.items()) {
      std::copy(blob.begin() + static_cast<std::ptrdiff_t>(off),
                blob.begin() + static_cast<std::ptrdiff_t>(off + p->value.v.size()),
                p->value.v.begin());
      off += p->value.v.size();
    }
    Checkpoint out{std::move(model), meta.value("provenance", json::object()).dump()};
    return out;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint.json: ") + e.what());
  }
}

}  // namespace msrd
