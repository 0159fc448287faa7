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

#include "msrd/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>

#include "json.hpp"
#include "msrd/csv.hpp"
#include "msrd/gradcheck.hpp"
#include "msrd/version.hpp"

namespace msrd {

using nlohmann::json;

namespace {

json load_json_file(const std::filesystem::path& file, const char* what) {
  std::ifstream is(file);
  if (!is) throw ConfigError(std::string(what) + ": cannot open " + file.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + ": invalid JSON: " + e.what());
  }
  return j;
}

const std::vector<std::string>& history_columns() {
  static const std::vector<std::string> cols = {
      "epoch",   "task",    "distill_rep", "distill_fused", "self_distill", "rec_enc",
      "rec_rep", "sim_enc", "sim_rep",     "total",         "val_mae"};
  return cols;
}

void write_history_csv(const std::filesystem::path& file, const std::vector<EpochStats>& history) {
  CsvWriter csv(file, history_columns());
  for (const auto& e : history) {
    const auto& b = e.train_mean;
    csv.row({std::to_string(e.epoch), CsvWriter::num(b.task), CsvWriter::num(b.distill_rep),
             CsvWriter::num(b.distill_fused), CsvWriter::num(b.self_distill),
             CsvWriter::num(b.rec_enc), CsvWriter::num(b.rec_rep), CsvWriter::num(b.sim_enc),
             CsvWriter::num(b.sim_rep), CsvWriter::num(b.total), CsvWriter::num(e.val_mae)});
  }
}

void write_sweep_outputs(const std::filesystem::path& dir, const SweepResult& sweep) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> header = {"rate"};
  for (const auto& c : metric_columns()) header.push_back(c);
  CsvWriter csv(dir / "sweep.csv", header);
  for (const auto& p : sweep.points) {
    std::vector<std::string> cells = {CsvWriter::num(p.rate)};
    for (const auto& c : metric_columns()) cells.push_back(CsvWriter::num(metric_value(p.metrics, c)));
    csv.row(cells);
  }
  json auilc_json = json::object();
  for (const auto& [k, v] : sweep.auilc_by_metric) auilc_json[k] = v;
  std::ofstream(dir / "auilc.json") << auilc_json.dump(2) << "\n";
  for (const auto& c : metric_columns()) {
    std::ofstream chart(dir / ("chart_" + c + ".tsv"));
    for (const auto& p : sweep.points)
      chart << CsvWriter::num(p.rate) << '\t' << CsvWriter::num(metric_value(p.metrics, c))
            << '\n';
  }
}

ModelDims dims_for_archive(ModelDims base, const FeatureArchive& archive) {
  base.feature_dims = archive.meta.feature_dims;
  base.time_steps = archive.meta.time_steps;
  return base;
}

std::string checkpoint_provenance(const RunConfig& cfg, const std::filesystem::path& config_file,
                                  std::uint64_t seed, const TrainResult& result) {
  json j = {{"seed", seed},
            {"config", config_file.string()},
            {"setting", cfg.setting == Setting::kComplete ? "complete" : "incomplete"},
            {"best_epoch", result.best_epoch},
            {"best_val_mae", result.best_val_mae},
            {"toolkit_version", kVersion}};
  return j.dump();
}

struct ArmSpec {
  std::string name;
  ModelDims dims;
  LossCombo combo;
};

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

std::filesystem::path default_out_root() {
  if (const char* env = std::getenv("MSRD_OUT_ROOT")) return env;
  return "runs";
}

RunConfig load_run_config(const std::filesystem::path& file) {
  const json j = load_json_file(file, "run config");
  RunConfig cfg;
  try {
    if (!j.contains("archive")) throw ConfigError("run config: missing 'archive'");
    cfg.archive = j.at("archive").get<std::string>();
    const std::string setting = j.value("setting", "complete");
    if (setting == "complete")
      cfg.setting = Setting::kComplete;
    else if (setting == "incomplete")
      cfg.setting = Setting::kIncomplete;
    else
      throw ConfigError("run config: setting must be complete or incomplete");
    if (j.contains("teacher")) cfg.teacher = j.at("teacher").get<std::string>();
    if (j.contains("out")) cfg.out = j.at("out").get<std::string>();

    if (j.contains("model")) {
      const auto& m = j.at("model");
      cfg.model.d = m.value("d", cfg.model.d);
      cfg.model.heads = m.value("heads", cfg.model.heads);
      cfg.model.n_blocks = m.value("n_blocks", cfg.model.n_blocks);
      cfg.model.kernel_size = m.value("kernel_size", cfg.model.kernel_size);
      cfg.model.positional = m.value("positional", cfg.model.positional);
      cfg.model.use_fusion = m.value("use_fusion", cfg.model.use_fusion);
    }

    if (j.contains("train")) {
      const auto& t = j.at("train");
      cfg.train.lr = t.value("lr", cfg.train.lr);
      cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
      cfg.train.patience = t.value("patience", cfg.train.patience);
      cfg.train.max_epochs = t.value("max_epochs", cfg.train.max_epochs);
      if (t.contains("seeds")) cfg.train.seeds = t.at("seeds").get<std::vector<std::uint64_t>>();
      cfg.train.weights.lambda1 = t.value("lambda1", cfg.train.weights.lambda1);
      cfg.train.weights.lambda2 = t.value("lambda2", cfg.train.weights.lambda2);
      cfg.train.weights.lambda3 = t.value("lambda3", cfg.train.weights.lambda3);
      if (t.contains("loss_combo")) {
        const auto& c = t.at("loss_combo");
        cfg.train.combo.distill = c.value("dis", true);
        cfg.train.combo.reconstruct = c.value("rec", true);
        cfg.train.combo.similar = c.value("sim", true);
      }
      if (t.contains("missing")) {
        const auto& mi = t.at("missing");
        const std::string mode = mi.value("mode", "uniform_range");
        if (mode == "fixed_rate") {
          cfg.train.missing.mode = MissingPolicy::Mode::kFixedRate;
          cfg.train.missing.rate = mi.value("rate", 0.3);
        } else if (mode == "uniform_range") {
          cfg.train.missing.mode = MissingPolicy::Mode::kUniformRange;
          cfg.train.missing.rate_lo = mi.value("lo", 0.1);
          cfg.train.missing.rate_hi = mi.value("hi", 0.9);
        } else {
          throw ConfigError("run config: missing.mode must be fixed_rate or uniform_range");
        }
        cfg.train.missing.per_modality_independent = mi.value("independent", true);
      }
    }
    cfg.train.setting = cfg.setting;

    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      if (e.contains("label_style"))
        cfg.style = label_style_from_name(e.at("label_style").get<std::string>());
      if (e.contains("rates")) cfg.eval_rates = e.at("rates").get<std::vector<double>>();
      if (e.contains("seeds")) cfg.eval_seeds = e.at("seeds").get<std::vector<std::uint64_t>>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  if (cfg.eval_rates.empty()) cfg.eval_rates = default_rates(cfg.style);
  if (cfg.eval_seeds.empty()) cfg.eval_seeds = cfg.train.seeds;
  return cfg;
}

void write_run_manifest(const std::filesystem::path& out_dir, const std::string& command,
                        const std::string& config_ref, const std::vector<std::uint64_t>& seeds,
                        double wall_seconds) {
  std::filesystem::create_directories(out_dir);
  json j = {{"command", command},
            {"config", config_ref},
            {"seeds", seeds},
            {"out", out_dir.string()},
            {"toolkit_version", kVersion},
            {"wall_clock_sec", wall_seconds}};
  std::ofstream(out_dir / "run_manifest.json") << j.dump(2) << "\n";
}

void cmd_synth(const std::filesystem::path& spec_file, const std::filesystem::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  const SynthSpec spec = synth_spec_from_json_file(spec_file);
  const FeatureArchive archive = generate_synthetic(spec);
  save_archive(archive, out_dir);
  write_run_manifest(out_dir, "synth", spec_file.string(), {spec.seed}, elapsed_seconds(start));
  std::cout << "wrote archive with " << archive.samples.size() << " samples to " << out_dir
            << "\n";
}

void cmd_train(const std::filesystem::path& config_file, const TrainOverrides& over) {
  const auto start = std::chrono::steady_clock::now();
  RunConfig cfg = load_run_config(config_file);
  if (over.setting) {
    cfg.setting = *over.setting;
    cfg.train.setting = *over.setting;
  }
  if (over.teacher) cfg.teacher = *over.teacher;
  if (over.out) cfg.out = *over.out;
  if (over.seed) cfg.train.seeds = {*over.seed};
  if (cfg.setting == Setting::kIncomplete && cfg.teacher.empty())
    throw ConfigError("incomplete setting requires a teacher checkpoint (--teacher or config)");
  const std::filesystem::path out =
      cfg.out.empty() ? default_out_root() / config_file.stem() : cfg.out;
  std::filesystem::create_directories(out);

  const FeatureArchive archive = load_archive(cfg.archive);
  const ModelDims dims = dims_for_archive(cfg.model, archive);

  for (std::uint64_t seed : cfg.train.seeds) {
    TrainResult result;
    if (cfg.setting == Setting::kComplete) {
      result = train_teacher(archive, dims, cfg.train, seed);
    } else {
      // --teacher accepts either one checkpoint directory or a train-run root
      // holding seed_<k> subdirectories.
      auto teacher_dir = cfg.teacher;
      if (!std::filesystem::exists(teacher_dir / "checkpoint.json"))
        teacher_dir /= "seed_" + std::to_string(seed);
      Checkpoint teacher = load_checkpoint(teacher_dir);
      const auto& td = teacher.model.dims;
      if (td.d != dims.d || td.heads != dims.heads || td.n_blocks != dims.n_blocks ||
          td.kernel_size != dims.kernel_size || td.use_fusion != dims.use_fusion)
        throw ConfigError("teacher checkpoint architecture does not match the run config");
      teacher.model.params.set_trainable(false);
      result = train_student(archive, teacher.model, cfg.train, seed);
    }
    const auto seed_dir = out / ("seed_" + std::to_string(seed));
    std::filesystem::create_directories(seed_dir);
    write_history_csv(seed_dir / "history.csv", result.history);
    save_checkpoint(result.model, seed_dir,
                    checkpoint_provenance(cfg, config_file, seed, result));
    std::cout << "seed " << seed << ": best epoch " << result.best_epoch << " val_mae "
              << result.best_val_mae << " (stopped at " << result.stopped_epoch << ")\n";
  }
  write_run_manifest(out, "train", config_file.string(), cfg.train.seeds,
                     elapsed_seconds(start));
}

void cmd_sweep(const std::filesystem::path& checkpoint_dir,
               const std::filesystem::path& archive_dir, std::vector<double> rates,
               std::vector<std::uint64_t> seeds, LabelStyle style,
               const std::filesystem::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  Checkpoint ckpt = load_checkpoint(checkpoint_dir);
  const FeatureArchive archive = load_archive(archive_dir);
  if (rates.empty()) rates = default_rates(style);
  if (seeds.empty()) seeds = {1, 2, 3};
  const SweepResult sweep = missing_rate_sweep(ckpt.model, archive, rates, seeds, style);
  write_sweep_outputs(out_dir, sweep);
  write_run_manifest(out_dir, "sweep", checkpoint_dir.string(), seeds, elapsed_seconds(start));
  std::cout << "sweep over " << rates.size() << " rates written to " << out_dir << "\n";
  for (const auto& [k, v] : sweep.auilc_by_metric) std::cout << "  auilc " << k << " = " << v << "\n";
}

void cmd_ablate(const std::filesystem::path& config_file, const std::string& axis,
                const std::optional<std::filesystem::path>& out_override) {
  const auto start = std::chrono::steady_clock::now();
  RunConfig cfg = load_run_config(config_file);
  cfg.setting = Setting::kIncomplete;
  cfg.train.setting = Setting::kIncomplete;
  if (axis != "n_blocks" && axis != "loss_combo" && axis != "no_tf")
    throw ConfigError("unknown ablation axis: " + axis +
                      " (expected n_blocks, loss_combo or no_tf)");
  const std::filesystem::path out = out_override   ? *out_override
                                    : !cfg.out.empty() ? cfg.out
                                                       : default_out_root() / "ablate";
  std::filesystem::create_directories(out);
  const FeatureArchive archive = load_archive(cfg.archive);
  const ModelDims base_dims = dims_for_archive(cfg.model, archive);

  std::vector<ArmSpec> arms;
  if (axis == "n_blocks") {
    for (std::int64_t n = 1; n <= 5; ++n) {
      ModelDims d = base_dims;
      d.n_blocks = n;
      arms.push_back({"n" + std::to_string(n), d, cfg.train.combo});
    }
  } else if (axis == "loss_combo") {
    for (int bits = 0; bits < 8; ++bits) {
      LossCombo combo;
      combo.distill = bits & 1;
      combo.reconstruct = bits & 2;
      combo.similar = bits & 4;
      std::string name = std::string("dis") + (combo.distill ? "1" : "0") + "_rec" +
                         (combo.reconstruct ? "1" : "0") + "_sim" + (combo.similar ? "1" : "0");
      arms.push_back({name, base_dims, combo});
    }
  } else {
    arms.push_back({"with_tf", base_dims, cfg.train.combo});
    ModelDims d = base_dims;
    d.use_fusion = false;
    arms.push_back({"no_tf", d, cfg.train.combo});
  }

  // Teachers are shared between arms with the same architecture and seed.
  std::map<std::string, ModelBundle<float>> teachers;
  auto teacher_for = [&](const ModelDims& dims, std::uint64_t seed) -> const ModelBundle<float>& {
    const std::string key = std::to_string(dims.n_blocks) + "/" +
                            (dims.use_fusion ? "tf" : "notf") + "/" + std::to_string(seed);
    auto it = teachers.find(key);
    if (it == teachers.end()) {
      TrainConfig tc = cfg.train;
      tc.setting = Setting::kComplete;
      auto result = train_teacher(archive, dims, tc, seed);
      result.model.params.set_trainable(false);
      it = teachers.emplace(key, std::move(result.model)).first;
    }
    return it->second;
  };

  std::vector<std::string> header = {"axis", "arm", "n_blocks", "use_fusion", "dis", "rec", "sim"};
  for (const auto& c : metric_columns()) header.push_back("auilc_" + c);
  CsvWriter csv(out / "ablate.csv", header);

  for (const auto& arm : arms) {
    std::map<std::string, double> mean_auilc;
    for (std::uint64_t seed : cfg.train.seeds) {
      const auto& teacher = teacher_for(arm.dims, seed);
      TrainConfig tc = cfg.train;
      tc.combo = arm.combo;
      auto student = train_student(archive, teacher, tc, seed);
      const auto sweep =
          missing_rate_sweep(student.model, archive, cfg.eval_rates, cfg.eval_seeds, cfg.style);
      const auto seed_dir = out / arm.name / ("seed_" + std::to_string(seed));
      write_sweep_outputs(seed_dir, sweep);
      write_history_csv(seed_dir / "history.csv", student.history);
      for (const auto& [k, v] : sweep.auilc_by_metric) mean_auilc[k] += v;
    }
    std::vector<std::string> cells = {axis,
                                      arm.name,
                                      std::to_string(arm.dims.n_blocks),
                                      arm.dims.use_fusion ? "1" : "0",
                                      arm.combo.distill ? "1" : "0",
                                      arm.combo.reconstruct ? "1" : "0",
                                      arm.combo.similar ? "1" : "0"};
    for (const auto& c : metric_columns())
      cells.push_back(
          CsvWriter::num(mean_auilc[c] / static_cast<double>(cfg.train.seeds.size())));
    csv.row(cells);
    std::cout << "arm " << arm.name << " done\n";
  }
  write_run_manifest(out, "ablate", config_file.string(), cfg.train.seeds,
                     elapsed_seconds(start));
}

bool cmd_gradcheck(std::ostream& os) {
  register_kernel_units();
  register_model_units();
  const std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  constexpr double kEps = 1e-6;
  constexpr double kTol = 1e-4;
  bool all_pass = true;
  os << "gradient checks (64-bit, epsilon " << kEps << ", tolerance " << kTol << ")\n";
  for (const auto& name : GradCheckRegistry::instance().names()) {
    double worst = 0;
    for (std::uint64_t s : seeds) worst = std::max(worst, grad_check(name, s, kEps));
    const bool pass = worst < kTol;
    all_pass = all_pass && pass;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-22s max_rel_err %.3e  %s", name.c_str(), worst,
                  pass ? "PASS" : "FAIL");
    os << buf << "\n";
  }
  return all_pass;
}

}  // namespace msrd
