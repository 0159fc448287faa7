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

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "msrd/cli.hpp"
#include "msrd/version.hpp"

namespace {

std::vector<double> parse_rates(const std::string& s) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t next = s.find(',', pos);
    if (next == std::string::npos) next = s.size();
    out.push_back(std::stod(s.substr(pos, next - pos)));
    pos = next + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"training and evaluation toolkit for multimodal sentiment regression under "
               "randomly missing modality time steps"};
  app.set_version_flag("--version", msrd::kVersion);
  app.require_subcommand(1);

  // synth
  std::string synth_spec, synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic feature archive");
  synth->add_option("--spec", synth_spec, "synthesis spec JSON file")->required();
  synth->add_option("--out", synth_out, "output archive directory")->required();

  // train
  std::string train_config, train_out, train_setting, train_teacher;
  std::uint64_t train_seed = 0;
  bool has_seed = false;
  auto* train = app.add_subcommand("train", "train a teacher or student model");
  train->add_option("--config", train_config, "run config JSON file")->required();
  train->add_option("--seed", train_seed, "override: train this single seed")
      ->each([&](const std::string&) { has_seed = true; });
  train->add_option("--out", train_out, "override output directory");
  train->add_option("--setting", train_setting, "override setting: complete|incomplete");
  train->add_option("--teacher", train_teacher, "override teacher checkpoint root");

  // sweep
  std::string sweep_ckpt, sweep_archive, sweep_rates, sweep_out, sweep_style = "mosi";
  std::vector<std::uint64_t> sweep_seeds;
  auto* sweep = app.add_subcommand("sweep", "missing-rate sweep with AUILC summary");
  sweep->add_option("--checkpoint", sweep_ckpt, "checkpoint directory")->required();
  sweep->add_option("--archive", sweep_archive, "feature archive directory")->required();
  sweep->add_option("--rates", sweep_rates, "comma-separated missing rates (default by style)");
  sweep->add_option("--seed", sweep_seeds, "evaluation seeds (repeatable)");
  sweep->add_option("--style", sweep_style, "label style: mosi|sims");
  sweep->add_option("--out", sweep_out, "output directory")->required();

  // ablate
  std::string ablate_config, ablate_axis, ablate_out;
  auto* ablate = app.add_subcommand("ablate", "ablation grid over one axis");
  ablate->add_option("--config", ablate_config, "run config JSON file")->required();
  ablate->add_option("--axis", ablate_axis, "n_blocks | loss_combo | no_tf")->required();
  ablate->add_option("--out", ablate_out, "override output directory");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference verification of every "
                                                    "operator and composite module");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      msrd::cmd_synth(synth_spec, synth_out);
    } else if (*train) {
      msrd::TrainOverrides over;
      if (has_seed) over.seed = train_seed;
      if (!train_out.empty()) over.out = train_out;
      if (!train_teacher.empty()) over.teacher = train_teacher;
      if (!train_setting.empty()) {
        if (train_setting == "complete")
          over.setting = msrd::Setting::kComplete;
        else if (train_setting == "incomplete")
          over.setting = msrd::Setting::kIncomplete;
        else
          throw msrd::ConfigError("--setting must be complete or incomplete");
      }
      msrd::cmd_train(train_config, over);
    } else if (*sweep) {
      std::vector<double> rates;
      if (!sweep_rates.empty()) rates = parse_rates(sweep_rates);
      msrd::cmd_sweep(sweep_ckpt, sweep_archive, rates, sweep_seeds,
                      msrd::label_style_from_name(sweep_style), sweep_out);
    } else if (*ablate) {
      std::optional<std::filesystem::path> out;
      if (!ablate_out.empty()) out = ablate_out;
      msrd::cmd_ablate(ablate_config, ablate_axis, out);
    } else if (*gradcheck) {
      return msrd::cmd_gradcheck(std::cout) ? 0 : 1;
    }
  } catch (const msrd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
