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

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "msrd/evalkit.hpp"
#include "msrd/train.hpp"

namespace msrd {

/// One run configuration file drives train and ablate. See docs/FORMATS.md.
struct RunConfig {
  std::filesystem::path archive;
  Setting setting = Setting::kComplete;
  std::filesystem::path teacher;  // checkpoint dir; required when incomplete
  std::filesystem::path out;      // optional; commands fall back to the out root
  ModelDims model;                // feature/time dims are filled from the archive
  TrainConfig train;
  LabelStyle style = LabelStyle::kMosi;
  std::vector<double> eval_rates;          // empty = default grid for the style
  std::vector<std::uint64_t> eval_seeds;   // empty = train seeds
};

RunConfig load_run_config(const std::filesystem::path& file);

/// $MSRD_OUT_ROOT, or ./runs when unset.
std::filesystem::path default_out_root();

struct TrainOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<Setting> setting;
  std::optional<std::filesystem::path> teacher;
};

void cmd_synth(const std::filesystem::path& spec_file, const std::filesystem::path& out_dir);

void cmd_train(const std::filesystem::path& config_file, const TrainOverrides& over = {});

void cmd_sweep(const std::filesystem::path& checkpoint_dir,
               const std::filesystem::path& archive_dir, std::vector<double> rates,
               std::vector<std::uint64_t> seeds, LabelStyle style,
               const std::filesystem::path& out_dir);

void cmd_ablate(const std::filesystem::path& config_file, const std::string& axis,
                const std::optional<std::filesystem::path>& out_override = {});

/// Runs every registered gradient-check unit; returns true when all pass the
/// 1e-4 relative-error gate.
bool cmd_gradcheck(std::ostream& os);

/// Writes run_manifest.json into out_dir (one per command run).
void write_run_manifest(const std::filesystem::path& out_dir, const std::string& command,
                        const std::string& config_ref, const std::vector<std::uint64_t>& seeds,
                        double wall_seconds);

}  // namespace msrd
