// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "corda/harness.hpp"

namespace corda {

// Everything `corda run` needs: the experiment, which adaptation mode
// drives the persisted pipeline artifacts, and where outputs go.
struct RunConfig {
  ExperimentConfig experiment;
  AdaptMode mode = AdaptMode::kKpm;
  std::string output_dir = "corda_out";
};

RunConfig default_run_config();

// Strict parse: unknown keys are rejected at every level, types are
// checked, missing keys fall back to defaults. Throws IoError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

// Full echo including every default; `--print-config` output.
std::string run_config_to_json(const RunConfig& cfg);

}  // namespace corda
