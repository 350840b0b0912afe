#pragma once

// Run configuration files (JSON):
//
//   { "seed": 7,
//     "scenario": { "num_frames": 60, ... },
//     "mpn":      { "num_steps": 4, "variant": "time_aware", ... },
//     "train":    { "iterations": 500, ... },
//     "infer":    { "tau": 0.5, "rounder": "exact", ... },
//     "gradcheck": { "fd_step": 1e-6, "threshold": 1e-4 },
//     "paths":    { "data_dir": "data", "checkpoint": "model.bin", ... } }
//
// Every section and key is optional. Unknown keys are rejected. The top-level
// seed is the default of the scenario and train seeds.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "mpnflow/infer.hpp"
#include "mpnflow/mpn.hpp"
#include "mpnflow/synthdata.hpp"
#include "mpnflow/train.hpp"

namespace mpnflow {

struct PathsConfig {
  std::filesystem::path data_dir = "data";        // scenario directory
  std::filesystem::path checkpoint = "model.bin";
  std::filesystem::path history = "history.csv";
  std::filesystem::path output_dir = "out";       // inference results
  std::filesystem::path gt;                       // eval: defaults to data_dir/gt.txt
  std::filesystem::path results;                  // eval: defaults to output_dir/results.txt
  std::filesystem::path report = "report";        // eval: writes report.txt and report.csv
};

struct GradCheckConfig {
  double fd_step = 1e-6;
  double threshold = 1e-4;
  double corrupt = 0.0;  // test hook: perturbs analytic gradients
  std::uint64_t seed = 0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ScenarioConfig scenario;
  MpnConfig mpn;
  TrainConfig train;
  InferenceConfig infer;
  GradCheckConfig gradcheck;
  PathsConfig paths;

  /// Sets every seed (command-line override).
  void override_seed(std::uint64_t s);
};

/// Relative paths in the file are resolved against the file's directory.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& json_text,
                           const std::filesystem::path& base_dir = {});

std::string mpn_config_to_json(const MpnConfig& c);
MpnConfig mpn_config_from_json(const std::string& text);

Rounder parse_rounder(const std::string& s);
std::string to_string(Rounder r);
std::string to_string(Variant v);

}  // namespace mpnflow
