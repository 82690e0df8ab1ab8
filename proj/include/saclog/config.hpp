#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "saclog/difficulty.hpp"
#include "saclog/preview.hpp"
#include "saclog/refmodel.hpp"
#include "saclog/scheduler.hpp"
#include "saclog/synthetic.hpp"

namespace saclog {

struct DataConfig {
  std::string source = "synthetic";  // synthetic | files
  std::filesystem::path dialog_file;
  std::filesystem::path schema_file;
  std::filesystem::path valid_dialog_file;
  bool mark_synthetic = false;  // files mode: flag loaded examples synthetic
  int dialogs_train = 200;
  int dialogs_valid = 60;
  double dontcare_rate = 0.10;
};

struct ReviewConfig {
  std::string mode = "post";  // post | online | off
  double fraction = 0.1;
  int budget = 200;
  int extra_epochs = 3;        // post-mode training on the enlarged set
  int online_budget_per_event = 20;
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  int workers = 2;
  std::filesystem::path out_dir = "run";

  DataConfig data;
  DifficultyConfig scorer;
  int n_buckets = 10;
  ScheduleConfig schedule;
  RefModelConfig model;
  bool preview_enabled = true;
  PreviewConfig preview;
  ReviewConfig review;
  int baseline_epochs = 20;

  // dotted key -> "default" | "file" (how each value was resolved)
  std::map<std::string, std::string> origins;

  void validate() const;  // throws ConfigError
};

PipelineConfig load_pipeline_config(const std::filesystem::path& config_file);

// Snapshot of every resolved value plus its origin; written into the run
// directory so artifacts are self-describing.
void write_resolved_config(const PipelineConfig& config,
                           const std::filesystem::path& file);

}  // namespace saclog
