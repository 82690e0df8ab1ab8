#pragma once

#include <filesystem>
#include <string>

#include "saclog/config.hpp"

namespace saclog {

// Stable exit codes, also documented in the README.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;   // bad settings
inline constexpr int kExitData = 3;     // bad or missing input data
inline constexpr int kExitRuntime = 4;  // anything else

// Run-directory layout shared by the subcommands.
struct RunPaths {
  std::filesystem::path root;

  explicit RunPaths(std::filesystem::path run_root) : root(std::move(run_root)) {}
  std::filesystem::path data_dir() const { return root / "data"; }
  std::filesystem::path train_file() const { return data_dir() / "train.jsonl"; }
  std::filesystem::path valid_file() const { return data_dir() / "valid.jsonl"; }
  std::filesystem::path schema_file() const { return data_dir() / "schema.json"; }
  std::filesystem::path scores_file() const { return root / "scores.jsonl"; }
  std::filesystem::path score_summary_file() const { return root / "score_summary.json"; }
  std::filesystem::path curriculum_file() const { return root / "curriculum.json"; }
  std::filesystem::path encoder_file() const { return root / "encoder.bin"; }
  std::filesystem::path pretrain_report_file() const { return root / "pretrain_report.txt"; }
  std::filesystem::path model_file(const std::string& mode, std::uint64_t seed) const {
    return root / ("model_" + mode + "_" + std::to_string(seed) + ".bin");
  }
  std::filesystem::path train_log_file(const std::string& mode, std::uint64_t seed) const {
    return root / ("train_log_" + mode + "_" + std::to_string(seed) + ".jsonl");
  }
  std::filesystem::path train_steps_file(const std::string& mode, std::uint64_t seed) const {
    return root / ("train_steps_" + mode + "_" + std::to_string(seed) + ".jsonl");
  }
  std::filesystem::path metrics_file(const std::string& mode, std::uint64_t seed) const {
    return root / ("metrics_" + mode + "_" + std::to_string(seed) + ".json");
  }
  std::filesystem::path predictions_file(const std::string& mode, std::uint64_t seed,
                                         const std::string& split) const {
    return root / ("predictions_" + mode + "_" + std::to_string(seed) + "_" + split +
                   ".jsonl");
  }
  std::filesystem::path eval_file(const std::string& mode, std::uint64_t seed,
                                  const std::string& split) const {
    return root / ("eval_" + mode + "_" + std::to_string(seed) + "_" + split + ".json");
  }
  std::filesystem::path augmented_file() const { return root / "augmented.jsonl"; }
  std::filesystem::path augmented_sidecar() const {
    return root / "augmented_provenance.jsonl";
  }
  std::filesystem::path review_file(std::uint64_t seed) const {
    return root / ("review_augmented_" + std::to_string(seed) + ".jsonl");
  }
  std::filesystem::path review_sidecar(std::uint64_t seed) const {
    return root / ("review_augmented_" + std::to_string(seed) + "_provenance.jsonl");
  }
  std::filesystem::path resolved_config_file() const { return root / "resolved_config.json"; }
  std::filesystem::path manifest_file() const { return root / "run_manifest.jsonl"; }
  std::filesystem::path report_file() const { return root / "report.md"; }
  std::filesystem::path plots_dir() const { return root / "plots"; }
};

int cmd_ingest(const PipelineConfig& config);
int cmd_score(const PipelineConfig& config);
int cmd_bucket(const PipelineConfig& config);
int cmd_pretrain(const PipelineConfig& config);
int cmd_train(const PipelineConfig& config, const std::string& mode);
int cmd_augment(const PipelineConfig& config);
int cmd_evaluate(const PipelineConfig& config, const std::string& mode,
                 const std::string& split);
int cmd_report(const std::filesystem::path& run_dir);

// Full argv entry point; maps errors onto the exit-code table.
int run_cli(int argc, const char* const* argv);

}  // namespace saclog
