#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace saclog {

struct EpochRecord {
  int stage = 0;
  int epoch = 0;       // epoch index within the stage
  double mean_loss = 0.0;
  int steps = 0;
  bool converged = false;
  std::string cause;   // "converged" | "max_epochs" | "empty_bucket" | ...
};

struct StepRecord {
  int stage = 0;
  int epoch = 0;
  int step = 0;        // step index within the epoch
  double loss = 0.0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;

  void append(const TrainingLog& other);
};

// One line per epoch: {stage, epoch, mean_loss, steps, converged, cause}.
void write_training_log(const TrainingLog& log, const std::filesystem::path& file);
// Per-step losses, one line each, so convergence decisions can be replayed.
void write_step_losses(const TrainingLog& log, const std::filesystem::path& file);

TrainingLog read_training_log(const std::filesystem::path& epoch_file,
                              const std::filesystem::path& step_file = {});

}  // namespace saclog
