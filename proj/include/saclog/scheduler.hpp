#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "saclog/corpus.hpp"
#include "saclog/difficulty.hpp"
#include "saclog/model.hpp"
#include "saclog/training_log.hpp"

namespace saclog {

// N difficulty buckets ordered easiest-first; bucket b covers hybrid scores
// in [b/N, (b+1)/N), with 1.0 landing in the last bucket.
struct Curriculum {
  int n_buckets = 0;
  std::vector<std::vector<std::string>> buckets;  // example ids
  std::vector<double> boundaries;                 // N+1 interval edges

  std::size_t total_examples() const;
};

struct ConvergenceRule {
  int max_epochs_per_stage = 3;
  double loss_threshold = 15.0;  // in the model's own loss units
  int window_steps = 100;
};

struct ScheduleConfig {
  ConvergenceRule rule;
  int warmup_epochs = 2;  // full-set epochs before stage 0
  int post_epochs = 10;   // full-set epochs after the last stage
};

// Stage identifiers used in TrainingLog records.
inline constexpr int kWarmupStage = -1;
// post-accumulation epochs log as stage == n_buckets.

// bucket = min(floor(hybrid * n), n - 1); ascending (score, id) within.
Curriculum assign_buckets(const std::vector<DifficultyRecord>& records, int n);

// True iff `window_steps` losses exist, all of the last window is within the
// threshold, and the least-squares slope over the window is >= 0.
bool check_convergence(const std::vector<double>& history, const ConvergenceRule& rule);

struct EpochEvent {
  int stage = 0;
  int epoch = 0;
  bool converged = false;
  double mean_loss = 0.0;
  ModelOracle* model = nullptr;
  const std::vector<const DialogExample*>* active_set = nullptr;
};

// Called at the end of every curriculum-stage epoch; returned examples join
// the cumulative training set from the next epoch on.
using EpochHook = std::function<std::vector<DialogExample>(const EpochEvent&)>;

// Baby-step training: warmup on the full set, then stages over cumulative
// bucket unions until convergence or the per-stage epoch cap, then
// post-accumulation epochs. Deterministic per seed; shuffling re-seeds per
// stage so later stages cannot perturb earlier ones.
TrainingLog run_curriculum(ModelOracle& model, const Curriculum& curriculum,
                           const Corpus& corpus, const ScheduleConfig& config,
                           const EpochHook& hook, std::uint64_t seed);

void write_curriculum(const Curriculum& curriculum, const std::filesystem::path& file);
Curriculum read_curriculum(const std::filesystem::path& file);

}  // namespace saclog
