#pragma once

#include <memory>
#include <string>
#include <vector>

#include "saclog/config.hpp"
#include "saclog/refmodel.hpp"
#include "saclog/review.hpp"
#include "saclog/training_log.hpp"

namespace saclog {

// Pipeline internals shared by the CLI commands and the test harnesses.

struct TrainOutcome {
  std::unique_ptr<ReferenceModel> model;
  TrainingLog log;
  std::vector<AugmentationRecord> review_records;
};

Corpus load_run_corpus(const PipelineConfig& config, const std::string& split);
ModelFactory run_model_factory(const PipelineConfig& config, const Corpus& corpus);

// Runs curriculum (with preview/review per config) or baseline training on
// an already-loaded corpus; reads curriculum/encoder artifacts from the run
// directory.
TrainOutcome run_training(const PipelineConfig& config, const std::string& mode,
                          const Corpus& train);

}  // namespace saclog
