#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "saclog/corpus.hpp"
#include "saclog/training_log.hpp"

namespace saclog {

using StepLossFn = std::function<void(double)>;

// Contract every trainable DST model must satisfy to take part in difficulty
// scoring, curriculum training and review. Instances share nothing mutable;
// clones may train concurrently.
class ModelOracle {
 public:
  virtual ~ModelOracle() = default;

  // One pass over `examples` in the given order; returns the mean loss.
  // An empty list is a no-op returning 0. `on_step`, when set, receives the
  // loss of every individual update step.
  virtual double fit_epoch(const std::vector<const DialogExample*>& examples,
                           std::uint64_t seed, const StepLossFn& on_step = {}) = 0;

  // Deterministic for fixed parameters; never emits `none` entries.
  virtual StateMap predict_turn(const DialogExample& example) const = 0;

  // Finite and >= 0.
  virtual double example_loss(const DialogExample& example) const = 0;

  virtual std::unique_ptr<ModelOracle> clone_untrained(std::uint64_t seed) const = 0;
};

using ModelFactory = std::function<std::unique_ptr<ModelOracle>(std::uint64_t seed)>;

struct Prediction {
  std::string example_id;
  StateMap turn_state;
  StateMap discourse_state;  // accumulated over the dialog's predicted turns
};

// Runs predict_turn over the corpus and accumulates per-dialog discourse
// states in turn order.
std::vector<Prediction> predict_corpus(const ModelOracle& model, const Corpus& corpus);

// Fraction of examples whose predicted discourse state matches gold exactly.
// Predictions must cover exactly the gold examples (DataError otherwise).
double jga(const std::vector<Prediction>& predictions, const Corpus& gold);

// Over gold slots with value != none: fraction predicted exactly. An empty
// gold set scores 1.0 (no state-tracking burden).
double mentioned_slot_accuracy(const StateMap& pred, const StateMap& gold);

// Shuffled full-corpus training; the random-order baseline. epochs >= 1.
TrainingLog train_baseline(ModelOracle& model, const Corpus& corpus, int epochs,
                           std::uint64_t seed);

}  // namespace saclog
