#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "saclog/corpus.hpp"
#include "saclog/model.hpp"

namespace saclog {

// Normalization caps for the four rule factors:
// turns / tokens / named entities / changed slots.
using FactorMaxima = std::array<double, 4>;
inline constexpr FactorMaxima kDefaultFactorMaxima = {7.0, 50.0, 4.0, 6.0};

struct RuleFactors {
  int turn_number = 0;         // t, context length in turns
  int token_count = 0;         // tokens of the current turn only
  int named_entity_count = 0;  // named-entity slots present in Z_t
  int changed_slot_count = 0;  // Y_t slots newly added or changed vs Z_{t-1}
  std::array<double, 4> normalized{};  // min(raw / max_i, 1.0)
};

struct ScorerWeights {
  // alpha[0] weighs the model term, alpha[1..4] the rule factors.
  std::array<double, 5> alpha = {0.2, 0.2, 0.2, 0.2, 0.2};
  // The model score is an accuracy (high = easy); by default it enters the
  // hybrid sum as (1 - mean) so all five terms grow with difficulty.
  bool invert_model_score = true;

  void validate() const;  // alpha >= 0, sum == 1 within 1e-9
};

struct DifficultyRecord {
  std::string example_id;
  RuleFactors rule;
  std::vector<double> model_scores;  // one per ensemble member
  double model_mean = 1.0;           // 1.0 when the model term is skipped
  double hybrid = 0.0;
};

struct DifficultyConfig {
  ScorerWeights weights;
  FactorMaxima maxima = kDefaultFactorMaxima;
  int k_folds = 5;
  int ensemble = 6;
  int cv_epochs = 3;
  int workers = 2;
};

// z_prev is the discourse state before this turn (empty for turn 1); callers
// with a full corpus should take it from the sibling example at turn t-1.
RuleFactors rule_factors(const DialogExample& example, const Schema& schema,
                         const FactorMaxima& maxima, const StateMap& z_prev);

// K-fold, ensemble-seeded model difficulty. Fold assignment orders ids by a
// stable hash and deals them round-robin: folds are equal-sized (remainder
// spread one per fold) and independent of corpus order. Returns, per
// example_id, exactly `ensemble` held-out accuracy scores.
std::map<std::string, std::vector<double>> model_difficulty(
    const Corpus& corpus, const ModelFactory& trainer, int k, int ensemble,
    int cv_epochs, std::uint64_t seed, int workers = 1);

double hybrid_score(const RuleFactors& rule, double model_mean,
                    const ScorerWeights& weights);

// One record per example, in corpus order. With alpha[0] == 0 the model term
// is skipped entirely and no training runs.
std::vector<DifficultyRecord> score_corpus(const Corpus& corpus,
                                           const ModelFactory& trainer,
                                           const DifficultyConfig& config,
                                           std::uint64_t seed);

void write_scores(const std::vector<DifficultyRecord>& records,
                  const std::filesystem::path& file);
std::vector<DifficultyRecord> read_scores(const std::filesystem::path& file);

}  // namespace saclog
