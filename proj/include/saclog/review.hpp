#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "saclog/corpus.hpp"
#include "saclog/model.hpp"
#include "saclog/rng.hpp"
#include "saclog/scheduler.hpp"

namespace saclog {

struct AugmentationRecord {
  DialogExample example;
  std::string technique;  // slot_substitution | value_replacement | dialog_recombination
  std::vector<std::string> source_ids;
  std::string diff;  // short description of what changed
};

struct HardCandidate {
  std::string example_id;
  double loss = 0.0;
  bool incorrect = false;  // predicted turn state != gold
};

// Among incorrect candidates: the ceil(fraction * count) highest-loss ids,
// ties broken by ascending example_id. fraction must be in (0, 1].
std::vector<std::string> select_hard(const std::vector<HardCandidate>& candidates,
                                     double fraction);

// Lookup structures shared by the augmentation techniques.
class CorpusIndex {
 public:
  explicit CorpusIndex(const Corpus& corpus);

  const Corpus& corpus() const { return *corpus_; }
  const DialogExample* by_id(const std::string& example_id) const;
  // The sibling example one turn earlier, or nullptr.
  const DialogExample* previous_turn(const DialogExample& example) const;
  // Discourse state before this example's final turn.
  StateMap previous_discourse(const DialogExample& example) const;
  // Examples whose mentioned-slot-name set equals this one's.
  const std::vector<std::string>& same_mentioned_set(const DialogExample& example) const;

  static std::string mentioned_key(const StateMap& turn_state);

 private:
  const Corpus* corpus_;
  std::map<std::string, std::size_t> by_id_;
  std::map<std::string, std::map<int, std::size_t>> by_dialog_;
  std::map<std::string, std::vector<std::string>> by_mentioned_;
};

// A mentioned dontcare slot's cue word is rewritten to a sibling slot of the
// same domain, and the dontcare entry moves with it.
std::optional<AugmentationRecord> slot_substitution(const DialogExample& example,
                                                    const Schema& schema, Rng& rng);

// A value that appears verbatim in the user utterance is swapped for another
// value of the same slot.
std::optional<AugmentationRecord> value_replacement(const DialogExample& example,
                                                    const Schema& schema, Rng& rng);

// Two examples with the same mentioned-slot set swap their final turns;
// discourse states are recomputed over the stitched sequences.
std::optional<std::pair<AugmentationRecord, AugmentationRecord>> dialog_recombination(
    const DialogExample& example, const CorpusIndex& index, Rng& rng);

// Round-robins the techniques over the hard examples until the budget is
// reached or every (example, technique) pair was tried. Every emitted example
// is validated; duplicates are suppressed. Deterministic per seed.
std::vector<AugmentationRecord> augment_batch(const std::vector<std::string>& hard_ids,
                                              const Corpus& corpus, int budget,
                                              std::uint64_t seed);

// Dialog-format file plus a provenance sidecar {new_id, technique,
// source_ids, diff}. Prefix turns carry their source annotations so the file
// loads through the standard reader.
void write_augmented(const std::vector<AugmentationRecord>& records,
                     const Corpus& corpus, const std::filesystem::path& dialog_file,
                     const std::filesystem::path& sidecar_file);

struct ProvenanceEntry {
  std::string new_id;
  std::string technique;
  std::vector<std::string> source_ids;
  std::string diff;
};
std::vector<ProvenanceEntry> read_provenance(const std::filesystem::path& sidecar_file);

// Epoch hook for online review: when a stage epoch ends unconverged, selects
// hard examples from the active set and injects augmentations.
EpochHook make_review_hook(const Corpus& corpus, double fraction, int budget_per_event,
                           std::uint64_t seed);

}  // namespace saclog
