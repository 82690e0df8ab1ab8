#include "saclog/review.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "saclog/corpus_io.hpp"

namespace saclog {

using nlohmann::json;

namespace {

std::size_t find_subsequence(const Tokens& haystack, const Tokens& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return std::string::npos;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i)
    if (std::equal(needle.begin(), needle.end(), haystack.begin() + i)) return i;
  return std::string::npos;
}

std::string fingerprint(const DialogExample& example) {
  std::string out;
  for (const Turn& turn : example.context) {
    out += join_tokens(turn.system);
    out += '\x1e';
    out += join_tokens(turn.user);
    out += '\x1f';
  }
  for (const auto& [slot, value] : example.turn_state) out += slot + '=' + value + ';';
  out += '|';
  for (const auto& [slot, value] : example.discourse_state) out += slot + '=' + value + ';';
  return out;
}

}  // namespace

std::vector<std::string> select_hard(const std::vector<HardCandidate>& candidates,
                                     double fraction) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw ConfigError("select_hard: fraction must be in (0, 1]");
  std::vector<const HardCandidate*> incorrect;
  for (const HardCandidate& c : candidates) {
    if (!std::isfinite(c.loss))
      throw DataError("select_hard: non-finite loss for '" + c.example_id + "'");
    if (c.incorrect) incorrect.push_back(&c);
  }
  if (incorrect.empty()) return {};
  std::sort(incorrect.begin(), incorrect.end(),
            [](const HardCandidate* a, const HardCandidate* b) {
              if (a->loss != b->loss) return a->loss > b->loss;
              return a->example_id < b->example_id;
            });
  const std::size_t take = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(incorrect.size())));
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(take, incorrect.size()); ++i)
    out.push_back(incorrect[i]->example_id);
  return out;
}

CorpusIndex::CorpusIndex(const Corpus& corpus) : corpus_(&corpus) {
  for (std::size_t i = 0; i < corpus.examples.size(); ++i) {
    const DialogExample& e = corpus.examples[i];
    by_id_[e.example_id] = i;
    by_dialog_[e.dialog_id][e.turn_count()] = i;
    by_mentioned_[mentioned_key(e.turn_state)].push_back(e.example_id);
  }
}

std::string CorpusIndex::mentioned_key(const StateMap& turn_state) {
  std::string key;
  for (const auto& [slot, value] : turn_state) {
    (void)value;
    key += slot;
    key += '\x1f';
  }
  return key;
}

const DialogExample* CorpusIndex::by_id(const std::string& example_id) const {
  auto it = by_id_.find(example_id);
  return it == by_id_.end() ? nullptr : &corpus_->examples[it->second];
}

const DialogExample* CorpusIndex::previous_turn(const DialogExample& example) const {
  auto dialog = by_dialog_.find(example.dialog_id);
  if (dialog == by_dialog_.end()) return nullptr;
  auto it = dialog->second.find(example.turn_count() - 1);
  return it == dialog->second.end() ? nullptr : &corpus_->examples[it->second];
}

StateMap CorpusIndex::previous_discourse(const DialogExample& example) const {
  if (example.turn_count() <= 1) return {};
  if (const DialogExample* prev = previous_turn(example)) return prev->discourse_state;
  // Filtered corpus: drop this turn's own entries as an approximation.
  StateMap out = example.discourse_state;
  for (const auto& [slot, value] : example.turn_state) {
    (void)value;
    out.erase(slot);
  }
  return out;
}

const std::vector<std::string>& CorpusIndex::same_mentioned_set(
    const DialogExample& example) const {
  static const std::vector<std::string> empty;
  auto it = by_mentioned_.find(mentioned_key(example.turn_state));
  return it == by_mentioned_.end() ? empty : it->second;
}

std::optional<AugmentationRecord> slot_substitution(const DialogExample& example,
                                                    const Schema& schema, Rng& rng) {
  for (const auto& [slot_name, value] : example.turn_state) {
    if (value != kDontcareValue) continue;
    const SlotSpec& slot = schema.at(slot_name);

    // Locate a name word of the slot in the current turn.
    const Turn& turn = example.current_turn();
    Tokens turn_tokens;
    turn_tokens.insert(turn_tokens.end(), turn.system.begin(), turn.system.end());
    turn_tokens.insert(turn_tokens.end(), turn.user.begin(), turn.user.end());
    std::size_t match_pos = std::string::npos;
    std::size_t word_index = 0;
    for (std::size_t j = 0; j < turn_tokens.size() && match_pos == std::string::npos;
         ++j) {
      for (std::size_t w = 0; w < slot.name_words.size(); ++w) {
        if (turn_tokens[j] == slot.name_words[w]) {
          match_pos = j;
          word_index = w;
          break;
        }
      }
    }
    if (match_pos == std::string::npos) continue;

    // A sibling slot of the same domain that Y_t does not mention.
    std::vector<const SlotSpec*> targets;
    for (const SlotSpec* other : schema.slots_in_domain(slot.domain))
      if (other->name != slot.name && !example.turn_state.count(other->name))
        targets.push_back(other);
    if (targets.empty()) continue;
    const SlotSpec& target = *targets[rng.index(targets.size())];
    const std::string& new_word = word_index < target.name_words.size()
                                      ? target.name_words[word_index]
                                      : target.name_words.front();

    AugmentationRecord record;
    record.technique = "slot_substitution";
    record.source_ids = {example.example_id};
    record.example = example;
    Turn& new_turn = record.example.context.back();
    if (match_pos < new_turn.system.size())
      new_turn.system[match_pos] = new_word;
    else
      new_turn.user[match_pos - new_turn.system.size()] = new_word;
    record.example.turn_state.erase(slot.name);
    record.example.turn_state[target.name] = kDontcareValue;
    record.example.discourse_state.erase(slot.name);
    record.example.discourse_state[target.name] = kDontcareValue;
    record.diff = "slot " + slot.name + " -> " + target.name + " (word '" +
                  slot.name_words[word_index] + "' -> '" + new_word + "')";
    return record;
  }
  return std::nullopt;
}

std::optional<AugmentationRecord> value_replacement(const DialogExample& example,
                                                    const Schema& schema, Rng& rng) {
  struct Candidate {
    const SlotSpec* slot;
    std::string value;
    std::size_t at;
    std::size_t length;
  };
  std::vector<Candidate> applicable;
  const Tokens& user = example.current_turn().user;
  for (const auto& [slot_name, value] : example.turn_state) {
    if (value == kDontcareValue) continue;
    const SlotSpec& slot = schema.at(slot_name);
    bool has_alternative = false;
    for (const std::string& v : slot.value_set)
      if (v != value) has_alternative = true;
    if (!has_alternative) continue;
    const Tokens value_tokens = tokenize(value);
    const std::size_t at = find_subsequence(user, value_tokens);
    if (at == std::string::npos) continue;  // not explicit in the user turn
    applicable.push_back({&slot, value, at, value_tokens.size()});
  }
  if (applicable.empty()) return std::nullopt;
  const Candidate& chosen = applicable[rng.index(applicable.size())];

  std::vector<std::string> alternatives;
  for (const std::string& v : chosen.slot->value_set)
    if (v != chosen.value) alternatives.push_back(v);
  const std::string& new_value = alternatives[rng.index(alternatives.size())];

  AugmentationRecord record;
  record.technique = "value_replacement";
  record.source_ids = {example.example_id};
  record.example = example;
  Tokens& new_user = record.example.context.back().user;
  const Tokens new_tokens = tokenize(new_value);
  new_user.erase(new_user.begin() + static_cast<std::ptrdiff_t>(chosen.at),
                 new_user.begin() + static_cast<std::ptrdiff_t>(chosen.at + chosen.length));
  new_user.insert(new_user.begin() + static_cast<std::ptrdiff_t>(chosen.at),
                  new_tokens.begin(), new_tokens.end());
  record.example.turn_state[chosen.slot->name] = new_value;
  record.example.discourse_state[chosen.slot->name] = new_value;
  record.diff = "value of " + chosen.slot->name + ": '" + chosen.value + "' -> '" +
                new_value + "'";
  return record;
}

namespace {

DialogExample stitch(const DialogExample& history_of, const DialogExample& turn_of,
                     const StateMap& history_discourse, const Schema& schema) {
  DialogExample out;
  out.dialog_id = history_of.dialog_id;  // renamed by the batch driver
  const int position = history_of.turn_count();
  out.context.assign(history_of.context.begin(), history_of.context.end() - 1);
  Turn stitched = turn_of.current_turn();
  stitched.turn_index = position;
  out.context.push_back(std::move(stitched));
  out.turn_state = turn_of.turn_state;
  out.explicit_none = turn_of.explicit_none;
  out.discourse_state = accumulate_state(history_discourse, out.turn_state, schema);
  out.example_id = make_example_id(out.dialog_id, position);
  out.synthetic = history_of.synthetic || turn_of.synthetic;
  return out;
}

}  // namespace

std::optional<std::pair<AugmentationRecord, AugmentationRecord>> dialog_recombination(
    const DialogExample& example, const CorpusIndex& index, Rng& rng) {
  const Schema& schema = index.corpus().schema;
  std::vector<std::string> candidates = index.same_mentioned_set(example);
  candidates.erase(std::remove(candidates.begin(), candidates.end(), example.example_id),
                   candidates.end());
  if (candidates.empty()) return std::nullopt;
  rng.shuffle(candidates);

  for (const std::string& candidate_id : candidates) {
    const DialogExample* partner = index.by_id(candidate_id);
    if (!partner) continue;
    // Stitched turns must keep the "empty system only at turn 1" invariant.
    if (example.turn_count() > 1 && partner->current_turn().system.empty()) continue;
    if (partner->turn_count() > 1 && example.current_turn().system.empty()) continue;

    AugmentationRecord first;
    first.technique = "dialog_recombination";
    first.source_ids = {example.example_id, partner->example_id};
    first.example = stitch(example, *partner, index.previous_discourse(example), schema);
    first.diff = "history of " + example.example_id + " + turn of " +
                 partner->example_id;

    AugmentationRecord second;
    second.technique = "dialog_recombination";
    second.source_ids = {partner->example_id, example.example_id};
    second.example = stitch(*partner, example, index.previous_discourse(*partner), schema);
    second.diff = "history of " + partner->example_id + " + turn of " +
                  example.example_id;
    return std::make_pair(std::move(first), std::move(second));
  }
  return std::nullopt;
}

std::vector<AugmentationRecord> augment_batch(const std::vector<std::string>& hard_ids,
                                              const Corpus& corpus, int budget,
                                              std::uint64_t seed) {
  if (budget < 0) throw ConfigError("augment_batch: negative budget");
  std::vector<AugmentationRecord> out;
  if (budget == 0 || hard_ids.empty()) return out;

  CorpusIndex index(corpus);
  std::set<std::string> seen;
  for (const DialogExample& e : corpus.examples) seen.insert(fingerprint(e));

  long counter = 0;
  auto finalize = [&](AugmentationRecord record) -> bool {
    const std::string dialog_id = "aug-" + std::to_string(counter);
    record.example.dialog_id = dialog_id;
    record.example.example_id =
        make_example_id(dialog_id, record.example.turn_count());
    const std::string print = fingerprint(record.example);
    if (!seen.insert(print).second) return false;

    validate_example(record.example, corpus.schema);
    // Replayable accumulation: the stored discourse must match accumulation
    // over the source prefix.
    const DialogExample* source = index.by_id(record.source_ids.front());
    if (source) {
      StateMap replay = accumulate_state(index.previous_discourse(*source),
                                         record.example.turn_state, corpus.schema);
      if (replay != record.example.discourse_state) return false;
    }
    ++counter;
    out.push_back(std::move(record));
    return true;
  };

  // One attempt per (hard id, technique); techniques rotate per round.
  std::uint64_t attempt = 0;
  for (int round = 0; round < 3; ++round) {
    for (std::size_t i = 0; i < hard_ids.size(); ++i) {
      if (out.size() >= static_cast<std::size_t>(budget)) return out;
      const DialogExample* example = index.by_id(hard_ids[i]);
      if (!example) continue;
      Rng rng(derive_seed(seed, "augment", attempt++));
      const int technique = (static_cast<int>(i) + round) % 3;
      switch (technique) {
        case 0: {
          if (auto record = slot_substitution(*example, corpus.schema, rng))
            finalize(std::move(*record));
          break;
        }
        case 1: {
          if (auto record = value_replacement(*example, corpus.schema, rng))
            finalize(std::move(*record));
          break;
        }
        default: {
          if (auto pair = dialog_recombination(*example, index, rng)) {
            finalize(std::move(pair->first));
            if (out.size() < static_cast<std::size_t>(budget))
              finalize(std::move(pair->second));
          }
          break;
        }
      }
    }
  }
  return out;
}

void write_augmented(const std::vector<AugmentationRecord>& records,
                     const Corpus& corpus, const std::filesystem::path& dialog_file,
                     const std::filesystem::path& sidecar_file) {
  CorpusIndex index(corpus);
  Corpus out;
  out.schema = corpus.schema;
  out.split = "augmented";
  for (const AugmentationRecord& record : records) {
    // Prefix turns keep the source dialog's annotations so a standard load
    // replays the accumulation.
    const DialogExample* source = index.by_id(record.source_ids.front());
    for (int t = 1; source && t < record.example.turn_count(); ++t) {
      const DialogExample* sibling = nullptr;
      for (const DialogExample& e : corpus.examples) {
        if (e.dialog_id == source->dialog_id && e.turn_count() == t) {
          sibling = &e;
          break;
        }
      }
      if (!sibling) continue;
      DialogExample prefix = *sibling;
      prefix.dialog_id = record.example.dialog_id;
      prefix.example_id = make_example_id(prefix.dialog_id, t);
      // context must match the stitched dialog's prefix
      prefix.context.assign(record.example.context.begin(),
                            record.example.context.begin() + t);
      out.examples.push_back(std::move(prefix));
    }
    out.examples.push_back(record.example);
  }
  save_corpus(out, dialog_file);

  std::ofstream sidecar(sidecar_file);
  if (!sidecar) throw DataError("cannot write sidecar " + sidecar_file.string());
  for (const AugmentationRecord& record : records) {
    json line;
    line["new_id"] = record.example.example_id;
    line["technique"] = record.technique;
    line["source_ids"] = record.source_ids;
    line["diff"] = record.diff;
    sidecar << line.dump() << "\n";
  }
}

std::vector<ProvenanceEntry> read_provenance(const std::filesystem::path& sidecar_file) {
  std::ifstream in(sidecar_file);
  if (!in) throw DataError("cannot open sidecar " + sidecar_file.string());
  std::vector<ProvenanceEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json r = json::parse(line);
    ProvenanceEntry entry;
    entry.new_id = r.at("new_id").get<std::string>();
    entry.technique = r.at("technique").get<std::string>();
    entry.source_ids = r.at("source_ids").get<std::vector<std::string>>();
    entry.diff = r.at("diff").get<std::string>();
    out.push_back(std::move(entry));
  }
  return out;
}

EpochHook make_review_hook(const Corpus& corpus, double fraction, int budget_per_event,
                           std::uint64_t seed) {
  return [&corpus, fraction, budget_per_event,
          seed](const EpochEvent& event) -> std::vector<DialogExample> {
    if (event.converged || !event.model || !event.active_set) return {};
    std::vector<HardCandidate> candidates;
    for (const DialogExample* example : *event.active_set) {
      HardCandidate c;
      c.example_id = example->example_id;
      c.loss = event.model->example_loss(*example);
      c.incorrect = event.model->predict_turn(*example) != example->turn_state;
      candidates.push_back(std::move(c));
    }
    const std::vector<std::string> hard = select_hard(candidates, fraction);
    if (hard.empty()) return {};
    // Only corpus examples can be augmented; injected ones have no siblings.
    std::vector<std::string> known;
    CorpusIndex index(corpus);
    for (const std::string& id : hard)
      if (index.by_id(id)) known.push_back(id);
    const std::uint64_t event_seed =
        derive_seed(seed, "review-event",
                    static_cast<std::uint64_t>(event.stage) * 131ULL +
                        static_cast<std::uint64_t>(event.epoch));
    std::vector<AugmentationRecord> records =
        augment_batch(known, corpus, budget_per_event, event_seed);
    std::vector<DialogExample> out;
    out.reserve(records.size());
    for (AugmentationRecord& record : records)
      out.push_back(std::move(record.example));
    return out;
  };
}

}  // namespace saclog
