#include "saclog/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace saclog {

namespace {

bool is_reserved_value(const std::string& v) {
  return v == kNoneValue || v == kDontcareValue;
}

}  // namespace

Schema::Schema(std::vector<SlotSpec> slots) : slots_(std::move(slots)) {
  std::set<std::string> domain_set;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    SlotSpec& slot = slots_[i];
    if (slot.name.empty()) throw DataError("schema: slot with empty name");
    if (slot.domain.empty())
      throw DataError("schema: slot '" + slot.name + "' has no domain");
    if (!by_name_.emplace(slot.name, i).second)
      throw DataError("schema: duplicate slot '" + slot.name + "'");
    if (slot.name_words.empty())
      throw DataError("schema: slot '" + slot.name + "' has no name words");
    if (!slot.free_form && slot.value_set.empty())
      throw DataError("schema: categorical slot '" + slot.name +
                      "' has an empty value set");
    for (const std::string& v : slot.value_set) {
      if (is_reserved_value(v))
        throw DataError("schema: slot '" + slot.name + "' lists reserved value '" +
                        v + "'");
    }
    for (std::string& w : slot.name_words) {
      std::transform(w.begin(), w.end(), w.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    }
    domain_set.insert(slot.domain);
  }
  domains_.assign(domain_set.begin(), domain_set.end());
}

bool Schema::has(std::string_view slot_name) const {
  return by_name_.find(slot_name) != by_name_.end();
}

const SlotSpec* Schema::find(std::string_view slot_name) const {
  auto it = by_name_.find(slot_name);
  return it == by_name_.end() ? nullptr : &slots_[it->second];
}

const SlotSpec& Schema::at(std::string_view slot_name) const {
  const SlotSpec* spec = find(slot_name);
  if (!spec)
    throw DataError("unknown slot '" + std::string(slot_name) + "'");
  return *spec;
}

std::vector<const SlotSpec*> Schema::slots_in_domain(std::string_view domain) const {
  std::vector<const SlotSpec*> out;
  for (const SlotSpec& slot : slots_)
    if (slot.domain == domain) out.push_back(&slot);
  return out;
}

const DialogExample* Corpus::find(std::string_view example_id) const {
  for (const DialogExample& e : examples)
    if (e.example_id == example_id) return &e;
  return nullptr;
}

Tokens tokenize(std::string_view utterance) {
  Tokens out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      out.push_back(current);
      current.clear();
    }
  };
  for (unsigned char c : utterance) {
    if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    }
  }
  flush();
  return out;
}

std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

StateMap accumulate_state(const StateMap& prev, const StateMap& turn,
                          const Schema& schema) {
  StateMap out = prev;
  for (const auto& [slot, value] : turn) {
    if (!schema.has(slot))
      throw DataError("accumulate_state: unknown slot '" + slot + "'");
    if (value == kNoneValue) continue;
    out[slot] = value;
  }
  return out;
}

void validate_example(const DialogExample& example, const Schema& schema) {
  const std::string where = "example '" + example.example_id + "': ";
  if (example.context.empty()) throw DataError(where + "empty context");
  for (std::size_t i = 0; i < example.context.size(); ++i) {
    const Turn& turn = example.context[i];
    if (turn.turn_index != static_cast<int>(i) + 1)
      throw DataError(where + "turn indices not consecutive from 1");
    if (turn.user.empty())
      throw DataError(where + "turn " + std::to_string(turn.turn_index) +
                      " has an empty user utterance");
    if (turn.system.empty() && turn.turn_index != 1)
      throw DataError(where + "turn " + std::to_string(turn.turn_index) +
                      " has an empty system utterance");
  }
  auto check_state = [&](const StateMap& state, const char* label) {
    for (const auto& [slot, value] : state) {
      if (!schema.has(slot))
        throw DataError(where + std::string(label) + " references slot '" + slot +
                        "' absent from schema");
      if (value.empty())
        throw DataError(where + std::string(label) + " has empty value for '" +
                        slot + "'");
      if (value == kNoneValue)
        throw DataError(where + std::string(label) +
                        " stores reserved value 'none' for '" + slot + "'");
    }
  };
  check_state(example.turn_state, "turn_state");
  check_state(example.discourse_state, "discourse_state");
  for (const std::string& slot : example.explicit_none) {
    if (!schema.has(slot))
      throw DataError(where + "explicit none for unknown slot '" + slot + "'");
  }
  // Every mentioned slot must survive into Z_t with the same value.
  for (const auto& [slot, value] : example.turn_state) {
    auto it = example.discourse_state.find(slot);
    if (it == example.discourse_state.end() || it->second != value)
      throw DataError(where + "discourse_state does not contain turn_state entry '" +
                      slot + "'");
  }
}

void validate_corpus(const Corpus& corpus) {
  std::set<std::string> seen_ids;
  // dialog_id -> (turn count -> example index)
  std::map<std::string, std::map<int, std::size_t>> dialogs;
  for (std::size_t i = 0; i < corpus.examples.size(); ++i) {
    const DialogExample& example = corpus.examples[i];
    validate_example(example, corpus.schema);
    if (!seen_ids.insert(example.example_id).second)
      throw DataError("duplicate example_id '" + example.example_id + "'");
    dialogs[example.dialog_id][example.turn_count()] = i;
  }
  // Replay accumulation where the full prefix chain is present.
  for (const auto& [dialog_id, by_turn] : dialogs) {
    StateMap running;
    int expected = 1;
    for (const auto& [turn_count, index] : by_turn) {
      if (turn_count != expected) break;  // partial dialog; replay not possible
      const DialogExample& example = corpus.examples[index];
      running = accumulate_state(running, example.turn_state, corpus.schema);
      if (running != example.discourse_state)
        throw DataError("dialog '" + dialog_id + "' turn " +
                        std::to_string(turn_count) +
                        ": discourse_state does not match accumulated turn states");
      ++expected;
    }
  }
}

std::string make_example_id(const std::string& dialog_id, int turn_index) {
  return dialog_id + "#" + std::to_string(turn_index);
}

}  // namespace saclog
