#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "saclog/errors.hpp"

namespace saclog {

using Tokens = std::vector<std::string>;
// slot name -> value; ordered so iteration and serialization are stable.
using StateMap = std::map<std::string, std::string>;

inline constexpr const char* kNoneValue = "none";
inline constexpr const char* kDontcareValue = "dontcare";

struct SlotSpec {
  std::string name;    // e.g. "taxi-departure"
  std::string domain;  // e.g. "taxi"
  std::vector<std::string> value_set;   // categorical values; open for free-form
  std::vector<std::string> name_words;  // surface words that evoke the slot
  bool is_named_entity = false;
  bool free_form = false;  // value is a span, not a closed category
};

// Slot inventory. Construction validates the slot invariants: unique names,
// one domain each, non-empty name words, value set present unless free-form,
// and the reserved values `none`/`dontcare` never listed explicitly.
class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<SlotSpec> slots);

  bool has(std::string_view slot_name) const;
  const SlotSpec* find(std::string_view slot_name) const;
  const SlotSpec& at(std::string_view slot_name) const;  // throws DataError

  const std::vector<SlotSpec>& slots() const { return slots_; }
  const std::vector<std::string>& domains() const { return domains_; }

  std::vector<const SlotSpec*> slots_in_domain(std::string_view domain) const;

 private:
  std::vector<SlotSpec> slots_;
  std::vector<std::string> domains_;
  std::map<std::string, std::size_t, std::less<>> by_name_;
};

struct Turn {
  Tokens system;  // may be empty only for turn 1
  Tokens user;
  int turn_index = 1;
};

// One training unit: the dialog context up to turn t plus that turn's
// annotations. `turn_state` holds only mentioned slots (value != none);
// slots annotated `none` explicitly in the source file are kept aside in
// `explicit_none` so downstream target derivation can see the deletion.
struct DialogExample {
  std::string example_id;
  std::string dialog_id;
  std::vector<Turn> context;  // turns 1..t, consecutive indices
  StateMap turn_state;
  StateMap discourse_state;
  std::vector<std::string> explicit_none;
  bool synthetic = false;  // generated rather than loaded from natural data

  int turn_count() const { return static_cast<int>(context.size()); }
  const Turn& current_turn() const { return context.back(); }
};

struct Corpus {
  std::vector<DialogExample> examples;
  Schema schema;
  std::string split = "train";

  const DialogExample* find(std::string_view example_id) const;
};

// Lowercases, keeps alphanumeric runs together, and emits every other
// non-space character as its own token. Deterministic; empty in -> empty out.
Tokens tokenize(std::string_view utterance);

std::string join_tokens(const Tokens& tokens);

// Z_t = accumulate(Z_{t-1}, Y_t): later turns overwrite, `none` entries are
// ignored. Unknown slots raise DataError.
StateMap accumulate_state(const StateMap& prev, const StateMap& turn,
                          const Schema& schema);

// Invariants checkable on a lone example: non-empty context, consecutive
// turn indices from 1, schema-valid slots, and turn_state contained in
// discourse_state (the footprint accumulate_state guarantees).
void validate_example(const DialogExample& example, const Schema& schema);

// validate_example for every example, plus discourse-state replay through
// accumulate_state for every dialog whose full turn prefix is present.
void validate_corpus(const Corpus& corpus);

std::string make_example_id(const std::string& dialog_id, int turn_index);

}  // namespace saclog
