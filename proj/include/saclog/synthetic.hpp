#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "saclog/corpus.hpp"

namespace saclog {

// Utterance templates. Placeholders: "<value>" (the slot value verbatim),
// "<slot>" (a slot name word), "<ref>" (a name word of the referred-to slot
// in coreference turns). Filled before tokenization.
struct TurnTemplates {
  std::vector<std::string> direct;    // must contain <value>
  std::vector<std::string> dontcare;  // must contain <slot>
  std::vector<std::string> coref;     // must contain <slot> and <ref>
  std::vector<std::string> system;    // may contain <slot>
  std::vector<std::string> openers;   // turn-1 system lines; "" allowed
};

// Per-tier shape of a dialog. Tiers plant the easy/hard structure the
// difficulty scorer is expected to recover.
struct TierProfile {
  int min_turns = 1;
  int max_turns = 2;
  int max_slots_per_turn = 1;
  double indirection_rate = 0.0;     // coreference turns (value not in turn)
  double named_entity_bias = 0.25;   // preference for name-like slots
  int domain_count = 1;
  double change_rate = 0.0;          // chance a turn revises a set slot
};

struct GeneratorConfig {
  Schema schema;
  TurnTemplates templates;
  std::map<std::string, TurnTemplates> slot_templates;  // per-slot overrides
  int dialog_count = 200;
  double easy_fraction = 0.45;
  double medium_fraction = 0.35;  // remainder is hard
  double dontcare_rate = 0.10;
  TierProfile easy{1, 2, 1, 0.0, 0.15, 1, 0.0};
  TierProfile medium{2, 4, 2, 0.0, 0.35, 1, 0.10};
  TierProfile hard{4, 7, 3, 0.45, 0.70, 2, 0.25};
  std::string dialog_prefix = "syn";
  std::string split = "train";
};

// The bundled desk-scale setup: 3 domains x 4 slots with name lexicons.
GeneratorConfig default_generator_config();

// Deterministic for a fixed (config, seed). Every example carries ground
// truth consistent by construction; validate_corpus passes on the output.
Corpus generate_synthetic(const GeneratorConfig& config, std::uint64_t seed);

}  // namespace saclog
