#include "saclog/synthetic.hpp"

#include <algorithm>
#include <set>

#include "saclog/rng.hpp"

namespace saclog {

namespace {

const std::vector<std::string> kAreas = {"north", "south", "east", "west", "centre"};
const std::vector<std::string> kPrices = {"cheap", "moderate", "expensive"};
const std::vector<std::string> kTimes = {"08:15", "09:30", "10:45", "11:00", "12:30",
                                         "13:15", "14:00", "15:45", "17:15", "18:30",
                                         "19:00", "21:45"};
const std::vector<std::string> kCuisines = {"italian", "chinese", "indian",
                                            "british",  "turkish", "korean"};
const std::vector<std::string> kVenueNames = {
    "golden house",     "nandos",          "cityroomz",      "the gandhi",
    "acorn guest house", "hamilton lodge", "pizza hut",      "the oak bistro",
    "kirkwood house",   "avalon",          "gourmet kitchen", "alpha milton"};

std::string replace_all(std::string text, const std::string& needle,
                        const std::string& replacement) {
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    text.replace(pos, needle.size(), replacement);
    pos += replacement.size();
  }
  return text;
}

void require_placeholder(const std::vector<std::string>& templates,
                         const std::string& placeholder, const std::string& which) {
  for (const std::string& t : templates)
    if (t.find(placeholder) == std::string::npos)
      throw ConfigError("generator: " + which + " template '" + t + "' lacks " +
                        placeholder);
}

void validate_config(const GeneratorConfig& config) {
  if (config.schema.domains().empty())
    throw ConfigError("generator: schema names no domains");
  for (const std::string& domain : config.schema.domains())
    if (config.schema.slots_in_domain(domain).size() < 2)
      throw ConfigError("generator: domain '" + domain + "' has fewer than 2 slots");
  if (config.dialog_count < 0) throw ConfigError("generator: negative dialog count");
  auto check_templates = [](const TurnTemplates& t, const std::string& scope) {
    if (t.direct.empty() || t.dontcare.empty() || t.coref.empty())
      throw ConfigError("generator: " + scope +
                        " needs direct, dontcare and coref templates");
    require_placeholder(t.direct, "<value>", scope + " direct");
    require_placeholder(t.dontcare, "<slot>", scope + " dontcare");
    require_placeholder(t.coref, "<slot>", scope + " coref");
    require_placeholder(t.coref, "<ref>", scope + " coref");
  };
  check_templates(config.templates, "base templates");
  for (const auto& [slot, templates] : config.slot_templates) {
    if (!config.schema.has(slot))
      throw ConfigError("generator: templates reference unknown slot '" + slot + "'");
    (void)templates;  // overrides may be partial; only the key is validated here
  }
}

struct SlotPlan {
  const SlotSpec* slot = nullptr;
  enum class Mode { kDirect, kDontcare, kCoref } mode = Mode::kDirect;
  std::string value;
  const SlotSpec* ref_slot = nullptr;  // coref source
};

const std::vector<std::string>& templates_for(const GeneratorConfig& config,
                                              const std::string& slot_name,
                                              SlotPlan::Mode mode) {
  auto pick = [&](const TurnTemplates& t) -> const std::vector<std::string>& {
    switch (mode) {
      case SlotPlan::Mode::kDontcare: return t.dontcare;
      case SlotPlan::Mode::kCoref: return t.coref;
      default: return t.direct;
    }
  };
  auto it = config.slot_templates.find(slot_name);
  if (it != config.slot_templates.end() && !pick(it->second).empty())
    return pick(it->second);
  return pick(config.templates);
}

}  // namespace

GeneratorConfig default_generator_config() {
  std::vector<SlotSpec> slots;
  auto add = [&](std::string name, std::string domain, std::vector<std::string> values,
                 std::vector<std::string> words, bool named_entity, bool free_form) {
    SlotSpec s;
    s.name = std::move(name);
    s.domain = std::move(domain);
    s.value_set = std::move(values);
    s.name_words = std::move(words);
    s.is_named_entity = named_entity;
    s.free_form = free_form;
    slots.push_back(std::move(s));
  };
  // Name words are kept unique across slots so utterances stay resolvable.
  add("taxi-departure", "taxi", kVenueNames, {"departure", "pickup"}, true, true);
  add("taxi-destination", "taxi", kVenueNames, {"destination", "dropoff"}, true, true);
  add("taxi-leaveat", "taxi", kTimes, {"leave", "leaving"}, false, false);
  add("taxi-arriveby", "taxi", kTimes, {"arrive", "arrival"}, false, false);
  add("hotel-name", "hotel", kVenueNames, {"hotel", "lodging"}, true, true);
  add("hotel-area", "hotel", kAreas, {"area"}, false, false);
  add("hotel-pricerange", "hotel", kPrices, {"price", "cost"}, false, false);
  add("hotel-parking", "hotel", {"yes", "no"}, {"parking"}, false, false);
  add("restaurant-name", "restaurant", kVenueNames, {"restaurant", "place"}, true, true);
  add("restaurant-food", "restaurant", kCuisines, {"food", "cuisine"}, false, false);
  add("restaurant-area", "restaurant", kAreas, {"side", "district"}, false, false);
  add("restaurant-pricerange", "restaurant", kPrices, {"budget"}, false, false);

  GeneratorConfig config;
  config.schema = Schema(std::move(slots));
  config.templates.direct = {
      "i want the <slot> to be <value>",
      "the <slot> should be <value>",
      "<value> for the <slot> please",
      "make it <value> for the <slot>",
  };
  config.templates.dontcare = {
      "i do not care about the <slot>",
      "any <slot> works for me",
      "the <slot> does not matter",
  };
  config.templates.coref = {
      "the <slot> should be the same as the <ref>",
      "use the <ref> for the <slot>",
  };
  config.templates.system = {
      "what <slot> would you like ?",
      "any preference on the <slot> ?",
      "which <slot> should i note ?",
  };
  config.templates.openers = {"", "hello , how can i help ?"};
  return config;
}

Corpus generate_synthetic(const GeneratorConfig& config, std::uint64_t seed) {
  validate_config(config);

  Corpus corpus;
  corpus.schema = config.schema;
  corpus.split = config.split;

  for (int d = 0; d < config.dialog_count; ++d) {
    Rng rng(derive_seed(seed, "dialog", static_cast<std::uint64_t>(d)));

    const double tier_draw = rng.uniform();
    const TierProfile& tier = tier_draw < config.easy_fraction ? config.easy
                              : tier_draw < config.easy_fraction + config.medium_fraction
                                  ? config.medium
                                  : config.hard;

    // Choose domains and the slot pool for this dialog.
    std::vector<std::string> domains = config.schema.domains();
    rng.shuffle(domains);
    const int domain_count =
        std::min<int>(tier.domain_count, static_cast<int>(domains.size()));
    std::vector<const SlotSpec*> pool;
    for (int i = 0; i < domain_count; ++i)
      for (const SlotSpec* slot : config.schema.slots_in_domain(domains[i]))
        pool.push_back(slot);

    const std::string dialog_id =
        config.dialog_prefix + "-" + std::to_string(d);
    std::vector<Turn> context;
    StateMap discourse;
    std::set<std::string> used;
    std::set<std::string> used_values;  // avoid duplicated surface forms

    auto pick_value = [&](const SlotSpec& slot) {
      for (int attempt = 0; attempt < 8; ++attempt) {
        const std::string& v = slot.value_set[rng.index(slot.value_set.size())];
        if (!used_values.count(v)) {
          used_values.insert(v);
          return v;
        }
      }
      return slot.value_set[rng.index(slot.value_set.size())];
    };

    const int turn_target =
        tier.min_turns + static_cast<int>(rng.index(static_cast<std::size_t>(
                             tier.max_turns - tier.min_turns + 1)));

    for (int t = 1; t <= turn_target; ++t) {
      // Slots still unset in this dialog.
      std::vector<const SlotSpec*> available;
      for (const SlotSpec* slot : pool)
        if (!used.count(slot->name)) available.push_back(slot);
      if (available.empty()) break;

      const int want =
          1 + static_cast<int>(rng.index(static_cast<std::size_t>(tier.max_slots_per_turn)));
      std::vector<SlotPlan> plans;
      std::set<std::string> planned;
      for (int k = 0; k < want; ++k) {
        // Occasionally revise an already-set slot instead of adding one.
        if (!discourse.empty() && rng.chance(tier.change_rate)) {
          std::vector<const SlotSpec*> changeable;
          for (const auto& [set_slot, value] : discourse) {
            const SlotSpec& spec = config.schema.at(set_slot);
            if (value != kDontcareValue && spec.value_set.size() >= 2 &&
                !planned.count(set_slot))
              changeable.push_back(&spec);
          }
          if (!changeable.empty()) {
            const SlotSpec* slot = changeable[rng.index(changeable.size())];
            std::string next;
            do {
              next = pick_value(*slot);
            } while (next == discourse.at(slot->name));
            SlotPlan plan;
            plan.slot = slot;
            plan.mode = SlotPlan::Mode::kDirect;
            plan.value = next;
            plans.push_back(plan);
            planned.insert(slot->name);
            continue;
          }
        }
        if (available.empty()) break;
        // Bias slot choice toward named entities per tier.
        std::vector<const SlotSpec*> named;
        for (const SlotSpec* slot : available)
          if (slot->is_named_entity) named.push_back(slot);
        const SlotSpec* slot = (!named.empty() && rng.chance(tier.named_entity_bias))
                                   ? named[rng.index(named.size())]
                                   : available[rng.index(available.size())];
        available.erase(std::find(available.begin(), available.end(), slot));
        used.insert(slot->name);
        planned.insert(slot->name);

        SlotPlan plan;
        plan.slot = slot;
        // Coref needs an already-set named span value to refer back to.
        std::vector<const SlotSpec*> ref_candidates;
        if (slot->free_form) {
          for (const auto& [set_slot, value] : discourse) {
            const SlotSpec& spec = config.schema.at(set_slot);
            if (spec.free_form && spec.is_named_entity && spec.name != slot->name &&
                value != kDontcareValue)
              ref_candidates.push_back(&spec);
          }
        }
        if (!ref_candidates.empty() && rng.chance(tier.indirection_rate)) {
          plan.mode = SlotPlan::Mode::kCoref;
          plan.ref_slot = ref_candidates[rng.index(ref_candidates.size())];
          plan.value = discourse.at(plan.ref_slot->name);
        } else if (rng.chance(config.dontcare_rate)) {
          plan.mode = SlotPlan::Mode::kDontcare;
          plan.value = kDontcareValue;
        } else {
          plan.mode = SlotPlan::Mode::kDirect;
          plan.value = pick_value(*slot);
        }
        plans.push_back(plan);
      }

      // Render utterances.
      std::string user_text;
      for (std::size_t i = 0; i < plans.size(); ++i) {
        const SlotPlan& plan = plans[i];
        std::string text =
            rng.pick(templates_for(config, plan.slot->name, plan.mode));
        text = replace_all(text, "<slot>", plan.slot->name_words[0]);
        text = replace_all(text, "<value>", plan.value);
        if (plan.ref_slot)
          text = replace_all(text, "<ref>", plan.ref_slot->name_words[0]);
        if (i) user_text += " and ";
        user_text += text;
      }

      std::string system_text;
      if (t == 1) {
        system_text = rng.pick(config.templates.openers);
      } else {
        system_text = rng.pick(config.templates.system);
        system_text = replace_all(system_text, "<slot>", plans[0].slot->name_words[0]);
      }

      Turn turn;
      turn.turn_index = t;
      turn.system = tokenize(system_text);
      turn.user = tokenize(user_text);
      context.push_back(std::move(turn));

      DialogExample example;
      example.dialog_id = dialog_id;
      example.example_id = make_example_id(dialog_id, t);
      example.context = context;
      example.synthetic = true;
      for (const SlotPlan& plan : plans) example.turn_state[plan.slot->name] = plan.value;
      discourse = accumulate_state(discourse, example.turn_state, config.schema);
      example.discourse_state = discourse;
      corpus.examples.push_back(std::move(example));
    }
  }
  validate_corpus(corpus);
  return corpus;
}

}  // namespace saclog
