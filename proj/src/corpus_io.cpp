#include "saclog/corpus_io.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "json.hpp"

namespace saclog {

using nlohmann::json;

namespace {

void reject_unknown_fields(const json& object, const std::set<std::string>& allowed,
                           const std::string& where) {
  for (auto it = object.begin(); it != object.end(); ++it) {
    if (!allowed.count(it.key()))
      throw DataError(where + ": unknown field '" + it.key() + "'");
  }
}

json parse_line(const std::string& line, const std::string& where) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(where + ": " + e.what());
  }
}

StateMap state_from_json(const json& object, const std::string& where) {
  if (!object.is_object()) throw DataError(where + ": state is not an object");
  StateMap out;
  for (auto it = object.begin(); it != object.end(); ++it) {
    if (!it.value().is_string())
      throw DataError(where + ": value for slot '" + it.key() + "' is not a string");
    out[it.key()] = it.value().get<std::string>();
  }
  return out;
}

}  // namespace

Schema load_schema(const std::filesystem::path& schema_file) {
  std::ifstream in(schema_file);
  if (!in) throw DataError("cannot open schema file " + schema_file.string());
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw DataError(schema_file.string() + ": " + e.what());
  }
  if (!root.is_object()) throw DataError(schema_file.string() + ": not an object");
  reject_unknown_fields(root, {"domains", "slots"}, schema_file.string());
  if (!root.contains("domains") || !root.contains("slots"))
    throw DataError(schema_file.string() + ": missing 'domains' or 'slots'");

  std::set<std::string> declared;
  for (const json& d : root["domains"]) declared.insert(d.get<std::string>());

  std::vector<SlotSpec> slots;
  for (std::size_t i = 0; i < root["slots"].size(); ++i) {
    const json& s = root["slots"][i];
    const std::string where =
        schema_file.string() + ": slot record " + std::to_string(i);
    reject_unknown_fields(
        s, {"name", "domain", "value_set", "name_words", "is_named_entity", "free_form"},
        where);
    SlotSpec spec;
    spec.name = s.at("name").get<std::string>();
    spec.domain = s.at("domain").get<std::string>();
    for (const json& v : s.at("value_set")) spec.value_set.push_back(v.get<std::string>());
    for (const json& w : s.at("name_words")) spec.name_words.push_back(w.get<std::string>());
    spec.is_named_entity = s.value("is_named_entity", false);
    spec.free_form = s.value("free_form", false);
    if (!declared.count(spec.domain))
      throw DataError(where + ": domain '" + spec.domain + "' not declared");
    slots.push_back(std::move(spec));
  }
  return Schema(std::move(slots));
}

void save_schema(const Schema& schema, const std::filesystem::path& schema_file) {
  json root;
  root["domains"] = schema.domains();
  root["slots"] = json::array();
  for (const SlotSpec& slot : schema.slots()) {
    json s;
    s["name"] = slot.name;
    s["domain"] = slot.domain;
    s["value_set"] = slot.value_set;
    s["name_words"] = slot.name_words;
    s["is_named_entity"] = slot.is_named_entity;
    s["free_form"] = slot.free_form;
    root["slots"].push_back(std::move(s));
  }
  std::ofstream out(schema_file);
  if (!out) throw DataError("cannot write schema file " + schema_file.string());
  out << root.dump(2) << "\n";
}

Corpus load_corpus(const std::filesystem::path& dialog_file,
                   const std::filesystem::path& schema_file, std::string split,
                   bool synthetic, LoadReport* report) {
  Corpus corpus;
  corpus.schema = load_schema(schema_file);
  corpus.split = std::move(split);

  std::ifstream in(dialog_file);
  if (!in) throw DataError("cannot open dialog file " + dialog_file.string());

  LoadReport local;
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> dialog_ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = dialog_file.string() + ":" + std::to_string(line_no);
    json record = parse_line(line, where);
    if (!record.is_object()) throw DataError(where + ": record is not an object");
    reject_unknown_fields(record, {"dialog_id", "turns"}, where);
    if (!record.contains("dialog_id") || !record.contains("turns"))
      throw DataError(where + ": missing 'dialog_id' or 'turns'");
    const std::string dialog_id = record["dialog_id"].get<std::string>();
    if (!dialog_ids.insert(dialog_id).second)
      throw DataError(where + ": duplicate dialog_id '" + dialog_id + "'");
    if (!record["turns"].is_array() || record["turns"].empty())
      throw DataError(where + ": 'turns' must be a non-empty array");

    std::vector<Turn> context;
    StateMap running;
    int turn_index = 0;
    for (const json& turn_json : record["turns"]) {
      ++turn_index;
      const std::string turn_where = where + " turn " + std::to_string(turn_index);
      reject_unknown_fields(turn_json, {"system", "user", "turn_state", "discourse_state"},
                            turn_where);
      Turn turn;
      turn.turn_index = turn_index;
      turn.system = tokenize(turn_json.value("system", std::string()));
      turn.user = tokenize(turn_json.value("user", std::string()));
      context.push_back(std::move(turn));

      DialogExample example;
      example.dialog_id = dialog_id;
      example.example_id = make_example_id(dialog_id, turn_index);
      example.context = context;
      example.synthetic = synthetic;
      if (turn_json.contains("turn_state")) {
        StateMap raw = state_from_json(turn_json["turn_state"], turn_where);
        for (auto& [slot, value] : raw) {
          if (!corpus.schema.has(slot))
            throw DataError(turn_where + ": slot '" + slot + "' absent from schema");
          if (value == kNoneValue)
            example.explicit_none.push_back(slot);
          else
            example.turn_state[slot] = value;
        }
      }
      running = accumulate_state(running, example.turn_state, corpus.schema);
      example.discourse_state = running;
      if (turn_json.contains("discourse_state")) {
        StateMap file_state = state_from_json(turn_json["discourse_state"], turn_where);
        for (const auto& [slot, value] : file_state)
          if (!corpus.schema.has(slot))
            throw DataError(turn_where + ": slot '" + slot + "' absent from schema");
        if (file_state != running) {
          ++local.discourse_mismatches;
          std::cerr << "warning: " << turn_where
                    << ": discourse_state disagrees with accumulation; recomputed value kept\n";
        }
      }
      corpus.examples.push_back(std::move(example));
      ++local.example_count;
    }
    ++local.dialog_count;
  }
  validate_corpus(corpus);
  if (report) *report = local;
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dialog_file) {
  // Group by dialog in first-appearance order.
  std::vector<std::string> order;
  std::map<std::string, std::map<int, const DialogExample*>> dialogs;
  for (const DialogExample& example : corpus.examples) {
    if (!dialogs.count(example.dialog_id)) order.push_back(example.dialog_id);
    dialogs[example.dialog_id][example.turn_count()] = &example;
  }

  std::ofstream out(dialog_file);
  if (!out) throw DataError("cannot write dialog file " + dialog_file.string());
  for (const std::string& dialog_id : order) {
    const auto& by_turn = dialogs[dialog_id];
    const DialogExample* longest = by_turn.rbegin()->second;
    json turns = json::array();
    for (const Turn& turn : longest->context) {
      json t;
      t["system"] = join_tokens(turn.system);
      t["user"] = join_tokens(turn.user);
      json state = json::object();
      auto it = by_turn.find(turn.turn_index);
      if (it != by_turn.end()) {
        for (const auto& [slot, value] : it->second->turn_state) state[slot] = value;
        for (const std::string& slot : it->second->explicit_none)
          state[slot] = kNoneValue;
        json discourse = json::object();
        for (const auto& [slot, value] : it->second->discourse_state)
          discourse[slot] = value;
        t["discourse_state"] = std::move(discourse);
      }
      t["turn_state"] = std::move(state);
      turns.push_back(std::move(t));
    }
    json record;
    record["dialog_id"] = dialog_id;
    record["turns"] = std::move(turns);
    out << record.dump() << "\n";
  }
}

bool operator==(const Turn& a, const Turn& b) {
  return a.turn_index == b.turn_index && a.system == b.system && a.user == b.user;
}

bool operator==(const DialogExample& a, const DialogExample& b) {
  return a.example_id == b.example_id && a.dialog_id == b.dialog_id &&
         a.context == b.context && a.turn_state == b.turn_state &&
         a.discourse_state == b.discourse_state && a.explicit_none == b.explicit_none;
}

}  // namespace saclog
