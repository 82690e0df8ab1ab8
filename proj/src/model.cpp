#include "saclog/model.hpp"

#include <algorithm>
#include <map>

#include "saclog/rng.hpp"

namespace saclog {

std::vector<Prediction> predict_corpus(const ModelOracle& model, const Corpus& corpus) {
  // dialog_id -> turn count -> example index, so accumulation runs in order.
  std::map<std::string, std::map<int, std::size_t>> dialogs;
  for (std::size_t i = 0; i < corpus.examples.size(); ++i)
    dialogs[corpus.examples[i].dialog_id][corpus.examples[i].turn_count()] = i;

  std::vector<Prediction> out(corpus.examples.size());
  for (const auto& [dialog_id, by_turn] : dialogs) {
    StateMap running;
    for (const auto& [turn_count, index] : by_turn) {
      const DialogExample& example = corpus.examples[index];
      Prediction p;
      p.example_id = example.example_id;
      p.turn_state = model.predict_turn(example);
      running = accumulate_state(running, p.turn_state, corpus.schema);
      p.discourse_state = running;
      out[index] = std::move(p);
    }
  }
  return out;
}

double jga(const std::vector<Prediction>& predictions, const Corpus& gold) {
  if (predictions.size() != gold.examples.size())
    throw DataError("jga: prediction count does not match gold corpus");
  std::map<std::string, const Prediction*> by_id;
  for (const Prediction& p : predictions) by_id[p.example_id] = &p;
  if (by_id.size() != predictions.size())
    throw DataError("jga: duplicate prediction ids");

  std::size_t correct = 0;
  for (const DialogExample& example : gold.examples) {
    auto it = by_id.find(example.example_id);
    if (it == by_id.end())
      throw DataError("jga: missing prediction for '" + example.example_id + "'");
    if (it->second->discourse_state == example.discourse_state) ++correct;
  }
  if (gold.examples.empty()) return 1.0;
  return static_cast<double>(correct) / static_cast<double>(gold.examples.size());
}

double mentioned_slot_accuracy(const StateMap& pred, const StateMap& gold) {
  std::size_t mentioned = 0;
  std::size_t hit = 0;
  for (const auto& [slot, value] : gold) {
    if (value == kNoneValue) continue;
    ++mentioned;
    auto it = pred.find(slot);
    if (it != pred.end() && it->second == value) ++hit;
  }
  if (mentioned == 0) return 1.0;
  return static_cast<double>(hit) / static_cast<double>(mentioned);
}

TrainingLog train_baseline(ModelOracle& model, const Corpus& corpus, int epochs,
                           std::uint64_t seed) {
  if (epochs < 1) throw ConfigError("train_baseline: epochs must be >= 1");
  std::vector<const DialogExample*> batch;
  batch.reserve(corpus.examples.size());
  for (const DialogExample& e : corpus.examples) batch.push_back(&e);

  TrainingLog log;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng rng(derive_seed(seed, "baseline-order", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(batch);
    int step = 0;
    const double mean_loss = model.fit_epoch(
        batch, derive_seed(seed, "baseline-fit", static_cast<std::uint64_t>(epoch)),
        [&](double loss) {
          log.steps.push_back({0, epoch, step++, loss});
        });
    log.epochs.push_back({0, epoch, mean_loss, step, false, "baseline"});
  }
  return log;
}

}  // namespace saclog
