#include "saclog/difficulty.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "saclog/rng.hpp"

namespace saclog {

using nlohmann::json;

void ScorerWeights::validate() const {
  double sum = 0.0;
  for (double a : alpha) {
    if (a < 0.0) throw ConfigError("scorer weights must be non-negative");
    sum += a;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("scorer weights must sum to 1 (got " + std::to_string(sum) + ")");
}

RuleFactors rule_factors(const DialogExample& example, const Schema& schema,
                         const FactorMaxima& maxima, const StateMap& z_prev) {
  RuleFactors out;
  out.turn_number = example.turn_count();

  const Turn& turn = example.current_turn();
  out.token_count = static_cast<int>(turn.system.size() + turn.user.size());

  for (const auto& [slot, value] : example.discourse_state) {
    (void)value;
    if (schema.at(slot).is_named_entity) ++out.named_entity_count;
  }

  for (const auto& [slot, value] : example.turn_state) {
    auto it = z_prev.find(slot);
    if (it == z_prev.end() || it->second != value) ++out.changed_slot_count;
  }

  const std::array<double, 4> raw = {
      static_cast<double>(out.turn_number), static_cast<double>(out.token_count),
      static_cast<double>(out.named_entity_count),
      static_cast<double>(out.changed_slot_count)};
  for (std::size_t i = 0; i < 4; ++i)
    out.normalized[i] = std::min(raw[i] / maxima[i], 1.0);
  return out;
}

namespace {

// Order-independent, equal-sized folds: sort ids by (hash, id), deal them
// round-robin. Returns example index -> fold.
std::vector<int> assign_folds(const Corpus& corpus, int k) {
  std::vector<std::size_t> order(corpus.examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const std::string& ida = corpus.examples[a].example_id;
    const std::string& idb = corpus.examples[b].example_id;
    const std::uint64_t ha = fnv1a64(ida), hb = fnv1a64(idb);
    return ha != hb ? ha < hb : ida < idb;
  });
  std::vector<int> fold(corpus.examples.size(), 0);
  for (std::size_t r = 0; r < order.size(); ++r)
    fold[order[r]] = static_cast<int>(r % static_cast<std::size_t>(k));
  return fold;
}

void run_jobs(int job_count, int workers, const std::function<void(int)>& fn) {
  workers = std::max(1, std::min(workers, job_count));
  if (workers == 1) {
    for (int j = 0; j < job_count; ++j) fn(j);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const int j = next.fetch_add(1);
        if (j >= job_count) return;
        try {
          fn(j);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

std::map<std::string, std::vector<double>> model_difficulty(
    const Corpus& corpus, const ModelFactory& trainer, int k, int ensemble,
    int cv_epochs, std::uint64_t seed, int workers) {
  if (k < 2) throw ConfigError("model_difficulty: k must be >= 2");
  if (static_cast<std::size_t>(k) > corpus.examples.size())
    throw ConfigError("model_difficulty: k exceeds corpus size");
  if (ensemble < 1) throw ConfigError("model_difficulty: ensemble must be >= 1");

  const std::vector<int> fold = assign_folds(corpus, k);

  struct Job {
    int member;
    int fold;
  };
  std::vector<Job> jobs;
  for (int e = 0; e < ensemble; ++e)
    for (int f = 0; f < k; ++f) jobs.push_back({e, f});

  // score slot per (member, example): results[member][example index]
  std::vector<std::vector<double>> results(
      static_cast<std::size_t>(ensemble),
      std::vector<double>(corpus.examples.size(), 0.0));

  run_jobs(static_cast<int>(jobs.size()), workers, [&](int j) {
    const Job job = jobs[static_cast<std::size_t>(j)];
    // Same init seed across folds of one ensemble member.
    auto model = trainer(derive_seed(seed, "cv-init", static_cast<std::uint64_t>(job.member)));

    std::vector<const DialogExample*> train_set;
    for (std::size_t i = 0; i < corpus.examples.size(); ++i)
      if (fold[i] != job.fold) train_set.push_back(&corpus.examples[i]);
    // Canonical order before shuffling keeps the training sequence, and so
    // every score, independent of corpus order.
    std::sort(train_set.begin(), train_set.end(),
              [](const DialogExample* a, const DialogExample* b) {
                return a->example_id < b->example_id;
              });

    const std::uint64_t run_key =
        static_cast<std::uint64_t>(job.member) * 1000003ULL +
        static_cast<std::uint64_t>(job.fold);
    for (int epoch = 0; epoch < cv_epochs; ++epoch) {
      Rng rng(derive_seed(seed, "cv-order", run_key * 131ULL + static_cast<std::uint64_t>(epoch)));
      rng.shuffle(train_set);
      model->fit_epoch(train_set,
                       derive_seed(seed, "cv-fit", run_key * 131ULL + static_cast<std::uint64_t>(epoch)));
    }

    for (std::size_t i = 0; i < corpus.examples.size(); ++i) {
      if (fold[i] != job.fold) continue;
      const StateMap pred = model->predict_turn(corpus.examples[i]);
      results[static_cast<std::size_t>(job.member)][i] =
          mentioned_slot_accuracy(pred, corpus.examples[i].turn_state);
    }
  });

  std::map<std::string, std::vector<double>> out;
  for (std::size_t i = 0; i < corpus.examples.size(); ++i) {
    std::vector<double>& scores = out[corpus.examples[i].example_id];
    scores.reserve(static_cast<std::size_t>(ensemble));
    for (int e = 0; e < ensemble; ++e)
      scores.push_back(results[static_cast<std::size_t>(e)][i]);
  }
  return out;
}

double hybrid_score(const RuleFactors& rule, double model_mean,
                    const ScorerWeights& weights) {
  weights.validate();
  if (model_mean < 0.0 || model_mean > 1.0)
    throw ConfigError("hybrid_score: model_mean outside [0,1]");
  const double model_term =
      weights.invert_model_score ? 1.0 - model_mean : model_mean;
  double score = weights.alpha[0] * model_term;
  for (std::size_t i = 0; i < 4; ++i)
    score += weights.alpha[i + 1] * rule.normalized[i];
  return score;
}

std::vector<DifficultyRecord> score_corpus(const Corpus& corpus,
                                           const ModelFactory& trainer,
                                           const DifficultyConfig& config,
                                           std::uint64_t seed) {
  config.weights.validate();

  // Previous discourse state per example, from the sibling at turn t-1.
  std::map<std::string, std::map<int, std::size_t>> dialogs;
  for (std::size_t i = 0; i < corpus.examples.size(); ++i)
    dialogs[corpus.examples[i].dialog_id][corpus.examples[i].turn_count()] = i;
  auto previous_discourse = [&](const DialogExample& example) -> StateMap {
    if (example.turn_count() <= 1) return {};
    const auto& by_turn = dialogs.at(example.dialog_id);
    auto it = by_turn.find(example.turn_count() - 1);
    if (it != by_turn.end()) return corpus.examples[it->second].discourse_state;
    // Sibling missing (filtered corpus): treat every mentioned slot as new.
    StateMap stripped = example.discourse_state;
    for (const auto& [slot, value] : example.turn_state) {
      (void)value;
      stripped.erase(slot);
    }
    return stripped;
  };

  std::map<std::string, std::vector<double>> model_scores;
  if (config.weights.alpha[0] > 0.0) {
    model_scores =
        model_difficulty(corpus, trainer, config.k_folds, config.ensemble,
                         config.cv_epochs, seed, config.workers);
  }

  std::vector<DifficultyRecord> records;
  records.reserve(corpus.examples.size());
  for (const DialogExample& example : corpus.examples) {
    DifficultyRecord record;
    record.example_id = example.example_id;
    record.rule = rule_factors(example, corpus.schema, config.maxima,
                               previous_discourse(example));
    if (auto it = model_scores.find(example.example_id); it != model_scores.end()) {
      record.model_scores = it->second;
      double sum = 0.0;
      for (double s : record.model_scores) sum += s;
      record.model_mean = record.model_scores.empty()
                              ? 1.0
                              : sum / static_cast<double>(record.model_scores.size());
    }
    record.hybrid = hybrid_score(record.rule, record.model_mean, config.weights);
    records.push_back(std::move(record));
  }
  return records;
}

void write_scores(const std::vector<DifficultyRecord>& records,
                  const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write scores file " + file.string());
  for (const DifficultyRecord& r : records) {
    json line;
    line["example_id"] = r.example_id;
    line["rule_raw"] = {r.rule.turn_number, r.rule.token_count,
                        r.rule.named_entity_count, r.rule.changed_slot_count};
    line["rule_norm"] = r.rule.normalized;
    line["model_scores"] = r.model_scores;
    line["model_mean"] = r.model_mean;
    line["hybrid"] = r.hybrid;
    out << line.dump() << "\n";
  }
}

std::vector<DifficultyRecord> read_scores(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open scores file " + file.string());
  std::vector<DifficultyRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json r;
    try {
      r = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(file.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    DifficultyRecord rec;
    rec.example_id = r.at("example_id").get<std::string>();
    rec.rule.turn_number = r.at("rule_raw")[0].get<int>();
    rec.rule.token_count = r.at("rule_raw")[1].get<int>();
    rec.rule.named_entity_count = r.at("rule_raw")[2].get<int>();
    rec.rule.changed_slot_count = r.at("rule_raw")[3].get<int>();
    for (std::size_t i = 0; i < 4; ++i)
      rec.rule.normalized[i] = r.at("rule_norm")[i].get<double>();
    for (const json& s : r.at("model_scores")) rec.model_scores.push_back(s.get<double>());
    rec.model_mean = r.at("model_mean").get<double>();
    rec.hybrid = r.at("hybrid").get<double>();
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace saclog
