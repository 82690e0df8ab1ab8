#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <numeric>

#include "saclog/scheduler.hpp"
#include "saclog/synthetic.hpp"

using namespace saclog;

namespace {

DifficultyRecord record_of(const std::string& id, double hybrid) {
  DifficultyRecord r;
  r.example_id = id;
  r.hybrid = hybrid;
  return r;
}

// Emits a fixed loss per step; optionally decaying per call so traces differ.
class FixedLossOracle : public ModelOracle {
 public:
  explicit FixedLossOracle(double loss, double decay = 0.0)
      : loss_(loss), decay_(decay) {}

  double fit_epoch(const std::vector<const DialogExample*>& examples, std::uint64_t,
                   const StepLossFn& on_step) override {
    double total = 0.0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const double loss = std::max(0.0, loss_ - decay_ * static_cast<double>(calls_++));
      if (on_step) on_step(loss);
      total += loss;
    }
    return examples.empty() ? 0.0 : total / static_cast<double>(examples.size());
  }
  StateMap predict_turn(const DialogExample&) const override { return {}; }
  double example_loss(const DialogExample&) const override { return loss_; }
  std::unique_ptr<ModelOracle> clone_untrained(std::uint64_t) const override {
    return std::make_unique<FixedLossOracle>(loss_, decay_);
  }

 private:
  double loss_;
  double decay_;
  long calls_ = 0;
};

Corpus small_corpus(int dialogs, std::uint64_t seed) {
  GeneratorConfig config = default_generator_config();
  config.dialog_count = dialogs;
  return generate_synthetic(config, seed);
}

std::vector<DifficultyRecord> spread_records(const Corpus& corpus) {
  // Deterministic spread of scores across [0,1).
  std::vector<DifficultyRecord> records;
  const std::size_t n = corpus.examples.size();
  for (std::size_t i = 0; i < n; ++i) {
    records.push_back(record_of(corpus.examples[i].example_id,
                                static_cast<double>(i) / static_cast<double>(n)));
  }
  return records;
}

std::string log_fingerprint(const TrainingLog& log) {
  std::string out;
  for (const EpochRecord& r : log.epochs) {
    out += std::to_string(r.stage) + "/" + std::to_string(r.epoch) + "/" +
           std::to_string(r.mean_loss) + "/" + std::to_string(r.steps) + "/" +
           (r.converged ? "c" : "-") + "/" + r.cause + ";";
  }
  out += "|";
  for (const StepRecord& s : log.steps)
    out += std::to_string(s.loss) + ",";
  return out;
}

}  // namespace

TEST_CASE("assign_buckets follows the floor rule with top clamp") {
  SUBCASE("examples from the bucketing rule") {
    auto c1 = assign_buckets({record_of("a", 0.05)}, 10);
    CHECK(c1.buckets[0] == std::vector<std::string>{"a"});

    auto c2 = assign_buckets({record_of("a", 1.0)}, 10);
    CHECK(c2.buckets[9] == std::vector<std::string>{"a"});

    auto c3 = assign_buckets(
        {record_of("a", 0.11), record_of("b", 0.95), record_of("c", 0.30)}, 10);
    CHECK(c3.buckets[1] == std::vector<std::string>{"a"});
    CHECK(c3.buckets[9] == std::vector<std::string>{"b"});
    CHECK(c3.buckets[3] == std::vector<std::string>{"c"});
  }
  SUBCASE("zero buckets rejected") {
    CHECK_THROWS_AS(static_cast<void>(assign_buckets({}, 0)), ConfigError);
  }
  SUBCASE("score outside [0,1] rejected") {
    CHECK_THROWS_AS(static_cast<void>(assign_buckets({record_of("a", 1.5)}, 10)),
                    DataError);
  }
  SUBCASE("within-bucket order is ascending (score, id)") {
    auto c = assign_buckets({record_of("z", 0.02), record_of("a", 0.02),
                             record_of("m", 0.01)},
                            10);
    CHECK(c.buckets[0] == std::vector<std::string>{"m", "a", "z"});
  }
  SUBCASE("re-bucketing is idempotent and partitions the records") {
    std::vector<DifficultyRecord> records;
    for (int i = 0; i < 97; ++i)
      records.push_back(record_of("e" + std::to_string(i), (i % 10) / 10.0 + 0.05));
    auto a = assign_buckets(records, 10);
    auto b = assign_buckets(records, 10);
    CHECK(a.buckets == b.buckets);
    CHECK(a.total_examples() == records.size());
    for (std::size_t bucket = 0; bucket < a.buckets.size(); ++bucket) {
      for (const std::string& id : a.buckets[bucket]) {
        const auto it = std::find_if(records.begin(), records.end(),
                                     [&](const auto& r) { return r.example_id == id; });
        REQUIRE(it != records.end());
        const int expected =
            std::min(static_cast<int>(std::floor(it->hybrid * 10)), 9);
        CHECK(expected == static_cast<int>(bucket));
      }
    }
  }
}

TEST_CASE("check_convergence implements the windowed flat-under-threshold rule") {
  ConvergenceRule rule;  // max 3 epochs, threshold 15, window 100

  SUBCASE("flat under threshold converges") {
    std::vector<double> flat(100, 10.0);
    CHECK(check_convergence(flat, rule));
  }
  SUBCASE("flat over threshold does not") {
    std::vector<double> high(100, 20.0);
    CHECK_FALSE(check_convergence(high, rule));
  }
  SUBCASE("strictly decreasing ramp does not") {
    std::vector<double> ramp;
    for (int i = 0; i < 100; ++i) ramp.push_back(30.0 - 25.0 * i / 99.0);
    CHECK_FALSE(check_convergence(ramp, rule));
  }
  SUBCASE("short history does not") {
    std::vector<double> flat(99, 10.0);
    CHECK_FALSE(check_convergence(flat, rule));
  }
  SUBCASE("only the last window counts") {
    std::vector<double> history(300, 40.0);        // old losses over threshold
    for (int i = 0; i < 100; ++i) history.push_back(5.0);
    CHECK(check_convergence(history, rule));
  }
  SUBCASE("rising loss under threshold counts as ceased decreasing") {
    std::vector<double> rising;
    for (int i = 0; i < 100; ++i) rising.push_back(5.0 + 0.05 * i);
    CHECK(check_convergence(rising, rule));
  }
}

TEST_CASE("run_curriculum produces nested stages within the epoch budget") {
  Corpus corpus = small_corpus(40, 9);
  auto records = spread_records(corpus);
  const int n = 10;
  Curriculum curriculum = assign_buckets(records, n);

  ScheduleConfig config;
  config.rule.max_epochs_per_stage = 3;
  config.rule.loss_threshold = 0.5;
  config.rule.window_steps = 30;
  config.warmup_epochs = 2;
  config.post_epochs = 4;

  FixedLossOracle model(10.0);  // never converges (over threshold)
  TrainingLog log = run_curriculum(model, curriculum, corpus, config, nullptr, 5);

  // Stage sets: first epoch of each stage has steps == cumulative bucket size.
  std::size_t cumulative = 0;
  int stage_epochs_total = 0;
  for (int stage = 0; stage < n; ++stage) {
    cumulative += curriculum.buckets[static_cast<std::size_t>(stage)].size();
    std::vector<const EpochRecord*> stage_records;
    for (const EpochRecord& r : log.epochs)
      if (r.stage == stage) stage_records.push_back(&r);
    REQUIRE(!stage_records.empty());
    if (curriculum.buckets[static_cast<std::size_t>(stage)].empty()) {
      CHECK(stage_records[0]->cause == "empty_bucket");
      CHECK(stage_records[0]->steps == 0);
      continue;
    }
    CHECK(stage_records.size() <= 3);
    stage_epochs_total += static_cast<int>(stage_records.size());
    for (const EpochRecord* r : stage_records)
      CHECK(r->steps == static_cast<int>(cumulative));
  }
  CHECK(cumulative == corpus.examples.size());

  // Warmup and post epochs trained on the full set.
  for (const EpochRecord& r : log.epochs) {
    if (r.stage == kWarmupStage || r.stage == n)
      CHECK(r.steps == static_cast<int>(corpus.examples.size()));
  }

  // Budget: stage epochs <= N * max, plus warmup and post.
  CHECK(stage_epochs_total <= n * config.rule.max_epochs_per_stage);
  int total_epochs = static_cast<int>(log.epochs.size());
  CHECK(total_epochs <=
        n * config.rule.max_epochs_per_stage + config.warmup_epochs +
            config.post_epochs + n /* empty-bucket markers */);
}

TEST_CASE("zero-loss model converges by the rule, not the epoch cap") {
  Corpus corpus = small_corpus(30, 12);
  auto records = spread_records(corpus);
  Curriculum curriculum = assign_buckets(records, 4);

  ScheduleConfig config;
  config.rule.max_epochs_per_stage = 3;
  config.rule.loss_threshold = 1.0;
  config.rule.window_steps = 5;  // smaller than every stage set
  config.warmup_epochs = 0;
  config.post_epochs = 0;

  FixedLossOracle model(0.0);
  TrainingLog log = run_curriculum(model, curriculum, corpus, config, nullptr, 5);
  for (const EpochRecord& r : log.epochs) {
    if (r.cause == "empty_bucket") continue;
    CHECK(r.converged);
    CHECK(r.cause == "converged");
    CHECK(r.epoch == 0);  // one window is enough
  }
}

TEST_CASE("logged convergence decisions replay exactly from step losses") {
  Corpus corpus = small_corpus(25, 3);
  auto records = spread_records(corpus);
  Curriculum curriculum = assign_buckets(records, 5);

  ScheduleConfig config;
  config.rule.max_epochs_per_stage = 3;
  config.rule.loss_threshold = 8.0;
  config.rule.window_steps = 40;
  config.warmup_epochs = 1;
  config.post_epochs = 2;

  FixedLossOracle model(9.0, 0.01);  // decays through the threshold mid-run
  TrainingLog log = run_curriculum(model, curriculum, corpus, config, nullptr, 77);

  for (const EpochRecord& r : log.epochs) {
    if (r.stage < 0 || r.stage >= curriculum.n_buckets || r.cause == "empty_bucket")
      continue;
    std::vector<double> replay;
    for (const StepRecord& s : log.steps) {
      if (s.stage != r.stage) continue;
      if (s.epoch > r.epoch) break;
      replay.push_back(s.loss);
    }
    CHECK(check_convergence(replay, config.rule) == r.converged);
  }
}

TEST_CASE("single bucket degenerates to plain training") {
  Corpus corpus = small_corpus(10, 4);
  auto records = spread_records(corpus);
  Curriculum curriculum = assign_buckets(records, 1);

  ScheduleConfig config;
  config.rule.max_epochs_per_stage = 3;
  config.rule.loss_threshold = 0.1;
  config.rule.window_steps = 1000;  // unreachable; no convergence
  config.warmup_epochs = 0;
  config.post_epochs = 2;

  FixedLossOracle model(1.0);
  TrainingLog log = run_curriculum(model, curriculum, corpus, config, nullptr, 5);
  CHECK(log.epochs.size() == 3 + 2);
  for (const EpochRecord& r : log.epochs)
    CHECK(r.steps == static_cast<int>(corpus.examples.size()));
}

TEST_CASE("empty curriculum is a configuration error") {
  Corpus corpus = small_corpus(5, 4);
  Curriculum empty;
  empty.n_buckets = 3;
  empty.buckets.resize(3);
  ScheduleConfig config;
  FixedLossOracle model(1.0);
  CHECK_THROWS_AS(static_cast<void>(run_curriculum(model, empty, corpus, config,
                                                   nullptr, 1)),
                  ConfigError);
}

TEST_CASE("same seed reproduces the identical log") {
  Corpus corpus = small_corpus(20, 6);
  auto records = spread_records(corpus);
  Curriculum curriculum = assign_buckets(records, 5);
  ScheduleConfig config;
  config.rule.window_steps = 20;
  config.rule.loss_threshold = 5.0;
  config.warmup_epochs = 1;
  config.post_epochs = 2;

  FixedLossOracle a(6.0, 0.005), b(6.0, 0.005);
  TrainingLog log_a = run_curriculum(a, curriculum, corpus, config, nullptr, 11);
  TrainingLog log_b = run_curriculum(b, curriculum, corpus, config, nullptr, 11);
  CHECK(log_fingerprint(log_a) == log_fingerprint(log_b));
}

TEST_CASE("hook-injected examples join the cumulative set") {
  Corpus corpus = small_corpus(15, 8);
  auto records = spread_records(corpus);
  Curriculum curriculum = assign_buckets(records, 3);

  ScheduleConfig config;
  config.rule.max_epochs_per_stage = 2;
  config.rule.loss_threshold = 0.01;  // never converges ...
  config.rule.window_steps = 10;
  config.warmup_epochs = 0;
  config.post_epochs = 1;

  int injections = 0;
  EpochHook hook = [&](const EpochEvent& event) -> std::vector<DialogExample> {
    if (event.converged || event.stage != 0 || event.epoch != 0) return {};
    ++injections;
    DialogExample extra = corpus.examples[0];
    extra.example_id = "aug-extra#1";
    extra.dialog_id = "aug-extra";
    return {extra};
  };

  FixedLossOracle model(1.0);
  TrainingLog log = run_curriculum(model, curriculum, corpus, config, hook, 5);
  CHECK(injections == 1);

  // stage 0 epoch 1 must see one more example than epoch 0.
  int steps_e0 = -1, steps_e1 = -1;
  for (const EpochRecord& r : log.epochs) {
    if (r.stage == 0 && r.epoch == 0) steps_e0 = r.steps;
    if (r.stage == 0 && r.epoch == 1) steps_e1 = r.steps;
  }
  REQUIRE(steps_e0 > 0);
  CHECK(steps_e1 == steps_e0 + 1);
  // and the final post epoch carries the whole corpus plus the injection.
  CHECK(log.epochs.back().steps == static_cast<int>(corpus.examples.size()) + 1);
}

TEST_CASE("curriculum file round trip") {
  auto c = assign_buckets(
      {record_of("a", 0.11), record_of("b", 0.95), record_of("c", 0.30)}, 10);
  namespace fs = std::filesystem;
  fs::path p = fs::temp_directory_path() / "saclog_test_curriculum.json";
  write_curriculum(c, p);
  Curriculum loaded = read_curriculum(p);
  CHECK(loaded.n_buckets == c.n_buckets);
  CHECK(loaded.buckets == c.buckets);
  CHECK(loaded.boundaries == c.boundaries);
}
