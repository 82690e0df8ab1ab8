#include "saclog/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>

#include "json.hpp"
#include "saclog/rng.hpp"

namespace saclog {

using nlohmann::json;

std::size_t Curriculum::total_examples() const {
  std::size_t n = 0;
  for (const auto& bucket : buckets) n += bucket.size();
  return n;
}

Curriculum assign_buckets(const std::vector<DifficultyRecord>& records, int n) {
  if (n < 1) throw ConfigError("assign_buckets: bucket count must be >= 1");
  Curriculum curriculum;
  curriculum.n_buckets = n;
  curriculum.buckets.resize(static_cast<std::size_t>(n));
  for (int b = 0; b <= n; ++b)
    curriculum.boundaries.push_back(static_cast<double>(b) / n);

  std::vector<std::pair<double, std::string>> scored;
  scored.reserve(records.size());
  for (const DifficultyRecord& r : records) {
    if (r.hybrid < 0.0 || r.hybrid > 1.0)
      throw DataError("assign_buckets: hybrid score outside [0,1] for '" +
                      r.example_id + "'");
    scored.emplace_back(r.hybrid, r.example_id);
  }
  std::sort(scored.begin(), scored.end());
  for (const auto& [score, id] : scored) {
    const int bucket =
        std::min(static_cast<int>(std::floor(score * n)), n - 1);
    curriculum.buckets[static_cast<std::size_t>(bucket)].push_back(id);
  }
  return curriculum;
}

bool check_convergence(const std::vector<double>& history, const ConvergenceRule& rule) {
  const std::size_t window = static_cast<std::size_t>(rule.window_steps);
  if (window == 0 || history.size() < window) return false;
  const double* recent = history.data() + (history.size() - window);
  for (std::size_t i = 0; i < window; ++i)
    if (recent[i] > rule.loss_threshold) return false;

  // Least-squares slope over the window; >= 0 means the loss has stopped
  // decreasing.
  const double n = static_cast<double>(window);
  double sum_x = 0.0, sum_y = 0.0, sum_xy = 0.0, sum_xx = 0.0;
  for (std::size_t i = 0; i < window; ++i) {
    const double x = static_cast<double>(i);
    sum_x += x;
    sum_y += recent[i];
    sum_xy += x * recent[i];
    sum_xx += x * x;
  }
  const double denom = n * sum_xx - sum_x * sum_x;
  if (denom == 0.0) return true;  // single-step window: flat by definition
  const double slope = (n * sum_xy - sum_x * sum_y) / denom;
  return slope >= 0.0;
}

TrainingLog run_curriculum(ModelOracle& model, const Curriculum& curriculum,
                           const Corpus& corpus, const ScheduleConfig& config,
                           const EpochHook& hook, std::uint64_t seed) {
  if (curriculum.n_buckets < 1 || curriculum.total_examples() == 0)
    throw ConfigError("run_curriculum: empty curriculum");

  std::map<std::string, const DialogExample*> by_id;
  for (const DialogExample& e : corpus.examples) by_id[e.example_id] = &e;
  auto resolve = [&](const std::string& id) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw DataError("run_curriculum: curriculum id '" + id + "' not in corpus");
    return it->second;
  };

  TrainingLog log;
  std::deque<DialogExample> injected_storage;  // stable addresses for hook output

  auto fit_logged = [&](std::vector<const DialogExample*>& batch, int stage, int epoch,
                        std::uint64_t fit_seed,
                        std::vector<double>* stage_losses) -> std::pair<double, int> {
    int step = 0;
    const double mean = model.fit_epoch(batch, fit_seed, [&](double loss) {
      if (stage_losses) stage_losses->push_back(loss);
      log.steps.push_back({stage, epoch, step++, loss});
    });
    return {mean, step};
  };

  // Warmup on the full curriculum set.
  std::vector<const DialogExample*> full_set;
  for (const auto& bucket : curriculum.buckets)
    for (const std::string& id : bucket) full_set.push_back(resolve(id));
  for (int epoch = 0; epoch < config.warmup_epochs; ++epoch) {
    Rng rng(derive_seed(seed, "warmup-order", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(full_set);
    auto [mean, steps] = fit_logged(
        full_set, kWarmupStage, epoch,
        derive_seed(seed, "warmup-fit", static_cast<std::uint64_t>(epoch)), nullptr);
    log.epochs.push_back({kWarmupStage, epoch, mean, steps, false, "warmup"});
  }

  // Baby steps.
  std::vector<const DialogExample*> active;
  for (int stage = 0; stage < curriculum.n_buckets; ++stage) {
    const auto& bucket = curriculum.buckets[static_cast<std::size_t>(stage)];
    for (const std::string& id : bucket) active.push_back(resolve(id));
    if (bucket.empty()) {
      // Skipped without consuming the stage's epoch budget.
      log.epochs.push_back({stage, 0, 0.0, 0, false, "empty_bucket"});
      continue;
    }

    Rng stage_rng(derive_seed(seed, "stage-order", static_cast<std::uint64_t>(stage)));
    std::vector<double> stage_losses;
    for (int epoch = 0; epoch < config.rule.max_epochs_per_stage; ++epoch) {
      stage_rng.shuffle(active);
      auto [mean, steps] = fit_logged(
          active, stage, epoch,
          derive_seed(seed, "stage-fit",
                      static_cast<std::uint64_t>(stage) * 1009ULL +
                          static_cast<std::uint64_t>(epoch)),
          &stage_losses);
      const bool converged = check_convergence(stage_losses, config.rule);
      std::string cause = converged ? "converged"
                          : epoch + 1 == config.rule.max_epochs_per_stage
                              ? "max_epochs"
                              : "in_progress";
      log.epochs.push_back({stage, epoch, mean, steps, converged, cause});

      if (hook) {
        EpochEvent event;
        event.stage = stage;
        event.epoch = epoch;
        event.converged = converged;
        event.mean_loss = mean;
        event.model = &model;
        event.active_set = &active;
        std::vector<DialogExample> extra = hook(event);
        for (DialogExample& e : extra) {
          injected_storage.push_back(std::move(e));
          active.push_back(&injected_storage.back());
        }
      }
      if (converged) break;
    }
  }

  // Post-accumulation epochs on everything (including injected examples).
  for (int epoch = 0; epoch < config.post_epochs; ++epoch) {
    Rng rng(derive_seed(seed, "post-order", static_cast<std::uint64_t>(epoch)));
    rng.shuffle(active);
    auto [mean, steps] = fit_logged(
        active, curriculum.n_buckets, epoch,
        derive_seed(seed, "post-fit", static_cast<std::uint64_t>(epoch)), nullptr);
    log.epochs.push_back({curriculum.n_buckets, epoch, mean, steps, false, "post"});
  }
  return log;
}

void write_curriculum(const Curriculum& curriculum, const std::filesystem::path& file) {
  json root;
  root["n_buckets"] = curriculum.n_buckets;
  root["boundaries"] = curriculum.boundaries;
  root["buckets"] = curriculum.buckets;
  std::ofstream out(file);
  if (!out) throw DataError("cannot write curriculum file " + file.string());
  out << root.dump(2) << "\n";
}

Curriculum read_curriculum(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open curriculum file " + file.string());
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw DataError(file.string() + ": " + e.what());
  }
  Curriculum curriculum;
  curriculum.n_buckets = root.at("n_buckets").get<int>();
  curriculum.boundaries = root.at("boundaries").get<std::vector<double>>();
  curriculum.buckets =
      root.at("buckets").get<std::vector<std::vector<std::string>>>();
  return curriculum;
}

}  // namespace saclog
