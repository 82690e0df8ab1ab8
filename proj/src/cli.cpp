#include "saclog/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "saclog/cli_pipeline.hpp"
#include "saclog/corpus_io.hpp"
#include "saclog/review.hpp"

namespace saclog {

using nlohmann::json;

namespace {

void append_manifest(const RunPaths& paths, const std::string& command) {
  std::filesystem::create_directories(paths.root);
  std::ofstream out(paths.manifest_file(), std::ios::app);
  if (!out) return;
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  json line;
  line["command"] = command;
  line["unix_ms"] =
      std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
  out << line.dump() << "\n";
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  if (n < 2) return 0.0;
  double mean_a = 0.0, mean_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_a += a[i];
    mean_b += b[i];
  }
  mean_a /= static_cast<double>(n);
  mean_b /= static_cast<double>(n);
  double cov = 0.0, var_a = 0.0, var_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (a[i] - mean_a) * (b[i] - mean_b);
    var_a += (a[i] - mean_a) * (a[i] - mean_a);
    var_b += (b[i] - mean_b) * (b[i] - mean_b);
  }
  if (var_a <= 0.0 || var_b <= 0.0) return 0.0;
  return cov / std::sqrt(var_a * var_b);
}

}  // namespace

Corpus load_run_corpus(const PipelineConfig& config, const std::string& split) {
  RunPaths paths(config.out_dir);
  const std::filesystem::path dialog_file =
      split == "valid" ? paths.valid_file() : paths.train_file();
  if (!std::filesystem::exists(dialog_file))
    throw DataError("missing " + dialog_file.string() + " (run `saclog ingest` first)");
  const bool synthetic =
      config.data.source == "synthetic" || config.data.mark_synthetic;
  return load_corpus(dialog_file, paths.schema_file(), split, synthetic);
}

ModelFactory run_model_factory(const PipelineConfig& config, const Corpus& corpus) {
  const Vocabulary vocab = Vocabulary::build(corpus);
  const Schema schema = corpus.schema;
  const RefModelConfig model_config = config.model;
  return [vocab, schema, model_config](std::uint64_t seed) {
    return std::make_unique<ReferenceModel>(schema, vocab, model_config, seed);
  };
}

int cmd_ingest(const PipelineConfig& config) {
  RunPaths paths(config.out_dir);
  std::filesystem::create_directories(paths.data_dir());
  write_resolved_config(config, paths.resolved_config_file());
  append_manifest(paths, "ingest");

  json stats;
  if (config.data.source == "synthetic") {
    GeneratorConfig gen = default_generator_config();
    gen.dontcare_rate = config.data.dontcare_rate;
    gen.dialog_count = config.data.dialogs_train;
    gen.dialog_prefix = "tr";
    gen.split = "train";
    Corpus train = generate_synthetic(gen, derive_seed(config.seed, "gen-train"));
    save_corpus(train, paths.train_file());
    save_schema(train.schema, paths.schema_file());
    stats["train_examples"] = train.examples.size();
    stats["train_dialogs"] = config.data.dialogs_train;
    if (config.data.dialogs_valid > 0) {
      gen.dialog_count = config.data.dialogs_valid;
      gen.dialog_prefix = "va";
      gen.split = "valid";
      Corpus valid = generate_synthetic(gen, derive_seed(config.seed, "gen-valid"));
      save_corpus(valid, paths.valid_file());
      stats["valid_examples"] = valid.examples.size();
    }
  } else {
    LoadReport report;
    Corpus train = load_corpus(config.data.dialog_file, config.data.schema_file,
                               "train", config.data.mark_synthetic, &report);
    save_corpus(train, paths.train_file());
    save_schema(train.schema, paths.schema_file());
    stats["train_examples"] = train.examples.size();
    stats["train_dialogs"] = report.dialog_count;
    stats["discourse_mismatches"] = report.discourse_mismatches;
    if (!config.data.valid_dialog_file.empty()) {
      Corpus valid = load_corpus(config.data.valid_dialog_file, config.data.schema_file,
                                 "valid", config.data.mark_synthetic);
      save_corpus(valid, paths.valid_file());
      stats["valid_examples"] = valid.examples.size();
    }
  }
  std::ofstream out(paths.data_dir() / "ingest_stats.json");
  out << stats.dump(2) << "\n";
  std::cout << "ingest: wrote " << paths.data_dir().string() << "\n";
  return kExitOk;
}

int cmd_score(const PipelineConfig& config) {
  RunPaths paths(config.out_dir);
  append_manifest(paths, "score");
  Corpus train = load_run_corpus(config, "train");

  DifficultyConfig scorer = config.scorer;
  scorer.workers = config.workers;
  auto records = score_corpus(train, run_model_factory(config, train), scorer,
                              derive_seed(config.seed, "score"));
  write_scores(records, paths.scores_file());

  // summary: hybrid histogram and factor-vs-hybrid correlations
  std::vector<int> histogram(10, 0);
  std::vector<double> hybrid;
  std::array<std::vector<double>, 4> factors;
  for (const DifficultyRecord& r : records) {
    const int bin = std::min(static_cast<int>(r.hybrid * 10.0), 9);
    ++histogram[static_cast<std::size_t>(bin)];
    hybrid.push_back(r.hybrid);
    for (std::size_t i = 0; i < 4; ++i) factors[i].push_back(r.rule.normalized[i]);
  }
  json summary;
  summary["examples"] = records.size();
  summary["hybrid_histogram"] = histogram;
  summary["factor_hybrid_correlation"] = {
      pearson(factors[0], hybrid), pearson(factors[1], hybrid),
      pearson(factors[2], hybrid), pearson(factors[3], hybrid)};
  std::ofstream out(paths.score_summary_file());
  out << summary.dump(2) << "\n";
  std::cout << "score: " << records.size() << " records -> "
            << paths.scores_file().string() << "\n";
  return kExitOk;
}

int cmd_bucket(const PipelineConfig& config) {
  RunPaths paths(config.out_dir);
  append_manifest(paths, "bucket");
  if (!std::filesystem::exists(paths.scores_file()))
    throw DataError("missing " + paths.scores_file().string() +
                    " (run `saclog score` first)");
  auto records = read_scores(paths.scores_file());
  Curriculum curriculum = assign_buckets(records, config.n_buckets);
  write_curriculum(curriculum, paths.curriculum_file());
  std::cout << "bucket: " << curriculum.total_examples() << " examples in "
            << config.n_buckets << " buckets\n";
  return kExitOk;
}

int cmd_pretrain(const PipelineConfig& config) {
  RunPaths paths(config.out_dir);
  append_manifest(paths, "pretrain");
  Corpus train = load_run_corpus(config, "train");
  PretrainResult result =
      pretrain(train, config.preview, derive_seed(config.seed, "pretrain"));
  save_encoder(result.net, paths.encoder_file());
  write_pretrain_report(result.report, paths.pretrain_report_file());
  std::cout << "pretrain: " << result.report.examples_seen << " examples -> "
            << paths.encoder_file().string() << "\n";
  return kExitOk;
}

TrainOutcome run_training(const PipelineConfig& config, const std::string& mode,
                          const Corpus& train) {
  if (mode != "curriculum" && mode != "baseline")
    throw ConfigError("train mode must be curriculum or baseline");
  RunPaths paths(config.out_dir);

  TrainOutcome outcome;
  outcome.model = std::make_unique<ReferenceModel>(
      train.schema, Vocabulary::build(train), config.model,
      derive_seed(config.seed, "model-init-" + mode));

  if (mode == "baseline") {
    outcome.log = train_baseline(*outcome.model, train, config.baseline_epochs,
                                 derive_seed(config.seed, "train-baseline"));
    return outcome;
  }

  // curriculum mode
  if (!std::filesystem::exists(paths.curriculum_file()))
    throw DataError("missing " + paths.curriculum_file().string() +
                    " (run `saclog score` and `saclog bucket` first)");
  Curriculum curriculum = read_curriculum(paths.curriculum_file());

  if (config.preview_enabled) {
    if (!std::filesystem::exists(paths.encoder_file()))
      throw DataError("missing " + paths.encoder_file().string() +
                      " (run `saclog pretrain` first or disable preview)");
    Vocabulary encoder_vocab;
    ParamStore encoder = load_params(paths.encoder_file(), &encoder_vocab, nullptr);
    outcome.model->init_encoder_from(encoder, encoder_vocab);
  }

  EpochHook hook;
  if (config.review.mode == "online")
    hook = make_review_hook(train, config.review.fraction,
                            config.review.online_budget_per_event,
                            derive_seed(config.seed, "review-online"));

  outcome.log = run_curriculum(*outcome.model, curriculum, train, config.schedule,
                               hook, derive_seed(config.seed, "train-curriculum"));

  if (config.review.mode == "post" && config.review.budget > 0) {
    // Select hard examples with the trained model, augment, train some more.
    std::vector<HardCandidate> candidates;
    for (const DialogExample& e : train.examples) {
      HardCandidate c;
      c.example_id = e.example_id;
      c.loss = outcome.model->example_loss(e);
      c.incorrect = outcome.model->predict_turn(e) != e.turn_state;
      candidates.push_back(std::move(c));
    }
    const std::vector<std::string> hard = select_hard(candidates, config.review.fraction);
    outcome.review_records = augment_batch(hard, train, config.review.budget,
                                           derive_seed(config.seed, "review-post"));
    if (!outcome.review_records.empty()) {
      std::vector<const DialogExample*> enlarged;
      for (const DialogExample& e : train.examples) enlarged.push_back(&e);
      for (const AugmentationRecord& r : outcome.review_records)
        enlarged.push_back(&r.example);
      for (int epoch = 0; epoch < config.review.extra_epochs; ++epoch) {
        Rng rng(derive_seed(config.seed, "review-extra-order",
                            static_cast<std::uint64_t>(epoch)));
        rng.shuffle(enlarged);
        int step = 0;
        const double mean = outcome.model->fit_epoch(
            enlarged,
            derive_seed(config.seed, "review-extra-fit",
                        static_cast<std::uint64_t>(epoch)),
            [&](double loss) {
              outcome.log.steps.push_back(
                  {curriculum.n_buckets + 1, epoch, step++, loss});
            });
        outcome.log.epochs.push_back(
            {curriculum.n_buckets + 1, epoch, mean, step, false, "review"});
      }
    }
  }
  return outcome;
}

int cmd_train(const PipelineConfig& config, const std::string& mode) {
  RunPaths paths(config.out_dir);
  append_manifest(paths, "train:" + mode);
  Corpus train = load_run_corpus(config, "train");

  TrainOutcome outcome = run_training(config, mode, train);

  std::string eval_split = "valid";
  Corpus eval_corpus;
  if (std::filesystem::exists(paths.valid_file())) {
    eval_corpus = load_run_corpus(config, "valid");
  } else {
    eval_corpus = train;
    eval_split = "train";
  }
  const double score = jga(predict_corpus(*outcome.model, eval_corpus), eval_corpus);

  outcome.model->save(paths.model_file(mode, config.seed));
  write_training_log(outcome.log, paths.train_log_file(mode, config.seed));
  write_step_losses(outcome.log, paths.train_steps_file(mode, config.seed));
  if (!outcome.review_records.empty())
    write_augmented(outcome.review_records, train, paths.review_file(config.seed),
                    paths.review_sidecar(config.seed));

  int epochs_total = 0;
  for (const EpochRecord& r : outcome.log.epochs)
    if (r.steps > 0) ++epochs_total;
  json metrics;
  metrics["mode"] = mode;
  metrics["seed"] = config.seed;
  metrics["jga"] = score;
  metrics["epochs_total"] = epochs_total;
  metrics["eval_split"] = eval_split;
  metrics["augmented_examples"] = outcome.review_records.size();
  std::ofstream out(paths.metrics_file(mode, config.seed));
  out << metrics.dump(2) << "\n";
  std::cout << "train(" << mode << "): jga=" << score << " epochs=" << epochs_total
            << "\n";
  return kExitOk;
}

int cmd_augment(const PipelineConfig& config) {
  RunPaths paths(config.out_dir);
  append_manifest(paths, "augment");
  Corpus train = load_run_corpus(config, "train");

  std::filesystem::path model_path = paths.model_file("curriculum", config.seed);
  if (!std::filesystem::exists(model_path))
    model_path = paths.model_file("baseline", config.seed);
  if (!std::filesystem::exists(model_path))
    throw DataError("no trained model for seed " + std::to_string(config.seed) +
                    " (run `saclog train` first)");
  auto model = ReferenceModel::load(model_path, train.schema);

  std::vector<HardCandidate> candidates;
  for (const DialogExample& e : train.examples) {
    HardCandidate c;
    c.example_id = e.example_id;
    c.loss = model->example_loss(e);
    c.incorrect = model->predict_turn(e) != e.turn_state;
    candidates.push_back(std::move(c));
  }
  const std::vector<std::string> hard = select_hard(candidates, config.review.fraction);
  auto records = augment_batch(hard, train, config.review.budget,
                               derive_seed(config.seed, "augment"));
  write_augmented(records, train, paths.augmented_file(), paths.augmented_sidecar());
  std::cout << "augment: " << records.size() << " examples from " << hard.size()
            << " hard ids\n";
  return kExitOk;
}

int cmd_evaluate(const PipelineConfig& config, const std::string& mode,
                 const std::string& split) {
  RunPaths paths(config.out_dir);
  append_manifest(paths, "evaluate:" + mode + ":" + split);
  Corpus corpus = load_run_corpus(config, split);

  const std::filesystem::path model_path = paths.model_file(mode, config.seed);
  if (!std::filesystem::exists(model_path))
    throw DataError("missing " + model_path.string() + " (run `saclog train` first)");
  auto model = ReferenceModel::load(model_path, corpus.schema);

  auto predictions = predict_corpus(*model, corpus);
  std::ofstream out(paths.predictions_file(mode, config.seed, split));
  for (const Prediction& p : predictions) {
    json line;
    line["example_id"] = p.example_id;
    line["turn_state"] = p.turn_state;
    line["discourse_state"] = p.discourse_state;
    out << line.dump() << "\n";
  }
  const double score = jga(predictions, corpus);
  json eval;
  eval["mode"] = mode;
  eval["seed"] = config.seed;
  eval["split"] = split;
  eval["jga"] = score;
  std::ofstream eval_out(paths.eval_file(mode, config.seed, split));
  eval_out << eval.dump(2) << "\n";
  std::cout << "evaluate(" << mode << ", " << split << "): jga=" << score << "\n";
  return kExitOk;
}

namespace {

void write_loss_plot(const TrainingLog& log, const std::filesystem::path& file) {
  std::vector<double> losses;
  std::vector<int> stages;
  for (const EpochRecord& r : log.epochs) {
    if (r.steps == 0) continue;
    losses.push_back(r.mean_loss);
    stages.push_back(r.stage);
  }
  if (losses.empty()) return;
  const double lo = *std::min_element(losses.begin(), losses.end());
  const double hi = *std::max_element(losses.begin(), losses.end());
  const double span = hi - lo > 1e-12 ? hi - lo : 1.0;
  const int width = 640, height = 320, margin = 40;

  std::ofstream out(file);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\""
      << width - margin << "\" y2=\"" << height - margin
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin
      << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << margin << "\" y=\"" << margin - 10
      << "\" font-size=\"12\">mean loss per epoch (stage changes marked)</text>\n";

  auto x_of = [&](std::size_t i) {
    return margin + static_cast<double>(i) * (width - 2 * margin) /
                        std::max<std::size_t>(1, losses.size() - 1);
  };
  auto y_of = [&](double loss) {
    return height - margin - (loss - lo) / span * (height - 2 * margin);
  };
  out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < losses.size(); ++i)
    out << x_of(i) << "," << y_of(losses[i]) << " ";
  out << "\"/>\n";
  for (std::size_t i = 1; i < stages.size(); ++i) {
    if (stages[i] != stages[i - 1]) {
      out << "<line x1=\"" << x_of(i) << "\" y1=\"" << margin << "\" x2=\"" << x_of(i)
          << "\" y2=\"" << height - margin
          << "\" stroke=\"lightgray\" stroke-dasharray=\"4\"/>\n";
    }
  }
  out << "<text x=\"" << margin << "\" y=\"" << height - margin + 25
      << "\" font-size=\"11\">min " << lo << "  max " << hi << "</text>\n";
  out << "</svg>\n";
}

}  // namespace

int cmd_report(const std::filesystem::path& run_dir) {
  RunPaths paths(run_dir);
  std::filesystem::create_directories(paths.plots_dir());
  std::ofstream report(paths.report_file());
  if (!report) throw DataError("cannot write report " + paths.report_file().string());

  std::vector<std::string> missing;
  report << "# Run report\n\n";
  report << "Run directory: `" << run_dir.string() << "`\n\n";

  report << "## Difficulty scores\n\n";
  if (std::filesystem::exists(paths.scores_file())) {
    auto records = read_scores(paths.scores_file());
    std::vector<int> histogram(10, 0);
    std::vector<double> hybrid;
    std::array<std::vector<double>, 4> factors;
    for (const DifficultyRecord& r : records) {
      ++histogram[static_cast<std::size_t>(std::min(static_cast<int>(r.hybrid * 10), 9))];
      hybrid.push_back(r.hybrid);
      for (std::size_t i = 0; i < 4; ++i) factors[i].push_back(r.rule.normalized[i]);
    }
    report << records.size() << " scored examples.\n\n";
    report << "| bucket | count |\n|---|---|\n";
    for (int b = 0; b < 10; ++b)
      report << "| [" << b / 10.0 << ", " << (b + 1) / 10.0 << ") | " << histogram[b]
             << " |\n";
    report << "\nFactor correlation with the hybrid score: turns "
           << pearson(factors[0], hybrid) << ", tokens " << pearson(factors[1], hybrid)
           << ", named entities " << pearson(factors[2], hybrid) << ", changed slots "
           << pearson(factors[3], hybrid) << ".\n\n";
  } else {
    report << "(missing scores.jsonl)\n\n";
    missing.push_back("scores.jsonl");
  }

  report << "## Training runs\n\n";
  std::vector<json> metrics;
  for (const auto& entry : std::filesystem::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("metrics_", 0) == 0 && entry.path().extension() == ".json") {
      std::ifstream in(entry.path());
      json m;
      in >> m;
      metrics.push_back(std::move(m));
    }
  }
  std::sort(metrics.begin(), metrics.end(), [](const json& a, const json& b) {
    const std::string ma = a.value("mode", ""), mb = b.value("mode", "");
    if (ma != mb) return ma < mb;
    return a.value("seed", 0) < b.value("seed", 0);
  });
  if (metrics.empty()) {
    report << "(no training metrics found)\n\n";
    missing.push_back("metrics_*.json");
  } else {
    report << "| mode | seed | jga | epochs | eval split |\n|---|---|---|---|---|\n";
    std::map<std::string, std::vector<double>> by_mode;
    for (const json& m : metrics) {
      report << "| " << m.value("mode", "?") << " | " << m.value("seed", 0) << " | "
             << m.value("jga", 0.0) << " | " << m.value("epochs_total", 0) << " | "
             << m.value("eval_split", "?") << " |\n";
      by_mode[m.value("mode", "?")].push_back(m.value("jga", 0.0));
    }
    report << "\n";
    for (auto& [mode, scores] : by_mode) {
      std::sort(scores.begin(), scores.end());
      const double median = scores[scores.size() / 2];
      report << "Median JGA (" << mode << "): " << median << " over " << scores.size()
             << " run(s).\n";
    }
    report << "\n";
  }

  // loss curves
  for (const auto& entry : std::filesystem::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("train_log_", 0) == 0 && entry.path().extension() == ".jsonl") {
      TrainingLog log = read_training_log(entry.path());
      const std::string tag = name.substr(10, name.size() - 10 - 6);
      write_loss_plot(log, paths.plots_dir() / ("loss_" + tag + ".svg"));
      report << "Loss curve: `plots/loss_" << tag << ".svg`\n";
    }
  }
  report << "\n";

  report << "## Augmentation\n\n";
  std::map<std::string, int> technique_counts;
  long provenance_lines = 0;
  for (const auto& entry : std::filesystem::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.find("provenance") != std::string::npos &&
        entry.path().extension() == ".jsonl") {
      for (const ProvenanceEntry& p : read_provenance(entry.path())) {
        ++technique_counts[p.technique];
        ++provenance_lines;
      }
    }
  }
  if (provenance_lines == 0) {
    report << "(no augmentation provenance found)\n\n";
    missing.push_back("*provenance*.jsonl");
  } else {
    report << "| technique | count |\n|---|---|\n";
    for (const auto& [technique, count] : technique_counts)
      report << "| " << technique << " | " << count << " |\n";
    report << "| total | " << provenance_lines << " |\n\n";
  }

  if (!missing.empty()) {
    report << "## Missing artifacts\n\n";
    for (const std::string& name : missing) report << "- " << name << "\n";
  }
  std::cout << "report: wrote " << paths.report_file().string() << "\n";
  return kExitOk;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"schema-aware curriculum training pipeline for dialog state tracking"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_override;
  std::string mode = "curriculum";
  std::string split = "valid";
  std::string run_dir;
  std::int64_t seed_override = -1;

  auto add_common = [&](CLI::App* cmd, bool config_required = true) {
    cmd->add_option("--config", config_path, "pipeline config file")
        ->required(config_required);
    cmd->add_option("--seed", seed_override, "override the config seed");
    cmd->add_option("--out", out_override, "override the output directory");
  };

  CLI::App* ingest = app.add_subcommand("ingest", "load or generate the corpora");
  add_common(ingest);
  CLI::App* score = app.add_subcommand("score", "compute difficulty records");
  add_common(score);
  CLI::App* bucket = app.add_subcommand("bucket", "assign curriculum buckets");
  add_common(bucket);
  CLI::App* pretrain_cmd = app.add_subcommand("pretrain", "schema-aware pre-training");
  add_common(pretrain_cmd);
  CLI::App* train = app.add_subcommand("train", "curriculum or baseline training");
  add_common(train);
  train->add_option("--mode", mode, "curriculum | baseline")
      ->check(CLI::IsMember({"curriculum", "baseline"}));
  CLI::App* augment = app.add_subcommand("augment", "augment hard examples");
  add_common(augment);
  CLI::App* evaluate = app.add_subcommand("evaluate", "write predictions and JGA");
  add_common(evaluate);
  evaluate->add_option("--mode", mode, "curriculum | baseline")
      ->check(CLI::IsMember({"curriculum", "baseline"}));
  evaluate->add_option("--split", split, "train | valid")
      ->check(CLI::IsMember({"train", "valid"}));
  CLI::App* report = app.add_subcommand("report", "summarize a run directory");
  report->add_option("--config", config_path, "pipeline config file");
  report->add_option("--run", run_dir, "run directory (defaults to config out_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    auto load = [&]() {
      PipelineConfig config = load_pipeline_config(config_path);
      if (seed_override >= 0) config.seed = static_cast<std::uint64_t>(seed_override);
      if (!out_override.empty()) config.out_dir = out_override;
      return config;
    };
    if (ingest->parsed()) return cmd_ingest(load());
    if (score->parsed()) return cmd_score(load());
    if (bucket->parsed()) return cmd_bucket(load());
    if (pretrain_cmd->parsed()) return cmd_pretrain(load());
    if (train->parsed()) return cmd_train(load(), mode);
    if (augment->parsed()) return cmd_augment(load());
    if (evaluate->parsed()) return cmd_evaluate(load(), mode, split);
    if (report->parsed()) {
      std::filesystem::path dir = run_dir;
      if (dir.empty()) {
        if (config_path.empty())
          throw ConfigError("report needs --run or --config");
        dir = load().out_dir;
      }
      return cmd_report(dir);
    }
    throw ConfigError("no subcommand");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace saclog
