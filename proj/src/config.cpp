#include "saclog/config.hpp"

#include <fstream>

#include "json.hpp"

namespace saclog {

using nlohmann::json;

namespace {

// Reads section[key] when present, recording where the value came from.
template <typename T>
T pick(const json* section, const char* key, T fallback,
       std::map<std::string, std::string>& origins, const std::string& path) {
  if (section && section->contains(key)) {
    origins[path] = "file";
    try {
      return section->at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config field '" + path + "': " + e.what());
    }
  }
  origins[path] = "default";
  return fallback;
}

const json* sub(const json& root, const char* key) {
  if (!root.contains(key)) return nullptr;
  if (!root.at(key).is_object())
    throw ConfigError(std::string("config section '") + key + "' must be an object");
  return &root.at(key);
}

}  // namespace

void PipelineConfig::validate() const {
  scorer.weights.validate();
  if (scorer.k_folds < 2) throw ConfigError("scorer.k_folds must be >= 2");
  if (scorer.ensemble < 1) throw ConfigError("scorer.ensemble must be >= 1");
  if (scorer.cv_epochs < 1) throw ConfigError("scorer.cv_epochs must be >= 1");
  for (double m : scorer.maxima)
    if (m <= 0) throw ConfigError("scorer.maxima must be positive");
  if (n_buckets < 1) throw ConfigError("n_buckets must be >= 1");
  if (schedule.rule.max_epochs_per_stage < 1)
    throw ConfigError("scheduler.max_epochs_per_stage must be >= 1");
  if (schedule.rule.window_steps < 1)
    throw ConfigError("scheduler.window_steps must be >= 1");
  if (schedule.rule.loss_threshold <= 0)
    throw ConfigError("scheduler.loss_threshold must be positive");
  if (schedule.warmup_epochs < 0 || schedule.post_epochs < 0)
    throw ConfigError("scheduler epoch counts must be non-negative");
  if (model.embed_dim < 2) throw ConfigError("model.embed_dim must be >= 2");
  if (model.learning_rate <= 0) throw ConfigError("model.learning_rate must be positive");
  if (preview_enabled && preview.embed_dim != model.embed_dim)
    throw ConfigError("preview.embed_dim must match model.embed_dim");
  if (preview.epochs < 0) throw ConfigError("preview.epochs must be >= 0");
  if (preview.mask_rate < 0 || preview.mask_rate > 1)
    throw ConfigError("preview.mask_rate must be in [0,1]");
  if (review.mode != "post" && review.mode != "online" && review.mode != "off")
    throw ConfigError("review.mode must be post, online or off");
  if (review.fraction <= 0 || review.fraction > 1)
    throw ConfigError("review.fraction must be in (0,1]");
  if (review.budget < 0) throw ConfigError("review.budget must be >= 0");
  if (baseline_epochs < 1) throw ConfigError("baseline.epochs must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (data.source != "synthetic" && data.source != "files")
    throw ConfigError("data.source must be synthetic or files");
  if (data.source == "files") {
    if (!std::filesystem::exists(data.dialog_file))
      throw ConfigError("data.dialog_file does not exist: " +
                        data.dialog_file.string());
    if (!std::filesystem::exists(data.schema_file))
      throw ConfigError("data.schema_file does not exist: " +
                        data.schema_file.string());
    if (!data.valid_dialog_file.empty() &&
        !std::filesystem::exists(data.valid_dialog_file))
      throw ConfigError("data.valid_dialog_file does not exist: " +
                        data.valid_dialog_file.string());
  } else {
    if (data.dialogs_train < 1) throw ConfigError("data.dialogs_train must be >= 1");
    if (data.dialogs_valid < 0) throw ConfigError("data.dialogs_valid must be >= 0");
  }
}

PipelineConfig load_pipeline_config(const std::filesystem::path& config_file) {
  std::ifstream in(config_file);
  if (!in) throw ConfigError("cannot open config file " + config_file.string());
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw ConfigError(config_file.string() + ": " + e.what());
  }
  if (!root.is_object()) throw ConfigError(config_file.string() + ": not an object");

  PipelineConfig c;
  auto& origins = c.origins;
  c.seed = pick<std::uint64_t>(&root, "seed", 7, origins, "seed");
  c.workers = pick<int>(&root, "workers", 2, origins, "workers");
  c.out_dir = pick<std::string>(&root, "out_dir", "run", origins, "out_dir");

  const json* data = sub(root, "data");
  c.data.source = pick<std::string>(data, "source", "synthetic", origins, "data.source");
  c.data.dialog_file =
      pick<std::string>(data, "dialog_file", "", origins, "data.dialog_file");
  c.data.schema_file =
      pick<std::string>(data, "schema_file", "", origins, "data.schema_file");
  c.data.valid_dialog_file = pick<std::string>(data, "valid_dialog_file", "", origins,
                                               "data.valid_dialog_file");
  c.data.mark_synthetic =
      pick<bool>(data, "mark_synthetic", false, origins, "data.mark_synthetic");
  c.data.dialogs_train =
      pick<int>(data, "dialogs_train", 200, origins, "data.dialogs_train");
  c.data.dialogs_valid =
      pick<int>(data, "dialogs_valid", 60, origins, "data.dialogs_valid");
  c.data.dontcare_rate =
      pick<double>(data, "dontcare_rate", 0.10, origins, "data.dontcare_rate");

  const json* scorer = sub(root, "scorer");
  if (scorer && scorer->contains("alpha")) {
    origins["scorer.alpha"] = "file";
    auto alpha = scorer->at("alpha").get<std::vector<double>>();
    if (alpha.size() != 5) throw ConfigError("scorer.alpha must have 5 entries");
    for (std::size_t i = 0; i < 5; ++i) c.scorer.weights.alpha[i] = alpha[i];
  } else {
    origins["scorer.alpha"] = "default";
  }
  c.scorer.weights.invert_model_score = pick<bool>(
      scorer, "invert_model_score", true, origins, "scorer.invert_model_score");
  if (scorer && scorer->contains("maxima")) {
    origins["scorer.maxima"] = "file";
    auto maxima = scorer->at("maxima").get<std::vector<double>>();
    if (maxima.size() != 4) throw ConfigError("scorer.maxima must have 4 entries");
    for (std::size_t i = 0; i < 4; ++i) c.scorer.maxima[i] = maxima[i];
  } else {
    origins["scorer.maxima"] = "default";
  }
  c.scorer.k_folds = pick<int>(scorer, "k_folds", 5, origins, "scorer.k_folds");
  c.scorer.ensemble = pick<int>(scorer, "ensemble", 6, origins, "scorer.ensemble");
  c.scorer.cv_epochs = pick<int>(scorer, "cv_epochs", 3, origins, "scorer.cv_epochs");

  const json* scheduler = sub(root, "scheduler");
  c.n_buckets = pick<int>(scheduler, "n_buckets", 10, origins, "scheduler.n_buckets");
  c.schedule.rule.max_epochs_per_stage = pick<int>(
      scheduler, "max_epochs_per_stage", 3, origins, "scheduler.max_epochs_per_stage");
  // The type-level default threshold of 15 is tuned to full-scale model
  // losses; the reference model's loss scale needs its own default.
  c.schedule.rule.loss_threshold = pick<double>(scheduler, "loss_threshold", 3.0,
                                                origins, "scheduler.loss_threshold");
  c.schedule.rule.window_steps =
      pick<int>(scheduler, "window_steps", 100, origins, "scheduler.window_steps");
  c.schedule.warmup_epochs =
      pick<int>(scheduler, "warmup_epochs", 2, origins, "scheduler.warmup_epochs");
  c.schedule.post_epochs =
      pick<int>(scheduler, "post_epochs", 10, origins, "scheduler.post_epochs");

  const json* model = sub(root, "model");
  c.model.embed_dim = pick<int>(model, "embed_dim", 32, origins, "model.embed_dim");
  c.model.learning_rate =
      pick<double>(model, "learning_rate", 0.1, origins, "model.learning_rate");
  c.model.init_scale =
      pick<double>(model, "init_scale", 0.1, origins, "model.init_scale");

  const json* preview = sub(root, "preview");
  c.preview_enabled = pick<bool>(preview, "enabled", true, origins, "preview.enabled");
  c.preview.embed_dim =
      pick<int>(preview, "embed_dim", c.model.embed_dim, origins, "preview.embed_dim");
  c.preview.epochs = pick<int>(preview, "epochs", 3, origins, "preview.epochs");
  c.preview.mask_rate =
      pick<double>(preview, "mask_rate", 0.15, origins, "preview.mask_rate");
  c.preview.aux_weight =
      pick<double>(preview, "aux_weight", 0.5, origins, "preview.aux_weight");
  c.preview.learning_rate =
      pick<double>(preview, "learning_rate", 0.05, origins, "preview.learning_rate");
  c.preview.init_scale =
      pick<double>(preview, "init_scale", 0.1, origins, "preview.init_scale");
  c.preview.extended_classes = pick<bool>(preview, "extended_classes", false, origins,
                                          "preview.extended_classes");
  c.preview.max_examples_per_epoch = pick<int>(
      preview, "max_examples_per_epoch", 0, origins, "preview.max_examples_per_epoch");

  const json* review = sub(root, "review");
  c.review.mode = pick<std::string>(review, "mode", "post", origins, "review.mode");
  c.review.fraction =
      pick<double>(review, "fraction", 0.1, origins, "review.fraction");
  c.review.budget = pick<int>(review, "budget", 200, origins, "review.budget");
  c.review.extra_epochs =
      pick<int>(review, "extra_epochs", 3, origins, "review.extra_epochs");
  c.review.online_budget_per_event = pick<int>(
      review, "online_budget_per_event", 20, origins, "review.online_budget_per_event");

  const json* baseline = sub(root, "baseline");
  c.baseline_epochs = pick<int>(baseline, "epochs", 20, origins, "baseline.epochs");

  c.validate();
  return c;
}

void write_resolved_config(const PipelineConfig& c, const std::filesystem::path& file) {
  json values;
  values["seed"] = c.seed;
  values["workers"] = c.workers;
  values["out_dir"] = c.out_dir.string();
  values["data"] = {{"source", c.data.source},
                    {"dialog_file", c.data.dialog_file.string()},
                    {"schema_file", c.data.schema_file.string()},
                    {"valid_dialog_file", c.data.valid_dialog_file.string()},
                    {"mark_synthetic", c.data.mark_synthetic},
                    {"dialogs_train", c.data.dialogs_train},
                    {"dialogs_valid", c.data.dialogs_valid},
                    {"dontcare_rate", c.data.dontcare_rate}};
  values["scorer"] = {{"alpha", c.scorer.weights.alpha},
                      {"invert_model_score", c.scorer.weights.invert_model_score},
                      {"maxima", c.scorer.maxima},
                      {"k_folds", c.scorer.k_folds},
                      {"ensemble", c.scorer.ensemble},
                      {"cv_epochs", c.scorer.cv_epochs}};
  values["scheduler"] = {{"n_buckets", c.n_buckets},
                         {"max_epochs_per_stage", c.schedule.rule.max_epochs_per_stage},
                         {"loss_threshold", c.schedule.rule.loss_threshold},
                         {"window_steps", c.schedule.rule.window_steps},
                         {"warmup_epochs", c.schedule.warmup_epochs},
                         {"post_epochs", c.schedule.post_epochs}};
  values["model"] = {{"embed_dim", c.model.embed_dim},
                     {"learning_rate", c.model.learning_rate},
                     {"init_scale", c.model.init_scale}};
  values["preview"] = {{"enabled", c.preview_enabled},
                       {"embed_dim", c.preview.embed_dim},
                       {"epochs", c.preview.epochs},
                       {"mask_rate", c.preview.mask_rate},
                       {"aux_weight", c.preview.aux_weight},
                       {"learning_rate", c.preview.learning_rate},
                       {"init_scale", c.preview.init_scale},
                       {"extended_classes", c.preview.extended_classes},
                       {"max_examples_per_epoch", c.preview.max_examples_per_epoch},
                       {"hidden_activation", "tanh"}};
  values["review"] = {{"mode", c.review.mode},
                      {"fraction", c.review.fraction},
                      {"budget", c.review.budget},
                      {"extra_epochs", c.review.extra_epochs},
                      {"online_budget_per_event", c.review.online_budget_per_event}};
  values["baseline"] = {{"epochs", c.baseline_epochs}};

  json root;
  root["values"] = std::move(values);
  root["origins"] = c.origins;
  std::ofstream out(file);
  if (!out) throw DataError("cannot write resolved config " + file.string());
  out << root.dump(2) << "\n";
}

}  // namespace saclog
