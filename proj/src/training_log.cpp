#include "saclog/training_log.hpp"

#include <fstream>

#include "json.hpp"
#include "saclog/errors.hpp"

namespace saclog {

using nlohmann::json;

void TrainingLog::append(const TrainingLog& other) {
  epochs.insert(epochs.end(), other.epochs.begin(), other.epochs.end());
  steps.insert(steps.end(), other.steps.begin(), other.steps.end());
}

void write_training_log(const TrainingLog& log, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write training log " + file.string());
  for (const EpochRecord& r : log.epochs) {
    json line;
    line["stage"] = r.stage;
    line["epoch"] = r.epoch;
    line["mean_loss"] = r.mean_loss;
    line["steps"] = r.steps;
    line["converged"] = r.converged;
    line["cause"] = r.cause;
    out << line.dump() << "\n";
  }
}

void write_step_losses(const TrainingLog& log, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write step losses " + file.string());
  for (const StepRecord& r : log.steps) {
    json line;
    line["stage"] = r.stage;
    line["epoch"] = r.epoch;
    line["step"] = r.step;
    line["loss"] = r.loss;
    out << line.dump() << "\n";
  }
}

TrainingLog read_training_log(const std::filesystem::path& epoch_file,
                              const std::filesystem::path& step_file) {
  TrainingLog log;
  std::ifstream in(epoch_file);
  if (!in) throw DataError("cannot open training log " + epoch_file.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json r = json::parse(line);
    EpochRecord rec;
    rec.stage = r.at("stage").get<int>();
    rec.epoch = r.at("epoch").get<int>();
    rec.mean_loss = r.at("mean_loss").get<double>();
    rec.steps = r.at("steps").get<int>();
    rec.converged = r.at("converged").get<bool>();
    rec.cause = r.at("cause").get<std::string>();
    log.epochs.push_back(std::move(rec));
  }
  if (!step_file.empty()) {
    std::ifstream steps_in(step_file);
    if (!steps_in) throw DataError("cannot open step losses " + step_file.string());
    while (std::getline(steps_in, line)) {
      if (line.empty()) continue;
      json r = json::parse(line);
      log.steps.push_back({r.at("stage").get<int>(), r.at("epoch").get<int>(),
                           r.at("step").get<int>(), r.at("loss").get<double>()});
    }
  }
  return log;
}

}  // namespace saclog
