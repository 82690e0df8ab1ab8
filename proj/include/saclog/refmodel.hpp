#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "saclog/corpus.hpp"
#include "saclog/model.hpp"
#include "saclog/params.hpp"

namespace saclog {

struct RefModelConfig {
  int embed_dim = 32;
  double learning_rate = 0.1;
  double init_scale = 0.1;
};

// Small native DST model: shared token embeddings, a per-slot three-way
// operation classifier (none / dontcare / value), a categorical value scorer
// for closed slots and a current-turn token pointer for free-form slots.
// Trains with plain SGD; fast enough for the K-fold x ensemble scoring runs.
class ReferenceModel : public ModelOracle {
 public:
  ReferenceModel(Schema schema, Vocabulary vocab, RefModelConfig config,
                 std::uint64_t seed);

  double fit_epoch(const std::vector<const DialogExample*>& examples,
                   std::uint64_t seed, const StepLossFn& on_step = {}) override;
  StateMap predict_turn(const DialogExample& example) const override;
  double example_loss(const DialogExample& example) const override;
  std::unique_ptr<ModelOracle> clone_untrained(std::uint64_t seed) const override;

  // Copies embedding rows (matched by token string) from pre-trained encoder
  // parameters; widths must agree.
  void init_encoder_from(const ParamStore& encoder, const Vocabulary& encoder_vocab);

  void save(const std::filesystem::path& file) const;
  static std::unique_ptr<ReferenceModel> load(const std::filesystem::path& file,
                                              const Schema& schema);

  const Vocabulary& vocab() const { return vocab_; }
  const RefModelConfig& config() const { return config_; }
  const ParamStore& params() const { return params_; }

 private:
  enum Op : int { kOpNone = 0, kOpDontcare = 1, kOpValue = 2 };

  struct SlotRuntime {
    const SlotSpec* spec = nullptr;
    std::vector<int> name_word_ids;
    std::vector<std::vector<int>> candidate_token_ids;  // per value_set entry
  };
  struct TurnContext;
  struct SpanCandidate {
    std::size_t begin = 0;
    std::size_t length = 0;
    const std::string* surface = nullptr;
  };

  std::vector<SpanCandidate> find_known_spans(const Tokens& turn_tokens) const;

  void init_parameters(std::uint64_t seed);
  std::vector<int> turn_token_ids(const DialogExample& example) const;
  std::vector<double> average_embedding(const std::vector<int>& ids) const;
  int gold_op(const SlotSpec& slot, const DialogExample& example) const;
  TurnContext make_turn_context(const DialogExample& example) const;
  std::vector<std::size_t> slot_context_positions(const TurnContext& ctx,
                                                  const SlotRuntime& rt) const;
  std::vector<double> cue_proximity(const TurnContext& ctx,
                                    const SlotRuntime& rt) const;

  // Forward + loss; when `update` is set also backpropagates and applies SGD.
  double process_example(const DialogExample& example, bool update);

  Schema schema_;
  Vocabulary vocab_;
  RefModelConfig config_;
  ParamStore params_;
  std::vector<SlotRuntime> slots_;
  // span token key -> raw value string, for reconstructing surface forms
  std::map<std::string, std::string> value_surface_;
};

}  // namespace saclog
