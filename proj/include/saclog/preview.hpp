#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "saclog/corpus.hpp"
#include "saclog/params.hpp"

namespace saclog {

struct PreviewConfig {
  int embed_dim = 32;              // hidden width d_h
  bool extended_classes = false;   // 6 operation classes instead of 4
  double mask_rate = 0.15;
  double aux_weight = 0.5;
  double learning_rate = 0.05;
  double init_scale = 0.1;
  int epochs = 3;
  int max_examples_per_epoch = 0;  // 0: use the whole corpus each epoch

  int n_classes() const { return extended_classes ? 6 : 4; }
};

// Slot operation classes; refer/dontcare only exist in the extended space.
enum class OpClass : int {
  kAdded = 0,
  kDeleted = 1,
  kChanged = 2,
  kNotMentioned = 3,
  kRefer = 4,
  kDontcare = 5,
};

struct TurnTargets {
  // slot name -> one 0/1 entry per serialized-context token
  std::map<std::string, std::vector<std::uint8_t>> spans;
  std::map<std::string, OpClass> classes;
  int unlocatable = 0;  // mentioned values with no context occurrence
};

// All context tokens of X_t in order: turn 1 system, turn 1 user, turn 2 ...
Tokens serialize_context(const DialogExample& example);

// Targets for every turn of one dialog, given its examples in turn order.
// Span rows mark the first context occurrence of each mentioned value; the
// class label comes from the Y_t vs Z_{t-1} diff.
std::vector<TurnTargets> derive_targets(
    const std::vector<const DialogExample*>& dialog_turns, const Schema& schema,
    bool extended_classes);

// softmax(query . value_j) convex combination. Throws on an empty sequence
// or width mismatch.
std::vector<double> attention(const std::vector<double>& query,
                              const std::vector<std::vector<double>>& values);

struct PreviewItem {
  const DialogExample* example = nullptr;
  const TurnTargets* targets = nullptr;
};

struct PreviewLosses {
  double seq = 0.0;
  double cls = 0.0;
  std::optional<double> aux;  // absent when no position was masked
};

// Token embeddings plus one neighborhood-mixing tanh layer, shared between
// the slot encoder and the context encoder, with a per-token sigmoid span
// head, a softmax operation-class head and a masked-token head.
class PreviewNet {
 public:
  PreviewNet(Schema schema, Vocabulary vocab, PreviewConfig config, std::uint64_t seed);

  // hidden states for a token sequence (the context encoder)
  std::vector<std::vector<double>> encode_tokens(const Tokens& tokens) const;
  // same encoder over the slot's name words, pooled to width d_h
  std::vector<double> slot_embedding(const SlotSpec& slot) const;

  std::vector<double> span_head(const std::vector<double>& slot_emb,
                                const std::vector<std::vector<double>>& states) const;
  std::vector<double> cls_head(const std::vector<double>& slot_emb,
                               const std::vector<std::vector<double>>& states) const;

  // L_seq and L_cls over a batch (forward only).
  PreviewLosses preview_losses(const std::vector<PreviewItem>& batch) const;

  // Masked-token loss over the batch; nullopt when nothing was masked.
  // Deterministic in mask_seed. Throws on an empty batch.
  std::optional<double> aux_lm_loss(const std::vector<PreviewItem>& batch,
                                    std::uint64_t mask_seed) const;

  // Total training loss (seq + cls + aux_weight * aux, aux over natural
  // examples only); fills `grad` (same layout as params().flat()) when given.
  double total_loss(const std::vector<PreviewItem>& batch, std::uint64_t mask_seed,
                    std::vector<double>* grad, PreviewLosses* breakdown = nullptr) const;

  void sgd_step(const std::vector<double>& grad);

  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }
  const Vocabulary& vocab() const { return vocab_; }
  const PreviewConfig& config() const { return config_; }
  const Schema& schema() const { return schema_; }

 private:
  struct EncodeCache;
  void encode_with_cache(const std::vector<int>& ids, EncodeCache& cache) const;
  void encoder_backward(const EncodeCache& cache,
                        const std::vector<std::vector<double>>& dstates,
                        std::vector<double>& grad) const;

  Schema schema_;
  Vocabulary vocab_;
  PreviewConfig config_;
  ParamStore params_;
};

struct PretrainReport {
  std::vector<double> epoch_seq;
  std::vector<double> epoch_cls;
  std::vector<double> epoch_aux;
  std::vector<double> epoch_total;
  long unlocatable_values = 0;
  long examples_seen = 0;
};

struct PretrainResult {
  PreviewNet net;
  PretrainReport report;
};

// Optimizes L_seq + L_cls (+ weighted L_aux on natural examples) for the
// configured epoch budget. Zero epochs returns the initialization unchanged.
PretrainResult pretrain(const Corpus& corpus, const PreviewConfig& config,
                        std::uint64_t seed);

void save_encoder(const PreviewNet& net, const std::filesystem::path& file);
void write_pretrain_report(const PretrainReport& report,
                           const std::filesystem::path& file);

}  // namespace saclog
