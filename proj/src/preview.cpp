#include "saclog/preview.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "saclog/rng.hpp"

namespace saclog {

namespace {

constexpr const char* kEmbeddings = "embeddings";

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void softmax_inplace(std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - m);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

std::size_t find_subsequence(const Tokens& haystack, const Tokens& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return std::string::npos;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i)
    if (std::equal(needle.begin(), needle.end(), haystack.begin() + i)) return i;
  return std::string::npos;
}

}  // namespace

Tokens serialize_context(const DialogExample& example) {
  Tokens out;
  for (const Turn& turn : example.context) {
    out.insert(out.end(), turn.system.begin(), turn.system.end());
    out.insert(out.end(), turn.user.begin(), turn.user.end());
  }
  return out;
}

std::vector<TurnTargets> derive_targets(
    const std::vector<const DialogExample*>& dialog_turns, const Schema& schema,
    bool extended_classes) {
  std::vector<TurnTargets> out;
  StateMap z_prev;
  for (const DialogExample* example : dialog_turns) {
    TurnTargets targets;
    const Tokens context = serialize_context(*example);

    for (const SlotSpec& slot : schema.slots()) {
      OpClass label = OpClass::kNotMentioned;
      const bool deleted =
          std::find(example->explicit_none.begin(), example->explicit_none.end(),
                    slot.name) != example->explicit_none.end();
      auto it = example->turn_state.find(slot.name);
      if (deleted) {
        label = OpClass::kDeleted;
      } else if (it != example->turn_state.end()) {
        auto prev = z_prev.find(slot.name);
        if (extended_classes && it->second == kDontcareValue) {
          label = OpClass::kDontcare;
        } else if (prev == z_prev.end()) {
          label = OpClass::kAdded;
        } else if (prev->second != it->second) {
          label = OpClass::kChanged;
        }  // restating the same value is no operation
      }
      targets.classes[slot.name] = label;

      std::vector<std::uint8_t> row(context.size(), 0);
      if (it != example->turn_state.end() && it->second != kDontcareValue) {
        const Tokens value_tokens = tokenize(it->second);
        const std::size_t at = find_subsequence(context, value_tokens);
        if (at == std::string::npos) {
          ++targets.unlocatable;
        } else {
          for (std::size_t j = at; j < at + value_tokens.size(); ++j) row[j] = 1;
        }
      }
      targets.spans[slot.name] = std::move(row);
    }
    z_prev = accumulate_state(z_prev, example->turn_state, schema);
    out.push_back(std::move(targets));
  }
  return out;
}

std::vector<double> attention(const std::vector<double>& query,
                              const std::vector<std::vector<double>>& values) {
  if (values.empty()) throw DataError("attention: empty value sequence");
  std::vector<double> scores(values.size(), 0.0);
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (values[j].size() != query.size())
      throw DataError("attention: width mismatch");
    for (std::size_t i = 0; i < query.size(); ++i) scores[j] += query[i] * values[j][i];
  }
  softmax_inplace(scores);
  std::vector<double> out(query.size(), 0.0);
  for (std::size_t j = 0; j < values.size(); ++j)
    for (std::size_t i = 0; i < query.size(); ++i) out[i] += scores[j] * values[j][i];
  return out;
}

PreviewNet::PreviewNet(Schema schema, Vocabulary vocab, PreviewConfig config,
                       std::uint64_t seed)
    : schema_(std::move(schema)), vocab_(std::move(vocab)), config_(config) {
  const std::size_t d = static_cast<std::size_t>(config_.embed_dim);
  const std::size_t c = static_cast<std::size_t>(config_.n_classes());
  params_.add(kEmbeddings, vocab_.size(), d);
  params_.add("mix_w", d, 2 * d);
  params_.add("mix_b", 1, d);
  params_.add("span_w1", 2 * d, 2 * d);
  params_.add("span_b1", 1, 2 * d);
  params_.add("span_w2", 1, 2 * d);
  params_.add("span_b2", 1, 1);
  params_.add("cls_w1", 2 * d, 2 * d);
  params_.add("cls_b1", 1, 2 * d);
  params_.add("cls_w2", c, 2 * d);
  params_.add("cls_b2", 1, c);
  params_.add("lm_w", vocab_.size(), d);
  params_.add("lm_b", 1, vocab_.size());

  Rng rng(derive_seed(seed, "preview-init"));
  for (const char* name : {"embeddings", "mix_w", "span_w1", "span_w2", "cls_w1",
                           "cls_w2", "lm_w"})
    for (double& v : params_.values_of(name)) v = rng.gaussian() * config_.init_scale;
}

// Forward products kept for the backward pass.
struct PreviewNet::EncodeCache {
  std::vector<int> ids;
  std::vector<std::vector<double>> emb;       // embedding per position
  std::vector<std::vector<double>> neighbor;  // neighborhood mean per position
  std::vector<std::vector<double>> states;    // tanh outputs
};

void PreviewNet::encode_with_cache(const std::vector<int>& ids,
                                   EncodeCache& cache) const {
  const std::size_t d = static_cast<std::size_t>(config_.embed_dim);
  const std::size_t n = ids.size();
  cache.ids = ids;
  cache.emb.assign(n, std::vector<double>(d, 0.0));
  cache.neighbor.assign(n, std::vector<double>(d, 0.0));
  cache.states.assign(n, std::vector<double>(d, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    const double* row = params_.row(kEmbeddings, static_cast<std::size_t>(ids[j]));
    std::copy(row, row + d, cache.emb[j].begin());
  }
  const double* mix_w = params_.row("mix_w", 0);
  const double* mix_b = params_.row("mix_b", 0);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t lo = j > 0 ? j - 1 : 0;
    const std::size_t hi = std::min(n, j + 2);
    const double norm = 1.0 / static_cast<double>(hi - lo);
    for (std::size_t k = lo; k < hi; ++k)
      for (std::size_t i = 0; i < d; ++i) cache.neighbor[j][i] += cache.emb[k][i];
    for (std::size_t i = 0; i < d; ++i) cache.neighbor[j][i] *= norm;

    for (std::size_t r = 0; r < d; ++r) {
      const double* w = mix_w + r * 2 * d;
      double z = mix_b[r];
      for (std::size_t i = 0; i < d; ++i)
        z += w[i] * cache.emb[j][i] + w[d + i] * cache.neighbor[j][i];
      cache.states[j][r] = std::tanh(z);
    }
  }
}

// dstates -> parameter and embedding gradients via the mixing layer.
void PreviewNet::encoder_backward(const EncodeCache& cache,
                                  const std::vector<std::vector<double>>& dstates,
                                  std::vector<double>& grad) const {
  const std::size_t d = static_cast<std::size_t>(config_.embed_dim);
  const std::size_t n = cache.ids.size();
  const double* mix_w = params_.row("mix_w", 0);
  const std::size_t mix_w_off = params_.block("mix_w").offset;
  const std::size_t mix_b_off = params_.block("mix_b").offset;
  const std::size_t emb_off = params_.block(kEmbeddings).offset;

  std::vector<double> demb(n * d, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> dpre(d);
    for (std::size_t r = 0; r < d; ++r) {
      const double h = cache.states[j][r];
      dpre[r] = dstates[j][r] * (1.0 - h * h);
    }
    for (std::size_t r = 0; r < d; ++r) {
      const double g = dpre[r];
      if (g == 0.0) continue;
      double* dw = grad.data() + mix_w_off + r * 2 * d;
      for (std::size_t i = 0; i < d; ++i) {
        dw[i] += g * cache.emb[j][i];
        dw[d + i] += g * cache.neighbor[j][i];
      }
      grad[mix_b_off + r] += g;
    }
    // d[emb_j ; m_j] = mix_w^T dpre
    const std::size_t lo = j > 0 ? j - 1 : 0;
    const std::size_t hi = std::min(n, j + 2);
    const double norm = 1.0 / static_cast<double>(hi - lo);
    for (std::size_t r = 0; r < d; ++r) {
      const double g = dpre[r];
      if (g == 0.0) continue;
      const double* w = mix_w + r * 2 * d;
      for (std::size_t i = 0; i < d; ++i) {
        demb[j * d + i] += w[i] * g;
        const double dm = w[d + i] * g * norm;
        for (std::size_t k = lo; k < hi; ++k) demb[k * d + i] += dm;
      }
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    double* row = grad.data() + emb_off +
                  static_cast<std::size_t>(cache.ids[j]) * d;
    for (std::size_t i = 0; i < d; ++i) row[i] += demb[j * d + i];
  }
}

std::vector<std::vector<double>> PreviewNet::encode_tokens(const Tokens& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const std::string& t : tokens) ids.push_back(vocab_.id(t));
  EncodeCache cache;
  encode_with_cache(ids, cache);
  return cache.states;
}

std::vector<double> PreviewNet::slot_embedding(const SlotSpec& slot) const {
  const std::vector<std::vector<double>> states =
      encode_tokens(Tokens(slot.name_words.begin(), slot.name_words.end()));
  const std::size_t d = static_cast<std::size_t>(config_.embed_dim);
  std::vector<double> out(d, 0.0);
  if (states.empty()) return out;
  for (std::size_t i = 0; i < d; ++i)
    out[i] = 0.5 * (states.front()[i] + states.back()[i]);
  return out;
}

std::vector<double> PreviewNet::span_head(
    const std::vector<double>& slot_emb,
    const std::vector<std::vector<double>>& states) const {
  const std::size_t d = static_cast<std::size_t>(config_.embed_dim);
  if (slot_emb.size() != d) throw DataError("span_head: slot width mismatch");
  const double* w1 = params_.row("span_w1", 0);
  const double* b1 = params_.row("span_b1", 0);
  const double* w2 = params_.row("span_w2", 0);
  const double b2 = params_.row("span_b2", 0)[0];

  std::vector<double> out(states.size(), 0.0);
  for (std::size_t j = 0; j < states.size(); ++j) {
    if (states[j].size() != d) throw DataError("span_head: state width mismatch");
    double z = b2;
    for (std::size_t r = 0; r < 2 * d; ++r) {
      const double* row = w1 + r * 2 * d;
      double pre = b1[r];
      for (std::size_t i = 0; i < d; ++i)
        pre += row[i] * slot_emb[i] + row[d + i] * states[j][i];
      z += w2[r] * std::tanh(pre);
    }
    out[j] = sigmoid(z);
  }
  return out;
}

std::vector<double> PreviewNet::cls_head(
    const std::vector<double>& slot_emb,
    const std::vector<std::vector<double>>& states) const {
  const std::size_t d = static_cast<std::size_t>(config_.embed_dim);
  const std::size_t c = static_cast<std::size_t>(config_.n_classes());
  if (slot_emb.size() != d) throw DataError("cls_head: slot width mismatch");
  const std::vector<double> att = attention(slot_emb, states);
  const double* w1 = params_.row("cls_w1", 0);
  const double* b1 = params_.row("cls_b1", 0);
  const double* w2 = params_.row("cls_w2", 0);
  const double* b2 = params_.row("cls_b2", 0);

  std::vector<double> hidden(2 * d, 0.0);
  for (std::size_t r = 0; r < 2 * d; ++r) {
    const double* row = w1 + r * 2 * d;
    double pre = b1[r];
    for (std::size_t i = 0; i < d; ++i)
      pre += row[i] * slot_emb[i] + row[d + i] * att[i];
    hidden[r] = std::tanh(pre);
  }
  std::vector<double> logits(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    const double* row = w2 + k * 2 * d;
    double z = b2[k];
    for (std::size_t r = 0; r < 2 * d; ++r) z += row[r] * hidden[r];
    logits[k] = z;
  }
  softmax_inplace(logits);
  return logits;
}

PreviewLosses PreviewNet::preview_losses(const std::vector<PreviewItem>& batch) const {
  PreviewLosses out;
  total_loss(batch, 0, nullptr, &out);
  return out;
}

namespace {
// Mask positions for one example: deterministic in (seed, example id).
std::vector<std::size_t> mask_positions(const DialogExample& example,
                                        std::size_t n_tokens, double rate,
                                        std::uint64_t mask_seed) {
  Rng rng(derive_seed(mask_seed, "mask", fnv1a64(example.example_id)));
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < n_tokens; ++j)
    if (rng.uniform() < rate) out.push_back(j);
  return out;
}
}  // namespace

std::optional<double> PreviewNet::aux_lm_loss(const std::vector<PreviewItem>& batch,
                                              std::uint64_t mask_seed) const {
  if (batch.empty()) throw DataError("aux_lm_loss: empty batch");
  const std::size_t d = static_cast<std::size_t>(config_.embed_dim);
  const double* lm_w = params_.row("lm_w", 0);
  const double* lm_b = params_.row("lm_b", 0);

  double total = 0.0;
  long masked = 0;
  for (const PreviewItem& item : batch) {
    const Tokens context = serialize_context(*item.example);
    std::vector<int> ids;
    for (const std::string& t : context) ids.push_back(vocab_.id(t));
    const std::vector<std::size_t> positions =
        mask_positions(*item.example, ids.size(), config_.mask_rate, mask_seed);
    if (positions.empty()) continue;
    std::vector<int> masked_ids = ids;
    for (std::size_t p : positions) masked_ids[p] = Vocabulary::kMaskId;
    EncodeCache cache;
    encode_with_cache(masked_ids, cache);
    for (std::size_t p : positions) {
      std::vector<double> logits(vocab_.size(), 0.0);
      for (std::size_t v = 0; v < vocab_.size(); ++v) {
        const double* row = lm_w + v * d;
        double z = lm_b[v];
        for (std::size_t i = 0; i < d; ++i) z += row[i] * cache.states[p][i];
        logits[v] = z;
      }
      softmax_inplace(logits);
      total += -std::log(std::max(logits[static_cast<std::size_t>(ids[p])], 1e-12));
      ++masked;
    }
  }
  if (masked == 0) return std::nullopt;
  return total / static_cast<double>(masked);
}

double PreviewNet::total_loss(const std::vector<PreviewItem>& batch,
                              std::uint64_t mask_seed, std::vector<double>* grad,
                              PreviewLosses* breakdown) const {
  if (batch.empty()) throw DataError("total_loss: empty batch");
  const std::size_t d = static_cast<std::size_t>(config_.embed_dim);
  const std::size_t c = static_cast<std::size_t>(config_.n_classes());
  const double batch_norm = 1.0 / static_cast<double>(batch.size());
  const double slot_norm = 1.0 / static_cast<double>(schema_.slots().size());

  if (grad) grad->assign(params_.flat().size(), 0.0);

  const double* span_w1 = params_.row("span_w1", 0);
  const double* span_b1 = params_.row("span_b1", 0);
  const double* span_w2 = params_.row("span_w2", 0);
  const double span_b2 = params_.row("span_b2", 0)[0];
  const double* cls_w1 = params_.row("cls_w1", 0);
  const double* cls_b1 = params_.row("cls_b1", 0);
  const double* cls_w2 = params_.row("cls_w2", 0);
  const double* cls_b2 = params_.row("cls_b2", 0);
  const double* lm_w = params_.row("lm_w", 0);
  const double* lm_b = params_.row("lm_b", 0);

  auto off = [&](const char* name) { return params_.block(name).offset; };

  double loss_seq = 0.0;
  double loss_cls = 0.0;
  double loss_aux = 0.0;
  long masked_total = 0;

  // First pass to know the aux normalizer (masked position count).
  std::vector<std::vector<std::size_t>> aux_positions(batch.size());
  std::vector<std::vector<int>> aux_ids(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const PreviewItem& item = batch[b];
    if (item.example->synthetic) continue;  // natural dialogs only
    const Tokens context = serialize_context(*item.example);
    std::vector<int> ids;
    for (const std::string& t : context) ids.push_back(vocab_.id(t));
    aux_ids[b] = std::move(ids);
    aux_positions[b] = mask_positions(*item.example, aux_ids[b].size(),
                                      config_.mask_rate, mask_seed);
    masked_total += static_cast<long>(aux_positions[b].size());
  }

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const PreviewItem& item = batch[b];
    const Tokens context = serialize_context(*item.example);
    std::vector<int> ids;
    for (const std::string& t : context) ids.push_back(vocab_.id(t));
    EncodeCache ctx_cache;
    encode_with_cache(ids, ctx_cache);
    const std::size_t L = ids.size();
    if (L == 0) continue;
    std::vector<std::vector<double>> dctx(L, std::vector<double>(d, 0.0));

    // Shared token part of the span head's hidden pre-activation.
    std::vector<std::vector<double>> span_token_part(L, std::vector<double>(2 * d, 0.0));
    for (std::size_t j = 0; j < L; ++j)
      for (std::size_t r = 0; r < 2 * d; ++r) {
        const double* row = span_w1 + r * 2 * d;
        double z = 0.0;
        for (std::size_t i = 0; i < d; ++i) z += row[d + i] * ctx_cache.states[j][i];
        span_token_part[j][r] = z;
      }

    for (const SlotSpec& slot : schema_.slots()) {
      // Slot encoder pass (weight-shared with the context encoder).
      std::vector<int> slot_ids;
      for (const std::string& w : slot.name_words) slot_ids.push_back(vocab_.id(w));
      EncodeCache slot_cache;
      encode_with_cache(slot_ids, slot_cache);
      std::vector<double> e_s(d, 0.0);
      for (std::size_t i = 0; i < d; ++i)
        e_s[i] = 0.5 * (slot_cache.states.front()[i] + slot_cache.states.back()[i]);
      std::vector<double> de_s(d, 0.0);

      // slot part of the span hidden pre-activation
      std::vector<double> span_slot_part(2 * d, 0.0);
      for (std::size_t r = 0; r < 2 * d; ++r) {
        const double* row = span_w1 + r * 2 * d;
        double z = span_b1[r];
        for (std::size_t i = 0; i < d; ++i) z += row[i] * e_s[i];
        span_slot_part[r] = z;
      }

      // ---- span loss over every context token ----
      const std::vector<std::uint8_t>& span_row = item.targets->spans.at(slot.name);
      if (span_row.size() != L)
        throw DataError("span targets misaligned for '" + item.example->example_id +
                        "' slot '" + slot.name + "'");
      const double token_norm = 1.0 / static_cast<double>(L);
      std::vector<double> dpre_slot_sum(2 * d, 0.0);
      for (std::size_t j = 0; j < L; ++j) {
        std::vector<double> hidden(2 * d);
        double z = span_b2;
        for (std::size_t r = 0; r < 2 * d; ++r) {
          hidden[r] = std::tanh(span_slot_part[r] + span_token_part[j][r]);
          z += span_w2[r] * hidden[r];
        }
        const double p = sigmoid(z);
        const double y = span_row[j] ? 1.0 : 0.0;
        loss_seq += batch_norm * slot_norm * token_norm *
                    -(y * std::log(std::max(p, 1e-12)) +
                      (1.0 - y) * std::log(std::max(1.0 - p, 1e-12)));
        if (grad) {
          const double dz = batch_norm * slot_norm * token_norm * (p - y);
          double* g_w2 = grad->data() + off("span_w2");
          (*grad)[off("span_b2")] += dz;
          std::vector<double> dpre(2 * d);
          for (std::size_t r = 0; r < 2 * d; ++r) {
            g_w2[r] += dz * hidden[r];
            dpre[r] = dz * span_w2[r] * (1.0 - hidden[r] * hidden[r]);
            dpre_slot_sum[r] += dpre[r];
          }
          // token side: dW1 right half and dstate
          double* g_w1 = grad->data() + off("span_w1");
          for (std::size_t r = 0; r < 2 * d; ++r) {
            const double g = dpre[r];
            if (g == 0.0) continue;
            const double* row = span_w1 + r * 2 * d;
            double* g_row = g_w1 + r * 2 * d;
            for (std::size_t i = 0; i < d; ++i) {
              g_row[d + i] += g * ctx_cache.states[j][i];
              dctx[j][i] += row[d + i] * g;
            }
          }
        }
      }
      if (grad) {
        // slot side of the span head, summed over tokens
        double* g_w1 = grad->data() + off("span_w1");
        double* g_b1 = grad->data() + off("span_b1");
        for (std::size_t r = 0; r < 2 * d; ++r) {
          const double g = dpre_slot_sum[r];
          if (g == 0.0) continue;
          const double* row = span_w1 + r * 2 * d;
          double* g_row = g_w1 + r * 2 * d;
          for (std::size_t i = 0; i < d; ++i) {
            g_row[i] += g * e_s[i];
            de_s[i] += row[i] * g;
          }
          g_b1[r] += g;
        }
      }

      // ---- classification loss ----
      // attention over context states with the slot embedding as query
      std::vector<double> att_scores(L, 0.0);
      for (std::size_t j = 0; j < L; ++j)
        for (std::size_t i = 0; i < d; ++i)
          att_scores[j] += e_s[i] * ctx_cache.states[j][i];
      std::vector<double> att_weights = att_scores;
      softmax_inplace(att_weights);
      std::vector<double> att(d, 0.0);
      for (std::size_t j = 0; j < L; ++j)
        for (std::size_t i = 0; i < d; ++i)
          att[i] += att_weights[j] * ctx_cache.states[j][i];

      std::vector<double> hidden(2 * d, 0.0), pre(2 * d, 0.0);
      for (std::size_t r = 0; r < 2 * d; ++r) {
        const double* row = cls_w1 + r * 2 * d;
        double z = cls_b1[r];
        for (std::size_t i = 0; i < d; ++i) z += row[i] * e_s[i] + row[d + i] * att[i];
        pre[r] = z;
        hidden[r] = std::tanh(z);
      }
      std::vector<double> logits(c, 0.0);
      for (std::size_t k = 0; k < c; ++k) {
        const double* row = cls_w2 + k * 2 * d;
        double z = cls_b2[k];
        for (std::size_t r = 0; r < 2 * d; ++r) z += row[r] * hidden[r];
        logits[k] = z;
      }
      std::vector<double> probs = logits;
      softmax_inplace(probs);
      const int label = static_cast<int>(item.targets->classes.at(slot.name));
      if (label >= static_cast<int>(c))
        throw DataError("class label outside the configured class count");
      loss_cls += batch_norm * slot_norm *
                  -std::log(std::max(probs[static_cast<std::size_t>(label)], 1e-12));

      if (grad) {
        std::vector<double> dlogits = probs;
        dlogits[static_cast<std::size_t>(label)] -= 1.0;
        for (double& v : dlogits) v *= batch_norm * slot_norm;

        double* g_w2 = grad->data() + off("cls_w2");
        double* g_b2 = grad->data() + off("cls_b2");
        std::vector<double> dhidden(2 * d, 0.0);
        for (std::size_t k = 0; k < c; ++k) {
          const double gk = dlogits[k];
          const double* row = cls_w2 + k * 2 * d;
          double* g_row = g_w2 + k * 2 * d;
          for (std::size_t r = 0; r < 2 * d; ++r) {
            g_row[r] += gk * hidden[r];
            dhidden[r] += row[r] * gk;
          }
          g_b2[k] += gk;
        }
        std::vector<double> datt(d, 0.0);
        double* g_w1 = grad->data() + off("cls_w1");
        double* g_b1 = grad->data() + off("cls_b1");
        for (std::size_t r = 0; r < 2 * d; ++r) {
          const double g = dhidden[r] * (1.0 - hidden[r] * hidden[r]);
          if (g == 0.0) continue;
          const double* row = cls_w1 + r * 2 * d;
          double* g_row = g_w1 + r * 2 * d;
          for (std::size_t i = 0; i < d; ++i) {
            g_row[i] += g * e_s[i];
            g_row[d + i] += g * att[i];
            de_s[i] += row[i] * g;
            datt[i] += row[d + i] * g;
          }
          g_b1[r] += g;
        }
        // attention backward
        std::vector<double> dweights(L, 0.0);
        for (std::size_t j = 0; j < L; ++j) {
          for (std::size_t i = 0; i < d; ++i)
            dweights[j] += datt[i] * ctx_cache.states[j][i];
          for (std::size_t i = 0; i < d; ++i)
            dctx[j][i] += att_weights[j] * datt[i];
        }
        double weighted = 0.0;
        for (std::size_t j = 0; j < L; ++j) weighted += att_weights[j] * dweights[j];
        for (std::size_t j = 0; j < L; ++j) {
          const double dscore = att_weights[j] * (dweights[j] - weighted);
          for (std::size_t i = 0; i < d; ++i) {
            de_s[i] += dscore * ctx_cache.states[j][i];
            dctx[j][i] += dscore * e_s[i];
          }
        }
      }

      if (grad) {
        // slot encoder backward: e_s = (first + last)/2
        std::vector<std::vector<double>> dslot(slot_ids.size(),
                                               std::vector<double>(d, 0.0));
        for (std::size_t i = 0; i < d; ++i) {
          dslot.front()[i] += 0.5 * de_s[i];
          dslot.back()[i] += 0.5 * de_s[i];
        }
        encoder_backward(slot_cache, dslot, *grad);
      }
    }

    if (grad) encoder_backward(ctx_cache, dctx, *grad);

    // ---- auxiliary masked-token loss ----
    if (!aux_positions[b].empty() && masked_total > 0) {
      const double aux_norm =
          config_.aux_weight / static_cast<double>(masked_total);
      std::vector<int> masked_ids = aux_ids[b];
      for (std::size_t p : aux_positions[b]) masked_ids[p] = Vocabulary::kMaskId;
      EncodeCache aux_cache;
      encode_with_cache(masked_ids, aux_cache);
      std::vector<std::vector<double>> daux(masked_ids.size(),
                                            std::vector<double>(d, 0.0));
      for (std::size_t p : aux_positions[b]) {
        std::vector<double> logits(vocab_.size(), 0.0);
        for (std::size_t v = 0; v < vocab_.size(); ++v) {
          const double* row = lm_w + v * d;
          double z = lm_b[v];
          for (std::size_t i = 0; i < d; ++i) z += row[i] * aux_cache.states[p][i];
          logits[v] = z;
        }
        std::vector<double> probs = logits;
        softmax_inplace(probs);
        const std::size_t truth = static_cast<std::size_t>(aux_ids[b][p]);
        loss_aux += -std::log(std::max(probs[truth], 1e-12)) /
                    static_cast<double>(masked_total);
        if (grad) {
          std::vector<double> dlogits = probs;
          dlogits[truth] -= 1.0;
          double* g_lm_w = grad->data() + off("lm_w");
          double* g_lm_b = grad->data() + off("lm_b");
          for (std::size_t v = 0; v < vocab_.size(); ++v) {
            const double gv = dlogits[v] * aux_norm;
            if (gv == 0.0) continue;
            const double* row = lm_w + v * d;
            double* g_row = g_lm_w + v * d;
            for (std::size_t i = 0; i < d; ++i) {
              g_row[i] += gv * aux_cache.states[p][i];
              daux[p][i] += gv * row[i];
            }
            g_lm_b[v] += gv;
          }
        }
      }
      if (grad) encoder_backward(aux_cache, daux, *grad);
    }
  }

  if (breakdown) {
    breakdown->seq = loss_seq;
    breakdown->cls = loss_cls;
    breakdown->aux = masked_total > 0 ? std::optional<double>(loss_aux) : std::nullopt;
  }
  double total = loss_seq + loss_cls;
  if (masked_total > 0) total += config_.aux_weight * loss_aux;
  return total;
}

void PreviewNet::sgd_step(const std::vector<double>& grad) {
  std::vector<double>& flat = params_.flat();
  if (grad.size() != flat.size()) throw DataError("gradient size mismatch");
  for (std::size_t i = 0; i < flat.size(); ++i)
    flat[i] -= config_.learning_rate * grad[i];
}

PretrainResult pretrain(const Corpus& corpus, const PreviewConfig& config,
                        std::uint64_t seed) {
  if (corpus.examples.empty()) throw DataError("pretrain: empty corpus");
  PreviewNet net(corpus.schema, Vocabulary::build(corpus), config,
                 derive_seed(seed, "pretrain-init"));
  PretrainReport report;

  // Targets per dialog, derived once.
  std::map<std::string, std::vector<const DialogExample*>> dialogs;
  for (const DialogExample& e : corpus.examples)
    dialogs[e.dialog_id].push_back(&e);
  std::map<std::string, TurnTargets> targets_by_id;
  for (auto& [dialog_id, turns] : dialogs) {
    std::sort(turns.begin(), turns.end(),
              [](const DialogExample* a, const DialogExample* b) {
                return a->turn_count() < b->turn_count();
              });
    std::vector<TurnTargets> targets =
        derive_targets(turns, corpus.schema, config.extended_classes);
    for (std::size_t i = 0; i < turns.size(); ++i) {
      report.unlocatable_values += targets[i].unlocatable;
      targets_by_id[turns[i]->example_id] = std::move(targets[i]);
    }
  }

  std::vector<PreviewItem> items;
  for (const DialogExample& e : corpus.examples)
    items.push_back({&e, &targets_by_id.at(e.example_id)});

  std::vector<double> grad;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(seed, "pretrain-order", static_cast<std::uint64_t>(epoch)));
    std::vector<PreviewItem> order = items;
    rng.shuffle(order);
    if (config.max_examples_per_epoch > 0 &&
        order.size() > static_cast<std::size_t>(config.max_examples_per_epoch))
      order.resize(static_cast<std::size_t>(config.max_examples_per_epoch));

    double sum_seq = 0.0, sum_cls = 0.0, sum_aux = 0.0, sum_total = 0.0;
    long aux_batches = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      PreviewLosses breakdown;
      const double total = net.total_loss(
          {order[i]},
          derive_seed(seed, "pretrain-mask",
                      static_cast<std::uint64_t>(epoch) * 1000003ULL + i),
          &grad, &breakdown);
      net.sgd_step(grad);
      sum_seq += breakdown.seq;
      sum_cls += breakdown.cls;
      sum_total += total;
      if (breakdown.aux) {
        sum_aux += *breakdown.aux;
        ++aux_batches;
      }
      ++report.examples_seen;
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, order.size()));
    report.epoch_seq.push_back(sum_seq / n);
    report.epoch_cls.push_back(sum_cls / n);
    report.epoch_aux.push_back(aux_batches ? sum_aux / aux_batches : 0.0);
    report.epoch_total.push_back(sum_total / n);
  }
  return {std::move(net), std::move(report)};
}

void save_encoder(const PreviewNet& net, const std::filesystem::path& file) {
  std::map<std::string, std::string> aux;
  aux["kind"] = "preview-encoder";
  aux["embed_dim"] = std::to_string(net.config().embed_dim);
  aux["n_classes"] = std::to_string(net.config().n_classes());
  aux["hidden_activation"] = "tanh";
  save_params(net.params(), net.vocab(), aux, file);
}

void write_pretrain_report(const PretrainReport& report,
                           const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write pretrain report " + file.string());
  out << "epoch  seq_loss  cls_loss  aux_loss  total\n";
  for (std::size_t i = 0; i < report.epoch_total.size(); ++i)
    out << i << "  " << report.epoch_seq[i] << "  " << report.epoch_cls[i] << "  "
        << report.epoch_aux[i] << "  " << report.epoch_total[i] << "\n";
  out << "unlocatable_values " << report.unlocatable_values << "\n";
  out << "examples_seen " << report.examples_seen << "\n";
}

}  // namespace saclog
