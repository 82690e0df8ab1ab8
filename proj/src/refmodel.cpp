#include "saclog/refmodel.hpp"

#include <algorithm>
#include <cmath>

#include "saclog/rng.hpp"

namespace saclog {

namespace {

constexpr const char* kEmbeddings = "embeddings";
constexpr int kTokenContextRadius = 3;  // window around a candidate occurrence

void softmax_inplace(std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - m);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::string span_key(const Tokens& tokens, std::size_t begin, std::size_t end) {
  std::string key;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) key.push_back('\x1f');
    key += tokens[i];
  }
  return key;
}

std::size_t find_subsequence(const Tokens& haystack, const Tokens& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return std::string::npos;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i)
    if (std::equal(needle.begin(), needle.end(), haystack.begin() + i)) return i;
  return std::string::npos;
}

}  // namespace

ReferenceModel::ReferenceModel(Schema schema, Vocabulary vocab, RefModelConfig config,
                               std::uint64_t seed)
    : schema_(std::move(schema)), vocab_(std::move(vocab)), config_(config) {
  const std::size_t d = static_cast<std::size_t>(config_.embed_dim);
  params_.add(kEmbeddings, vocab_.size(), d);
  for (const SlotSpec& slot : schema_.slots()) {
    params_.add("op_w:" + slot.name, 3, 2 * d);  // [turn feature ; slot context]
    params_.add("op_b:" + slot.name, 1, 3);
  }
  params_.add("val_w", d, d);   // turn feature -> value alignment
  params_.add("val_b", 1, d);
  params_.add("ctx_w", d, d);   // slot embedding -> expected value context
  params_.add("ctx_b", 1, d);
  params_.add("ptr_w", d, d);   // slot embedding -> token scorer
  params_.add("ptr_b", 1, d);
  params_.add("ptr2_w", d, d);  // slot embedding -> token-context scorer
  params_.add("ptr2_b", 1, d);
  // scalar weights on the cue-proximity feature (same-segment distance to a
  // slot name word)
  params_.add("ptr_prox", 1, 1);
  params_.add("val_prox", 1, 1);

  for (const SlotSpec& slot : schema_.slots()) {
    SlotRuntime rt;
    rt.spec = &slot;
    for (const std::string& w : slot.name_words) rt.name_word_ids.push_back(vocab_.id(w));
    for (const std::string& v : slot.value_set) {
      std::vector<int> ids;
      Tokens toks = tokenize(v);
      for (const std::string& t : toks) ids.push_back(vocab_.id(t));
      rt.candidate_token_ids.push_back(std::move(ids));
      value_surface_.emplace(span_key(toks, 0, toks.size()), v);
    }
    slots_.push_back(std::move(rt));
  }
  init_parameters(seed);
}

void ReferenceModel::init_parameters(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "refmodel-init"));
  auto fill = [&](const std::string& name) {
    for (double& v : params_.values_of(name)) v = rng.gaussian() * config_.init_scale;
  };
  fill(kEmbeddings);
  for (const SlotSpec& slot : schema_.slots()) fill("op_w:" + slot.name);
  fill("val_w");
  fill("ctx_w");
  fill("ptr_w");
  fill("ptr2_w");
  // biases stay zero; proximity starts as a mild positive prior
  params_.row("ptr_prox", 0)[0] = 1.0;
  params_.row("val_prox", 0)[0] = 1.0;
}

std::vector<int> ReferenceModel::turn_token_ids(const DialogExample& example) const {
  const Turn& turn = example.current_turn();
  std::vector<int> ids;
  ids.reserve(turn.system.size() + turn.user.size());
  for (const std::string& t : turn.system) ids.push_back(vocab_.id(t));
  for (const std::string& t : turn.user) ids.push_back(vocab_.id(t));
  return ids;
}

std::vector<double> ReferenceModel::average_embedding(const std::vector<int>& ids) const {
  const std::size_t d = static_cast<std::size_t>(config_.embed_dim);
  std::vector<double> out(d, 0.0);
  if (ids.empty()) return out;
  for (int id : ids) {
    const double* row = params_.row(kEmbeddings, static_cast<std::size_t>(id));
    for (std::size_t i = 0; i < d; ++i) out[i] += row[i];
  }
  for (double& v : out) v /= static_cast<double>(ids.size());
  return out;
}

int ReferenceModel::gold_op(const SlotSpec& slot, const DialogExample& example) const {
  auto it = example.turn_state.find(slot.name);
  if (it == example.turn_state.end()) return kOpNone;
  return it->second == kDontcareValue ? kOpDontcare : kOpValue;
}

// Everything the loss and its gradient need, computed before any update.
struct ReferenceModel::TurnContext {
  std::vector<int> ids;            // turn token ids
  Tokens tokens;                   // turn tokens as strings
  std::vector<double> f;           // mean embedding of the turn
  // Window positions (excluding the center) per token, shared by all slots.
  std::vector<std::vector<std::size_t>> window;
  std::vector<std::vector<double>> window_avg;  // mean embedding per window
  std::vector<int> segment;        // clause id; breaks at conjunctions and
                                   // punctuation and at the system/user seam
};

ReferenceModel::TurnContext ReferenceModel::make_turn_context(
    const DialogExample& example) const {
  TurnContext ctx;
  ctx.ids = turn_token_ids(example);
  const Turn& turn = example.current_turn();
  ctx.tokens.reserve(ctx.ids.size());
  ctx.tokens.insert(ctx.tokens.end(), turn.system.begin(), turn.system.end());
  ctx.tokens.insert(ctx.tokens.end(), turn.user.begin(), turn.user.end());
  ctx.f = average_embedding(ctx.ids);

  const std::size_t n = ctx.ids.size();
  ctx.segment.resize(n, 0);
  {
    int seg = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == turn.system.size() && j > 0) ++seg;  // system/user seam
      ctx.segment[j] = seg;
      const std::string& t = ctx.tokens[j];
      if (t == "and" || t == "," || t == "." || t == "?" || t == "!" || t == ";")
        ++seg;
    }
  }
  // Context of a token is the rest of its segment; the segment always holds
  // the cue words that bind values to slots.
  ctx.window.resize(n);
  ctx.window_avg.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < n; ++p)
      if (p != j && ctx.segment[p] == ctx.segment[j]) ctx.window[j].push_back(p);
    std::vector<int> ids;
    for (std::size_t p : ctx.window[j]) ids.push_back(ctx.ids[p]);
    ctx.window_avg[j] = average_embedding(ids);
  }
  return ctx;
}

// The rest of every segment in which one of the slot's name words occurs.
std::vector<std::size_t> ReferenceModel::slot_context_positions(
    const TurnContext& ctx, const SlotRuntime& rt) const {
  std::vector<std::size_t> name_positions;
  std::vector<int> segments;
  for (std::size_t j = 0; j < ctx.tokens.size(); ++j) {
    if (std::find(rt.spec->name_words.begin(), rt.spec->name_words.end(),
                  ctx.tokens[j]) == rt.spec->name_words.end())
      continue;
    name_positions.push_back(j);
    if (std::find(segments.begin(), segments.end(), ctx.segment[j]) == segments.end())
      segments.push_back(ctx.segment[j]);
  }
  std::vector<std::size_t> positions;
  for (std::size_t p = 0; p < ctx.tokens.size(); ++p) {
    if (std::find(segments.begin(), segments.end(), ctx.segment[p]) == segments.end())
      continue;
    if (std::find(name_positions.begin(), name_positions.end(), p) !=
        name_positions.end())
      continue;
    positions.push_back(p);
  }
  return positions;
}

// 1/(1 + distance) to the nearest name word of the slot within the same
// segment; 0 when the slot is not cued there.
std::vector<double> ReferenceModel::cue_proximity(const TurnContext& ctx,
                                                  const SlotRuntime& rt) const {
  std::vector<std::size_t> cues;
  for (std::size_t j = 0; j < ctx.tokens.size(); ++j)
    if (std::find(rt.spec->name_words.begin(), rt.spec->name_words.end(),
                  ctx.tokens[j]) != rt.spec->name_words.end())
      cues.push_back(j);
  std::vector<double> prox(ctx.tokens.size(), 0.0);
  if (cues.empty()) return prox;
  for (std::size_t j = 0; j < ctx.tokens.size(); ++j) {
    double best = 0.0;
    for (std::size_t w : cues) {
      if (ctx.segment[j] != ctx.segment[w]) continue;
      const double dist = j > w ? static_cast<double>(j - w)
                                : static_cast<double>(w - j);
      best = std::max(best, 1.0 / (1.0 + dist));
    }
    prox[j] = best;
  }
  return prox;
}

std::vector<ReferenceModel::SpanCandidate> ReferenceModel::find_known_spans(
    const Tokens& turn_tokens) const {
  std::vector<SpanCandidate> out;
  for (const auto& [key, surface] : value_surface_) {
    Tokens needle;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= key.size(); ++i) {
      if (i == key.size() || key[i] == '\x1f') {
        needle.push_back(key.substr(start, i - start));
        start = i + 1;
      }
    }
    if (needle.empty() || needle.size() > turn_tokens.size()) continue;
    for (std::size_t i = 0; i + needle.size() <= turn_tokens.size(); ++i)
      if (std::equal(needle.begin(), needle.end(), turn_tokens.begin() + i))
        out.push_back({i, needle.size(), &surface});
  }
  return out;
}

double ReferenceModel::process_example(const DialogExample& example, bool update) {
  const std::size_t d = static_cast<std::size_t>(config_.embed_dim);
  const double lr = config_.learning_rate;

  const TurnContext ctx = make_turn_context(example);
  const std::size_t J = ctx.ids.size();
  const std::vector<SpanCandidate> span_candidates = find_known_spans(ctx.tokens);

  const double* val_w = params_.row("val_w", 0);
  const double* val_b = params_.row("val_b", 0);
  const double* ctx_w = params_.row("ctx_w", 0);
  const double* ctx_b = params_.row("ctx_b", 0);
  const double* ptr_w = params_.row("ptr_w", 0);
  const double* ptr_b = params_.row("ptr_b", 0);
  const double* ptr2_w = params_.row("ptr2_w", 0);
  const double* ptr2_b = params_.row("ptr2_b", 0);
  const double ptr_prox_w = params_.row("ptr_prox", 0)[0];
  const double val_prox_w = params_.row("val_prox", 0)[0];

  auto matvec = [&](const double* w, const double* b, const std::vector<double>& x,
                    std::vector<double>& out) {
    out.assign(d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
      double z = b ? b[r] : 0.0;
      const double* row = w + r * d;
      for (std::size_t i = 0; i < d; ++i) z += row[i] * x[i];
      out[r] = z;
    }
  };
  // y += W^T g
  auto add_wt_grad = [&](const double* w, const std::vector<double>& g,
                         std::vector<double>& y) {
    for (std::size_t r = 0; r < d; ++r) {
      const double* row = w + r * d;
      for (std::size_t i = 0; i < d; ++i) y[i] += row[i] * g[r];
    }
  };

  // Deferred gradient buffers for shared blocks and embedding-dependent
  // features; applied after the full backward pass so every gradient is
  // taken at the forward-time parameters.
  std::vector<double> df(d, 0.0);
  double dptr_prox = 0.0, dval_prox = 0.0;
  std::vector<double> dval_w, dval_b, dctx_w, dctx_b, dptr_w, dptr_b, dptr2_w, dptr2_b;
  auto ensure = [&](std::vector<double>& buf, std::size_t n) {
    if (buf.empty()) buf.assign(n, 0.0);
  };
  // embedding row id -> accumulated delta
  std::vector<std::pair<int, std::vector<double>>> emb_deltas;
  auto emb_delta = [&](int row_id) -> std::vector<double>& {
    for (auto& [id, vec] : emb_deltas)
      if (id == row_id) return vec;
    emb_deltas.emplace_back(row_id, std::vector<double>(d, 0.0));
    return emb_deltas.back().second;
  };
  auto spread_rows = [&](const std::vector<int>& ids, const std::vector<double>& g) {
    if (ids.empty()) return;
    const double scale = 1.0 / static_cast<double>(ids.size());
    for (int id : ids) {
      std::vector<double>& delta = emb_delta(id);
      for (std::size_t i = 0; i < d; ++i) delta[i] += scale * g[i];
    }
  };
  auto spread_positions = [&](const std::vector<std::size_t>& positions,
                              const std::vector<double>& g) {
    if (positions.empty()) return;
    const double scale = 1.0 / static_cast<double>(positions.size());
    for (std::size_t p : positions) {
      std::vector<double>& delta = emb_delta(ctx.ids[p]);
      for (std::size_t i = 0; i < d; ++i) delta[i] += scale * g[i];
    }
  };

  double op_loss = 0.0;
  double resolver_loss = 0.0;
  int resolver_terms = 0;
  double pointer_loss = 0.0;
  int pointer_terms = 0;

  for (const SlotRuntime& rt : slots_) {
    const SlotSpec& slot = *rt.spec;
    const int gold = gold_op(slot, example);

    // ---- operation classifier over [f ; slot context] ----
    const std::vector<std::size_t> slot_ctx_positions = slot_context_positions(ctx, rt);
    std::vector<int> slot_ctx_ids;
    for (std::size_t p : slot_ctx_positions) slot_ctx_ids.push_back(ctx.ids[p]);
    const std::vector<double> a = average_embedding(slot_ctx_ids);

    double* op_w = params_.row("op_w:" + slot.name, 0);
    double* op_b = params_.row("op_b:" + slot.name, 0);
    std::vector<double> logits(3, 0.0);
    for (int c = 0; c < 3; ++c) {
      const double* w = op_w + static_cast<std::size_t>(c) * 2 * d;
      double z = op_b[c];
      for (std::size_t i = 0; i < d; ++i) z += w[i] * ctx.f[i] + w[d + i] * a[i];
      logits[static_cast<std::size_t>(c)] = z;
    }
    std::vector<double> p = logits;
    softmax_inplace(p);
    op_loss += -std::log(std::max(p[static_cast<std::size_t>(gold)], 1e-12));

    if (update) {
      std::vector<double> dlogits = p;
      dlogits[static_cast<std::size_t>(gold)] -= 1.0;
      std::vector<double> da(d, 0.0);
      for (int c = 0; c < 3; ++c) {
        const double* w = op_w + static_cast<std::size_t>(c) * 2 * d;
        const double g = dlogits[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < d; ++i) {
          df[i] += w[i] * g;
          da[i] += w[d + i] * g;
        }
      }
      for (int c = 0; c < 3; ++c) {
        double* w = op_w + static_cast<std::size_t>(c) * 2 * d;
        const double g = dlogits[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < d; ++i) {
          w[i] -= lr * g * ctx.f[i];
          w[d + i] -= lr * g * a[i];
        }
        op_b[c] -= lr * g;
      }
      spread_positions(slot_ctx_positions, da);
    }

    if (gold != kOpValue) continue;
    const std::string& gold_value = example.turn_state.at(slot.name);
    const std::vector<double> prox = cue_proximity(ctx, rt);

    if (!slot.free_form) {
      // ---- categorical scorer ----
      const auto it = std::find(slot.value_set.begin(), slot.value_set.end(), gold_value);
      if (it == slot.value_set.end()) continue;  // out-of-set gold; no loss term
      const std::size_t gold_idx = static_cast<std::size_t>(it - slot.value_set.begin());

      const std::vector<double> s_emb = average_embedding(rt.name_word_ids);
      std::vector<double> u1, u2;
      matvec(val_w, val_b, ctx.f, u1);
      matvec(ctx_w, ctx_b, s_emb, u2);

      const std::size_t n_candidates = rt.candidate_token_ids.size();
      std::vector<std::vector<double>> cand_emb(n_candidates);
      std::vector<std::vector<double>> cand_ctx(n_candidates);
      std::vector<std::vector<std::size_t>> cand_ctx_positions(n_candidates);
      std::vector<double> cand_prox(n_candidates, 0.0);
      std::vector<double> scores(n_candidates, 0.0);
      for (std::size_t i = 0; i < n_candidates; ++i) {
        cand_emb[i] = average_embedding(rt.candidate_token_ids[i]);
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += cand_emb[i][k] * u1[k];
        // context around the candidate's occurrence in the turn, if any
        const Tokens cand_tokens = tokenize(slot.value_set[i]);
        const std::size_t at = find_subsequence(ctx.tokens, cand_tokens);
        if (at != std::string::npos) {
          for (std::size_t q = at; q < at + cand_tokens.size(); ++q)
            cand_prox[i] = std::max(cand_prox[i], prox[q]);
          s += val_prox_w * cand_prox[i];
          const std::size_t lo = at >= static_cast<std::size_t>(kTokenContextRadius)
                                     ? at - static_cast<std::size_t>(kTokenContextRadius)
                                     : 0;
          const std::size_t hi =
              std::min(J, at + cand_tokens.size() +
                              static_cast<std::size_t>(kTokenContextRadius));
          for (std::size_t q = lo; q < hi; ++q)
            if ((q < at || q >= at + cand_tokens.size()) && ctx.segment[q] == ctx.segment[at])
              cand_ctx_positions[i].push_back(q);
          std::vector<int> ids;
          for (std::size_t q : cand_ctx_positions[i]) ids.push_back(ctx.ids[q]);
          cand_ctx[i] = average_embedding(ids);
          for (std::size_t k = 0; k < d; ++k) s += cand_ctx[i][k] * u2[k];
        } else {
          cand_ctx[i].assign(d, 0.0);
        }
        scores[i] = s;
      }
      std::vector<double> q = scores;
      softmax_inplace(q);
      resolver_loss += -std::log(std::max(q[gold_idx], 1e-12));
      ++resolver_terms;

      if (update) {
        std::vector<double> du1(d, 0.0), du2(d, 0.0);
        for (std::size_t i = 0; i < n_candidates; ++i) {
          const double ds = q[i] - (i == gold_idx ? 1.0 : 0.0);
          dval_prox += ds * cand_prox[i];
          for (std::size_t k = 0; k < d; ++k) {
            du1[k] += ds * cand_emb[i][k];
            du2[k] += ds * cand_ctx[i][k];
          }
          // d(candidate embedding) = ds * u1
          std::vector<double> dv(d);
          for (std::size_t k = 0; k < d; ++k) dv[k] = ds * u1[k];
          spread_rows(rt.candidate_token_ids[i], dv);
          if (!cand_ctx_positions[i].empty()) {
            std::vector<double> dcx(d);
            for (std::size_t k = 0; k < d; ++k) dcx[k] = ds * u2[k];
            spread_positions(cand_ctx_positions[i], dcx);
          }
        }
        add_wt_grad(val_w, du1, df);
        std::vector<double> ds_emb(d, 0.0);
        add_wt_grad(ctx_w, du2, ds_emb);
        spread_rows(rt.name_word_ids, ds_emb);
        ensure(dval_w, d * d);
        ensure(dval_b, d);
        ensure(dctx_w, d * d);
        ensure(dctx_b, d);
        for (std::size_t r = 0; r < d; ++r) {
          for (std::size_t i = 0; i < d; ++i) {
            dval_w[r * d + i] += du1[r] * ctx.f[i];
            dctx_w[r * d + i] += du2[r] * s_emb[i];
          }
          dval_b[r] += du1[r];
          dctx_b[r] += du2[r];
        }
      }
    } else if (J > 0) {
      // ---- span pointer ----
      const std::vector<double> s_emb = average_embedding(rt.name_word_ids);
      std::vector<double> q1, q2;
      matvec(ptr_w, ptr_b, s_emb, q1);
      matvec(ptr2_w, ptr2_b, s_emb, q2);

      const Tokens value_tokens = tokenize(gold_value);
      const std::size_t match = find_subsequence(ctx.tokens, value_tokens);
      std::vector<double> zs(J, 0.0);
      std::vector<double> probs(J, 0.0);
      double loss = 0.0;
      for (std::size_t j = 0; j < J; ++j) {
        const double* e = params_.row(kEmbeddings, static_cast<std::size_t>(ctx.ids[j]));
        double z = ptr_prox_w * prox[j];
        for (std::size_t i = 0; i < d; ++i)
          z += e[i] * q1[i] + ctx.window_avg[j][i] * q2[i];
        zs[j] = z;
        probs[j] = sigmoid(z);
        const bool y = match != std::string::npos && j >= match &&
                       j < match + value_tokens.size();
        loss += y ? -std::log(std::max(probs[j], 1e-12))
                  : -std::log(std::max(1.0 - probs[j], 1e-12));
      }
      loss /= static_cast<double>(J);

      // Span-ranking loss over the known spans of this turn: trains the very
      // competition the decoder runs.
      std::vector<double> dz_extra(J, 0.0);
      if (match != std::string::npos && span_candidates.size() > 1) {
        std::vector<double> span_scores(span_candidates.size(), 0.0);
        std::ptrdiff_t gold_span = -1;
        for (std::size_t s = 0; s < span_candidates.size(); ++s) {
          const SpanCandidate& c = span_candidates[s];
          double total = 0.0;
          for (std::size_t j = c.begin; j < c.begin + c.length; ++j) total += zs[j];
          span_scores[s] = total / static_cast<double>(c.length);
          if (c.begin == match && c.length == value_tokens.size()) gold_span = s;
        }
        if (gold_span >= 0) {
          std::vector<double> sp = span_scores;
          softmax_inplace(sp);
          loss += -std::log(std::max(sp[static_cast<std::size_t>(gold_span)], 1e-12));
          if (update) {
            for (std::size_t s = 0; s < span_candidates.size(); ++s) {
              const double dscore =
                  sp[s] - (static_cast<std::ptrdiff_t>(s) == gold_span ? 1.0 : 0.0);
              const SpanCandidate& c = span_candidates[s];
              for (std::size_t j = c.begin; j < c.begin + c.length; ++j)
                dz_extra[j] += dscore / static_cast<double>(c.length);
            }
          }
        }
      }
      pointer_loss += loss;
      ++pointer_terms;

      if (update) {
        std::vector<double> dq1(d, 0.0), dq2(d, 0.0);
        for (std::size_t j = 0; j < J; ++j) {
          const bool y = match != std::string::npos && j >= match &&
                         j < match + value_tokens.size();
          const double dz =
              (probs[j] - (y ? 1.0 : 0.0)) / static_cast<double>(J) + dz_extra[j];
          dptr_prox += dz * prox[j];
          const double* e = params_.row(kEmbeddings, static_cast<std::size_t>(ctx.ids[j]));
          std::vector<double> de(d), dc(d);
          for (std::size_t i = 0; i < d; ++i) {
            dq1[i] += dz * e[i];
            dq2[i] += dz * ctx.window_avg[j][i];
            de[i] = dz * q1[i];
            dc[i] = dz * q2[i];
          }
          std::vector<double>& delta = emb_delta(ctx.ids[j]);
          for (std::size_t i = 0; i < d; ++i) delta[i] += de[i];
          spread_positions(ctx.window[j], dc);
        }
        std::vector<double> ds_emb(d, 0.0);
        add_wt_grad(ptr_w, dq1, ds_emb);
        add_wt_grad(ptr2_w, dq2, ds_emb);
        spread_rows(rt.name_word_ids, ds_emb);
        ensure(dptr_w, d * d);
        ensure(dptr_b, d);
        ensure(dptr2_w, d * d);
        ensure(dptr2_b, d);
        for (std::size_t r = 0; r < d; ++r) {
          for (std::size_t i = 0; i < d; ++i) {
            dptr_w[r * d + i] += dq1[r] * s_emb[i];
            dptr2_w[r * d + i] += dq2[r] * s_emb[i];
          }
          dptr_b[r] += dq1[r];
          dptr2_b[r] += dq2[r];
        }
      }
    }
  }

  const double slot_count = static_cast<double>(slots_.size());
  double total = op_loss / slot_count;
  if (resolver_terms > 0) total += resolver_loss / resolver_terms;
  if (pointer_terms > 0) total += pointer_loss / pointer_terms;

  if (update) {
    auto apply = [&](const char* name, const std::vector<double>& grad) {
      if (grad.empty()) return;
      double* w = params_.row(name, 0);
      for (std::size_t i = 0; i < grad.size(); ++i) w[i] -= lr * grad[i];
    };
    apply("val_w", dval_w);
    apply("val_b", dval_b);
    apply("ctx_w", dctx_w);
    apply("ctx_b", dctx_b);
    apply("ptr_w", dptr_w);
    apply("ptr_b", dptr_b);
    apply("ptr2_w", dptr2_w);
    apply("ptr2_b", dptr2_b);
    // The scalar features see a mean-scaled gradient; give them a larger step.
    params_.row("ptr_prox", 0)[0] -= 5.0 * lr * dptr_prox;
    params_.row("val_prox", 0)[0] -= 5.0 * lr * dval_prox;

    if (!ctx.ids.empty()) {
      // Turn-feature gradient reaches every turn token through the mean.
      const double scale = 1.0 / static_cast<double>(ctx.ids.size());
      for (int id : ctx.ids) {
        std::vector<double>& delta = emb_delta(id);
        for (std::size_t i = 0; i < d; ++i) delta[i] += scale * df[i];
      }
    }
    for (const auto& [row_id, delta] : emb_deltas) {
      double* row = params_.row(kEmbeddings, static_cast<std::size_t>(row_id));
      for (std::size_t i = 0; i < d; ++i) row[i] -= lr * delta[i];
    }
    if (!std::isfinite(total))
      throw std::runtime_error("reference model: non-finite loss at '" +
                               example.example_id + "'");
  }
  return total;
}

double ReferenceModel::fit_epoch(const std::vector<const DialogExample*>& examples,
                                 std::uint64_t /*seed*/, const StepLossFn& on_step) {
  if (examples.empty()) return 0.0;
  double total = 0.0;
  for (const DialogExample* example : examples) {
    // Remember surface forms so free-form predictions can be reconstructed.
    for (const auto& [slot, value] : example->turn_state) {
      (void)slot;
      if (value == kDontcareValue) continue;
      Tokens toks = tokenize(value);
      value_surface_.emplace(span_key(toks, 0, toks.size()), value);
    }
    const double loss = process_example(*example, /*update=*/true);
    total += loss;
    if (on_step) on_step(loss);
  }
  for (double v : params_.flat())
    if (!std::isfinite(v))
      throw std::runtime_error("reference model: non-finite parameter after epoch");
  return total / static_cast<double>(examples.size());
}

double ReferenceModel::example_loss(const DialogExample& example) const {
  return const_cast<ReferenceModel*>(this)->process_example(example, /*update=*/false);
}

StateMap ReferenceModel::predict_turn(const DialogExample& example) const {
  const std::size_t d = static_cast<std::size_t>(config_.embed_dim);
  const TurnContext ctx = make_turn_context(example);
  const std::size_t J = ctx.ids.size();

  const double* val_w = params_.row("val_w", 0);
  const double* val_b = params_.row("val_b", 0);
  const double* ctx_w = params_.row("ctx_w", 0);
  const double* ctx_b = params_.row("ctx_b", 0);
  const double* ptr_w = params_.row("ptr_w", 0);
  const double* ptr_b = params_.row("ptr_b", 0);
  const double* ptr2_w = params_.row("ptr2_w", 0);
  const double* ptr2_b = params_.row("ptr2_b", 0);
  const double ptr_prox_w = params_.row("ptr_prox", 0)[0];
  const double val_prox_w = params_.row("val_prox", 0)[0];

  auto matvec = [&](const double* w, const double* b, const std::vector<double>& x) {
    std::vector<double> out(d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
      double z = b[r];
      const double* row = w + r * d;
      for (std::size_t i = 0; i < d; ++i) z += row[i] * x[i];
      out[r] = z;
    }
    return out;
  };

  // Occurrences of known value surfaces in this turn, shared across slots.
  const std::vector<SpanCandidate> span_candidates = find_known_spans(ctx.tokens);

  StateMap out;
  for (const SlotRuntime& rt : slots_) {
    const SlotSpec& slot = *rt.spec;

    const std::vector<std::size_t> slot_ctx_positions = slot_context_positions(ctx, rt);
    std::vector<int> slot_ctx_ids;
    for (std::size_t p : slot_ctx_positions) slot_ctx_ids.push_back(ctx.ids[p]);
    const std::vector<double> a = average_embedding(slot_ctx_ids);

    const double* op_w = params_.row("op_w:" + slot.name, 0);
    const double* op_b = params_.row("op_b:" + slot.name, 0);
    int best_op = 0;
    double best_z = -1e300;
    for (int c = 0; c < 3; ++c) {
      const double* w = op_w + static_cast<std::size_t>(c) * 2 * d;
      double z = op_b[c];
      for (std::size_t i = 0; i < d; ++i) z += w[i] * ctx.f[i] + w[d + i] * a[i];
      if (z > best_z) {
        best_z = z;
        best_op = c;
      }
    }
    if (best_op == kOpNone) continue;
    if (best_op == kOpDontcare) {
      out[slot.name] = kDontcareValue;
      continue;
    }

    const std::vector<double> prox = cue_proximity(ctx, rt);
    if (!slot.free_form) {
      const std::vector<double> s_emb = average_embedding(rt.name_word_ids);
      const std::vector<double> u1 = matvec(val_w, val_b, ctx.f);
      const std::vector<double> u2 = matvec(ctx_w, ctx_b, s_emb);
      std::size_t best_i = 0;
      double best_s = -1e300;
      for (std::size_t i = 0; i < rt.candidate_token_ids.size(); ++i) {
        const std::vector<double> v = average_embedding(rt.candidate_token_ids[i]);
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += v[k] * u1[k];
        const Tokens cand_tokens = tokenize(slot.value_set[i]);
        const std::size_t at = find_subsequence(ctx.tokens, cand_tokens);
        if (at != std::string::npos) {
          double p = 0.0;
          for (std::size_t q = at; q < at + cand_tokens.size(); ++q)
            p = std::max(p, prox[q]);
          s += val_prox_w * p;
          const std::size_t lo = at >= static_cast<std::size_t>(kTokenContextRadius)
                                     ? at - static_cast<std::size_t>(kTokenContextRadius)
                                     : 0;
          const std::size_t hi =
              std::min(J, at + cand_tokens.size() +
                              static_cast<std::size_t>(kTokenContextRadius));
          std::vector<int> ids;
          for (std::size_t q = lo; q < hi; ++q)
            if ((q < at || q >= at + cand_tokens.size()) && ctx.segment[q] == ctx.segment[at]) ids.push_back(ctx.ids[q]);
          const std::vector<double> cctx = average_embedding(ids);
          for (std::size_t k = 0; k < d; ++k) s += cctx[k] * u2[k];
        }
        if (s > best_s) {
          best_s = s;
          best_i = i;
        }
      }
      out[slot.name] = slot.value_set[best_i];
    } else if (J > 0) {
      const std::vector<double> s_emb = average_embedding(rt.name_word_ids);
      const std::vector<double> q1 = matvec(ptr_w, ptr_b, s_emb);
      const std::vector<double> q2 = matvec(ptr2_w, ptr2_b, s_emb);
      std::vector<double> z(J, 0.0);
      std::size_t best_j = 0;
      for (std::size_t j = 0; j < J; ++j) {
        const double* e = params_.row(kEmbeddings, static_cast<std::size_t>(ctx.ids[j]));
        z[j] = ptr_prox_w * prox[j];
        for (std::size_t i = 0; i < d; ++i)
          z[j] += e[i] * q1[i] + ctx.window_avg[j][i] * q2[i];
        if (z[j] > z[best_j]) best_j = j;
      }

      // Prefer the known value span with the highest mean pointer score,
      // mirroring the span-ranking loss. Threshold decoding only covers
      // values never seen before.
      const SpanCandidate* best_candidate = nullptr;
      double best_score = -1e300;
      for (const SpanCandidate& c : span_candidates) {
        double score = 0.0;
        for (std::size_t j = c.begin; j < c.begin + c.length; ++j) score += z[j];
        score /= static_cast<double>(c.length);
        if (score > best_score) {
          best_score = score;
          best_candidate = &c;
        }
      }
      if (best_candidate) {
        out[slot.name] = *best_candidate->surface;
      } else {
        std::size_t begin = best_j, end = best_j + 1;
        if (sigmoid(z[best_j]) >= 0.5) {
          while (begin > 0 && sigmoid(z[begin - 1]) >= 0.5) --begin;
          while (end < J && sigmoid(z[end]) >= 0.5) ++end;
        }
        const std::string key = span_key(ctx.tokens, begin, end);
        auto it = value_surface_.find(key);
        if (it != value_surface_.end()) {
          out[slot.name] = it->second;
        } else {
          Tokens span(ctx.tokens.begin() + static_cast<std::ptrdiff_t>(begin),
                      ctx.tokens.begin() + static_cast<std::ptrdiff_t>(end));
          out[slot.name] = join_tokens(span);
        }
      }
    }
  }
  return out;
}

std::unique_ptr<ModelOracle> ReferenceModel::clone_untrained(std::uint64_t seed) const {
  return std::make_unique<ReferenceModel>(schema_, vocab_, config_, seed);
}

void ReferenceModel::init_encoder_from(const ParamStore& encoder,
                                       const Vocabulary& encoder_vocab) {
  if (!encoder.has(kEmbeddings))
    throw DataError("encoder parameters carry no embedding block");
  const ParamStore::Block& src = encoder.block(kEmbeddings);
  if (src.cols != static_cast<std::size_t>(config_.embed_dim))
    throw ConfigError("encoder width " + std::to_string(src.cols) +
                      " does not match model width " +
                      std::to_string(config_.embed_dim));
  std::size_t copied = 0;
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    const int src_id = encoder_vocab.id(vocab_.tokens()[i]);
    if (src_id == Vocabulary::kUnkId && vocab_.tokens()[i] != "<unk>") continue;
    const double* from = encoder.row(kEmbeddings, static_cast<std::size_t>(src_id));
    double* to = params_.row(kEmbeddings, i);
    std::copy(from, from + src.cols, to);
    ++copied;
  }
  if (copied == 0) throw DataError("encoder vocabulary shares no tokens with model");
}

void ReferenceModel::save(const std::filesystem::path& file) const {
  std::map<std::string, std::string> aux;
  aux["kind"] = "refmodel";
  aux["embed_dim"] = std::to_string(config_.embed_dim);
  aux["learning_rate"] = std::to_string(config_.learning_rate);
  aux["init_scale"] = std::to_string(config_.init_scale);
  for (const auto& [key, value] : value_surface_) aux["surface:" + key] = value;
  save_params(params_, vocab_, aux, file);
}

std::unique_ptr<ReferenceModel> ReferenceModel::load(const std::filesystem::path& file,
                                                     const Schema& schema) {
  Vocabulary vocab;
  std::map<std::string, std::string> aux;
  ParamStore stored = load_params(file, &vocab, &aux);
  if (aux.count("kind") && aux.at("kind") != "refmodel")
    throw DataError(file.string() + ": not a reference model file");

  RefModelConfig config;
  config.embed_dim = std::stoi(aux.at("embed_dim"));
  config.learning_rate = std::stod(aux.at("learning_rate"));
  config.init_scale = std::stod(aux.at("init_scale"));

  auto model = std::make_unique<ReferenceModel>(schema, vocab, config, 0);
  if (stored.blocks().size() != model->params_.blocks().size())
    throw DataError(file.string() + ": parameter table does not match the schema");
  for (std::size_t i = 0; i < stored.blocks().size(); ++i) {
    const auto& a = stored.blocks()[i];
    const auto& b = model->params_.blocks()[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols)
      throw DataError(file.string() + ": block '" + a.name +
                      "' does not match the schema-derived layout");
  }
  model->params_.flat() = stored.flat();
  model->value_surface_.clear();
  for (const auto& [key, value] : aux) {
    if (key.rfind("surface:", 0) == 0)
      model->value_surface_[key.substr(8)] = value;
  }
  return model;
}

}  // namespace saclog
