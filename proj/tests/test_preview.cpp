#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "saclog/preview.hpp"
#include "saclog/rng.hpp"
#include "saclog/synthetic.hpp"

using namespace saclog;

namespace {

using Matrix = std::vector<std::vector<double>>;

// ---------------------------------------------------------------------------
// Independent forward-pass oracle: same formulas, separate implementation
// over extracted matrices. Written against the head definitions, not against
// PreviewNet's code.
// ---------------------------------------------------------------------------

Matrix extract(const ParamStore& params, const std::string& name) {
  const ParamStore::Block& b = params.block(name);
  Matrix m(b.rows, std::vector<double>(b.cols, 0.0));
  for (std::size_t r = 0; r < b.rows; ++r) {
    const double* row = params.row(name, r);
    for (std::size_t c = 0; c < b.cols; ++c) m[r][c] = row[c];
  }
  return m;
}

std::vector<double> naive_matvec(const Matrix& w, const std::vector<double>& x,
                                 const std::vector<double>& b) {
  std::vector<double> out(w.size(), 0.0);
  for (std::size_t r = 0; r < w.size(); ++r) {
    double z = b.empty() ? 0.0 : b[r];
    for (std::size_t c = 0; c < x.size(); ++c) z += w[r][c] * x[c];
    out[r] = z;
  }
  return out;
}

std::vector<double> naive_softmax(std::vector<double> v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - m);
    sum += x;
  }
  for (double& x : v) x /= sum;
  return v;
}

Matrix naive_encode(const PreviewNet& net, const Tokens& tokens) {
  const std::size_t d = static_cast<std::size_t>(net.config().embed_dim);
  const Matrix emb_table = extract(net.params(), "embeddings");
  const Matrix mix_w = extract(net.params(), "mix_w");
  const std::vector<double> mix_b = extract(net.params(), "mix_b")[0];

  Matrix emb;
  for (const std::string& t : tokens)
    emb.push_back(emb_table[static_cast<std::size_t>(net.vocab().id(t))]);

  Matrix states;
  for (std::size_t j = 0; j < emb.size(); ++j) {
    const std::size_t lo = j > 0 ? j - 1 : 0;
    const std::size_t hi = std::min(emb.size(), j + 2);
    std::vector<double> mean(d, 0.0);
    for (std::size_t k = lo; k < hi; ++k)
      for (std::size_t i = 0; i < d; ++i) mean[i] += emb[k][i];
    for (double& v : mean) v /= static_cast<double>(hi - lo);

    std::vector<double> input = emb[j];
    input.insert(input.end(), mean.begin(), mean.end());
    std::vector<double> pre = naive_matvec(mix_w, input, mix_b);
    for (double& v : pre) v = std::tanh(v);
    states.push_back(std::move(pre));
  }
  return states;
}

std::vector<double> naive_slot_embedding(const PreviewNet& net, const SlotSpec& slot) {
  Matrix states = naive_encode(net, Tokens(slot.name_words.begin(), slot.name_words.end()));
  std::vector<double> out(states[0].size(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 0.5 * (states.front()[i] + states.back()[i]);
  return out;
}

std::vector<double> naive_span_head(const PreviewNet& net,
                                    const std::vector<double>& slot_emb,
                                    const Matrix& states) {
  const Matrix w1 = extract(net.params(), "span_w1");
  const std::vector<double> b1 = extract(net.params(), "span_b1")[0];
  const std::vector<double> w2 = extract(net.params(), "span_w2")[0];
  const double b2 = extract(net.params(), "span_b2")[0][0];
  std::vector<double> out;
  for (const std::vector<double>& h : states) {
    std::vector<double> input = slot_emb;
    input.insert(input.end(), h.begin(), h.end());
    std::vector<double> hidden = naive_matvec(w1, input, b1);
    double z = b2;
    for (std::size_t r = 0; r < hidden.size(); ++r) z += w2[r] * std::tanh(hidden[r]);
    out.push_back(1.0 / (1.0 + std::exp(-z)));
  }
  return out;
}

std::vector<double> naive_cls_head(const PreviewNet& net,
                                   const std::vector<double>& slot_emb,
                                   const Matrix& states) {
  // attention
  std::vector<double> scores;
  for (const std::vector<double>& h : states) {
    double s = 0.0;
    for (std::size_t i = 0; i < slot_emb.size(); ++i) s += slot_emb[i] * h[i];
    scores.push_back(s);
  }
  scores = naive_softmax(scores);
  std::vector<double> att(slot_emb.size(), 0.0);
  for (std::size_t j = 0; j < states.size(); ++j)
    for (std::size_t i = 0; i < att.size(); ++i) att[i] += scores[j] * states[j][i];

  const Matrix w1 = extract(net.params(), "cls_w1");
  const std::vector<double> b1 = extract(net.params(), "cls_b1")[0];
  const Matrix w2 = extract(net.params(), "cls_w2");
  const std::vector<double> b2 = extract(net.params(), "cls_b2")[0];
  std::vector<double> input = slot_emb;
  input.insert(input.end(), att.begin(), att.end());
  std::vector<double> hidden = naive_matvec(w1, input, b1);
  for (double& v : hidden) v = std::tanh(v);
  return naive_softmax(naive_matvec(w2, hidden, b2));
}

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

Schema tiny_schema() {
  SlotSpec name{"venue-name", "venue", {"golden house", "nandos"}, {"venue"}, true, true};
  SlotSpec area{"venue-area", "venue", {"north", "east"}, {"area"}, false, false};
  return Schema({name, area});
}

DialogExample make_turn(const std::string& dialog_id, int turn_index,
                        const std::string& system, const std::string& user,
                        StateMap turn_state, const StateMap& z_prev,
                        const Schema& schema, bool synthetic = false) {
  DialogExample e;
  e.dialog_id = dialog_id;
  e.example_id = make_example_id(dialog_id, turn_index);
  for (int t = 1; t < turn_index; ++t) {
    Turn filler;
    filler.turn_index = t;
    filler.system = t == 1 ? Tokens{} : Tokens{"ok"};
    filler.user = {"hello"};
    e.context.push_back(filler);
  }
  Turn turn;
  turn.turn_index = turn_index;
  turn.system = tokenize(system);
  turn.user = tokenize(user);
  e.context.push_back(turn);
  e.turn_state = std::move(turn_state);
  e.discourse_state = accumulate_state(z_prev, e.turn_state, schema);
  e.synthetic = synthetic;
  return e;
}

Corpus tiny_corpus(bool synthetic) {
  Corpus corpus;
  corpus.schema = tiny_schema();
  StateMap empty;
  corpus.examples.push_back(make_turn("d0", 1, "", "i want golden house",
                                      {{"venue-name", "golden house"}}, empty,
                                      corpus.schema, synthetic));
  corpus.examples.push_back(make_turn("d1", 1, "", "the area should be north",
                                      {{"venue-area", "north"}}, empty,
                                      corpus.schema, synthetic));
  corpus.examples.push_back(make_turn("d2", 1, "", "nandos in the east please",
                                      {{"venue-name", "nandos"}, {"venue-area", "east"}},
                                      empty, corpus.schema, synthetic));
  corpus.examples.push_back(make_turn("d3", 1, "", "hello there", {}, empty,
                                      corpus.schema, synthetic));
  corpus.examples.push_back(make_turn("d4", 1, "", "east side and golden house",
                                      {{"venue-name", "golden house"}, {"venue-area", "east"}},
                                      empty, corpus.schema, synthetic));
  return corpus;
}

std::vector<TurnTargets> targets_for(const Corpus& corpus, bool extended) {
  std::vector<TurnTargets> out;
  for (const DialogExample& e : corpus.examples) {
    auto per_dialog = derive_targets({&e}, corpus.schema, extended);
    out.push_back(std::move(per_dialog[0]));
  }
  return out;
}

PreviewConfig small_config() {
  PreviewConfig config;
  config.embed_dim = 6;
  config.mask_rate = 0.3;
  config.aux_weight = 0.5;
  return config;
}

}  // namespace

TEST_CASE("attention basics") {
  SUBCASE("single value is returned exactly") {
    std::vector<double> v = {1.5, -2.0, 0.25};
    CHECK(attention({0.3, 0.1, -0.7}, {v}) == v);
  }
  SUBCASE("identical values collapse to that value") {
    std::vector<double> v = {0.5, 1.0};
    auto out = attention({2.0, -1.0}, {v, v});
    CHECK(out[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("orthogonal query yields the mean of two values") {
    // query is orthogonal to both values: scores (0,0) -> weights (.5,.5)
    auto out = attention({1.0, 0.0}, {{0.0, 2.0}, {0.0, 4.0}});
    CHECK(out[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(3.0).epsilon(1e-12));
  }
  SUBCASE("weights sum to one: output of constant vectors preserves scale") {
    auto out = attention({0.1, 0.2}, {{7.0, 7.0}, {7.0, 7.0}, {7.0, 7.0}});
    CHECK(out[0] == doctest::Approx(7.0).epsilon(1e-12));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(static_cast<void>(attention({1.0}, {})), DataError);
    CHECK_THROWS_AS(static_cast<void>(attention({1.0}, {{1.0, 2.0}})), DataError);
  }
}

TEST_CASE("zero parameters give the neutral head outputs") {
  Corpus corpus = tiny_corpus(false);
  PreviewNet net(corpus.schema, Vocabulary::build(corpus), small_config(), 3);
  std::fill(net.params().flat().begin(), net.params().flat().end(), 0.0);

  const Tokens context = serialize_context(corpus.examples[0]);
  auto states = net.encode_tokens(context);
  REQUIRE(states.size() == context.size());
  auto slot_emb = net.slot_embedding(corpus.schema.slots()[0]);

  auto span = net.span_head(slot_emb, states);
  REQUIRE(span.size() == context.size());
  for (double p : span) CHECK(p == doctest::Approx(0.5).epsilon(1e-12));

  auto cls = net.cls_head(slot_emb, states);
  REQUIRE(cls.size() == 4);
  for (double p : cls) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("heads match the independent forward-pass oracle on random params") {
  Corpus corpus = tiny_corpus(false);
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL}) {
    PreviewNet net(corpus.schema, Vocabulary::build(corpus), small_config(), seed);
    for (const DialogExample& example : corpus.examples) {
      const Tokens context = serialize_context(example);
      auto states = net.encode_tokens(context);
      auto naive_states = naive_encode(net, context);
      REQUIRE(states.size() == naive_states.size());
      for (std::size_t j = 0; j < states.size(); ++j)
        for (std::size_t i = 0; i < states[j].size(); ++i)
          CHECK(states[j][i] == doctest::Approx(naive_states[j][i]).epsilon(1e-12));

      for (const SlotSpec& slot : corpus.schema.slots()) {
        auto e_s = net.slot_embedding(slot);
        auto naive_e_s = naive_slot_embedding(net, slot);
        for (std::size_t i = 0; i < e_s.size(); ++i)
          CHECK(e_s[i] == doctest::Approx(naive_e_s[i]).epsilon(1e-12));

        auto span = net.span_head(e_s, states);
        auto naive_span = naive_span_head(net, e_s, naive_states);
        REQUIRE(span.size() == naive_span.size());
        for (std::size_t j = 0; j < span.size(); ++j)
          CHECK(span[j] == doctest::Approx(naive_span[j]).epsilon(1e-10));

        auto cls = net.cls_head(e_s, states);
        auto naive_cls = naive_cls_head(net, e_s, naive_states);
        for (std::size_t k = 0; k < cls.size(); ++k)
          CHECK(cls[k] == doctest::Approx(naive_cls[k]).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("cls_head output is a probability distribution") {
  Corpus corpus = tiny_corpus(false);
  PreviewNet net(corpus.schema, Vocabulary::build(corpus), small_config(), 9);
  Rng rng(17);
  const Tokens context = serialize_context(corpus.examples[2]);
  auto states = net.encode_tokens(context);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> query(6);
    for (double& v : query) v = rng.gaussian() * 2.0;
    auto cls = net.cls_head(query, states);
    double sum = 0.0;
    for (double p : cls) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("analytic loss values") {
  Corpus corpus = tiny_corpus(false);
  auto targets = targets_for(corpus, false);

  SUBCASE("BCE at p=0.5 with target 1 is ln 2") {
    // single slot, single context token, all-zero parameters
    Schema schema({SlotSpec{"s-a", "s", {"x"}, {"a"}, false, false}});
    Corpus one;
    one.schema = schema;
    one.examples.push_back(make_turn("d", 1, "", "x", {{"s-a", "x"}}, {}, schema));
    PreviewConfig config = small_config();
    config.mask_rate = 0.0;
    PreviewNet net(schema, Vocabulary::build(one), config, 1);
    std::fill(net.params().flat().begin(), net.params().flat().end(), 0.0);
    auto t = derive_targets({&one.examples[0]}, schema, false);
    PreviewLosses losses = net.preview_losses({{&one.examples[0], &t[0]}});
    CHECK(losses.seq == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    CHECK(losses.cls == doctest::Approx(std::log(4.0)).epsilon(1e-9));
  }

  SUBCASE("uniform 4-class cross entropy is ln 4") {
    PreviewConfig config = small_config();
    PreviewNet net(corpus.schema, Vocabulary::build(corpus), config, 1);
    std::fill(net.params().flat().begin(), net.params().flat().end(), 0.0);
    std::vector<PreviewItem> batch;
    for (std::size_t i = 0; i < corpus.examples.size(); ++i)
      batch.push_back({&corpus.examples[i], &targets[i]});
    PreviewLosses losses = net.preview_losses(batch);
    CHECK(losses.cls == doctest::Approx(std::log(4.0)).epsilon(1e-9));
  }

  SUBCASE("saturated predictions drive losses toward zero") {
    // One slot, one token, target 1; bias the span head to +20 and the true
    // class to +20.
    Schema schema({SlotSpec{"s-a", "s", {"x"}, {"a"}, false, false}});
    Corpus one;
    one.schema = schema;
    one.examples.push_back(make_turn("d", 1, "", "x", {{"s-a", "x"}}, {}, schema));
    PreviewConfig config = small_config();
    config.mask_rate = 0.0;
    PreviewNet net(schema, Vocabulary::build(one), config, 1);
    std::fill(net.params().flat().begin(), net.params().flat().end(), 0.0);
    net.params().row("span_b2", 0)[0] = 20.0;
    net.params().row("cls_b2", 0)[static_cast<int>(OpClass::kAdded)] = 20.0;
    auto t = derive_targets({&one.examples[0]}, schema, false);
    PreviewLosses losses = net.preview_losses({{&one.examples[0], &t[0]}});
    CHECK(losses.seq < 1e-3);
    CHECK(losses.cls < 1e-3);
  }

  SUBCASE("untrained uniform LM loss is ln V") {
    PreviewConfig config = small_config();
    config.mask_rate = 1.0;
    PreviewNet net(corpus.schema, Vocabulary::build(corpus), config, 1);
    std::fill(net.params().flat().begin(), net.params().flat().end(), 0.0);
    std::vector<PreviewItem> batch = {{&corpus.examples[0], &targets[0]}};
    auto aux = net.aux_lm_loss(batch, 5);
    REQUIRE(aux.has_value());
    const double v = static_cast<double>(Vocabulary::build(corpus).size());
    CHECK(*aux == doctest::Approx(std::log(v)).epsilon(1e-9));
  }

  SUBCASE("no masked positions is an explicit skip, not zero") {
    PreviewConfig config = small_config();
    config.mask_rate = 0.0;
    PreviewNet net(corpus.schema, Vocabulary::build(corpus), config, 1);
    std::vector<PreviewItem> batch = {{&corpus.examples[0], &targets[0]}};
    CHECK_FALSE(net.aux_lm_loss(batch, 5).has_value());
    CHECK_THROWS_AS(static_cast<void>(net.aux_lm_loss({}, 5)), DataError);
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  // Randomized small fixtures; every parameter index is checked.
  const double eps = 1e-5;
  int fixtures_checked = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(derive_seed(seed, "fixture"));
    Corpus corpus = tiny_corpus(/*synthetic=*/false);
    // randomize which examples form the batch, keep it small
    auto targets = targets_for(corpus, false);
    std::vector<PreviewItem> batch;
    for (std::size_t i = 0; i < corpus.examples.size(); ++i)
      if (rng.chance(0.5)) batch.push_back({&corpus.examples[i], &targets[i]});
    if (batch.empty()) batch.push_back({&corpus.examples[0], &targets[0]});

    PreviewConfig config = small_config();
    config.mask_rate = rng.chance(0.5) ? 0.3 : 0.0;
    PreviewNet net(corpus.schema, Vocabulary::build(corpus), config, seed * 31 + 7);

    std::vector<double> grad;
    static_cast<void>(net.total_loss(batch, seed, &grad));

    std::vector<double>& flat = net.params().flat();
    REQUIRE(grad.size() == flat.size());
    double max_rel = 0.0;
    for (std::size_t i = 0; i < flat.size(); ++i) {
      const double saved = flat[i];
      flat[i] = saved + eps;
      const double up = net.total_loss(batch, seed, nullptr);
      flat[i] = saved - eps;
      const double down = net.total_loss(batch, seed, nullptr);
      flat[i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double diff = std::abs(fd - grad[i]);
      const double scale = std::max(std::abs(fd), std::abs(grad[i]));
      if (diff > 1e-6) max_rel = std::max(max_rel, diff / std::max(scale, 1e-12));
    }
    CHECK_MESSAGE(max_rel < 1e-3, "fixture seed ", seed, " max rel err ", max_rel);
    ++fixtures_checked;
  }
  CHECK(fixtures_checked >= 20);
}

TEST_CASE("derive_targets marks spans and operation classes") {
  Schema schema = tiny_schema();

  SUBCASE("first occurrence of a new value, class added") {
    DialogExample e = make_turn("d", 1, "", "i want golden house",
                                {{"venue-name", "golden house"}}, {}, schema);
    auto targets = derive_targets({&e}, schema, false);
    REQUIRE(targets.size() == 1);
    CHECK(targets[0].classes.at("venue-name") == OpClass::kAdded);
    CHECK(targets[0].classes.at("venue-area") == OpClass::kNotMentioned);
    CHECK(targets[0].spans.at("venue-name") ==
          std::vector<std::uint8_t>{0, 0, 1, 1});
    CHECK(targets[0].spans.at("venue-area") ==
          std::vector<std::uint8_t>{0, 0, 0, 0});
    CHECK(targets[0].unlocatable == 0);
  }

  SUBCASE("empty turn is all not_mentioned with zero spans") {
    DialogExample e = make_turn("d", 1, "", "hello there", {}, {}, schema);
    auto targets = derive_targets({&e}, schema, false);
    for (const auto& [slot, label] : targets[0].classes)
      CHECK(label == OpClass::kNotMentioned);
    for (const auto& [slot, row] : targets[0].spans)
      for (std::uint8_t v : row) CHECK(v == 0);
  }

  SUBCASE("repeated value marks only the first occurrence") {
    DialogExample e = make_turn("d", 1, "", "golden house or golden house",
                                {{"venue-name", "golden house"}}, {}, schema);
    auto targets = derive_targets({&e}, schema, false);
    CHECK(targets[0].spans.at("venue-name") ==
          std::vector<std::uint8_t>{1, 1, 0, 0, 0});
  }

  SUBCASE("changed label requires a differing previous value") {
    DialogExample first = make_turn("d", 1, "", "the area should be north",
                                    {{"venue-area", "north"}}, {}, schema);
    DialogExample second = make_turn("d", 2, "ok", "make it east",
                                     {{"venue-area", "east"}},
                                     first.discourse_state, schema);
    auto targets = derive_targets({&first, &second}, schema, false);
    CHECK(targets[0].classes.at("venue-area") == OpClass::kAdded);
    CHECK(targets[1].classes.at("venue-area") == OpClass::kChanged);
  }

  SUBCASE("restating the same value is not an operation") {
    DialogExample first = make_turn("d", 1, "", "north please",
                                    {{"venue-area", "north"}}, {}, schema);
    DialogExample second = make_turn("d", 2, "ok", "yes north",
                                     {{"venue-area", "north"}},
                                     first.discourse_state, schema);
    auto targets = derive_targets({&first, &second}, schema, false);
    CHECK(targets[1].classes.at("venue-area") == OpClass::kNotMentioned);
  }

  SUBCASE("explicit none yields deleted") {
    DialogExample first = make_turn("d", 1, "", "north please",
                                    {{"venue-area", "north"}}, {}, schema);
    DialogExample second = make_turn("d", 2, "ok", "drop the area", {},
                                     first.discourse_state, schema);
    second.explicit_none = {"venue-area"};
    auto targets = derive_targets({&first, &second}, schema, false);
    CHECK(targets[1].classes.at("venue-area") == OpClass::kDeleted);
  }

  SUBCASE("dontcare label only in the extended class space") {
    DialogExample e = make_turn("d", 1, "", "any area works",
                                {{"venue-area", "dontcare"}}, {}, schema);
    auto narrow = derive_targets({&e}, schema, false);
    CHECK(narrow[0].classes.at("venue-area") == OpClass::kAdded);
    auto extended = derive_targets({&e}, schema, true);
    CHECK(extended[0].classes.at("venue-area") == OpClass::kDontcare);
  }

  SUBCASE("unlocatable values are counted, row stays zero") {
    DialogExample e = make_turn("d", 1, "", "somewhere nice",
                                {{"venue-name", "golden house"}}, {}, schema);
    auto targets = derive_targets({&e}, schema, false);
    CHECK(targets[0].unlocatable == 1);
    for (std::uint8_t v : targets[0].spans.at("venue-name")) CHECK(v == 0);
  }
}

TEST_CASE("changed labels agree with accumulate_state on generated dialogs") {
  GeneratorConfig gen = default_generator_config();
  gen.dialog_count = 60;
  Corpus corpus = generate_synthetic(gen, 19);

  std::map<std::string, std::vector<const DialogExample*>> dialogs;
  for (const DialogExample& e : corpus.examples) dialogs[e.dialog_id].push_back(&e);
  for (auto& [dialog_id, turns] : dialogs) {
    std::sort(turns.begin(), turns.end(),
              [](const DialogExample* a, const DialogExample* b) {
                return a->turn_count() < b->turn_count();
              });
    auto targets = derive_targets(turns, corpus.schema, false);
    StateMap z_prev;
    for (std::size_t t = 0; t < turns.size(); ++t) {
      for (const auto& [slot, label] : targets[t].classes) {
        if (label == OpClass::kChanged) {
          auto it = z_prev.find(slot);
          REQUIRE(it != z_prev.end());
          CHECK(it->second != turns[t]->turn_state.at(slot));
        }
      }
      z_prev = accumulate_state(z_prev, turns[t]->turn_state, corpus.schema);
    }
  }
}

TEST_CASE("slot and context encoders share their weights") {
  Corpus corpus = tiny_corpus(false);
  PreviewNet net(corpus.schema, Vocabulary::build(corpus), small_config(), 5);
  const SlotSpec& slot = corpus.schema.slots()[0];

  // the slot embedding is exactly the pooled context encoding of its words
  auto direct = net.encode_tokens(Tokens(slot.name_words.begin(), slot.name_words.end()));
  auto pooled = net.slot_embedding(slot);
  for (std::size_t i = 0; i < pooled.size(); ++i)
    CHECK(pooled[i] ==
          doctest::Approx(0.5 * (direct.front()[i] + direct.back()[i])).epsilon(1e-12));

  // mutating the shared block moves both encoders
  auto before_slot = net.slot_embedding(slot);
  auto before_ctx = net.encode_tokens({"golden", "house"});
  for (double& v : net.params().values_of("mix_w")) v += 0.05;
  auto after_slot = net.slot_embedding(slot);
  auto after_ctx = net.encode_tokens({"golden", "house"});
  CHECK(before_slot != after_slot);
  CHECK(before_ctx != after_ctx);
}

TEST_CASE("aux LM loss decreases over 50 steps on a small fixture") {
  Corpus corpus = tiny_corpus(false);
  auto targets = targets_for(corpus, false);
  PreviewConfig config = small_config();
  config.mask_rate = 0.4;
  config.aux_weight = 1.0;
  config.learning_rate = 0.3;
  PreviewNet net(corpus.schema, Vocabulary::build(corpus), config, 11);

  std::vector<PreviewItem> batch;
  for (std::size_t i = 0; i < corpus.examples.size(); ++i)
    batch.push_back({&corpus.examples[i], &targets[i]});

  const double before = *net.aux_lm_loss(batch, 99);
  std::vector<double> grad;
  for (int step = 0; step < 50; ++step) {
    static_cast<void>(net.total_loss(batch, 99, &grad));
    net.sgd_step(grad);
  }
  const double after = *net.aux_lm_loss(batch, 99);
  CHECK(after < before);
}

TEST_CASE("pretrain: zero epochs returns initialization unchanged") {
  Corpus corpus = tiny_corpus(true);
  PreviewConfig config = small_config();
  config.epochs = 0;
  PretrainResult result = pretrain(corpus, config, 21);
  PreviewNet fresh(corpus.schema, Vocabulary::build(corpus), config,
                   derive_seed(21, "pretrain-init"));
  CHECK(result.net.params().flat() == fresh.params().flat());
  CHECK(result.report.epoch_total.empty());
}

TEST_CASE("pretrain is deterministic and reduces the loss") {
  GeneratorConfig gen = default_generator_config();
  gen.dialog_count = 25;
  Corpus corpus = generate_synthetic(gen, 31);

  PreviewConfig config;
  config.embed_dim = 16;
  config.epochs = 3;
  PretrainResult a = pretrain(corpus, config, 7);
  PretrainResult b = pretrain(corpus, config, 7);
  CHECK(a.net.params().flat() == b.net.params().flat());
  REQUIRE(a.report.epoch_total.size() == 3);
  CHECK(a.report.epoch_total.back() < a.report.epoch_total.front());

  namespace fs = std::filesystem;
  fs::path pa = fs::temp_directory_path() / "saclog_enc_a.bin";
  fs::path pb = fs::temp_directory_path() / "saclog_enc_b.bin";
  save_encoder(a.net, pa);
  save_encoder(b.net, pb);
  std::ifstream fa(pa, std::ios::binary), fb(pb, std::ios::binary);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  CHECK(sa.str() == sb.str());
}

TEST_CASE("synthetic examples are excluded from the aux objective") {
  Corpus synthetic_corpus = tiny_corpus(true);
  auto targets = targets_for(synthetic_corpus, false);
  PreviewConfig config = small_config();
  config.mask_rate = 1.0;
  PreviewNet net(synthetic_corpus.schema, Vocabulary::build(synthetic_corpus), config, 3);
  std::vector<PreviewItem> batch;
  for (std::size_t i = 0; i < synthetic_corpus.examples.size(); ++i)
    batch.push_back({&synthetic_corpus.examples[i], &targets[i]});
  PreviewLosses breakdown;
  static_cast<void>(net.total_loss(batch, 5, nullptr, &breakdown));
  CHECK_FALSE(breakdown.aux.has_value());  // nothing masked: all synthetic
}

TEST_CASE("span head rejects width mismatches") {
  Corpus corpus = tiny_corpus(false);
  PreviewNet net(corpus.schema, Vocabulary::build(corpus), small_config(), 5);
  auto states = net.encode_tokens({"golden", "house"});
  CHECK_THROWS_AS(static_cast<void>(net.span_head({1.0, 2.0}, states)), DataError);
  CHECK_THROWS_AS(static_cast<void>(net.cls_head({1.0, 2.0}, states)), DataError);
}
