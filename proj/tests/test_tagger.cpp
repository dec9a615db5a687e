#include <doctest.h>

#include <cmath>
#include <memory>

#include "mdet/optim.hpp"
#include "mdet/tagger.hpp"
#include "fixtures.hpp"

using namespace mdet;

using namespace fixture;

TEST_CASE("teacher-forced pass follows the pointer") {
  TinyTagger t(1);
  Graph g;
  auto u1 = t.encoder.encode(g, {3});
  auto s1 = t.tagger.forward_teacher_forced(g, u1, parse_tags("-"));
  REQUIRE(s1.size() == 1);
  CHECK(s1[0].word == 0);
  auto u2 = t.encoder.encode(g, {3, 1});
  auto s2 = t.tagger.forward_teacher_forced(g, u2, parse_tags("[ + ] -"));
  REQUIRE(s2.size() == 4);
  std::vector<int> words;
  for (auto& s : s2) words.push_back(s.word);
  CHECK(words == std::vector<int>{0, 0, 1, 1});
  CHECK_THROWS(t.tagger.forward_teacher_forced(g, u2, parse_tags("] -")));
}

TEST_CASE("teacher-forced NLL gradient") {
  TinyTagger t(2, 2, 0.5, 3);
  auto loss = [&](Graph& g) {
    auto unit = t.encoder.encode(g, {1, 4, 2});
    auto seq = parse_tags("[ + [ ] + ] -");
    auto steps = t.tagger.forward_teacher_forced(g, unit, seq);
    std::vector<Var> terms;
    for (std::size_t k = 0; k < seq.size(); ++k) terms.push_back(pick(steps[k].log_probs, static_cast<int>(seq[k])));
    return scale(sum(concat(terms)), -1.0);
  };
  auto r = oracle::finite_difference(t.store, loss);
  CHECK_MESSAGE(r.max_rel < 1e-3, r.where);
}

TEST_CASE("a model fixed on one symbol returns that sequence for any beam") {
  TinyTagger t(3);
  for (std::size_t i = 0; i < t.store.size(); ++i)
    if (t.store[i].name.rfind("tagger.out", 0) == 0) std::fill(t.store[i].value.data.begin(), t.store[i].value.data.end(), 0.0);
  t.store.get("tagger.out.b").value[static_cast<int>(TagSymbol::AdvanceOut)] = 50.0;
  for (int b : {1, 2, 4, 16}) {
    Graph g;
    auto unit = t.encoder.encode(g, {0, 1, 2, 3});
    CHECK(render_tags(t.tagger.beam_decode(unit, b).symbols) == "- - - -");
  }
}

TEST_CASE("beam search with B=64 finds the exhaustive argmax") {
  Rng rng(99);
  int checked = 0;
  for (int trial = 0; trial < 30; ++trial) {
    TinyTagger t(100 + trial, 2, 1.5, 3);
    const int m = 1 + static_cast<int>(rng.below(4));
    auto ids = random_ids(rng, m);
    double best = -1e300;
    std::string best_seq;
    for (const auto& s : oracle::all_laminar(m, 2)) {
      const std::string text = oracle::encode(s, m);
      const double sc = sequence_score(t, ids, parse_tags(text));
      if (sc > best) {
        best = sc;
        best_seq = text;
      }
    }
    Graph g;
    auto unit = t.encoder.encode(g, ids);
    auto out = t.tagger.beam_decode(unit, 64);
    CHECK(render_tags(out.symbols) == best_seq);
    CHECK(out.score == doctest::Approx(best).epsilon(1e-12));
    ++checked;
  }
  CHECK(checked == 30);
}

TEST_CASE("decoded sequences are valid and bounded") {
  Rng rng(5);
  std::unique_ptr<TinyTagger> model;
  for (int trial = 0; trial < 1000; ++trial) {
    if (trial % 50 == 0) model = std::make_unique<TinyTagger>(500 + trial, 3, 1.0, 4);
    const int m = 1 + static_cast<int>(rng.below(8));
    auto ids = random_ids(rng, m);
    Graph g;
    auto unit = model->encoder.encode(g, ids);
    auto out = model->tagger.beam_decode(unit, 1 + static_cast<int>(rng.below(4)));
    CHECK(validate(out.symbols, m, 3).ok);
    CHECK(out.symbols.size() <= static_cast<std::size_t>(m) * (2 * 3 + 1));
    CHECK(out.steps.size() == out.symbols.size());
    CHECK(out.score == doctest::Approx(sequence_score(*model, ids, out.symbols)).epsilon(1e-12));
  }
}

TEST_CASE("beam monotonicity") {
  Rng rng(6);
  for (int trial = 0; trial < 300; ++trial) {
    TinyTagger t(900 + trial, 3, 0.3, 4);
    const int m = 1 + static_cast<int>(rng.below(8));
    auto ids = random_ids(rng, m);
    Graph g;
    auto unit = t.encoder.encode(g, ids);
    double prev = -1e300;
    for (int b : {1, 2, 4, 8, 16}) {
      const double s = t.tagger.beam_decode(unit, b).score;
      CHECK(s >= prev - 1e-12);
      prev = std::max(prev, s);
    }
  }
}

TEST_CASE("mention confidence") {
  SUBCASE("uniform model") {
    TinyTagger t(4, 2, 0.1, 4, 0.0);
    for (std::size_t i = 0; i < t.store.size(); ++i)
      if (t.store[i].name.rfind("tagger.out", 0) == 0) std::fill(t.store[i].value.data.begin(), t.store[i].value.data.end(), 0.0);
    Graph g;
    auto unit = t.encoder.encode(g, {1, 2, 3});
    auto out = t.tagger.beam_decode(unit, 2);
    for (int i = 0; i < 3; ++i)
      for (int j = i; j < 3; ++j) {
        auto [po, pc] = mention_confidence(out.steps, i, j);
        CHECK(po == doctest::Approx(0.25).epsilon(1e-15));
        CHECK(pc == doctest::Approx(0.25).epsilon(1e-15));
      }
  }
  SUBCASE("one-hot opening step") {
    std::vector<StepDistribution> steps = {{0, {1, 0, 0, 0}}, {0, {0, 0, 1, 0}}, {1, {0, 1, 0, 0}}, {1, {0, 0, 0, 1}}};
    CHECK(mention_confidence(steps, 0, 1) == std::pair<double, double>{1.0, 1.0});
  }
  SUBCASE("hand table: max over the word's block") {
    std::vector<StepDistribution> steps = {
        {0, {0.5, 0.1, 0.3, 0.1}}, {0, {0.2, 0.1, 0.6, 0.1}}, {1, {0.3, 0.4, 0.2, 0.1}}, {1, {0.1, 0.7, 0.1, 0.1}},
        {1, {0.05, 0.05, 0.1, 0.8}}};
    CHECK(mention_confidence(steps, 0, 1) == std::pair<double, double>{0.5, 0.7});
    CHECK(mention_confidence(steps, 1, 1) == std::pair<double, double>{0.3, 0.7});
    CHECK(mention_confidence(steps, 0, 0) == std::pair<double, double>{0.5, 0.1});
    CHECK_THROWS(mention_confidence(steps, 0, 2));
  }
}

TEST_CASE("teacher-forced NLL decreases under training") {
  TinyTagger t(12, 2, 0.1, 6);
  const std::vector<std::pair<std::vector<int>, std::string>> data = {
      {{0, 1, 2}, "[ + ] - -"}, {{3, 0, 1}, "- [ + ] -"}, {{4, 5}, "[ ] - -"}};
  auto epoch_loss = [&](bool update, Optimizer* opt) {
    double total = 0;
    for (auto& [ids, tags] : data) {
      t.store.zero_grad();
      Graph g;
      auto seq = parse_tags(tags);
      auto steps = t.tagger.forward_teacher_forced(g, t.encoder.encode(g, ids), seq);
      std::vector<Var> terms;
      for (std::size_t k = 0; k < seq.size(); ++k) terms.push_back(pick(steps[k].log_probs, static_cast<int>(seq[k])));
      Var l = scale(mean(concat(terms)), -1.0);
      total += l.item();
      if (update) {
        g.backward(l);
        opt->step(t.store);
      }
    }
    return total;
  };
  Optimizer opt({OptimizerKind::Adam, 0.01});
  const double before = epoch_loss(false, nullptr);
  for (int e = 0; e < 30; ++e) epoch_loss(true, &opt);
  CHECK(epoch_loss(false, nullptr) < 0.5 * before);
}
