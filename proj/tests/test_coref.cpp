#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "mdet/coref.hpp"
#include "oracles.hpp"

using namespace mdet;

namespace {

struct TinyHead {
  ParamStore store;
  CorefHead head;
  explicit TinyHead(std::uint64_t seed, int d_repr = 3, int cap = 50, double init = 0.5) {
    Rng rng(seed);
    CorefConfig cfg{4, 2, cap};
    head = CorefHead(store, "coref", d_repr, cfg, rng);
    Rng r2(seed + 1);
    for (std::size_t i = 0; i < store.size(); ++i)
      for (double& v : store[i].value.data) v = r2.uniform(-init, init);
  }
};

// Pair table with hand-set scores; only the fields the decoders read.
PairScores table(Graph& g, int n, const std::vector<double>& s, int cap = 50) {
  PairScores ps;
  ps.num_candidates = n;
  for (int k = 0; k < n; ++k) {
    ps.offset.push_back(static_cast<int>(ps.antecedent.size()));
    const int first = std::max(0, k - cap);
    ps.count.push_back(k - first);
    for (int a = first; a < k; ++a) ps.antecedent.push_back(a);
  }
  REQUIRE(s.size() == ps.antecedent.size());
  if (!s.empty()) ps.s = g.constant(Tensor::vector(s));
  return ps;
}

void zero_all(ParamStore& s) {
  for (std::size_t i = 0; i < s.size(); ++i) std::fill(s[i].value.data.begin(), s[i].value.data.end(), 0.0);
}

}  // namespace

TEST_CASE("distance buckets") {
  std::vector<std::pair<int, int>> cases = {{1, 0}, {4, 3}, {5, 4}, {7, 4}, {8, 5}, {15, 5}, {16, 6}, {31, 6}, {32, 7}, {500, 7}};
  for (auto [d, b] : cases) CHECK(distance_bucket(d) == b);
  CHECK_THROWS(distance_bucket(0));
}

TEST_CASE("candidate selection") {
  std::vector<MentionSpan> gold = {{0, 1}, {2, 3}};
  std::vector<int> cl = {0, 0};
  auto same = select_candidates(gold, gold, cl, Phase::Train);
  REQUIRE(same.size() == 2);
  CHECK(same[0].span == gold[0]);
  CHECK(same[1].span == gold[1]);
  CHECK(same[0].predicted);
  auto both = select_candidates({{0, 1}}, {{2, 3}}, {4}, Phase::Train);
  REQUIRE(both.size() == 2);
  CHECK((both[0].span == MentionSpan{0, 1} && both[0].gold_cluster == -1 && both[0].predicted));
  CHECK((both[1].span == MentionSpan{2, 3} && both[1].gold_cluster == 4 && !both[1].predicted));
  CHECK(select_candidates({}, gold, cl, Phase::Test).empty());
  auto test = select_candidates({{2, 3}, {0, 0}}, gold, cl, Phase::Test);
  REQUIRE(test.size() == 2);
  CHECK(test[0].span == MentionSpan{0, 0});
  CHECK(test[1].gold_cluster == 0);
}

TEST_CASE("mention scores") {
  TinyHead t(1);
  Graph g;
  t.head.v().value[0] = 0.0;
  CHECK(t.head.s_m_span(g, g.constant(Tensor::vector({0.3, 0.9}))).value().data == std::vector<double>{0, 0});
  t.head.v().value[0] = 2.0;
  CHECK(t.head.s_m_tagger(g, g.constant(Tensor::vector({1.0})), g.constant(Tensor::vector({1.0}))).value()[0] == 2.0);
  t.head.v().value[0] = 4.0;
  CHECK(t.head.s_m_span(g, g.constant(Tensor::vector({0.5}))).value()[0] == 2.0);
}

TEST_CASE("pair score") {
  SUBCASE("zero weights") {
    TinyHead t(2);
    zero_all(t.store);
    Graph g;
    Var r = g.constant(Tensor::matrix(3, 3, {1, 2, 3, -1, 0.5, 2, 4, 4, 4}));
    for (int k = 1; k < 3; ++k)
      for (int a = 0; a < k; ++a) CHECK(t.head.s_c(g, r, k, a).item() == 0.0);
  }
  SUBCASE("product pathway by hand") {
    TinyHead t(3, 2);
    zero_all(t.store);
    // features [r_k (2), r_a (2), r_k*r_a (2), distance (2)] -> hidden 4 -> 1
    auto& w = t.head.hidden_layer().weight().value;
    w.data[0 * 8 + 4] = 1.0;  // hidden 0 reads product[0]
    w.data[1 * 8 + 5] = 1.0;  // hidden 1 reads product[1]
    auto& o = t.head.output_layer().weight().value;
    o.data = {1.0, 2.0, 0.0, 0.0};
    Graph g;
    Var r = g.constant(Tensor::matrix(2, 2, {0.5, -3, 0.5, -3}));
    // product = [0.25, 9]; relu -> [0.25, 9]; score = 0.25 + 18
    CHECK(t.head.s_c(g, r, 1, 0).item() == 18.25);
  }
  SUBCASE("antecedent must precede") {
    TinyHead t(4);
    Graph g;
    Var r = g.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    CHECK_THROWS(t.head.s_c(g, r, 0, 1));
    CHECK_THROWS(t.head.s_c(g, r, 1, 1));
  }
}

TEST_CASE("scoring: window, additivity, agreement with single pairs") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(9));
    const int cap = 1 + static_cast<int>(rng.below(5));
    TinyHead t(100 + trial, 3, cap);
    Graph g;
    std::vector<double> rv(3 * n), pv(n);
    for (double& x : rv) x = rng.uniform(-1, 1);
    for (double& x : pv) x = rng.uniform(0.01, 0.99);
    Var reprs = g.constant(Tensor::matrix(n, 3, rv));
    Var sm = t.head.s_m_span(g, g.constant(Tensor::vector(pv)));
    auto ps = t.head.score(g, reprs, sm);
    int expected_pairs = 0;
    for (int k = 0; k < n; ++k) {
      CHECK(ps.count[k] == std::min(k, cap));
      expected_pairs += std::min(k, cap);
    }
    CHECK(static_cast<int>(ps.antecedent.size()) == expected_pairs);
    if (expected_pairs == 0) continue;
    const Tensor s = ps.s.value();
    const Tensor sc = ps.s_c.value();
    const Tensor m = sm.value();
    for (int k = 0; k < n; ++k)
      for (int p = ps.offset[k]; p < ps.offset[k] + ps.count[k]; ++p) {
        const int a = ps.antecedent[p];
        CHECK(s[p] == sc[p] + (m[k] + m[a]));
        CHECK(s[p] - sc[p] == doctest::Approx(m[k] + m[a]).epsilon(1e-12));
        CHECK(sc[p] == doctest::Approx(t.head.s_c(g, reprs, k, a).item()).epsilon(1e-14));
      }
    t.head.v().value[0] = 0.0;
    Graph h;
    auto zero = t.head.score(h, h.constant(Tensor::matrix(n, 3, rv)), t.head.s_m_span(h, h.constant(Tensor::vector(pv))));
    CHECK(zero.s.value().data == zero.s_c.value().data);
  }
}

TEST_CASE("antecedent loss examples") {
  Graph g;
  SUBCASE("single candidate") {
    auto ps = table(g, 1, {});
    CHECK(antecedent_loss(g, ps, {0}).item() == 0.0);
  }
  SUBCASE("strong correct link") {
    for (double big : {10.0, 30.0, 60.0}) {
      auto ps = table(g, 2, {big});
      CHECK(antecedent_loss(g, ps, {3, 3}).item() == doctest::Approx(std::log1p(std::exp(-big))).epsilon(1e-12));
    }
    CHECK(antecedent_loss(g, table(g, 2, {60.0}), {3, 3}).item() < 1e-20);
  }
  SUBCASE("three candidates by hand") {
    // pairs: (1,0)=a, (2,0)=b, (2,1)=c; clusters {0,2}, {1}
    const double a = 0.7, b = -0.4, c = 1.3;
    auto ps = table(g, 3, {a, b, c});
    const double l0 = 0;                                                  // only dummy, gold
    const double l1 = std::log(1 + std::exp(a)) - 0;                      // no gold antecedent: dummy is gold
    const double l2 = std::log(1 + std::exp(b) + std::exp(c)) - b;        // gold: candidate 0
    CHECK(antecedent_loss(g, ps, {0, 1, 0}).item() == doctest::Approx(l0 + l1 + l2).epsilon(1e-14));
    // both earlier mentions gold
    const double l2b = std::log(1 + std::exp(b) + std::exp(c)) - std::log(std::exp(b) + std::exp(c));
    const double l1b = std::log(1 + std::exp(a)) - a;
    CHECK(antecedent_loss(g, ps, {0, 0, 0}).item() == doctest::Approx(l1b + l2b).epsilon(1e-14));
    // non-chain candidates (-1) always take the dummy
    CHECK(antecedent_loss(g, ps, {-1, -1, -1}).item() ==
          doctest::Approx(std::log(1 + std::exp(a)) + std::log(1 + std::exp(b) + std::exp(c))).epsilon(1e-14));
  }
}

TEST_CASE("antecedent loss closed form with v = 0 and zero pair weights") {
  Rng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(12));
    const int cap = 1 + static_cast<int>(rng.below(6));
    TinyHead t(trial, 3, cap);
    zero_all(t.store);
    std::vector<int> cl(n);
    for (int& c : cl) c = static_cast<int>(rng.below(4)) - 1;
    Graph g;
    std::vector<double> rv(3 * n);
    for (double& x : rv) x = rng.uniform(-1, 1);
    auto ps = t.head.score(g, g.constant(Tensor::matrix(n, 3, rv)),
                           t.head.s_m_span(g, g.constant(Tensor::vector(std::vector<double>(n, 0.4)))));
    double expect = 0;
    for (int k = 0; k < n; ++k) {
      const int view = std::min(k, cap);
      int gold = 0;
      for (int a = k - view; a < k; ++a) gold += cl[k] >= 0 && cl[a] == cl[k];
      expect += std::log(1.0 + view) - std::log(gold > 0 ? gold : 1);
    }
    CHECK(antecedent_loss(g, ps, cl).item() == doctest::Approx(expect).epsilon(1e-13));
  }
}

TEST_CASE("coref head gradient") {
  TinyHead t(21, 3, 2, 0.8);
  Rng rng(21);
  auto& reprs = t.store.add_uniform("reprs", {5, 3}, rng, 1.0);
  auto& logits = t.store.add_uniform("logits", {5}, rng, 2.0);
  auto loss = [&](Graph& g) {
    auto ps = t.head.score(g, g.param(reprs), t.head.s_m_span(g, sigmoid(g.param(logits))));
    return antecedent_loss(g, ps, {0, -1, 0, 1, 1});
  };
  auto r = oracle::finite_difference(t.store, loss);
  CHECK_MESSAGE(r.max_rel < 1e-3, r.where);
}

TEST_CASE("cluster decoding examples") {
  Graph g;
  CHECK(cluster_decode(table(g, 3, {-1, -0.5, -2})).empty());
  // 1 -> 0, 2 -> 1
  auto chain = cluster_decode(table(g, 3, {2.0, -1.0, 3.0}));
  REQUIRE(chain.size() == 1);
  CHECK(chain[0] == std::vector<int>{0, 1, 2});
  // tie between antecedents 0 and 1 for mention 2
  CHECK(best_antecedents(table(g, 3, {-1.0, 1.5, 1.5})) == std::vector<int>{-1, -1, 0});
  // a score of exactly 0 does not beat the dummy
  CHECK(best_antecedents(table(g, 2, {0.0})) == std::vector<int>{-1, -1});
}

TEST_CASE("argmax among real antecedents is shift invariant") {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(8));
    Graph g;
    auto base = table(g, n, std::vector<double>(n * (n - 1) / 2, 0.0));
    std::vector<double> s(base.antecedent.size());
    for (double& x : s) x = std::round(rng.uniform(-3, 3) * 4) / 4;  // ties happen
    // reference: earliest argmax over real antecedents
    std::vector<int> ref(n, -1);
    for (int k = 1; k < n; ++k) {
      int best = -1;
      for (int p = base.offset[k]; p < base.offset[k] + base.count[k]; ++p)
        if (best < 0 || s[p] > s[best]) best = p;
      ref[k] = base.antecedent[best];
    }
    for (double shift : {10.0, 100.0}) {
      std::vector<double> t = s;
      for (double& x : t) x += shift;
      auto got = best_antecedents(table(g, n, t));
      for (int k = 1; k < n; ++k) CHECK(got[k] == ref[k]);
    }
  }
}

TEST_CASE("cluster decoding is the partition of best-antecedent links") {
  Rng rng(14);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(10));
    Graph g;
    std::vector<double> s(n * (n - 1) / 2);
    for (double& x : s) x = rng.uniform(-2, 1);
    auto ps = table(g, n, s);
    auto best = best_antecedents(ps);
    // reference components by repeated relabelling
    std::vector<int> comp(n);
    std::iota(comp.begin(), comp.end(), 0);
    for (bool changed = true; changed;) {
      changed = false;
      for (int k = 0; k < n; ++k)
        if (best[k] >= 0 && comp[k] != comp[best[k]]) {
          const int lo = std::min(comp[k], comp[best[k]]), hi = std::max(comp[k], comp[best[k]]);
          for (int& c : comp)
            if (c == hi) c = lo;
          changed = true;
        }
    }
    std::map<int, std::vector<int>> groups;
    for (int k = 0; k < n; ++k) groups[comp[k]].push_back(k);
    std::set<std::vector<int>> expect;
    for (auto& [c, members] : groups)
      if (members.size() >= 2) expect.insert(members);
    auto got = cluster_decode(ps);
    std::set<std::vector<int>> got_set(got.begin(), got.end());
    CHECK(got_set == expect);
    std::set<int> seen;
    for (auto& c : got) {
      CHECK(c.size() >= 2);
      for (int x : c) CHECK(seen.insert(x).second);
    }
  }
}
