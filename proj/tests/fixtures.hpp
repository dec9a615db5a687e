#pragma once

// Small models and loss instances shared by the unit tests and the
// acceptance binary.

#include <utility>
#include <vector>

#include "mdet/nn.hpp"
#include "mdet/objectives.hpp"
#include "mdet/tagger.hpp"
#include "oracles.hpp"

namespace fixture {

using namespace mdet;

struct TinyTagger {
  ParamStore store;
  nn::Encoder encoder;
  Tagger tagger;
  TinyTagger(std::uint64_t seed, int depth_cap = 2, double init = 0.1, int dim = 4, double output_bias = 1.0) {
    Rng rng(seed);
    encoder = nn::Encoder(store, "enc", 6, dim, dim, rng);
    TaggerConfig cfg;
    cfg.d_symbol = dim;
    cfg.depth_cap = depth_cap;
    cfg.output_bias = output_bias;
    tagger = Tagger(store, "tagger", encoder.out_dim(), cfg, rng);
    // Wider random parameters give peaked, diverse distributions.
    Rng r2(seed ^ 0xabc);
    for (std::size_t i = 0; i < store.size(); ++i)
      for (double& v : store[i].value.data) v = r2.uniform(-init, init);
  }
};

inline std::vector<int> random_ids(Rng& rng, int m) {
  std::vector<int> ids(m);
  for (int& x : ids) x = static_cast<int>(rng.below(6));
  return ids;
}

inline double sequence_score(const TinyTagger& t, const std::vector<int>& ids, const std::vector<TagSymbol>& seq) {
  Graph g;
  auto unit = t.encoder.encode(g, ids);
  auto steps = t.tagger.forward_teacher_forced(g, unit, seq);
  double s = 0;
  for (std::size_t k = 0; k < seq.size(); ++k) s += steps[k].log_probs.value()[static_cast<int>(seq[k])];
  return s;
}


inline LossConfig mode(LossMode m, double w = 1.0, double rho = 0.0) {
  LossConfig c;
  c.mode = m;
  c.w = w;
  c.rho = rho;
  return c;
}

struct TagInstance {
  std::vector<TagSymbol> gold;
  std::vector<double> logits;  // T x 4
};

inline TagInstance random_tag_instance(Rng& rng) {
  TagInstance t;
  const int m = 1 + static_cast<int>(rng.below(5));
  std::vector<TagSymbol> seq;
  // a valid sequence: random laminar set encoded by the reference encoder
  t.gold = parse_tags(oracle::encode(oracle::random_laminar(rng, m, 2), m));
  for (std::size_t k = 0; k < 4 * t.gold.size(); ++k) t.logits.push_back(rng.uniform(-3, 3));
  return t;
}

// Loss and the gradient with respect to every logit.
inline std::pair<double, std::vector<double>> tag_loss(const TagInstance& t, const LossConfig& cfg) {
  ParamStore s;
  auto& p = s.add("o", {static_cast<int>(t.gold.size()), 4});
  p.value.data = t.logits;
  Graph g;
  Var o = g.param(p);
  std::vector<TaggerStep> steps;
  for (std::size_t k = 0; k < t.gold.size(); ++k) {
    Var r = row(o, static_cast<int>(k));
    steps.push_back({0, t.gold[k], r, log_softmax(r)});
  }
  Var l = tagger_loss(g, steps, t.gold, cfg);
  const double v = l.item();
  g.backward(l);
  return {v, p.grad.data};
}

inline std::pair<double, std::vector<double>> span_loss_grad(const std::vector<double>& logits, const std::vector<double>& labels,
                                                      const LossConfig& cfg) {
  ParamStore s;
  auto& p = s.add("z", {static_cast<int>(logits.size())});
  p.value.data = logits;
  Graph g;
  Var l = span_loss_from_logits(g, g.param(p), labels, cfg);
  const double v = l.item();
  g.backward(l);
  return {v, p.grad.data};
}


}  // namespace fixture
