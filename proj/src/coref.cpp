#include "mdet/coref.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace mdet {

int distance_bucket(int distance) {
  if (distance < 1) throw std::out_of_range("antecedent distance must be >= 1");
  if (distance <= 4) return distance - 1;
  if (distance <= 7) return 4;
  if (distance <= 15) return 5;
  if (distance <= 31) return 6;
  return 7;
}

std::vector<CandidateMention> select_candidates(const std::vector<MentionSpan>& predicted,
                                                const std::vector<MentionSpan>& gold,
                                                const std::vector<int>& gold_cluster, Phase phase) {
  if (gold.size() != gold_cluster.size()) throw std::invalid_argument("select_candidates: cluster ids misaligned");
  std::map<MentionSpan, CandidateMention> merged;
  std::map<MentionSpan, int> cluster_of;
  for (std::size_t k = 0; k < gold.size(); ++k) cluster_of[gold[k]] = gold_cluster[k];
  for (const auto& s : predicted) {
    CandidateMention c{s, -1, true};
    if (auto it = cluster_of.find(s); it != cluster_of.end()) c.gold_cluster = it->second;
    merged[s] = c;
  }
  if (phase == Phase::Train) {
    for (std::size_t k = 0; k < gold.size(); ++k) {
      merged.try_emplace(gold[k], CandidateMention{gold[k], gold_cluster[k], false});
    }
  }
  std::vector<CandidateMention> out;
  out.reserve(merged.size());
  for (auto& [span, c] : merged) out.push_back(c);
  return out;
}

CorefHead::CorefHead(ParamStore& store, const std::string& name, int d_repr, const CorefConfig& config, Rng& rng)
    : config_(config) {
  v_ = &store.add_uniform(name + ".v", {}, rng);
  dist_emb_ = &store.add_uniform(name + ".distance_emb", {kNumDistanceBuckets, config.d_distance}, rng);
  hidden_ = nn::Linear(store, name + ".pair_hidden", 3 * d_repr + config.d_distance, config.d_hidden, rng);
  out_ = nn::Linear(store, name + ".pair_out", config.d_hidden, 1, rng);
}

Var CorefHead::s_m_span(Graph& g, Var probs) const {
  const int n = static_cast<int>(probs.size());
  // (n x 1) column times the 1 x 1 scale.
  Var scaled = linear(reshape(probs, {n, 1}), reshape(g.param(*v_), {1, 1}));
  return reshape(scaled, {n});
}

Var CorefHead::s_m_tagger(Graph& g, Var p_open, Var p_close) const { return s_m_span(g, mul(p_open, p_close)); }

Var CorefHead::pair_features(Graph& g, Var reprs, const std::vector<int>& anaphors,
                             const std::vector<int>& antecedents) const {
  std::vector<int> buckets;
  buckets.reserve(anaphors.size());
  for (std::size_t p = 0; p < anaphors.size(); ++p) buckets.push_back(distance_bucket(anaphors[p] - antecedents[p]));
  Var rk = gather(reprs, anaphors);
  Var ra = gather(reprs, antecedents);
  return concat_cols({rk, ra, mul(rk, ra), gather(g.param(*dist_emb_), buckets)});
}

Var CorefHead::s_c(Graph& g, Var reprs, int k, int a) const {
  const int n = reprs.value().rows();
  if (k < 0 || k >= n || a < 0 || a >= n) throw std::out_of_range("s_c: mention index out of range");
  if (a >= k) {
    throw std::invalid_argument("s_c: antecedent " + std::to_string(a) + " does not precede mention " +
                                std::to_string(k));
  }
  Var score = out_(g, relu(hidden_(g, pair_features(g, reprs, {k}, {a}))));
  return reshape(score, {});
}

PairScores CorefHead::score(Graph& g, Var reprs, Var s_m) const {
  PairScores ps;
  ps.num_candidates = reprs.value().rows();
  if (static_cast<int>(s_m.size()) != ps.num_candidates) {
    throw ShapeError("coref score: " + std::to_string(s_m.size()) + " mention scores for " +
                     std::to_string(ps.num_candidates) + " candidates");
  }
  std::vector<int> anaphors;
  for (int k = 0; k < ps.num_candidates; ++k) {
    ps.offset.push_back(static_cast<int>(ps.antecedent.size()));
    const int first = std::max(0, k - config_.antecedent_cap);
    ps.count.push_back(k - first);
    for (int a = first; a < k; ++a) {
      anaphors.push_back(k);
      ps.antecedent.push_back(a);
    }
  }
  ps.s_m = s_m;
  if (ps.antecedent.empty()) return ps;
  const int pairs = static_cast<int>(ps.antecedent.size());
  ps.s_c = reshape(out_(g, relu(hidden_(g, pair_features(g, reprs, anaphors, ps.antecedent)))), {pairs});
  ps.s = add(ps.s_c, add(gather(s_m, anaphors), gather(s_m, ps.antecedent)));
  return ps;
}

namespace {

double log_sum_exp(const std::vector<double>& xs) {
  const double mx = *std::max_element(xs.begin(), xs.end());
  double z = 0.0;
  for (double x : xs) z += std::exp(x - mx);
  return mx + std::log(z);
}

// For each anaphor: the scores in view (dummy first) and which are gold.
struct AnaphorView {
  std::vector<double> scores;
  std::vector<bool> gold;
};

AnaphorView view_of(const PairScores& ps, const Tensor* s, const std::vector<int>& gold_cluster, int k) {
  AnaphorView v;
  v.scores.push_back(0.0);
  v.gold.push_back(false);
  bool any = false;
  for (int p = ps.offset[k]; p < ps.offset[k] + ps.count[k]; ++p) {
    const int a = ps.antecedent[p];
    v.scores.push_back((*s)[p]);
    const bool g = gold_cluster[k] >= 0 && gold_cluster[a] == gold_cluster[k];
    v.gold.push_back(g);
    any = any || g;
  }
  if (!any) v.gold[0] = true;
  return v;
}

}  // namespace

Var antecedent_loss(Graph& g, const PairScores& ps, const std::vector<int>& gold_cluster) {
  if (static_cast<int>(gold_cluster.size()) != ps.num_candidates) {
    throw std::invalid_argument("antecedent_loss: cluster ids misaligned with candidates");
  }
  if (!ps.s.valid()) {
    // No pairs: every candidate only sees the dummy, which is gold.
    return g.constant(Tensor::scalar(0.0));
  }
  const Tensor& s = ps.s.value();
  double loss = 0.0;
  for (int k = 0; k < ps.num_candidates; ++k) {
    AnaphorView v = view_of(ps, &s, gold_cluster, k);
    std::vector<double> gold_scores;
    for (std::size_t i = 0; i < v.scores.size(); ++i)
      if (v.gold[i]) gold_scores.push_back(v.scores[i]);
    loss += log_sum_exp(v.scores) - log_sum_exp(gold_scores);
  }
  const int is = ps.s.id;
  return g.add_node(Tensor::scalar(loss), {ps.s}, [is, ps_off = ps.offset, ps_cnt = ps.count, ps_ant = ps.antecedent,
                                                    n = ps.num_candidates, gold_cluster](Graph& g, int self) {
    if (!g.requires_grad(is)) return;
    const double gy = g.grad(self)[0];
    const Tensor& s = g.value(is);
    Tensor& gs = g.grad(is);
    PairScores shape;
    shape.num_candidates = n;
    shape.offset = ps_off;
    shape.count = ps_cnt;
    shape.antecedent = ps_ant;
    for (int k = 0; k < n; ++k) {
      AnaphorView v = view_of(shape, &s, gold_cluster, k);
      std::vector<double> gold_scores;
      for (std::size_t i = 0; i < v.scores.size(); ++i)
        if (v.gold[i]) gold_scores.push_back(v.scores[i]);
      const double lz_all = log_sum_exp(v.scores);
      const double lz_gold = log_sum_exp(gold_scores);
      for (int i = 1; i < static_cast<int>(v.scores.size()); ++i) {
        double d = std::exp(v.scores[i] - lz_all);
        if (v.gold[i]) d -= std::exp(v.scores[i] - lz_gold);
        gs[ps_off[k] + i - 1] += gy * d;
      }
    }
  });
}

std::vector<int> best_antecedents(const PairScores& ps) {
  std::vector<int> best(ps.num_candidates, -1);
  if (!ps.s.valid()) return best;
  const Tensor& s = ps.s.value();
  for (int k = 0; k < ps.num_candidates; ++k) {
    double top = 0.0;
    for (int p = ps.offset[k]; p < ps.offset[k] + ps.count[k]; ++p) {
      if (s[p] > top) {
        top = s[p];
        best[k] = ps.antecedent[p];
      }
    }
  }
  return best;
}

std::vector<std::vector<int>> cluster_decode(const PairScores& ps) {
  std::vector<int> parent(ps.num_candidates);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  const std::vector<int> best = best_antecedents(ps);
  for (int k = 0; k < ps.num_candidates; ++k) {
    if (best[k] < 0) continue;
    const int a = find(best[k]), b = find(k);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::map<int, std::vector<int>> groups;
  for (int k = 0; k < ps.num_candidates; ++k) groups[find(k)].push_back(k);
  std::vector<std::vector<int>> out;
  for (auto& [root, members] : groups)
    if (members.size() >= 2) out.push_back(std::move(members));
  return out;
}

}  // namespace mdet
