#pragma once

// Mention-ranking coreference head. For a mention k and each preceding
// candidate a (at most K back), s(k, a) = s_c(k, a) + s_m(k) + s_m(a); the
// dummy antecedent scores 0.

#include <string>
#include <vector>

#include "mdet/nn.hpp"
#include "mdet/tag_codec.hpp"

namespace mdet {

struct CorefConfig {
  int d_hidden = 64;
  int d_distance = 8;
  int antecedent_cap = 50;
};

// Candidate-index distance buckets {1,2,3,4,5-7,8-15,16-31,32+} -> 0..7.
inline constexpr int kNumDistanceBuckets = 8;
int distance_bucket(int distance);

enum class Phase { Train, Test };

struct CandidateMention {
  MentionSpan span;       // document-level token indices
  int gold_cluster = -1;  // -1: not in any gold chain
  bool predicted = false;
};

// Train: predicted spans plus gold spans; test: predicted only. Sorted by
// (start, end), without duplicates.
std::vector<CandidateMention> select_candidates(const std::vector<MentionSpan>& predicted,
                                                const std::vector<MentionSpan>& gold,
                                                const std::vector<int>& gold_cluster, Phase phase);

struct PairScores {
  int num_candidates = 0;
  std::vector<int> offset;      // first pair of each anaphor
  std::vector<int> count;       // number of real antecedents in view
  std::vector<int> antecedent;  // per pair
  Var s_c;                      // per pair
  Var s_m;                      // per candidate
  Var s;                        // per pair, s_c + s_m[k] + s_m[a]
};

class CorefHead {
 public:
  CorefHead() = default;
  CorefHead(ParamStore& store, const std::string& name, int d_repr, const CorefConfig& config, Rng& rng);

  // v * P(m_ij)
  Var s_m_span(Graph& g, Var probs) const;
  // v * P(open at i) * P(close at j)
  Var s_m_tagger(Graph& g, Var p_open, Var p_close) const;

  // Pairwise score of rows k and a of `reprs`; requires a < k.
  Var s_c(Graph& g, Var reprs, int k, int a) const;

  // Every (k, a) pair inside the antecedent window, anaphor-major.
  PairScores score(Graph& g, Var reprs, Var s_m) const;

  const CorefConfig& config() const { return config_; }
  Parameter& v() const { return *v_; }
  const nn::Linear& hidden_layer() const { return hidden_; }
  const nn::Linear& output_layer() const { return out_; }
  Parameter& distance_embedding() const { return *dist_emb_; }

 private:
  Var pair_features(Graph& g, Var reprs, const std::vector<int>& anaphors, const std::vector<int>& antecedents) const;

  CorefConfig config_;
  Parameter* v_ = nullptr;
  Parameter* dist_emb_ = nullptr;
  nn::Linear hidden_;
  nn::Linear out_;
};

// Sum over candidates of -log of the probability mass on gold antecedents
// (softmax over the dummy and every antecedent in view). Candidates whose
// chain has no earlier member in view count the dummy as gold.
Var antecedent_loss(Graph& g, const PairScores& pairs, const std::vector<int>& gold_cluster);

// Highest-scoring antecedent per candidate (earliest on ties), or -1 when the
// best score does not exceed the dummy's 0.
std::vector<int> best_antecedents(const PairScores& pairs);

// Connected components of the best-antecedent links, as candidate indices;
// singletons are dropped.
std::vector<std::vector<int>> cluster_decode(const PairScores& pairs);

}  // namespace mdet
