#pragma once

// Mention detection P/R/F1 and the MUC, B-cubed and CEAF-phi4 coreference
// metrics with their CoNLL average. Counts aggregate over documents before
// the ratios are taken, as the shared-task scorer does.

#include <compare>
#include <cstdint>
#include <vector>

namespace mdet {

struct PRF {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};

PRF make_prf(double recall, double precision);

struct MetricCounts {
  double recall_num = 0.0;
  double recall_den = 0.0;
  double precision_num = 0.0;
  double precision_den = 0.0;

  MetricCounts& operator+=(const MetricCounts& o);
  // 0/0 ratios are 0.
  PRF prf() const;
};

struct MentionTuple {
  int doc = 0;
  int sentence = 0;
  int start = 0;
  int end = 0;
  auto operator<=>(const MentionTuple&) const = default;
};

MetricCounts mention_counts(const std::vector<MentionTuple>& predicted, const std::vector<MentionTuple>& gold);
PRF mention_prf(const std::vector<MentionTuple>& predicted, const std::vector<MentionTuple>& gold);

using MentionKey = std::int64_t;
using Cluster = std::vector<MentionKey>;
using Clustering = std::vector<Cluster>;

// Each function throws std::invalid_argument when a mention appears in two
// clusters of the same side, or a cluster is empty.
MetricCounts muc_counts(const Clustering& gold, const Clustering& pred);
MetricCounts b_cubed_counts(const Clustering& gold, const Clustering& pred);
MetricCounts ceaf_phi4_counts(const Clustering& gold, const Clustering& pred);

inline PRF muc(const Clustering& gold, const Clustering& pred) { return muc_counts(gold, pred).prf(); }
inline PRF b_cubed(const Clustering& gold, const Clustering& pred) { return b_cubed_counts(gold, pred).prf(); }
inline PRF ceaf_phi4(const Clustering& gold, const Clustering& pred) { return ceaf_phi4_counts(gold, pred).prf(); }

double conll_average(const PRF& muc, const PRF& b3, const PRF& ceaf);

// Drops clusters with fewer than two mentions.
Clustering without_singletons(const Clustering& c);

struct Assignment {
  double total = 0.0;
  std::vector<int> row_to_col;  // -1 for unmatched rows
};

// Maximum-weight matching of rows to columns for a dense nonnegative weight
// matrix (Hungarian method with potentials, O(n^3)).
Assignment max_weight_assignment(const std::vector<std::vector<double>>& weights);

}  // namespace mdet
