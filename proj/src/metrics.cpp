#include "mdet/metrics.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

namespace mdet {

PRF make_prf(double recall, double precision) {
  PRF p{recall, precision, 0.0};
  if (recall + precision > 0.0) p.f1 = 2.0 * recall * precision / (recall + precision);
  return p;
}

MetricCounts& MetricCounts::operator+=(const MetricCounts& o) {
  recall_num += o.recall_num;
  recall_den += o.recall_den;
  precision_num += o.precision_num;
  precision_den += o.precision_den;
  return *this;
}

PRF MetricCounts::prf() const {
  const double r = recall_den > 0.0 ? recall_num / recall_den : 0.0;
  const double p = precision_den > 0.0 ? precision_num / precision_den : 0.0;
  return make_prf(r, p);
}

MetricCounts mention_counts(const std::vector<MentionTuple>& predicted, const std::vector<MentionTuple>& gold) {
  const std::set<MentionTuple> p(predicted.begin(), predicted.end());
  const std::set<MentionTuple> g(gold.begin(), gold.end());
  double hit = 0.0;
  for (const auto& m : p) hit += g.count(m);
  return {hit, static_cast<double>(g.size()), hit, static_cast<double>(p.size())};
}

PRF mention_prf(const std::vector<MentionTuple>& predicted, const std::vector<MentionTuple>& gold) {
  return mention_counts(predicted, gold).prf();
}

namespace {

// Mention -> cluster index; validates disjointness.
std::map<MentionKey, int> index_clusters(const Clustering& c, const char* side) {
  std::map<MentionKey, int> idx;
  for (std::size_t k = 0; k < c.size(); ++k) {
    if (c[k].empty()) throw std::invalid_argument(std::string(side) + " clustering has an empty cluster");
    for (MentionKey m : c[k]) {
      if (!idx.emplace(m, static_cast<int>(k)).second) {
        throw std::invalid_argument(std::string(side) + " clustering has mention " + std::to_string(m) +
                                    " in more than one cluster");
      }
    }
  }
  return idx;
}

// Sum over clusters of |K| - (number of parts of K under `other`), and the
// matching denominator sum of |K| - 1.
std::pair<double, double> muc_side(const Clustering& keys, const std::map<MentionKey, int>& other) {
  double num = 0.0, den = 0.0;
  for (const auto& k : keys) {
    std::set<int> parts;
    int unmatched = 0;
    for (MentionKey m : k) {
      auto it = other.find(m);
      if (it == other.end()) ++unmatched;
      else parts.insert(it->second);
    }
    num += static_cast<double>(k.size()) - static_cast<double>(parts.size() + unmatched);
    den += static_cast<double>(k.size()) - 1.0;
  }
  return {num, den};
}

// Overlap sizes |G_i ∩ R_j|.
std::vector<std::vector<int>> overlaps(const Clustering& gold, const Clustering& pred,
                                       const std::map<MentionKey, int>& pred_idx) {
  std::vector<std::vector<int>> ov(gold.size(), std::vector<int>(pred.size(), 0));
  for (std::size_t i = 0; i < gold.size(); ++i)
    for (MentionKey m : gold[i])
      if (auto it = pred_idx.find(m); it != pred_idx.end()) ++ov[i][it->second];
  return ov;
}

}  // namespace

MetricCounts muc_counts(const Clustering& gold, const Clustering& pred) {
  const auto gi = index_clusters(gold, "gold");
  const auto pi = index_clusters(pred, "predicted");
  const auto [rn, rd] = muc_side(gold, pi);
  const auto [pn, pd] = muc_side(pred, gi);
  return {rn, rd, pn, pd};
}

MetricCounts b_cubed_counts(const Clustering& gold, const Clustering& pred) {
  index_clusters(gold, "gold");
  const auto pi = index_clusters(pred, "predicted");
  const auto ov = overlaps(gold, pred, pi);
  MetricCounts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    c.recall_den += static_cast<double>(gold[i].size());
    for (std::size_t j = 0; j < pred.size(); ++j) {
      const double o = ov[i][j];
      c.recall_num += o * o / static_cast<double>(gold[i].size());
      c.precision_num += o * o / static_cast<double>(pred[j].size());
    }
  }
  for (const auto& r : pred) c.precision_den += static_cast<double>(r.size());
  return c;
}

MetricCounts ceaf_phi4_counts(const Clustering& gold, const Clustering& pred) {
  index_clusters(gold, "gold");
  const auto pi = index_clusters(pred, "predicted");
  const auto ov = overlaps(gold, pred, pi);
  std::vector<std::vector<double>> sim(gold.size(), std::vector<double>(pred.size(), 0.0));
  for (std::size_t i = 0; i < gold.size(); ++i)
    for (std::size_t j = 0; j < pred.size(); ++j)
      sim[i][j] = 2.0 * ov[i][j] / static_cast<double>(gold[i].size() + pred[j].size());
  const double best = max_weight_assignment(sim).total;
  return {best, static_cast<double>(gold.size()), best, static_cast<double>(pred.size())};
}

double conll_average(const PRF& muc, const PRF& b3, const PRF& ceaf) { return (muc.f1 + b3.f1 + ceaf.f1) / 3.0; }

Clustering without_singletons(const Clustering& c) {
  Clustering out;
  for (const auto& k : c)
    if (k.size() >= 2) out.push_back(k);
  return out;
}

Assignment max_weight_assignment(const std::vector<std::vector<double>>& weights) {
  const int rows = static_cast<int>(weights.size());
  const int cols = rows ? static_cast<int>(weights[0].size()) : 0;
  Assignment out;
  out.row_to_col.assign(rows, -1);
  if (rows == 0 || cols == 0) return out;
  const int n = std::max(rows, cols);
  // Minimize cost = -weight on an n x n padded matrix (padding weight 0).
  auto cost = [&](int i, int j) { return (i < rows && j < cols) ? -weights[i][j] : 0.0; };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  for (int j = 1; j <= n; ++j) {
    const int i = p[j] - 1;
    if (i >= 0 && i < rows && j - 1 < cols) {
      out.row_to_col[i] = j - 1;
      out.total += weights[i][j - 1];
    }
  }
  return out;
}

}  // namespace mdet
