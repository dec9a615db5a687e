#pragma once

// Coreference metrics evaluated straight from their definitions.

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <utility>
#include <vector>

#include "mdet/metrics.hpp"
#include "mdet/rng.hpp"

namespace oracle {

using namespace mdet;

// Direct definition evaluation, independent of the library's counting.

inline const Cluster* owner(const Clustering& c, MentionKey m) {
  for (const auto& k : c)
    if (std::find(k.begin(), k.end(), m) != k.end()) return &k;
  return nullptr;
}

inline std::size_t overlap(const Cluster& a, const Cluster* b) {
  if (!b) return 0;
  std::size_t n = 0;
  for (auto m : a)
    if (std::find(b->begin(), b->end(), m) != b->end()) ++n;
  return n;
}

inline std::pair<double, double> muc_oracle_side(const Clustering& keys, const Clustering& other) {
  double num = 0, den = 0;
  for (const auto& k : keys) {
    std::set<const Cluster*> parts;
    int alone = 0;
    for (auto m : k) {
      const Cluster* o = owner(other, m);
      if (o) parts.insert(o);
      else ++alone;
    }
    num += static_cast<double>(k.size()) - static_cast<double>(parts.size() + alone);
    den += static_cast<double>(k.size()) - 1.0;
  }
  return {num, den};
}

inline double ratio(double n, double d) { return d == 0 ? 0.0 : n / d; }

inline std::pair<double, double> muc_oracle(const Clustering& g, const Clustering& p) {
  auto [rn, rd] = muc_oracle_side(g, p);
  auto [pn, pd] = muc_oracle_side(p, g);
  return {ratio(rn, rd), ratio(pn, pd)};
}

inline std::pair<double, double> b3_oracle(const Clustering& g, const Clustering& p) {
  double r = 0, nr = 0, pr = 0, np = 0;
  for (const auto& k : g)
    for (auto m : k) {
      r += static_cast<double>(overlap(k, owner(p, m))) / static_cast<double>(k.size());
      ++nr;
    }
  for (const auto& k : p)
    for (auto m : k) {
      pr += static_cast<double>(overlap(k, owner(g, m))) / static_cast<double>(k.size());
      ++np;
    }
  return {ratio(r, nr), ratio(pr, np)};
}

inline double phi4(const Cluster& a, const Cluster& b) {
  return 2.0 * static_cast<double>(overlap(a, &b)) / static_cast<double>(a.size() + b.size());
}

// Best alignment by trying every permutation of the padded cluster lists.
inline double best_alignment(const std::vector<std::vector<double>>& w, std::size_t rows, std::size_t cols) {
  const std::size_t n = std::max(rows, cols);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0.0;
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i)
      if (perm[i] < cols) s += w[i][perm[i]];
    best = std::max(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline std::pair<double, double> ceaf_oracle(const Clustering& g, const Clustering& p) {
  std::vector<std::vector<double>> w(g.size(), std::vector<double>(p.size()));
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < p.size(); ++j) w[i][j] = phi4(g[i], p[j]);
  const double s = best_alignment(w, g.size(), p.size());
  return {ratio(s, static_cast<double>(g.size())), ratio(s, static_cast<double>(p.size()))};
}

inline Clustering random_clustering(Rng& rng, int pool, int max_clusters) {
  std::map<int, Cluster> groups;
  const int k = 1 + static_cast<int>(rng.below(max_clusters));
  for (int m = 0; m < pool; ++m)
    if (rng.uniform() < 0.7) groups[static_cast<int>(rng.below(k))].push_back(m);
  Clustering out;
  for (auto& [id, c] : groups) out.push_back(c);
  return out;
}

}  // namespace oracle
