// Copyright 2026 The weightleak Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "weightleak/common.hpp"

namespace weightleak {

// One agglomeration step. Leaves are clusters 0..N-1; the i-th merge creates
// cluster N+i. `a` is the side holding the smaller original leaf index.
struct Merge {
  std::size_t a = 0;
  std::size_t b = 0;
  double cost = 0;
  std::size_t id = 0;
  std::size_t size = 0;

  friend bool operator==(const Merge&, const Merge&) = default;
};

struct Dendrogram {
  std::size_t num_leaves = 0;
  std::vector<Merge> merges;

  friend bool operator==(const Dendrogram&, const Dendrogram&) = default;
};

struct ClusterAssignment {
  std::size_t k = 0;
  // Cluster index per input, numbered by smallest member index.
  std::vector<std::size_t> labels;
};

// Ward merge cost between clusters of sizes na, nb at squared centroid
// distance d2: the increase of total within-cluster sum of squares.
inline double ward_cost(std::size_t na, std::size_t nb, double d2) {
  const double a = static_cast<double>(na), b = static_cast<double>(nb);
  return a * b / (a + b) * d2;
}

inline double squared_distance(std::span<const double> x,
                               std::span<const double> y) {
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

// Agglomerative clustering with Ward linkage on Euclidean distance. Pairwise
// costs are maintained with the Lance-Williams recurrence; at each step the
// cheapest pair merges, ties going to the lexicographically smallest
// (min leaf of one side, min leaf of the other).
inline Dendrogram ward_linkage(const std::vector<std::vector<double>>& points) {
  const std::size_t n = points.size();
  require(n >= 1, "ward: need at least one point");
  const std::size_t dim = points.front().size();
  for (const auto& p : points) {
    require(p.size() == dim, "ward: dimension mismatch between inputs");
    for (double v : p) require(std::isfinite(v), "ward: non-finite input");
  }

  std::vector<double> cost(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      cost[i * n + j] = cost[j * n + i] =
          ward_cost(1, 1, squared_distance(points[i], points[j]));

  // Slot s holds a live cluster; slots are indexed by their original leaf.
  std::vector<bool> alive(n, true);
  std::vector<std::size_t> size(n, 1), min_leaf(n), cluster_id(n);
  std::iota(min_leaf.begin(), min_leaf.end(), std::size_t{0});
  std::iota(cluster_id.begin(), cluster_id.end(), std::size_t{0});

  Dendrogram tree{n, {}};
  tree.merges.reserve(n - 1);
  for (std::size_t step = 0; step + 1 < n; ++step) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = n, bj = n;
    std::pair<std::size_t, std::size_t> best_key{n, n};
    for (std::size_t i = 0; i < n; ++i) {
      if (!alive[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!alive[j]) continue;
        const double c = cost[i * n + j];
        const std::pair<std::size_t, std::size_t> key{
            std::min(min_leaf[i], min_leaf[j]), std::max(min_leaf[i], min_leaf[j])};
        if (c < best || (c == best && key < best_key)) {
          best = c;
          best_key = key;
          bi = i;
          bj = j;
        }
      }
    }
    if (min_leaf[bj] < min_leaf[bi]) std::swap(bi, bj);
    const std::size_t ni = size[bi], nj = size[bj];
    for (std::size_t k = 0; k < n; ++k) {
      if (!alive[k] || k == bi || k == bj) continue;
      const double nk = static_cast<double>(size[k]);
      const double updated =
          ((static_cast<double>(ni) + nk) * cost[k * n + bi] +
           (static_cast<double>(nj) + nk) * cost[k * n + bj] -
           nk * cost[bi * n + bj]) /
          (static_cast<double>(ni + nj) + nk);
      cost[k * n + bi] = cost[bi * n + k] = updated;
    }
    tree.merges.push_back(
        {cluster_id[bi], cluster_id[bj], best, n + step, ni + nj});
    alive[bj] = false;
    size[bi] = ni + nj;
    min_leaf[bi] = std::min(min_leaf[bi], min_leaf[bj]);
    cluster_id[bi] = n + step;
  }
  return tree;
}

// Flat partition obtained by applying the first N-k merges.
inline ClusterAssignment cut_tree(const Dendrogram& tree, std::size_t k) {
  const std::size_t n = tree.num_leaves;
  require(k >= 1 && k <= n, "cut: k must lie in [1, N]");
  std::vector<std::size_t> parent(2 * n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t m = 0; m < n - k; ++m) {
    const Merge& mg = tree.merges[m];
    parent[find(mg.a)] = mg.id;
    parent[find(mg.b)] = mg.id;
  }
  ClusterAssignment out{k, std::vector<std::size_t>(n)};
  std::map<std::size_t, std::size_t> relabel;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t root = find(i);
    auto it = relabel.find(root);
    if (it == relabel.end()) it = relabel.emplace(root, relabel.size()).first;
    out.labels[i] = it->second;
  }
  return out;
}

struct WardResult {
  Dendrogram tree;
  ClusterAssignment assignment;
};

inline WardResult ward_cluster(const std::vector<std::vector<double>>& points,
                               std::size_t k) {
  require(k >= 1, "ward: k must be >= 1");
  require(k <= points.size(), "ward: k exceeds the number of inputs");
  WardResult r{ward_linkage(points), {}};
  r.assignment = cut_tree(r.tree, k);
  return r;
}

// Purity = (1/N) * sum over clusters of the size of its largest truth class.
template <typename Label>
double purity(std::span<const std::size_t> clusters,
              std::span<const Label> truth) {
  require(!clusters.empty(), "purity: empty input");
  require(clusters.size() == truth.size(), "purity: length mismatch");
  std::map<std::size_t, std::map<Label, std::size_t>> counts;
  for (std::size_t i = 0; i < clusters.size(); ++i)
    ++counts[clusters[i]][truth[i]];
  std::size_t hits = 0;
  for (const auto& [c, by_label] : counts) {
    std::size_t best = 0;
    for (const auto& [label, count] : by_label) best = std::max(best, count);
    hits += best;
  }
  return static_cast<double>(hits) / static_cast<double>(clusters.size());
}

// Share of the most frequent truth label: purity of the one-cluster answer.
template <typename Label>
double majority_baseline(std::span<const Label> truth) {
  require(!truth.empty(), "majority_baseline: empty input");
  std::map<Label, std::size_t> counts;
  for (const auto& t : truth) ++counts[t];
  std::size_t best = 0;
  for (const auto& [l, c] : counts) best = std::max(best, c);
  return static_cast<double>(best) / static_cast<double>(truth.size());
}

struct GenderClustering {
  double purity = 0;
  double majority_baseline = 0;
  ClusterAssignment assignment;
};

// Two-way Ward clustering of one layer's vectors scored against gender.
inline GenderClustering gender_cluster(
    const std::vector<std::vector<double>>& layer_vectors,
    const std::vector<Gender>& genders) {
  require(layer_vectors.size() == genders.size(),
          "gender clustering: one gender label per vector required");
  require(layer_vectors.size() >= 2, "gender clustering: need >= 2 models");
  const bool has_f = std::count(genders.begin(), genders.end(), Gender::kFemale) > 0;
  const bool has_m = std::count(genders.begin(), genders.end(), Gender::kMale) > 0;
  require(has_f && has_m, "gender clustering: population has a single gender");
  GenderClustering g;
  g.assignment = ward_cluster(layer_vectors, 2).assignment;
  g.purity = purity<Gender>(g.assignment.labels, genders);
  g.majority_baseline = majority_baseline<Gender>(genders);
  return g;
}

// Speaker classes for extractor training: Ward clustering of pseudo-i-vectors
// cut at num_classes.
inline ClusterAssignment speaker_classes(
    const std::vector<std::vector<double>>& ivectors, std::size_t num_classes) {
  require(num_classes >= 1, "speaker_classes: num_classes must be >= 1");
  require(num_classes < ivectors.size(),
          "speaker_classes: num_classes must be smaller than the number of "
          "speakers");
  return ward_cluster(ivectors, num_classes).assignment;
}

}  // namespace weightleak
