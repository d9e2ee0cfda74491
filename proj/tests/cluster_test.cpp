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


#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <tuple>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "weightleak/cluster.hpp"

namespace weightleak {
namespace {

using oracle::Points;

Points random_points(Rng& rng, std::size_t n, std::size_t d) {
  std::normal_distribution<double> nd;
  Points p(n, std::vector<double>(d));
  for (auto& row : p)
    for (double& v : row) v = nd(rng);
  return p;
}

TEST(WardLinkage, MatchesNaiveOracleOn200Instances) {
  Rng rng(2024);
  std::uniform_int_distribution<std::size_t> size(2, 10), dim(1, 6);
  for (int inst = 0; inst < 200; ++inst) {
    const Points p = random_points(rng, size(rng), dim(rng));
    const Dendrogram fast = ward_linkage(p), slow = oracle::naive_ward(p);
    ASSERT_EQ(fast.merges.size(), slow.merges.size());
    for (std::size_t m = 0; m < fast.merges.size(); ++m) {
      EXPECT_EQ(fast.merges[m].a, slow.merges[m].a) << "instance " << inst;
      EXPECT_EQ(fast.merges[m].b, slow.merges[m].b) << "instance " << inst;
      EXPECT_EQ(fast.merges[m].size, slow.merges[m].size);
      EXPECT_EQ(fast.merges[m].id, slow.merges[m].id);
      EXPECT_NEAR(fast.merges[m].cost, slow.merges[m].cost, 1e-9) << "instance " << inst;
    }
  }
}

struct Golden {
  Points points;
  // {a, b, scipy distance, size}; scipy reports sqrt(2 * cost).
  std::vector<std::tuple<std::size_t, std::size_t, double, std::size_t>> merges;
};

// Reference linkages from scipy.cluster.hierarchy.linkage(method="ward").
TEST(WardLinkage, MatchesScipyReference) {
  const std::vector<Golden> cases = {
      {{{2.041, -2.556}, {0.418, -0.568}, {-0.453, -0.216}, {-2.02, -0.232}, {-0.865, 3.323},
        {0.226, -0.353}},
       {{1, 5, 0.288251626187954, 2},
        {2, 6, 0.9383711064037156, 3},
        {3, 7, 2.5583028879838814, 4},
        {0, 8, 4.222215934790641, 5},
        {4, 9, 5.431242761406761, 6}}},
      {{{-0.281, -0.668, -1.055}, {-0.391, 0.482, -0.239}, {0.958, -0.2, 0.024},
        {1.546, 0.545, -0.505}, {-0.183, 0.541, 1.935}, {-0.27, -0.244, 1.002},
        {-0.886, -0.292, 0.883}, {0.58, 0.092, 0.67}},
       {{5, 6, 0.6292225361507644, 2},
        {2, 7, 0.803407742058788, 2},
        {0, 1, 1.4143747735306933, 2},
        {3, 9, 1.5004150536879235, 3},
        {4, 8, 1.5472824564377379, 3},
        {10, 11, 2.410754791899555, 5},
        {12, 13, 3.4084086462746805, 8}}},
      {{{-2.828, 1.021, -0.96, -1.669, 0.276}, {0.701, -0.445, -1.076, 0.026, -0.053},
        {1.406, 0.747, 0.194, 1.112, -0.206}, {-0.926, 0.584, 0.583, -0.215, -0.783},
        {0.229, -2.494, 0.69, 0.491, -1.639}, {0.061, -0.964, 0.757, -2.034, -0.914},
        {0.71, 1.156, -2.158, -0.498, 0.328}, {-0.609, 1.591, -1.191, 0.355, -1.048},
        {1.406, -0.022, -0.372, -1.718, 1.682}, {0.753, 0.754, 1.138, 0.349, -0.639}},
       {{2, 9, 1.4447325011918295, 2},
        {1, 6, 2.0380733549114467, 2},
        {3, 7, 2.1579478677669672, 2},
        {8, 11, 3.003339419157726, 3},
        {4, 5, 3.0454659741983656, 2},
        {10, 12, 3.2078613592236183, 4},
        {13, 15, 4.544766013674149, 7},
        {0, 16, 4.973259113929789, 8},
        {14, 17, 5.35313174693095, 10}}},
  };
  for (const auto& g : cases) {
    const Dendrogram t = ward_linkage(g.points);
    ASSERT_EQ(t.merges.size(), g.merges.size());
    for (std::size_t m = 0; m < g.merges.size(); ++m) {
      const auto& [a, b, dist, size] = g.merges[m];
      const Merge& got = t.merges[m];
      EXPECT_EQ(std::minmax(got.a, got.b), std::minmax(a, b));
      EXPECT_EQ(got.size, size);
      EXPECT_NEAR(std::sqrt(2 * got.cost), dist, 1e-12);
    }
  }
}

TEST(WardLinkage, TiesBreakOnSmallestLeaves) {
  // Unit square: four equal nearest-neighbour distances.
  const Points sq{{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  const Dendrogram t = ward_linkage(sq);
  EXPECT_EQ(t.merges[0].a, 0u);
  EXPECT_EQ(t.merges[0].b, 1u);
  EXPECT_EQ(t.merges[1].a, 2u);
  EXPECT_EQ(t.merges[1].b, 3u);
}

TEST(WardLinkage, ShiftInvariant) {
  Rng rng(5);
  Points p = random_points(rng, 9, 4), q = p;
  for (auto& row : q)
    for (std::size_t d = 0; d < row.size(); ++d) row[d] += 0.5 * static_cast<double>(d) - 1.0;
  const Dendrogram a = ward_linkage(p), b = ward_linkage(q);
  for (std::size_t m = 0; m < a.merges.size(); ++m) {
    EXPECT_EQ(a.merges[m].a, b.merges[m].a);
    EXPECT_EQ(a.merges[m].b, b.merges[m].b);
    EXPECT_NEAR(a.merges[m].cost, b.merges[m].cost, 1e-9);
  }
}

TEST(WardLinkage, RejectsBadInput) {
  EXPECT_THROW(ward_linkage({}), Error);
  EXPECT_THROW(ward_linkage({{1.0, 2.0}, {1.0}}), Error);
  EXPECT_THROW(ward_linkage({{1.0}, {std::numeric_limits<double>::infinity()}}), Error);
  EXPECT_EQ(ward_linkage({{3.0}}).merges.size(), 0u);
}

TEST(CutTree, ExtremesAndLabelOrder) {
  const Points p{{0.0}, {10.0}, {0.1}, {10.2}, {5.0}};
  const Dendrogram t = ward_linkage(p);
  EXPECT_EQ(cut_tree(t, 5).labels, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(cut_tree(t, 1).labels, (std::vector<std::size_t>(5, 0)));
  EXPECT_EQ(cut_tree(t, 3).labels, (std::vector<std::size_t>{0, 1, 0, 1, 2}));
  EXPECT_THROW(cut_tree(t, 0), Error);
  EXPECT_THROW(cut_tree(t, 6), Error);
}

TEST(Purity, HandCases) {
  const std::vector<std::size_t> perfect{0, 0, 1, 1};
  const std::vector<Gender> g{Gender::kMale, Gender::kMale, Gender::kFemale, Gender::kFemale};
  EXPECT_DOUBLE_EQ(purity<Gender>(perfect, g), 1.0);

  const std::vector<std::size_t> c{0, 0, 0, 1, 1};
  const std::vector<Gender> t{Gender::kMale, Gender::kMale, Gender::kFemale, Gender::kFemale,
                              Gender::kFemale};
  EXPECT_DOUBLE_EQ(purity<Gender>(c, t), 0.8);
  EXPECT_DOUBLE_EQ(majority_baseline<Gender>(t), 0.6);

  const std::vector<std::size_t> singletons{0, 1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(purity<Gender>(singletons, t), 1.0);
  EXPECT_THROW(purity<Gender>(std::vector<std::size_t>{}, std::vector<Gender>{}), Error);
  EXPECT_THROW(purity<Gender>(perfect, t), Error);
}

TEST(Purity, InvariantUnderRelabeling) {
  Rng rng(77);
  std::uniform_int_distribution<std::size_t> cl(0, 4), tr(0, 2);
  std::vector<std::size_t> clusters(40), truth(40);
  for (auto& c : clusters) c = cl(rng);
  for (auto& t : truth) t = tr(rng);
  const double ref = purity<std::size_t>(clusters, truth);
  std::vector<std::size_t> perm(5);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (int i = 0; i < 100; ++i) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> relabeled(clusters.size());
    for (std::size_t k = 0; k < clusters.size(); ++k) relabeled[k] = perm[clusters[k]] + 100;
    EXPECT_DOUBLE_EQ(purity<std::size_t>(relabeled, truth), ref);
  }
}

TEST(GenderCluster, SeparatedPopulationIsPure) {
  Rng rng(9);
  std::normal_distribution<double> nd(0.0, 0.1);
  Points p;
  std::vector<Gender> g;
  for (int i = 0; i < 20; ++i) {
    const bool f = i % 2 == 0;
    p.push_back({(f ? 3.0 : -3.0) + nd(rng), nd(rng)});
    g.push_back(f ? Gender::kFemale : Gender::kMale);
  }
  const GenderClustering r = gender_cluster(p, g);
  EXPECT_DOUBLE_EQ(r.purity, 1.0);
  EXPECT_DOUBLE_EQ(r.majority_baseline, 0.5);
}

TEST(GenderCluster, SingleGenderIsAnError) {
  const Points p{{0.0}, {1.0}, {2.0}};
  EXPECT_THROW(gender_cluster(p, std::vector<Gender>(3, Gender::kMale)), Error);
  EXPECT_THROW(gender_cluster(p, std::vector<Gender>(2, Gender::kMale)), Error);
}

TEST(SpeakerClasses, CountAndBounds) {
  Rng rng(1);
  const Points iv = random_points(rng, 30, 4);
  const ClusterAssignment a = speaker_classes(iv, 7);
  EXPECT_EQ(*std::max_element(a.labels.begin(), a.labels.end()), 6u);
  EXPECT_THROW(speaker_classes(iv, 30), Error);
  EXPECT_THROW(speaker_classes(iv, 0), Error);
}

}  // namespace
}  // namespace weightleak
