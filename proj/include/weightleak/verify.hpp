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
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "weightleak/common.hpp"
#include "weightleak/matrix.hpp"

namespace weightleak {

// Enrollment embeddings come from session s1, test embeddings from s2.
struct SessionPair {
  std::string speaker_id;
  std::vector<double> s1;
  std::vector<double> s2;
};

// Indices into the speaker list: enroll uses its s1 side, test its s2 side.
struct Trial {
  std::size_t enroll = 0;
  std::size_t test = 0;
  bool is_target = false;
};

// Every s1 side is crossed with every s2 side: n target trials and n(n-1)
// non-target trials, ordered by (enroll, test).
inline std::vector<Trial> generate_trials(std::size_t n) {
  std::vector<Trial> out;
  out.reserve(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out.push_back({i, j, i == j});
  return out;
}

inline std::vector<Trial> generate_trials(std::span<const SessionPair> speakers) {
  for (const auto& s : speakers)
    require(!s.s1.empty() && !s.s2.empty(),
            "trials: speaker '" + s.speaker_id + "' is missing a session");
  return generate_trials(speakers.size());
}

inline double cosine_score(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "cosine: dimension mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  require(aa > 0 && bb > 0, "cosine: zero-norm embedding");
  const double c = ab / (std::sqrt(aa) * std::sqrt(bb));
  return std::clamp(c, -1.0, 1.0);
}

struct TrialScoreSet {
  std::vector<Trial> trials;
  std::vector<double> scores;
  std::size_t num_target = 0;
  std::size_t num_nontarget = 0;

  std::vector<double> target_scores() const { return side(true); }
  std::vector<double> nontarget_scores() const { return side(false); }

 private:
  std::vector<double> side(bool target) const {
    std::vector<double> out;
    for (std::size_t i = 0; i < trials.size(); ++i)
      if (trials[i].is_target == target) out.push_back(scores[i]);
    return out;
  }
};

inline TrialScoreSet score_trials(std::span<const SessionPair> speakers,
                                  std::vector<Trial> trials) {
  TrialScoreSet set;
  set.scores.reserve(trials.size());
  for (const Trial& t : trials) {
    require(t.enroll < speakers.size() && t.test < speakers.size(),
            "score: trial references an unknown speaker");
    set.scores.push_back(
        cosine_score(speakers[t.enroll].s1, speakers[t.test].s2));
    (t.is_target ? set.num_target : set.num_nontarget)++;
  }
  set.trials = std::move(trials);
  return set;
}

struct OperatingPoint {
  double threshold = 0;
  double false_alarm = 0;   // non-target scores >= threshold
  double false_reject = 0;  // target scores < threshold
};

// Empirical FA/FR at every distinct score used as threshold, followed by the
// point at +infinity (everything rejected).
inline std::vector<OperatingPoint> operating_points(
    std::vector<double> targets, std::vector<double> nontargets) {
  require(!targets.empty() && !nontargets.empty(),
          "operating points need target and non-target scores");
  std::sort(targets.begin(), targets.end());
  std::sort(nontargets.begin(), nontargets.end());
  std::vector<double> thresholds;
  thresholds.reserve(targets.size() + nontargets.size());
  std::merge(targets.begin(), targets.end(), nontargets.begin(),
             nontargets.end(), std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());
  thresholds.push_back(std::numeric_limits<double>::infinity());

  const double nt = static_cast<double>(targets.size());
  const double nn = static_cast<double>(nontargets.size());
  std::vector<OperatingPoint> pts;
  pts.reserve(thresholds.size());
  std::size_t t_below = 0, n_below = 0;
  for (double th : thresholds) {
    while (t_below < targets.size() && targets[t_below] < th) ++t_below;
    while (n_below < nontargets.size() && nontargets[n_below] < th) ++n_below;
    pts.push_back({th, static_cast<double>(nontargets.size() - n_below) / nn,
                   static_cast<double>(t_below) / nt});
  }
  return pts;
}

struct EerResult {
  double eer_percent = 0;
  double threshold = 0;
};

// Equal error rate: the FA/FR crossing, linearly interpolated between the two
// adjacent empirical operating points that bracket it.
inline EerResult compute_eer(std::vector<double> targets,
                             std::vector<double> nontargets) {
  for (double s : targets) require(std::isfinite(s), "eer: non-finite score");
  for (double s : nontargets) require(std::isfinite(s), "eer: non-finite score");
  const std::vector<OperatingPoint> pts =
      operating_points(std::move(targets), std::move(nontargets));
  // pts.front() has FR = 0 and pts.back() has FA = 0, so a crossing exists.
  std::size_t p = 0;
  while (p < pts.size() && pts[p].false_reject < pts[p].false_alarm) ++p;
  const OperatingPoint& hi = pts[p];
  if (p == 0 || hi.false_reject == hi.false_alarm)
    return {100.0 * hi.false_alarm, std::isfinite(hi.threshold)
                                        ? hi.threshold
                                        : pts[p > 0 ? p - 1 : 0].threshold};
  const OperatingPoint& lo = pts[p - 1];
  const double g0 = lo.false_alarm - lo.false_reject;
  const double g1 = hi.false_alarm - hi.false_reject;
  const double t = g0 / (g0 - g1);
  const double rate = lo.false_alarm + t * (hi.false_alarm - lo.false_alarm);
  const double th = std::isfinite(hi.threshold)
                        ? lo.threshold + t * (hi.threshold - lo.threshold)
                        : lo.threshold;
  return {100.0 * rate, th};
}

inline EerResult compute_eer(const TrialScoreSet& set) {
  return compute_eer(set.target_scores(), set.nontarget_scores());
}

}  // namespace weightleak
