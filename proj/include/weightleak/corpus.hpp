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

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "weightleak/common.hpp"
#include "weightleak/matrix.hpp"
#include "weightleak/nn.hpp"

namespace weightleak {

enum class Split { kGeneric, kP1, kP2 };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::kGeneric: return "generic";
    case Split::kP1: return "p1";
    case Split::kP2: return "p2";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "generic") return Split::kGeneric;
  if (s == "p1") return Split::kP1;
  if (s == "p2") return Split::kP2;
  throw Error("unknown split '" + std::string(s) + "'");
}

// Synthetic speaker population. A frame of class c spoken by speaker k in
// session s is
//   x = class_mean[c] + gender_strength * (+u for F, -u for M)
//       + speaker_offset[k] + session_offset[k][s] + noise
// with a fixed unit direction u and isotropic Gaussian offsets.
struct CorpusConfig {
  std::size_t feature_dim = 20;
  std::size_t num_classes = 10;
  std::size_t generic_speakers = 20;
  std::size_t p1_speakers = 60;
  std::size_t p2_speakers = 40;
  double female_fraction = 0.5;
  // Calibrated so the 13x32 surrogate separates genders on early layers.
  double gender_strength = 1.0;
  double speaker_sigma = 0.05;
  double session_sigma = 0.05;
  double noise_sigma = 1.5;
  double class_mean_norm = 4.0;
  std::size_t frames_per_session = 3000;
  std::uint64_t seed = 1;

  std::size_t num_speakers() const {
    return generic_speakers + p1_speakers + p2_speakers;
  }

  void validate() const {
    require(feature_dim >= 1, "corpus: feature_dim must be >= 1");
    require(num_classes >= 2, "corpus: num_classes must be >= 2");
    require(num_speakers() >= 2, "corpus: need at least 2 speakers");
    require(frames_per_session >= 1, "corpus: frames_per_session must be >= 1");
    require(female_fraction >= 0 && female_fraction <= 1,
            "corpus: female_fraction must lie in [0,1]");
    for (double s : {gender_strength, speaker_sigma, session_sigma,
                     noise_sigma, class_mean_norm})
      require(std::isfinite(s) && s >= 0,
              "corpus: strengths and sigmas must be finite and >= 0");
  }
};

struct SpeakerProfile {
  std::string speaker_id;
  Split split = Split::kGeneric;
  Gender gender = Gender::kFemale;
  std::vector<double> speaker_offset;
  std::array<std::vector<double>, 2> session_offset;
  std::array<Dataset<double>, 2> sessions;
  std::vector<double> pseudo_ivector;

  std::size_t num_frames() const {
    return sessions[0].size() + sessions[1].size();
  }
};

struct Corpus {
  CorpusConfig config;
  std::vector<double> gender_direction;
  Matrix<double> class_means;
  // Mean feature vector over every frame of every speaker.
  std::vector<double> global_mean;
  std::vector<SpeakerProfile> speakers;
  std::vector<std::string> warnings;

  std::vector<const SpeakerProfile*> split(Split s) const {
    std::vector<const SpeakerProfile*> out;
    for (const auto& p : speakers)
      if (p.split == s) out.push_back(&p);
    return out;
  }

  const SpeakerProfile& speaker(std::string_view id) const {
    for (const auto& p : speakers)
      if (p.speaker_id == id) return p;
    throw Error("unknown speaker '" + std::string(id) + "'");
  }

  // Both sessions of every generic-split speaker, in speaker order.
  Dataset<double> generic_pool() const {
    std::size_t rows = 0;
    for (const auto* p : split(Split::kGeneric)) rows += p->num_frames();
    Dataset<double> pool;
    pool.features.resize(rows, config.feature_dim);
    pool.labels.reserve(rows);
    std::size_t r = 0;
    for (const auto* p : split(Split::kGeneric))
      for (const auto& s : p->sessions)
        for (std::size_t i = 0; i < s.size(); ++i, ++r) {
          std::span<const double> src = s.features.row(i);
          std::copy(src.begin(), src.end(), pool.features.row(r).begin());
          pool.labels.push_back(s.labels[i]);
        }
    return pool;
  }
};

inline std::string make_speaker_id(Split s, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%04zu", std::string(split_name(s)).c_str(),
                index + 1);
  return buf;
}

// Centered speaker mean: average of all the speaker's frames (both sessions)
// minus the corpus global mean.
inline std::vector<double> pseudo_ivector(const SpeakerProfile& profile,
                                          std::span<const double> global_mean) {
  require(profile.num_frames() > 0, "pseudo_ivector: speaker has no frames");
  const std::size_t dim = global_mean.size();
  std::vector<double> sum(dim, 0.0);
  for (const auto& s : profile.sessions) {
    if (s.empty()) continue;
    require(s.features.cols() == dim, "pseudo_ivector: dimension mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      axpy<double>(1.0, s.features.row(i), sum);
  }
  const double n = static_cast<double>(profile.num_frames());
  for (std::size_t d = 0; d < dim; ++d) sum[d] = sum[d] / n - global_mean[d];
  return sum;
}

namespace detail {

inline std::vector<double> gaussian_vector(Rng& rng, std::size_t dim,
                                           double sigma) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> v(dim);
  for (double& x : v) x = sigma * n01(rng);
  return v;
}

inline Dataset<double> make_session(const CorpusConfig& cfg,
                                    const Matrix<double>& class_means,
                                    std::span<const double> shift, Rng& rng) {
  const std::size_t n = cfg.frames_per_session, dim = cfg.feature_dim;
  Dataset<double> s;
  s.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.labels[i] = i % cfg.num_classes;
  std::shuffle(s.labels.begin(), s.labels.end(), rng);
  s.features.resize(n, dim);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::span<double> x = s.features.row(i);
    std::span<const double> mu = class_means.row(s.labels[i]);
    for (std::size_t d = 0; d < dim; ++d)
      x[d] = mu[d] + shift[d] + cfg.noise_sigma * n01(rng);
  }
  return s;
}

}  // namespace detail

// Builds the generic / p1 / p2 speaker populations. Each split receives
// round(female_fraction * size) female speakers; every session cycles through
// the frame classes round-robin before shuffling, so each class appears in
// every session.
inline Corpus generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  Corpus corpus;
  corpus.config = cfg;
  const std::size_t dim = cfg.feature_dim;

  Rng rng(mix_seed(cfg.seed, "corpus"));
  corpus.gender_direction = detail::gaussian_vector(rng, dim, 1.0);
  {
    double norm = std::sqrt(dot<double>(corpus.gender_direction,
                                        corpus.gender_direction));
    if (norm == 0) {
      corpus.gender_direction.assign(dim, 0.0);
      corpus.gender_direction[0] = 1.0;
      norm = 1.0;
    }
    for (double& x : corpus.gender_direction) x /= norm;
  }
  corpus.class_means.resize(cfg.num_classes, dim);
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    std::vector<double> mu = detail::gaussian_vector(rng, dim, 1.0);
    const double norm = std::sqrt(dot<double>(mu, mu));
    for (std::size_t d = 0; d < dim; ++d)
      corpus.class_means(c, d) =
          norm > 0 ? cfg.class_mean_norm * mu[d] / norm : 0.0;
  }

  std::size_t global_index = 0;
  for (Split split : {Split::kGeneric, Split::kP1, Split::kP2}) {
    const std::size_t n = split == Split::kGeneric ? cfg.generic_speakers
                          : split == Split::kP1    ? cfg.p1_speakers
                                                   : cfg.p2_speakers;
    if (n == 0) continue;
    const auto females = static_cast<std::size_t>(
        std::llround(cfg.female_fraction * static_cast<double>(n)));
    if (split != Split::kGeneric && (females == 0 || females == n))
      corpus.warnings.push_back(
          "split " + std::string(split_name(split)) +
          " has speakers of a single gender; gender clustering on it is "
          "undefined");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<bool> is_female(n, false);
    for (std::size_t i = 0; i < females; ++i) is_female[perm[i]] = true;

    for (std::size_t i = 0; i < n; ++i, ++global_index) {
      SpeakerProfile p;
      p.speaker_id = make_speaker_id(split, i);
      p.split = split;
      p.gender = is_female[i] ? Gender::kFemale : Gender::kMale;
      Rng srng(mix_seed(cfg.seed, global_index));
      p.speaker_offset = detail::gaussian_vector(srng, dim, cfg.speaker_sigma);
      const double sign = p.gender == Gender::kFemale ? 1.0 : -1.0;
      for (int s = 0; s < 2; ++s) {
        p.session_offset[s] =
            detail::gaussian_vector(srng, dim, cfg.session_sigma);
        std::vector<double> shift(dim);
        for (std::size_t d = 0; d < dim; ++d)
          shift[d] = sign * cfg.gender_strength * corpus.gender_direction[d] +
                     p.speaker_offset[d] + p.session_offset[s][d];
        p.sessions[s] =
            detail::make_session(cfg, corpus.class_means, shift, srng);
      }
      corpus.speakers.push_back(std::move(p));
    }
  }

  corpus.global_mean.assign(dim, 0.0);
  std::size_t frames = 0;
  for (const auto& p : corpus.speakers)
    for (const auto& s : p.sessions) {
      for (std::size_t i = 0; i < s.size(); ++i)
        axpy<double>(1.0, s.features.row(i), corpus.global_mean);
      frames += s.size();
    }
  for (double& m : corpus.global_mean) m /= static_cast<double>(frames);
  for (auto& p : corpus.speakers)
    p.pseudo_ivector = pseudo_ivector(p, corpus.global_mean);
  return corpus;
}

}  // namespace weightleak
