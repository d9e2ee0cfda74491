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

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "weightleak/cluster.hpp"
#include "weightleak/corpus.hpp"
#include "weightleak/extractor.hpp"
#include "weightleak/personalize.hpp"
#include "weightleak/verify.hpp"
#include "weightleak/weight_features.hpp"

namespace weightleak {

struct AttackOptions {
  WeightSource source = WeightSource::kDelta;
  bool with_bias = true;
  // Cluster both sessions of each speaker for gender instead of s1 only.
  bool gender_both_sessions = false;
};

inline std::vector<LayerVector> layer_vectors(
    const std::vector<PersonalizedModel>& models, std::size_t layer,
    WeightSource source, bool with_bias) {
  std::vector<LayerVector> out;
  out.reserve(models.size());
  for (const auto& m : models) out.push_back(flatten_layer(m, layer, source, with_bias));
  return out;
}

// Gender purity of one layer over a set of personalized models. `gender_of`
// maps speaker ids to labels.
inline GenderClustering gender_cluster_per_layer(
    const std::vector<PersonalizedModel>& models,
    const std::map<std::string, Gender>& gender_of, std::size_t layer,
    const AttackOptions& opt) {
  std::vector<std::vector<double>> points;
  std::vector<Gender> genders;
  for (const auto& m : models) {
    if (!opt.gender_both_sessions && m.session != 0) continue;
    auto it = gender_of.find(m.speaker_id);
    require(it != gender_of.end(),
            "gender clustering: no gender for speaker '" + m.speaker_id + "'");
    points.push_back(flatten_layer(m, layer, opt.source, opt.with_bias).values);
    genders.push_back(it->second);
  }
  return gender_cluster(points, genders);
}

// Pairs the s1/s2 vectors of each speaker, preserving first-seen speaker
// order.
inline std::vector<SessionPair> pair_sessions(const std::vector<LayerVector>& vectors) {
  std::vector<SessionPair> out;
  std::map<std::string, std::size_t> index;
  for (const auto& v : vectors) {
    auto it = index.find(v.speaker_id);
    if (it == index.end()) {
      it = index.emplace(v.speaker_id, out.size()).first;
      out.push_back({v.speaker_id, {}, {}});
    }
    (v.session == 0 ? out[it->second].s1 : out[it->second].s2) = v.values;
  }
  return out;
}

inline std::vector<SessionPair> pair_embeddings(
    const std::vector<SpeakerEmbedding>& embeddings) {
  std::vector<SessionPair> out;
  std::map<std::string, std::size_t> index;
  for (const auto& e : embeddings) {
    auto it = index.find(e.speaker_id);
    if (it == index.end()) {
      it = index.emplace(e.speaker_id, out.size()).first;
      out.push_back({e.speaker_id, {}, {}});
    }
    (e.session == 0 ? out[it->second].s1 : out[it->second].s2) = e.vector;
  }
  return out;
}

// Verification directly on the adapted weights, no extractor.
inline TrialScoreSet raw_cosine_scores(const std::vector<PersonalizedModel>& models,
                                       std::size_t layer, bool with_bias) {
  const auto pairs =
      pair_sessions(layer_vectors(models, layer, WeightSource::kRaw, with_bias));
  return score_trials(pairs, generate_trials(pairs));
}

// Class label per training model, from Ward clustering of the speakers'
// pseudo-i-vectors.
inline std::vector<std::size_t> model_class_labels(
    const std::vector<PersonalizedModel>& models, const Corpus& corpus,
    std::size_t num_classes) {
  std::vector<std::string> ids;
  std::map<std::string, std::size_t> index;
  for (const auto& m : models)
    if (index.emplace(m.speaker_id, ids.size()).second) ids.push_back(m.speaker_id);
  std::vector<std::vector<double>> ivectors;
  for (const auto& id : ids) ivectors.push_back(corpus.speaker(id).pseudo_ivector);
  const ClusterAssignment classes = speaker_classes(ivectors, num_classes);
  std::vector<std::size_t> labels;
  for (const auto& m : models) labels.push_back(classes.labels[index.at(m.speaker_id)]);
  return labels;
}

struct ExtractorAttack {
  ExtractorTraining training;
  std::vector<SpeakerEmbedding> embeddings;
  TrialScoreSet scores;
  EerResult eer;
};

inline ExtractorAttack extractor_attack(const std::vector<PersonalizedModel>& train_models,
                                        const std::vector<PersonalizedModel>& eval_models,
                                        const Corpus& corpus, std::size_t layer,
                                        ExtractorSpec spec,
                                        const ExtractorTrainConfig& cfg) {
  const auto train_vectors =
      layer_vectors(train_models, layer, spec.source, spec.with_bias);
  require(!train_vectors.empty(), "extractor attack: no training models");
  const ExtractorSpec shape = extractor_spec_for(train_vectors.front());
  spec.target_layer = shape.target_layer;
  spec.num_blocks = shape.num_blocks;
  spec.block_size = shape.block_size;
  const auto labels = model_class_labels(train_models, corpus, spec.num_classes);

  ExtractorAttack a;
  a.training = train_extractor(train_vectors, labels, spec, cfg);
  for (const auto& v : layer_vectors(eval_models, layer, spec.source, spec.with_bias))
    a.embeddings.push_back(embed(a.training.extractor, v));
  const auto pairs = pair_embeddings(a.embeddings);
  a.scores = score_trials(pairs, generate_trials(pairs));
  a.eer = compute_eer(a.scores);
  return a;
}

}  // namespace weightleak
