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
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "weightleak/common.hpp"
#include "weightleak/corpus.hpp"
#include "weightleak/matrix.hpp"
#include "weightleak/nn.hpp"
#include "weightleak/parallel.hpp"

namespace weightleak {

// Dense stand-in for the acoustic model: num_layers ReLU hidden layers of
// hidden_units each, then a softmax over frame classes. Layer indices used by
// the analysis (0-based) address the hidden layers only.
struct SurrogateTopology {
  std::size_t num_layers = 13;
  std::size_t hidden_units = 32;
  std::size_t input_dim = 20;
  std::size_t output_dim = 10;

  void validate() const {
    require(num_layers >= 2, "topology: num_layers must be >= 2");
    require(hidden_units >= 2, "topology: hidden_units must be >= 2");
    require(input_dim >= 1 && output_dim >= 2,
            "topology: bad input/output dimensions");
  }

  std::vector<LayerSpec> layer_specs() const {
    validate();
    std::vector<LayerSpec> specs;
    for (std::size_t l = 0; l < num_layers; ++l)
      specs.push_back({l == 0 ? input_dim : hidden_units, hidden_units,
                       Activation::kRelu});
    specs.push_back({hidden_units, output_dim, Activation::kSoftmax});
    return specs;
  }

  // Inverse of layer_specs(); throws if the shapes are not a surrogate stack.
  static SurrogateTopology from_specs(const std::vector<LayerSpec>& specs) {
    require(specs.size() >= 3, "topology: too few layers for a surrogate");
    SurrogateTopology t;
    t.num_layers = specs.size() - 1;
    t.hidden_units = specs.front().units;
    t.input_dim = specs.front().fan_in;
    t.output_dim = specs.back().units;
    std::vector<LayerSpec> expect = t.layer_specs();
    for (std::size_t l = 0; l < specs.size(); ++l)
      require(specs[l].fan_in == expect[l].fan_in &&
                  specs[l].units == expect[l].units,
              "topology: layer shapes do not form a surrogate stack");
    return t;
  }

  friend bool operator==(const SurrogateTopology&,
                         const SurrogateTopology&) = default;
};

// Origin of a weight snapshot: the generic model, or (speaker, session).
struct Provenance {
  std::string speaker_id;
  SessionIndex session = -1;

  bool is_generic() const { return speaker_id.empty(); }

  std::string str() const {
    return is_generic() ? std::string("generic")
                        : speaker_id + "/" + session_name(session);
  }

  static Provenance parse(std::string_view s) {
    if (s == "generic") return {};
    const auto slash = s.rfind('/');
    require(slash != std::string_view::npos && slash > 0,
            "malformed provenance '" + std::string(s) + "'");
    const std::string_view sess = s.substr(slash + 1);
    require(sess == "s1" || sess == "s2",
            "malformed provenance session '" + std::string(s) + "'");
    return {std::string(s.substr(0, slash)), sess == "s1" ? 0 : 1};
  }

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct WeightSnapshot {
  SurrogateTopology topology;
  Network<double> net;
  Provenance provenance;

  friend bool operator==(const WeightSnapshot&, const WeightSnapshot&) = default;
};

inline WeightSnapshot init_snapshot(const SurrogateTopology& topo,
                                    std::uint64_t seed) {
  WeightSnapshot snap{topo, Network<double>(topo.layer_specs()), {}};
  initialize(snap.net, seed);
  return snap;
}

// Hyperparameters of the generic model (a 10x decay over pretraining)
// and of personalization (a gentler decay at lower rates).
inline TrainConfig default_generic_config() {
  TrainConfig cfg;
  cfg.schedule = {0.00025, 0.000025, 0};
  cfg.epochs = 10;
  cfg.batch_size = 256;
  cfg.seed = 1;
  cfg.per_sample_lr = true;
  return cfg;
}

inline TrainConfig default_personalize_config() {
  TrainConfig cfg;
  cfg.schedule = {0.000025, 0.000015, 0};
  cfg.epochs = 3;
  cfg.batch_size = 256;
  cfg.seed = 1;
  cfg.per_sample_lr = true;
  return cfg;
}

struct GenericModel {
  WeightSnapshot snapshot;
  TrainReport report;
};

inline GenericModel train_generic(const Dataset<double>& pool,
                                  const SurrogateTopology& topo,
                                  const TrainConfig& cfg) {
  require(!pool.empty(), "train_generic: empty training pool");
  require(pool.features.cols() == topo.input_dim,
          "train_generic: feature dimension does not match topology");
  GenericModel out{init_snapshot(topo, mix_seed(cfg.seed, "init")), {}};
  if (cfg.epochs > 0) out.report = sgd_train(out.snapshot.net, pool, cfg);
  return out;
}

struct PersonalizedModel {
  std::shared_ptr<const WeightSnapshot> base;
  WeightSnapshot adapted;
  std::string speaker_id;
  SessionIndex session = 0;
  TrainConfig config;
  TrainReport report;
  // Mean cross-entropy on the session before and after fine-tuning.
  double base_loss = 0;
  double adapted_loss = 0;
};

// Seed of the (speaker, session) fine-tuning run; shared hyperparameters,
// private sample order.
inline std::uint64_t personalization_seed(std::uint64_t seed,
                                          const std::string& speaker_id,
                                          SessionIndex session) {
  return mix_seed(seed, speaker_id + "/" + session_name(session));
}

// Continues training a private copy of `base` on one session.
inline PersonalizedModel personalize(
    const std::shared_ptr<const WeightSnapshot>& base,
    const Dataset<double>& session_data, const std::string& speaker_id,
    SessionIndex session, const TrainConfig& cfg) {
  require(base != nullptr, "personalize: null base model");
  require(!session_data.empty(), "personalize: empty session");
  PersonalizedModel m;
  m.base = base;
  m.adapted = *base;
  m.adapted.provenance = {speaker_id, session};
  m.speaker_id = speaker_id;
  m.session = session;
  m.config = cfg;
  m.config.seed = personalization_seed(cfg.seed, speaker_id, session);
  m.base_loss = evaluate(base->net, session_data).loss;
  if (cfg.epochs > 0) m.report = sgd_train(m.adapted.net, session_data, m.config);
  m.adapted_loss = evaluate(m.adapted.net, session_data).loss;
  return m;
}

// Personalizes every listed speaker on both sessions. Output order is
// (speaker order, s1, s2) regardless of thread count.
inline std::vector<PersonalizedModel> personalize_speakers(
    const std::shared_ptr<const WeightSnapshot>& base,
    const std::vector<const SpeakerProfile*>& speakers, const TrainConfig& cfg,
    std::size_t threads = default_thread_count()) {
  std::vector<PersonalizedModel> out(speakers.size() * 2);
  parallel_for(
      out.size(),
      [&](std::size_t i) {
        const SpeakerProfile& p = *speakers[i / 2];
        const auto s = static_cast<SessionIndex>(i % 2);
        out[i] = personalize(base, p.sessions[s], p.speaker_id, s, cfg);
      },
      threads);
  return out;
}

struct LayerDelta {
  Matrix<double> weights;
  std::vector<double> biases;
};

inline void check_layer_index(const SurrogateTopology& topo, std::size_t layer) {
  require(layer < topo.num_layers,
          "layer index " + std::to_string(layer) + " out of range (" +
              std::to_string(topo.num_layers) + " layers)");
}

// adapted - base for one hidden layer, elementwise.
inline LayerDelta weight_delta(const WeightSnapshot& base,
                               const WeightSnapshot& adapted,
                               std::size_t layer) {
  require(base.topology == adapted.topology, "weight_delta: topology mismatch");
  check_layer_index(base.topology, layer);
  LayerDelta d{adapted.net.weights(layer), adapted.net.biases(layer)};
  std::span<const double> bw = base.net.weights(layer).values();
  std::span<double> dw = d.weights.values();
  for (std::size_t i = 0; i < dw.size(); ++i) dw[i] -= bw[i];
  const auto& bb = base.net.biases(layer);
  for (std::size_t i = 0; i < d.biases.size(); ++i) d.biases[i] -= bb[i];
  return d;
}

inline LayerDelta weight_delta(const PersonalizedModel& model, std::size_t layer) {
  require(model.base != nullptr, "weight_delta: model has no base");
  return weight_delta(*model.base, model.adapted, layer);
}

}  // namespace weightleak
