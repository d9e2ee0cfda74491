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


#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include <gtest/gtest.h>

#include "weightleak/corpus.hpp"
#include "weightleak/personalize.hpp"

namespace weightleak {
namespace {

struct Fixture {
  Corpus corpus;
  SurrogateTopology topo;
  std::shared_ptr<const WeightSnapshot> base;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture f;
    CorpusConfig cfg;
    cfg.generic_speakers = 4;
    cfg.p1_speakers = 4;
    cfg.p2_speakers = 4;
    cfg.frames_per_session = 600;
    cfg.seed = 5;
    f.corpus = generate_corpus(cfg);
    f.topo.num_layers = 4;
    f.topo.hidden_units = 12;
    TrainConfig gen = default_generic_config();
    gen.epochs = 3;
    f.base = std::make_shared<const WeightSnapshot>(
        train_generic(f.corpus.generic_pool(), f.topo, gen).snapshot);
    return f;
  }();
  return f;
}

TEST(SurrogateTopology, DefaultShapes) {
  SurrogateTopology t;
  const auto specs = t.layer_specs();
  ASSERT_EQ(specs.size(), 14u);
  EXPECT_EQ(specs[0].fan_in, 20u);
  EXPECT_EQ(specs[12].units, 32u);
  EXPECT_EQ(specs[13].units, 10u);
  EXPECT_EQ(specs[13].activation, Activation::kSoftmax);
  EXPECT_TRUE(SurrogateTopology::from_specs(specs) == t);
  t.num_layers = 1;
  EXPECT_THROW(t.validate(), Error);
  t = SurrogateTopology{};
  t.hidden_units = 1;
  EXPECT_THROW(t.validate(), Error);
}

TEST(Provenance, RoundTrip) {
  EXPECT_EQ(Provenance{}.str(), "generic");
  EXPECT_TRUE(Provenance::parse("generic").is_generic());
  const Provenance p{"p2-0007", 1};
  EXPECT_EQ(p.str(), "p2-0007/s2");
  EXPECT_TRUE(Provenance::parse(p.str()) == p);
  EXPECT_THROW(Provenance::parse("p2-0007/s3"), Error);
  EXPECT_THROW(Provenance::parse("nonsense"), Error);
}

TEST(DefaultConfigs, LearningRateSchedules) {
  EXPECT_EQ(default_generic_config().schedule.initial_lr, 0.00025);
  EXPECT_EQ(default_generic_config().schedule.final_lr, 0.000025);
  EXPECT_EQ(default_personalize_config().schedule.initial_lr, 0.000025);
  EXPECT_EQ(default_personalize_config().schedule.final_lr, 0.000015);
}

TEST(TrainGeneric, ZeroEpochsEqualsInitialization) {
  const Fixture& f = fixture();
  TrainConfig cfg = default_generic_config();
  cfg.epochs = 0;
  const GenericModel g = train_generic(f.corpus.generic_pool(), f.topo, cfg);
  EXPECT_TRUE(g.snapshot == init_snapshot(f.topo, mix_seed(cfg.seed, "init")));
}

TEST(TrainGeneric, DeterministicBySeed) {
  const Fixture& f = fixture();
  TrainConfig cfg = default_generic_config();
  cfg.epochs = 3;
  const GenericModel g = train_generic(f.corpus.generic_pool(), f.topo, cfg);
  EXPECT_TRUE(g.snapshot == *f.base);
  EXPECT_TRUE(g.snapshot.net.all_finite());
}

// With the frame noise switched off, classes are separable by construction.
TEST(TrainGeneric, NoiseFreeCorpusIsLearned) {
  CorpusConfig cc;
  cc.noise_sigma = 0;
  cc.generic_speakers = 4;
  cc.p1_speakers = 1;
  cc.p2_speakers = 1;
  cc.seed = 3;
  const Corpus c = generate_corpus(cc);
  const Dataset<double> pool = c.generic_pool();
  TrainConfig cfg = default_generic_config();
  cfg.epochs = 30;
  const GenericModel g = train_generic(pool, SurrogateTopology{}, cfg);
  EXPECT_GE(evaluate(g.snapshot.net, pool).accuracy, 0.99);
}

TEST(TrainGeneric, RejectsBadPool) {
  EXPECT_THROW(train_generic(Dataset<double>{}, SurrogateTopology{}, default_generic_config()),
               Error);
  const Fixture& f = fixture();
  SurrogateTopology wrong = f.topo;
  wrong.input_dim = 7;
  EXPECT_THROW(train_generic(f.corpus.generic_pool(), wrong, default_generic_config()), Error);
}

TEST(Personalize, LeavesBaseUntouchedAndLowersLoss) {
  const Fixture& f = fixture();
  const WeightSnapshot before = *f.base;
  const auto models = personalize_speakers(f.base, f.corpus.split(Split::kP1),
                                           default_personalize_config(), 1);
  ASSERT_EQ(models.size(), 8u);
  EXPECT_TRUE(*f.base == before);
  for (const auto& m : models) {
    EXPECT_LE(m.adapted_loss, m.base_loss);
    EXPECT_TRUE(m.adapted.topology == m.base->topology);
    EXPECT_EQ(m.adapted.provenance, (Provenance{m.speaker_id, m.session}));
  }
  EXPECT_EQ(models[0].speaker_id, "p1-0001");
  EXPECT_EQ(models[0].session, 0);
  EXPECT_EQ(models[1].session, 1);
}

TEST(Personalize, HyperparametersAreHomogeneous) {
  const Fixture& f = fixture();
  const auto models = personalize_speakers(f.base, f.corpus.split(Split::kP2),
                                           default_personalize_config(), 1);
  for (const auto& m : models) {
    EXPECT_EQ(m.config.schedule.initial_lr, models[0].config.schedule.initial_lr);
    EXPECT_EQ(m.config.schedule.final_lr, models[0].config.schedule.final_lr);
    EXPECT_EQ(m.config.epochs, models[0].config.epochs);
    EXPECT_EQ(m.config.batch_size, models[0].config.batch_size);
    EXPECT_EQ(m.report.steps, models[0].report.steps);
  }
}

TEST(Personalize, ZeroLearningRateKeepsBase) {
  const Fixture& f = fixture();
  TrainConfig cfg = default_personalize_config();
  cfg.schedule = {0.0, 0.0, 0};
  const auto* p = f.corpus.split(Split::kP1).front();
  const PersonalizedModel m = personalize(f.base, p->sessions[0], p->speaker_id, 0, cfg);
  EXPECT_TRUE(m.adapted.net == f.base->net);
  for (std::size_t l = 0; l < f.topo.num_layers; ++l) {
    const LayerDelta d = weight_delta(m, l);
    for (double v : d.weights.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Personalize, ParallelEqualsSequential) {
  const Fixture& f = fixture();
  const auto speakers = f.corpus.split(Split::kP1);
  const auto seq = personalize_speakers(f.base, speakers, default_personalize_config(), 1);
  const auto par = personalize_speakers(f.base, speakers, default_personalize_config(), 3);
  ASSERT_EQ(seq.size(), par.size());
  for (std::size_t i = 0; i < seq.size(); ++i) EXPECT_TRUE(seq[i].adapted == par[i].adapted);
}

TEST(Personalize, SessionModelDependsOnlyOnItsSession) {
  const Fixture& f = fixture();
  SpeakerProfile p = *f.corpus.split(Split::kP2).front();
  const auto both = personalize_speakers(f.base, {&p}, default_personalize_config(), 1);
  p.sessions[1] = Dataset<double>{};
  const PersonalizedModel alone =
      personalize(f.base, p.sessions[0], p.speaker_id, 0, default_personalize_config());
  EXPECT_TRUE(both[0].adapted == alone.adapted);
}

TEST(Personalize, RejectsEmptySessionAndNullBase) {
  const Fixture& f = fixture();
  EXPECT_THROW(personalize(f.base, Dataset<double>{}, "x", 0, default_personalize_config()),
               Error);
  const auto* p = f.corpus.split(Split::kP1).front();
  EXPECT_THROW(personalize(nullptr, p->sessions[0], "x", 0, default_personalize_config()), Error);
}

TEST(WeightDelta, ExactInverseOfAdaptation) {
  const Fixture& f = fixture();
  const auto models = personalize_speakers(f.base, f.corpus.split(Split::kP1),
                                           default_personalize_config(), 1);
  for (const auto& m : models)
    for (std::size_t l = 0; l < f.topo.num_layers; ++l) {
      const LayerDelta d = weight_delta(m, l);
      const auto bw = f.base->net.weights(l).values();
      const auto aw = m.adapted.net.weights(l).values();
      double norm = 0;
      for (std::size_t i = 0; i < bw.size(); ++i) {
        EXPECT_EQ(d.weights.values()[i], aw[i] - bw[i]);
        // Two roundings, each bounded relative to the larger operand.
        const double eps = std::numeric_limits<double>::epsilon();
        EXPECT_NEAR(d.weights.values()[i] + bw[i], aw[i],
                    eps * (std::abs(aw[i]) + std::abs(bw[i])));
        norm += d.weights.values()[i] * d.weights.values()[i];
      }
      for (std::size_t u = 0; u < d.biases.size(); ++u)
        EXPECT_EQ(d.biases[u], m.adapted.net.biases(l)[u] - f.base->net.biases(l)[u]);
      EXPECT_GT(norm, 0.0) << "layer " << l;
    }
}

TEST(WeightDelta, IdentityAndErrors) {
  const Fixture& f = fixture();
  const LayerDelta zero = weight_delta(*f.base, *f.base, 0);
  for (double v : zero.weights.values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(weight_delta(*f.base, *f.base, f.topo.num_layers), Error);
  WeightSnapshot other = init_snapshot(SurrogateTopology{}, 1);
  EXPECT_THROW(weight_delta(*f.base, other, 0), Error);
  PersonalizedModel orphan;
  EXPECT_THROW(weight_delta(orphan, 0), Error);
}

}  // namespace
}  // namespace weightleak
