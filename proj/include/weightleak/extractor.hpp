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
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "weightleak/common.hpp"
#include "weightleak/matrix.hpp"
#include "weightleak/nn.hpp"
#include "weightleak/weight_features.hpp"

namespace weightleak {

// Shape of the multi-stream extractor: the target layer's vector is cut into
// num_blocks per-unit blocks; each block feeds its own ReLU layer of
// per_block_units; the block outputs are concatenated and pass through the
// fc_units ReLU stack and a softmax over speaker classes. The embedding is
// the last fc layer.
struct ExtractorSpec {
  std::size_t target_layer = 0;
  std::size_t num_blocks = 0;
  std::size_t block_size = 0;
  std::size_t per_block_units = 32;
  std::vector<std::size_t> fc_units{256, 100};
  std::size_t num_classes = 20;
  WeightSource source = WeightSource::kDelta;
  bool with_bias = true;
  // Read the embedding after the ReLU instead of before it.
  bool embed_post_activation = false;

  std::size_t input_dim() const { return num_blocks * block_size; }
  std::size_t concat_width() const { return num_blocks * per_block_units; }
  std::size_t embedding_dim() const { return fc_units.back(); }

  void validate() const {
    require(num_blocks >= 1 && block_size >= 1 && per_block_units >= 1,
            "extractor: block dimensions must be >= 1");
    require(!fc_units.empty(), "extractor: needs at least one fc layer");
    for (std::size_t u : fc_units) require(u >= 1, "extractor: empty fc layer");
    require(num_classes >= 2, "extractor: needs at least 2 classes");
  }

  friend bool operator==(const ExtractorSpec&, const ExtractorSpec&) = default;
};

// Spec matching the per-unit blocks of one surrogate layer.
inline ExtractorSpec extractor_spec_for(const LayerVector& v) {
  ExtractorSpec s;
  s.target_layer = v.layer;
  s.num_blocks = v.units;
  s.block_size = v.block_size();
  s.source = v.source;
  s.with_bias = v.with_bias;
  return s;
}

// Per-dimension z-scoring fitted once on training inputs. Dimensions with
// zero spread pass through centered but unscaled.
class Standardizer {
 public:
  Standardizer() = default;
  Standardizer(std::vector<double> mean, std::vector<double> scale)
      : mean_(std::move(mean)), scale_(std::move(scale)), sealed_(true) {
    require(mean_.size() == scale_.size(), "standardizer: size mismatch");
  }

  static Standardizer fit(const Matrix<double>& rows) {
    require(rows.rows() >= 1, "standardizer: no training rows");
    const std::size_t d = rows.cols();
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    for (std::size_t i = 0; i < rows.rows(); ++i)
      axpy<double>(1.0, rows.row(i), mean);
    const double n = static_cast<double>(rows.rows());
    for (double& m : mean) m /= n;
    for (std::size_t i = 0; i < rows.rows(); ++i) {
      std::span<const double> r = rows.row(i);
      for (std::size_t k = 0; k < d; ++k) var[k] += (r[k] - mean[k]) * (r[k] - mean[k]);
    }
    std::vector<double> scale(d);
    for (std::size_t k = 0; k < d; ++k) {
      const double sd = std::sqrt(var[k] / n);
      scale[k] = sd > 0 ? 1.0 / sd : 1.0;
    }
    return Standardizer(std::move(mean), std::move(scale));
  }

  bool sealed() const { return sealed_; }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& scale() const { return scale_; }

  void apply(std::span<const double> in, std::span<double> out) const {
    require(sealed_, "standardizer: statistics missing");
    require(in.size() == mean_.size() && out.size() == in.size(),
            "standardizer: dimension mismatch");
    for (std::size_t k = 0; k < in.size(); ++k)
      out[k] = (in[k] - mean_[k]) * scale_[k];
  }

  friend bool operator==(const Standardizer& a, const Standardizer& b) {
    return a.sealed_ == b.sealed_ && a.mean_ == b.mean_ && a.scale_ == b.scale_;
  }

 private:
  std::vector<double> mean_;
  std::vector<double> scale_;
  bool sealed_ = false;
};

struct ExtractorActivations {
  Matrix<double> block_pre;   // batch x concat_width
  Matrix<double> block_post;  // batch x concat_width
  BatchActivations<double> head;
};

class MultiStreamExtractor {
 public:
  MultiStreamExtractor() = default;

  explicit MultiStreamExtractor(ExtractorSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    for (std::size_t b = 0; b < spec_.num_blocks; ++b) {
      block_w_.emplace_back(spec_.per_block_units, spec_.block_size);
      block_b_.emplace_back(spec_.per_block_units, 0.0);
    }
    std::vector<LayerSpec> head;
    std::size_t width = spec_.concat_width();
    for (std::size_t u : spec_.fc_units) {
      head.push_back({width, u, Activation::kRelu});
      width = u;
    }
    head.push_back({width, spec_.num_classes, Activation::kSoftmax});
    head_ = Network<double>(std::move(head));
  }

  const ExtractorSpec& spec() const { return spec_; }
  Matrix<double>& block_weights(std::size_t b) { return block_w_.at(b); }
  const Matrix<double>& block_weights(std::size_t b) const { return block_w_.at(b); }
  std::vector<double>& block_biases(std::size_t b) { return block_b_.at(b); }
  const std::vector<double>& block_biases(std::size_t b) const { return block_b_.at(b); }
  Network<double>& head() { return head_; }
  const Network<double>& head() const { return head_; }
  const Standardizer& standardizer() const { return stats_; }
  void set_standardizer(Standardizer s) {
    require(s.mean().size() == spec_.input_dim(),
            "extractor: standardizer width does not match input");
    stats_ = std::move(s);
  }

  // Parameters of the block stage alone.
  std::size_t block_stage_parameters() const {
    return spec_.num_blocks * (spec_.block_size * spec_.per_block_units +
                               spec_.per_block_units);
  }

  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    const double limit = std::sqrt(6.0 / static_cast<double>(spec_.block_size));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& w : block_w_)
      for (double& v : w.values()) v = dist(rng);
    for (auto& b : block_b_) std::fill(b.begin(), b.end(), 0.0);
    weightleak::initialize(head_, mix_seed(seed, "head"));
  }

  // Forward pass over already-standardized inputs (batch x input_dim).
  void forward(const Matrix<double>& x, ExtractorActivations& acts) const {
    require(x.cols() == spec_.input_dim(), "extractor: input width mismatch");
    const std::size_t B = x.rows(), bs = spec_.block_size,
                      pu = spec_.per_block_units;
    acts.block_pre.resize(B, spec_.concat_width());
    for (std::size_t i = 0; i < B; ++i) {
      std::span<const double> xi = x.row(i);
      std::span<double> zi = acts.block_pre.row(i);
      for (std::size_t b = 0; b < spec_.num_blocks; ++b) {
        const Matrix<double>& w = block_w_[b];
        std::span<const double> xb = xi.subspan(b * bs, bs);
        for (std::size_t u = 0; u < pu; ++u) {
          double s = block_b_[b][u];
          std::span<const double> wr = w.row(u);
          for (std::size_t k = 0; k < bs; ++k) s += xb[k] * wr[k];
          zi[b * pu + u] = s;
        }
      }
    }
    acts.block_post = acts.block_pre;
    for (double& v : acts.block_post.values()) v = v > 0 ? v : 0.0;
    forward_batch(head_, acts.block_post, acts.head);
  }

  Matrix<double> standardize(const Matrix<double>& raw) const {
    Matrix<double> out(raw.rows(), raw.cols());
    for (std::size_t i = 0; i < raw.rows(); ++i)
      stats_.apply(raw.row(i), out.row(i));
    return out;
  }

  // Embedding of one layer vector (raw, unstandardized values).
  std::vector<double> embed(std::span<const double> values) const {
    require(values.size() == spec_.input_dim(),
            "extractor: layer vector does not match extractor input");
    require(stats_.sealed(), "extractor: missing standardization statistics");
    Matrix<double> x(1, values.size());
    stats_.apply(values, x.row(0));
    ExtractorActivations acts;
    forward(x, acts);
    const std::size_t e = spec_.fc_units.size() - 1;
    const Matrix<double>& m =
        spec_.embed_post_activation ? acts.head.post[e] : acts.head.pre[e];
    return {m.values().begin(), m.values().end()};
  }

  // Dense equivalent: the block stage as one layer with a block-diagonal
  // weight matrix, followed by the head.
  Network<double> to_dense() const {
    std::vector<LayerSpec> specs{
        {spec_.input_dim(), spec_.concat_width(), Activation::kRelu}};
    for (const LayerSpec& s : head_.specs()) specs.push_back(s);
    Network<double> dense(specs);
    const std::size_t bs = spec_.block_size, pu = spec_.per_block_units;
    for (std::size_t b = 0; b < spec_.num_blocks; ++b)
      for (std::size_t u = 0; u < pu; ++u) {
        dense.biases(0)[b * pu + u] = block_b_[b][u];
        for (std::size_t k = 0; k < bs; ++k)
          dense.weights(0)(b * pu + u, b * bs + k) = block_w_[b](u, k);
      }
    for (std::size_t l = 0; l < head_.num_layers(); ++l) {
      dense.weights(l + 1) = head_.weights(l);
      dense.biases(l + 1) = head_.biases(l);
    }
    return dense;
  }

  friend bool operator==(const MultiStreamExtractor&,
                         const MultiStreamExtractor&) = default;

 private:
  ExtractorSpec spec_;
  std::vector<Matrix<double>> block_w_;
  std::vector<std::vector<double>> block_b_;
  Network<double> head_;
  Standardizer stats_;
};

struct ExtractorTrainConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 8;
  std::size_t epochs = 30;
  // Share of training vectors held out to pick the epoch with the best
  // class accuracy.
  double holdout_fraction = 0.1;
  std::uint64_t seed = 1;
};

struct ExtractorTraining {
  MultiStreamExtractor extractor;
  std::vector<double> epoch_loss;
  std::vector<double> train_accuracy;
  std::vector<double> holdout_accuracy;
  std::size_t best_epoch = 0;
  std::size_t num_inputs = 0;
};

namespace detail {

inline double class_accuracy(const MultiStreamExtractor& ex,
                             const Matrix<double>& x,
                             std::span<const std::size_t> labels) {
  if (labels.empty()) return 0;
  ExtractorActivations acts;
  ex.forward(x, acts);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::span<const double> p = acts.head.output().row(i);
    if (static_cast<std::size_t>(std::max_element(p.begin(), p.end()) -
                                 p.begin()) == labels[i])
      ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace detail

// Trains on layer vectors labelled with speaker classes. Standardization is
// fitted on the training rows only and sealed into the returned extractor.
inline ExtractorTraining train_extractor(const std::vector<LayerVector>& inputs,
                                         const std::vector<std::size_t>& labels,
                                         const ExtractorSpec& spec,
                                         const ExtractorTrainConfig& cfg) {
  spec.validate();
  require(!inputs.empty(), "train_extractor: no training inputs");
  require(inputs.size() == labels.size(), "train_extractor: label count mismatch");
  require(cfg.batch_size >= 1 && cfg.epochs >= 1,
          "train_extractor: batch_size and epochs must be >= 1");
  std::vector<std::size_t> distinct(labels);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  require(distinct.size() >= 2, "train_extractor: need at least 2 distinct classes");
  for (std::size_t y : labels)
    require(y < spec.num_classes, "train_extractor: class label out of range");
  for (const auto& v : inputs) {
    require(v.layer == spec.target_layer && v.source == spec.source &&
                v.with_bias == spec.with_bias,
            "train_extractor: input vector does not match the extractor spec");
    require(v.values.size() == spec.input_dim(),
            "train_extractor: input vector length mismatch");
  }

  const std::size_t n = inputs.size();
  Rng rng(cfg.seed);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::size_t n_hold = static_cast<std::size_t>(
      std::floor(cfg.holdout_fraction * static_cast<double>(n)));
  if (n - n_hold < 1) n_hold = 0;
  std::vector<std::size_t> hold(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_hold));
  std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(n_hold), perm.end());
  std::sort(hold.begin(), hold.end());
  std::sort(train.begin(), train.end());

  Matrix<double> raw_train(train.size(), spec.input_dim());
  std::vector<std::size_t> y_train;
  for (std::size_t i = 0; i < train.size(); ++i) {
    std::copy(inputs[train[i]].values.begin(), inputs[train[i]].values.end(),
              raw_train.row(i).begin());
    y_train.push_back(labels[train[i]]);
  }

  ExtractorTraining out;
  out.num_inputs = n;
  out.extractor = MultiStreamExtractor(spec);
  MultiStreamExtractor& ex = out.extractor;
  ex.initialize(mix_seed(cfg.seed, "init"));
  ex.set_standardizer(Standardizer::fit(raw_train));
  const Matrix<double> x_train = ex.standardize(raw_train);

  Matrix<double> x_hold(hold.size(), spec.input_dim());
  std::vector<std::size_t> y_hold;
  for (std::size_t i = 0; i < hold.size(); ++i) {
    ex.standardizer().apply(inputs[hold[i]].values, x_hold.row(i));
    y_hold.push_back(labels[hold[i]]);
  }

  const std::size_t bs = spec.block_size, pu = spec.per_block_units;
  std::vector<std::size_t> order(train.size());
  ExtractorActivations acts;
  BackpropWorkspace<double> ws;
  Gradients<double> head_grads;
  Matrix<double> batch;
  std::vector<std::size_t> batch_y;
  std::vector<Matrix<double>> gw(spec.num_blocks, Matrix<double>(pu, bs));
  std::vector<std::vector<double>> gb(spec.num_blocks, std::vector<double>(pu));

  MultiStreamExtractor best = ex;
  double best_acc = -1;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      gather_rows(x_train, idx, batch);
      batch_y.resize(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) batch_y[i] = y_train[idx[i]];

      ex.forward(batch, acts);
      backward_into(ex.head(), acts.block_post, batch_y, ws, head_grads, true);
      if (!std::isfinite(head_grads.loss))
        throw Error("train_extractor: non-finite loss at epoch " +
                    std::to_string(epoch));
      loss_sum += head_grads.loss * static_cast<double>(idx.size());

      Matrix<double>& d = head_grads.input;
      for (std::size_t k = 0; k < d.size(); ++k)
        if (!(acts.block_pre.data()[k] > 0)) d.data()[k] = 0;
      for (std::size_t b = 0; b < spec.num_blocks; ++b) {
        gw[b].fill(0.0);
        std::fill(gb[b].begin(), gb[b].end(), 0.0);
      }
      for (std::size_t i = 0; i < idx.size(); ++i) {
        std::span<const double> xi = batch.row(i);
        std::span<const double> di = d.row(i);
        for (std::size_t b = 0; b < spec.num_blocks; ++b)
          for (std::size_t u = 0; u < pu; ++u) {
            const double g = di[b * pu + u];
            if (g == 0) continue;
            gb[b][u] += g;
            axpy<double>(g, xi.subspan(b * bs, bs), gw[b].row(u));
          }
      }
      const double lr = cfg.learning_rate;
      for (std::size_t b = 0; b < spec.num_blocks; ++b) {
        axpy<double>(-lr, gw[b].values(), ex.block_weights(b).values());
        axpy<double>(-lr, gb[b], ex.block_biases(b));
      }
      for (std::size_t l = 0; l < ex.head().num_layers(); ++l) {
        axpy<double>(-lr, head_grads.weights[l].values(),
                     ex.head().weights(l).values());
        axpy<double>(-lr, head_grads.biases[l], ex.head().biases(l));
      }
    }
    out.epoch_loss.push_back(loss_sum / static_cast<double>(train.size()));
    out.train_accuracy.push_back(detail::class_accuracy(ex, x_train, y_train));
    const double acc = y_hold.empty() ? out.train_accuracy.back()
                                      : detail::class_accuracy(ex, x_hold, y_hold);
    out.holdout_accuracy.push_back(acc);
    if (acc > best_acc) {
      best_acc = acc;
      best = ex;
      out.best_epoch = epoch;
    }
  }
  out.extractor = std::move(best);
  return out;
}

struct SpeakerEmbedding {
  std::string speaker_id;
  SessionIndex session = 0;
  std::size_t layer = 0;
  std::vector<double> vector;
};

inline SpeakerEmbedding embed(const MultiStreamExtractor& ex,
                              const LayerVector& v) {
  const ExtractorSpec& s = ex.spec();
  require(v.layer == s.target_layer && v.source == s.source &&
              v.with_bias == s.with_bias && v.values.size() == s.input_dim(),
          "embed: layer vector does not match the extractor");
  return {v.speaker_id, v.session, v.layer, ex.embed(v.values)};
}

}  // namespace weightleak
