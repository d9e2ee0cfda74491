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
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "weightleak/common.hpp"
#include "weightleak/matrix.hpp"

namespace weightleak {

enum class Activation { kRelu, kIdentity, kSoftmax };

struct LayerSpec {
  std::size_t fan_in = 0;
  std::size_t units = 0;
  Activation activation = Activation::kRelu;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Feed-forward stack of dense layers. Layer l maps fan_in -> units through
// weights(l) (units x fan_in) and biases(l) (units).
template <typename T = double>
class Network {
 public:
  Network() = default;

  explicit Network(std::vector<LayerSpec> specs) : specs_(std::move(specs)) {
    require(!specs_.empty(), "network needs at least one layer");
    for (std::size_t l = 0; l < specs_.size(); ++l) {
      const LayerSpec& s = specs_[l];
      require(s.fan_in >= 1 && s.units >= 1, "layer dimensions must be >= 1");
      if (l > 0)
        require(specs_[l - 1].units == s.fan_in,
                "adjacent layers are not dimension-compatible");
      require(s.activation != Activation::kSoftmax || l + 1 == specs_.size(),
              "softmax is only allowed on the final layer");
      weights_.emplace_back(s.units, s.fan_in);
      biases_.emplace_back(s.units, T(0));
    }
  }

  std::size_t num_layers() const { return specs_.size(); }
  const std::vector<LayerSpec>& specs() const { return specs_; }
  const LayerSpec& spec(std::size_t l) const { return specs_.at(l); }
  std::size_t input_dim() const { return specs_.front().fan_in; }
  std::size_t output_dim() const { return specs_.back().units; }

  Matrix<T>& weights(std::size_t l) { return weights_.at(l); }
  const Matrix<T>& weights(std::size_t l) const { return weights_.at(l); }
  std::vector<T>& biases(std::size_t l) { return biases_.at(l); }
  const std::vector<T>& biases(std::size_t l) const { return biases_.at(l); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& s : specs_) n += s.units * s.fan_in + s.units;
    return n;
  }

  bool all_finite() const {
    for (std::size_t l = 0; l < specs_.size(); ++l)
      if (!weights_[l].all_finite() ||
          !weightleak::all_finite<T>(biases_[l]))
        return false;
    return true;
  }

  friend bool operator==(const Network& a, const Network& b) {
    return a.specs_ == b.specs_ && a.weights_ == b.weights_ &&
           a.biases_ == b.biases_;
  }

 private:
  std::vector<LayerSpec> specs_;
  std::vector<Matrix<T>> weights_;
  std::vector<std::vector<T>> biases_;
};

enum class InitScheme {
  // U(-1/sqrt(fan_in), +1/sqrt(fan_in)) on every layer.
  kUniformFanIn,
  // U(-sqrt(6/fan_in), +sqrt(6/fan_in)) on ReLU layers, fan-in scaling on
  // the rest. Keeps activations from vanishing through deep ReLU stacks.
  kHeUniform,
};

// Biases start at zero.
template <typename T>
void initialize(Network<T>& net, std::uint64_t seed,
                InitScheme scheme = InitScheme::kHeUniform) {
  Rng rng(seed);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const LayerSpec& s = net.spec(l);
    double limit = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
    if (scheme == InitScheme::kHeUniform && s.activation == Activation::kRelu)
      limit = std::sqrt(6.0 / static_cast<double>(s.fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (T& w : net.weights(l).values()) w = static_cast<T>(dist(rng));
    std::fill(net.biases(l).begin(), net.biases(l).end(), T(0));
  }
}

template <typename T>
void softmax_rows(Matrix<T>& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::span<T> r = m.row(i);
    const T mx = *std::max_element(r.begin(), r.end());
    T sum = 0;
    for (T& v : r) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (T& v : r) v /= sum;
  }
}

// Per-layer pre-activations (z) and outputs (a) for a batch of inputs.
template <typename T>
struct BatchActivations {
  std::vector<Matrix<T>> pre;
  std::vector<Matrix<T>> post;
  Matrix<T> scratch;

  const Matrix<T>& output() const { return post.back(); }
};

template <typename T>
void forward_batch(const Network<T>& net, const Matrix<T>& inputs,
                   BatchActivations<T>& acts) {
  require(inputs.cols() == net.input_dim(), "forward: input dimension mismatch");
  const std::size_t L = net.num_layers();
  acts.pre.resize(L);
  acts.post.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    const Matrix<T>& in = l == 0 ? inputs : acts.post[l - 1];
    affine_forward<T>(in, net.weights(l), net.biases(l), acts.pre[l],
                      acts.scratch);
    acts.post[l] = acts.pre[l];
    switch (net.spec(l).activation) {
      case Activation::kRelu:
        for (T& v : acts.post[l].values()) v = v > T(0) ? v : T(0);
        break;
      case Activation::kSoftmax:
        softmax_rows(acts.post[l]);
        break;
      case Activation::kIdentity:
        break;
    }
  }
}

template <typename T>
struct Activations {
  std::vector<std::vector<T>> pre;
  std::vector<std::vector<T>> post;

  const std::vector<T>& output() const { return post.back(); }
};

// Single-sample forward pass returning every layer's activations.
template <typename T>
Activations<T> forward(const Network<T>& net, std::span<const T> input) {
  require(input.size() == net.input_dim(), "forward: input dimension mismatch");
  require(all_finite(input), "forward: non-finite input");
  Matrix<T> in(1, input.size(),
               std::vector<T>(input.begin(), input.end()));
  BatchActivations<T> acts;
  forward_batch(net, in, acts);
  Activations<T> out;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    out.pre.emplace_back(acts.pre[l].values().begin(),
                         acts.pre[l].values().end());
    out.post.emplace_back(acts.post[l].values().begin(),
                          acts.post[l].values().end());
  }
  return out;
}

template <typename T>
struct Gradients {
  std::vector<Matrix<T>> weights;
  std::vector<std::vector<T>> biases;
  // d(loss)/d(input), batch x input_dim; only filled on request.
  Matrix<T> input;
  T loss = 0;

  void reset(const Network<T>& net) {
    weights.resize(net.num_layers());
    biases.resize(net.num_layers());
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      const LayerSpec& s = net.spec(l);
      if (weights[l].rows() != s.units || weights[l].cols() != s.fan_in)
        weights[l].resize(s.units, s.fan_in);
      else
        weights[l].fill(T(0));
      biases[l].assign(s.units, T(0));
    }
    loss = 0;
  }
};

template <typename T>
struct BackpropWorkspace {
  BatchActivations<T> acts;
  Matrix<T> delta;
  Matrix<T> delta_prev;
};

template <typename T>
void check_labels(const Network<T>& net, std::span<const std::size_t> labels) {
  for (std::size_t y : labels)
    require(y < net.output_dim(), "label out of range of output units");
}

// Mean cross-entropy loss and its gradients over a batch. The final layer must
// be softmax. Reuses `ws` buffers between calls.
template <typename T>
void backward_into(const Network<T>& net, const Matrix<T>& inputs,
                   std::span<const std::size_t> labels,
                   BackpropWorkspace<T>& ws, Gradients<T>& grads,
                   bool want_input_grad = false) {
  const std::size_t B = inputs.rows();
  require(B > 0, "backward: empty batch");
  require(labels.size() == B, "backward: label count mismatch");
  require(net.spec(net.num_layers() - 1).activation == Activation::kSoftmax,
          "backward: cross-entropy needs a softmax output layer");
  check_labels(net, labels);
  forward_batch(net, inputs, ws.acts);
  grads.reset(net);

  const Matrix<T>& probs = ws.acts.output();
  const T inv_b = T(1) / static_cast<T>(B);
  Matrix<T>& delta = ws.delta;
  delta = probs;
  T loss = 0;
  for (std::size_t i = 0; i < B; ++i) {
    const T p = probs(i, labels[i]);
    loss -= std::log(std::max(p, std::numeric_limits<T>::min()));
    delta(i, labels[i]) -= T(1);
  }
  for (T& v : delta.values()) v *= inv_b;
  grads.loss = loss * inv_b;

  for (std::size_t l = net.num_layers(); l-- > 0;) {
    const Matrix<T>& in = l == 0 ? inputs : ws.acts.post[l - 1];
    const Matrix<T>& w = net.weights(l);
    Matrix<T>& gw = grads.weights[l];
    std::vector<T>& gb = grads.biases[l];
    const std::size_t units = w.rows();
    for (std::size_t i = 0; i < B; ++i) {
      std::span<const T> d = delta.row(i);
      std::span<const T> x = in.row(i);
      for (std::size_t u = 0; u < units; ++u) {
        if (d[u] == T(0)) continue;
        gb[u] += d[u];
        axpy<T>(d[u], x, gw.row(u));
      }
    }
    if (l == 0 && !want_input_grad) break;
    Matrix<T>& prev = ws.delta_prev;
    if (prev.rows() != B || prev.cols() != w.cols())
      prev.resize(B, w.cols());
    else
      prev.fill(T(0));
    for (std::size_t i = 0; i < B; ++i) {
      std::span<const T> d = delta.row(i);
      std::span<T> p = prev.row(i);
      for (std::size_t u = 0; u < units; ++u)
        if (d[u] != T(0)) axpy<T>(d[u], w.row(u), p);
    }
    if (l == 0) {
      grads.input = prev;
      break;
    }
    if (net.spec(l - 1).activation == Activation::kRelu) {
      const Matrix<T>& z = ws.acts.pre[l - 1];
      T* pv = prev.data();
      const T* zv = z.data();
      for (std::size_t k = 0; k < prev.size(); ++k)
        if (!(zv[k] > T(0))) pv[k] = T(0);
    }
    std::swap(delta, prev);
  }
}

template <typename T>
Gradients<T> backward(const Network<T>& net, const Matrix<T>& inputs,
                      std::span<const std::size_t> labels,
                      bool want_input_grad = false) {
  BackpropWorkspace<T> ws;
  Gradients<T> g;
  backward_into(net, inputs, labels, ws, g, want_input_grad);
  return g;
}

// Learning rate decays geometrically from initial_lr at step 0 to final_lr at
// step total_steps.
struct LrSchedule {
  double initial_lr = 0.00025;
  double final_lr = 0.000025;
  std::size_t total_steps = 0;

  double at(std::size_t step) const {
    if (initial_lr == final_lr || total_steps == 0) return initial_lr;
    require(initial_lr > 0 && final_lr > 0,
            "geometric schedule needs positive learning rates");
    const double t =
        static_cast<double>(std::min(step, total_steps)) /
        static_cast<double>(total_steps);
    if (step >= total_steps) return final_lr;
    return initial_lr * std::pow(final_lr / initial_lr, t);
  }
};

struct TrainConfig {
  LrSchedule schedule;
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  // When set, the learning rate is a per-sample rate: each update applies
  // lr * (sum of per-sample gradients) instead of lr * (mean gradient).
  bool per_sample_lr = false;
};

// Features (one row per sample) with a class label per row.
template <typename T = double>
struct Dataset {
  Matrix<T> features;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
};

struct TrainReport {
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
};

template <typename T>
void gather_rows(const Matrix<T>& src, std::span<const std::size_t> idx,
                 Matrix<T>& dst) {
  if (dst.rows() != idx.size() || dst.cols() != src.cols())
    dst.resize(idx.size(), src.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::span<const T> s = src.row(idx[i]);
    std::copy(s.begin(), s.end(), dst.row(i).begin());
  }
}

inline std::size_t batches_per_epoch(std::size_t n, std::size_t batch) {
  return (n + batch - 1) / batch;
}

// Total number of parameter updates for a run; the schedule reaches final_lr
// at the last of them.
inline std::size_t schedule_steps(const TrainConfig& cfg, std::size_t n) {
  const std::size_t updates = cfg.epochs * batches_per_epoch(n, cfg.batch_size);
  return updates == 0 ? 0 : updates - 1;
}

// Minibatch SGD on mean cross-entropy. Sample order is reshuffled every epoch
// from cfg.seed. When cfg.schedule.total_steps is 0 it is derived from the run
// length.
template <typename T>
TrainReport sgd_train(Network<T>& net, const Dataset<T>& data,
                      const TrainConfig& cfg) {
  require(!data.empty(), "sgd_train: empty dataset");
  require(data.features.rows() == data.size(), "sgd_train: label count mismatch");
  require(cfg.batch_size >= 1, "sgd_train: batch_size must be >= 1");
  check_labels(net, data.labels);

  LrSchedule schedule = cfg.schedule;
  if (schedule.total_steps == 0) schedule.total_steps = schedule_steps(cfg, data.size());

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  BackpropWorkspace<T> ws;
  Gradients<T> grads;
  Matrix<T> batch;
  std::vector<std::size_t> batch_labels;
  TrainReport report;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      gather_rows(data.features, idx, batch);
      batch_labels.resize(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i)
        batch_labels[i] = data.labels[idx[i]];
      backward_into(net, batch, batch_labels, ws, grads);
      if (!std::isfinite(static_cast<double>(grads.loss)))
        throw Error("sgd_train: non-finite loss at epoch " +
                    std::to_string(epoch) + ", step " + std::to_string(step));
      loss_sum += static_cast<double>(grads.loss) * idx.size();

      double lr = schedule.at(step);
      if (cfg.per_sample_lr) lr *= static_cast<double>(idx.size());
      const T rate = static_cast<T>(lr);
      if (rate != T(0)) {
        for (std::size_t l = 0; l < net.num_layers(); ++l) {
          axpy<T>(-rate, grads.weights[l].values(), net.weights(l).values());
          axpy<T>(-rate, grads.biases[l], net.biases(l));
        }
      }
      ++step;
    }
    report.epoch_loss.push_back(loss_sum / static_cast<double>(data.size()));
  }
  report.steps = step;
  return report;
}

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
};

// Mean cross-entropy and top-1 accuracy of `net` over a dataset.
template <typename T>
EvalResult evaluate(const Network<T>& net, const Dataset<T>& data,
                    std::size_t chunk = 512) {
  require(!data.empty(), "evaluate: empty dataset");
  check_labels(net, data.labels);
  BatchActivations<T> acts;
  Matrix<T> batch;
  std::vector<std::size_t> idx;
  double loss = 0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t end = std::min(data.size(), start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    gather_rows(data.features, idx, batch);
    forward_batch(net, batch, acts);
    const Matrix<T>& out = acts.output();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::span<const T> p = out.row(i);
      const std::size_t y = data.labels[start + i];
      loss -= std::log(std::max(static_cast<double>(p[y]),
                                std::numeric_limits<double>::min()));
      const auto best = static_cast<std::size_t>(
          std::max_element(p.begin(), p.end()) - p.begin());
      if (best == y) ++correct;
    }
  }
  const double n = static_cast<double>(data.size());
  return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace weightleak
