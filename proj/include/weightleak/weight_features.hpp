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
#include <span>
#include <string>
#include <vector>

#include "weightleak/common.hpp"
#include "weightleak/matrix.hpp"
#include "weightleak/personalize.hpp"

namespace weightleak {

// One layer of one model as a flat vector. Ordering is row-major by unit:
// unit u contributes its fan_in incoming weights followed (optionally) by its
// bias, then unit u+1 follows.
struct LayerVector {
  std::string speaker_id;
  SessionIndex session = 0;
  std::size_t layer = 0;
  WeightSource source = WeightSource::kDelta;
  std::size_t units = 0;
  std::size_t fan_in = 0;
  bool with_bias = true;
  std::vector<double> values;

  std::size_t block_size() const { return fan_in + (with_bias ? 1 : 0); }
};

inline std::vector<double> flatten_weights(const Matrix<double>& w,
                                           std::span<const double> bias,
                                           bool with_bias = true) {
  require(bias.size() == w.rows(), "flatten: bias length mismatch");
  std::vector<double> out;
  out.reserve(w.rows() * (w.cols() + (with_bias ? 1 : 0)));
  for (std::size_t u = 0; u < w.rows(); ++u) {
    std::span<const double> r = w.row(u);
    out.insert(out.end(), r.begin(), r.end());
    if (with_bias) out.push_back(bias[u]);
  }
  return out;
}

inline LayerVector flatten_layer(const PersonalizedModel& model,
                                 std::size_t layer, WeightSource source,
                                 bool with_bias = true) {
  check_layer_index(model.adapted.topology, layer);
  LayerVector v;
  v.speaker_id = model.speaker_id;
  v.session = model.session;
  v.layer = layer;
  v.source = source;
  v.with_bias = with_bias;
  if (source == WeightSource::kRaw) {
    const Network<double>& net = model.adapted.net;
    v.values = flatten_weights(net.weights(layer), net.biases(layer), with_bias);
    v.units = net.spec(layer).units;
    v.fan_in = net.spec(layer).fan_in;
  } else {
    LayerDelta d = weight_delta(model, layer);
    v.values = flatten_weights(d.weights, d.biases, with_bias);
    v.units = d.weights.rows();
    v.fan_in = d.weights.cols();
  }
  return v;
}

// Inverse of flatten_layer. Biases come back as zeros when the vector was
// flattened without them.
inline LayerDelta unflatten(const LayerVector& v) {
  require(v.values.size() == v.units * v.block_size(),
          "unflatten: length does not match units x block size");
  LayerDelta out{Matrix<double>(v.units, v.fan_in),
                 std::vector<double>(v.units, 0.0)};
  const std::size_t bs = v.block_size();
  for (std::size_t u = 0; u < v.units; ++u) {
    const double* src = v.values.data() + u * bs;
    std::copy(src, src + v.fan_in, out.weights.row(u).begin());
    if (v.with_bias) out.biases[u] = src[v.fan_in];
  }
  return out;
}

// Per-unit decomposition of a layer vector: block i holds everything that
// feeds unit i of the layer.
struct BlockSplit {
  std::size_t layer = 0;
  std::size_t block_size = 0;
  std::vector<std::vector<double>> blocks;
};

inline BlockSplit split_blocks(std::span<const double> values,
                               std::size_t block_size, std::size_t layer = 0) {
  require(block_size >= 1, "split_blocks: block size must be >= 1");
  require(values.size() % block_size == 0,
          "split_blocks: vector length " + std::to_string(values.size()) +
              " is not a multiple of block size " + std::to_string(block_size));
  BlockSplit s{layer, block_size, {}};
  for (std::size_t off = 0; off < values.size(); off += block_size)
    s.blocks.emplace_back(values.begin() + static_cast<std::ptrdiff_t>(off),
                          values.begin() + static_cast<std::ptrdiff_t>(off + block_size));
  return s;
}

inline BlockSplit split_blocks(const LayerVector& v) {
  require(v.values.size() == v.units * v.block_size(),
          "split_blocks: length does not match units x block size");
  return split_blocks(v.values, v.block_size(), v.layer);
}

inline std::vector<double> concat(const BlockSplit& s) {
  std::vector<double> out;
  out.reserve(s.blocks.size() * s.block_size);
  for (const auto& b : s.blocks) out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace weightleak
