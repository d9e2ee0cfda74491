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

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace weightleak {

// Every failure in the library surfaces as an Error (or a subclass).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or truncated files.
class FormatError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, std::string_view message) {
  if (!condition) throw Error(std::string(message));
}

using Rng = std::mt19937_64;

enum class Gender { kFemale, kMale };

inline char gender_code(Gender g) { return g == Gender::kFemale ? 'F' : 'M'; }

inline Gender parse_gender(std::string_view s) {
  if (s == "F") return Gender::kFemale;
  if (s == "M") return Gender::kMale;
  throw FormatError("unknown gender code '" + std::string(s) + "'");
}

// Session index: 0 is s1 (enrollment side), 1 is s2 (test side).
using SessionIndex = int;
inline std::string session_name(SessionIndex s) {
  return s == 0 ? "s1" : "s2";
}

// Where layer vectors come from: the adapted weights themselves, or their
// difference to the generic model.
enum class WeightSource { kRaw, kDelta };

inline std::string_view source_name(WeightSource s) {
  return s == WeightSource::kRaw ? "raw" : "delta";
}

inline WeightSource parse_source(std::string_view s) {
  if (s == "raw") return WeightSource::kRaw;
  if (s == "delta") return WeightSource::kDelta;
  throw Error("unknown weight source '" + std::string(s) + "'");
}

// SplitMix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  return splitmix64(seed ^ splitmix64(salt + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix_seed(seed, h);
}

}  // namespace weightleak
