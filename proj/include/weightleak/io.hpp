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

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>
#include "weightleak/common.hpp"
#include "weightleak/corpus.hpp"
#include "weightleak/extractor.hpp"
#include "weightleak/nn.hpp"
#include "weightleak/personalize.hpp"
#include "weightleak/verify.hpp"

namespace weightleak {

namespace fs = std::filesystem;

// Writes through a sibling temporary file and renames it into place, so
// readers never observe a partially written artifact.
inline void write_atomically(const fs::path& path,
                             const std::function<void(std::ostream&)>& body) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  try {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    body(out);
    out.flush();
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Shortest decimal text that parses back to the same double.
inline std::string format_real(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline void append_real(std::string& out, double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, r.ptr);
}

inline double parse_real(std::string_view s) {
  double v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw FormatError("not a number: '" + std::string(s) + "'");
  return v;
}

template <typename Int>
Int parse_int(std::string_view s) {
  Int v = 0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw FormatError("not an integer: '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Weight files.
//
//   "WLKW"                       4 bytes magic
//   version                      u16 (= 1)
//   layer count L                u32
//   L x (fan_in u32, units u32)
//   precision                    u8, 32 or 64 (IEEE-754 little-endian)
//   per layer: units*fan_in weights (row-major by unit), then units biases
//   provenance length            u32
//   provenance                   UTF-8 bytes
//
// All integers are little-endian.
// ---------------------------------------------------------------------------

inline constexpr char kWeightMagic[4] = {'W', 'L', 'K', 'W'};
inline constexpr std::uint16_t kWeightVersion = 1;

enum class Precision : std::uint8_t { k32 = 32, k64 = 64 };

struct LayerShape {
  std::size_t fan_in = 0;
  std::size_t units = 0;
};

struct WeightFile {
  std::vector<LayerShape> shapes;
  std::vector<Matrix<double>> weights;
  std::vector<std::vector<double>> biases;
  Precision precision = Precision::k64;
  std::string provenance;
};

inline std::size_t weight_file_size(const std::vector<LayerShape>& shapes,
                                    Precision p, std::size_t provenance_bytes) {
  const std::size_t width = p == Precision::k64 ? 8 : 4;
  std::size_t n = 4 + 2 + 4 + 8 * shapes.size() + 1;
  for (const auto& s : shapes) n += (s.units * s.fan_in + s.units) * width;
  return n + 4 + provenance_bytes;
}

namespace detail {

template <typename UInt>
void put_le(std::string& out, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_real(std::string& out, double v, Precision p) {
  if (p == Precision::k64)
    put_le(out, std::bit_cast<std::uint64_t>(v));
  else
    put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <typename UInt>
  UInt get() {
    need(sizeof(UInt));
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i)
      v |= static_cast<UInt>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(UInt);
    return v;
  }

  double real(Precision p) {
    if (p == Precision::k64) return std::bit_cast<double>(get<std::uint64_t>());
    return static_cast<double>(std::bit_cast<float>(get<std::uint32_t>()));
  }

  std::string_view take(std::size_t n) {
    need(n);
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("weight file is truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_weights(const WeightFile& wf) {
  require(wf.shapes.size() == wf.weights.size() &&
              wf.shapes.size() == wf.biases.size(),
          "weight file: inconsistent layer lists");
  std::string out(kWeightMagic, 4);
  detail::put_le<std::uint16_t>(out, kWeightVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(wf.shapes.size()));
  for (const auto& s : wf.shapes) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.fan_in));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.units));
  }
  out.push_back(static_cast<char>(wf.precision));
  for (std::size_t l = 0; l < wf.shapes.size(); ++l) {
    require(wf.weights[l].rows() == wf.shapes[l].units &&
                wf.weights[l].cols() == wf.shapes[l].fan_in &&
                wf.biases[l].size() == wf.shapes[l].units,
            "weight file: layer data does not match its shape");
    for (double v : wf.weights[l].values()) detail::put_real(out, v, wf.precision);
    for (double v : wf.biases[l]) detail::put_real(out, v, wf.precision);
  }
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(wf.provenance.size()));
  out += wf.provenance;
  return out;
}

inline WeightFile decode_weights(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kWeightMagic, 4) != 0)
    throw FormatError("not a weight file (bad magic)");
  detail::ByteReader r(bytes.substr(4));
  const auto version = r.get<std::uint16_t>();
  if (version != kWeightVersion)
    throw FormatError("unsupported weight file version " + std::to_string(version));
  WeightFile wf;
  const auto layers = r.get<std::uint32_t>();
  if (static_cast<std::size_t>(layers) * 8 > r.remaining())
    throw FormatError("weight file is truncated");
  std::size_t total_values = 0;
  for (std::uint32_t l = 0; l < layers; ++l) {
    const std::size_t fan_in = r.get<std::uint32_t>();
    const std::size_t units = r.get<std::uint32_t>();
    // u32 x u32 fits in 64 bits; the sum is checked against the file size.
    total_values += units * fan_in + units;
    if (total_values > bytes.size())
      throw FormatError("weight file layer dimensions exceed the file size");
    wf.shapes.push_back({fan_in, units});
  }
  const auto prec = r.get<std::uint8_t>();
  if (prec != 32 && prec != 64)
    throw FormatError("bad precision flag " + std::to_string(prec));
  wf.precision = static_cast<Precision>(prec);
  const std::size_t width = prec / 8;
  if (total_values * width > r.remaining())
    throw FormatError("weight file is truncated");
  for (const auto& s : wf.shapes) {
    Matrix<double> w(s.units, s.fan_in);
    for (double& v : w.values()) v = r.real(wf.precision);
    std::vector<double> b(s.units);
    for (double& v : b) v = r.real(wf.precision);
    wf.weights.push_back(std::move(w));
    wf.biases.push_back(std::move(b));
  }
  const auto plen = r.get<std::uint32_t>();
  wf.provenance = std::string(r.take(plen));
  if (r.remaining() != 0) throw FormatError("trailing bytes after weight file");
  return wf;
}

inline WeightFile to_weight_file(const Network<double>& net, std::string provenance,
                                 Precision p) {
  WeightFile wf;
  wf.precision = p;
  wf.provenance = std::move(provenance);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    wf.shapes.push_back({net.spec(l).fan_in, net.spec(l).units});
    wf.weights.push_back(net.weights(l));
    wf.biases.push_back(net.biases(l));
  }
  return wf;
}

inline void save_snapshot(const fs::path& path, const WeightSnapshot& snap,
                          Precision p = Precision::k64) {
  const std::string bytes = encode_weights(to_weight_file(snap.net, snap.provenance.str(), p));
  write_atomically(path, [&](std::ostream& out) { out.write(bytes.data(), static_cast<std::streamsize>(bytes.size())); });
}

inline WeightSnapshot load_snapshot(const fs::path& path) {
  const WeightFile wf = decode_weights(read_file(path));
  std::vector<LayerSpec> specs;
  for (std::size_t l = 0; l < wf.shapes.size(); ++l)
    specs.push_back({wf.shapes[l].fan_in, wf.shapes[l].units,
                     l + 1 == wf.shapes.size() ? Activation::kSoftmax : Activation::kRelu});
  WeightSnapshot snap;
  try {
    snap.topology = SurrogateTopology::from_specs(specs);
    snap.net = Network<double>(specs);
  } catch (const Error& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
  for (std::size_t l = 0; l < specs.size(); ++l) {
    snap.net.weights(l) = wf.weights[l];
    snap.net.biases(l) = wf.biases[l];
  }
  snap.provenance = Provenance::parse(wf.provenance);
  return snap;
}

// Extractor weights: one layer per block, then the head layers. The spec and
// standardization statistics live in a JSON file next to the weights.
inline nlohmann::json extractor_spec_json(const ExtractorSpec& s) {
  return {{"target_layer", s.target_layer},     {"num_blocks", s.num_blocks},
          {"block_size", s.block_size},         {"per_block_units", s.per_block_units},
          {"fc_units", s.fc_units},             {"num_classes", s.num_classes},
          {"source", source_name(s.source)},    {"with_bias", s.with_bias},
          {"embed_post_activation", s.embed_post_activation}};
}

inline ExtractorSpec extractor_spec_from_json(const nlohmann::json& j) {
  ExtractorSpec s;
  s.target_layer = j.at("target_layer").get<std::size_t>();
  s.num_blocks = j.at("num_blocks").get<std::size_t>();
  s.block_size = j.at("block_size").get<std::size_t>();
  s.per_block_units = j.at("per_block_units").get<std::size_t>();
  s.fc_units = j.at("fc_units").get<std::vector<std::size_t>>();
  s.num_classes = j.at("num_classes").get<std::size_t>();
  s.source = parse_source(j.at("source").get<std::string>());
  s.with_bias = j.at("with_bias").get<bool>();
  s.embed_post_activation = j.at("embed_post_activation").get<bool>();
  return s;
}

inline fs::path extractor_stats_path(const fs::path& weights) {
  fs::path p = weights;
  p += ".stats.json";
  return p;
}

// Stats hold doubles as shortest round-trip strings so reloading is exact.
inline void save_extractor(const fs::path& path, const MultiStreamExtractor& ex,
                           Precision p = Precision::k64) {
  const ExtractorSpec& s = ex.spec();
  WeightFile wf;
  wf.precision = p;
  wf.provenance = "extractor/layer" + std::to_string(s.target_layer + 1);
  for (std::size_t b = 0; b < s.num_blocks; ++b) {
    wf.shapes.push_back({s.block_size, s.per_block_units});
    wf.weights.push_back(ex.block_weights(b));
    wf.biases.push_back(ex.block_biases(b));
  }
  const WeightFile head = to_weight_file(ex.head(), "", p);
  for (std::size_t l = 0; l < head.shapes.size(); ++l) {
    wf.shapes.push_back(head.shapes[l]);
    wf.weights.push_back(head.weights[l]);
    wf.biases.push_back(head.biases[l]);
  }
  const std::string bytes = encode_weights(wf);
  nlohmann::json stats = {{"spec", extractor_spec_json(s)}};
  auto as_text = [](const std::vector<double>& v) {
    std::vector<std::string> out;
    for (double x : v) out.push_back(format_real(x));
    return out;
  };
  stats["mean"] = as_text(ex.standardizer().mean());
  stats["scale"] = as_text(ex.standardizer().scale());
  write_atomically(path, [&](std::ostream& out) { out.write(bytes.data(), static_cast<std::streamsize>(bytes.size())); });
  write_atomically(extractor_stats_path(path), [&](std::ostream& out) { out << stats.dump(1) << "\n"; });
}

inline MultiStreamExtractor load_extractor(const fs::path& path) {
  const WeightFile wf = decode_weights(read_file(path));
  nlohmann::json stats;
  try {
    stats = nlohmann::json::parse(read_file(extractor_stats_path(path)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad extractor statistics file: " + std::string(e.what()));
  }
  MultiStreamExtractor ex(extractor_spec_from_json(stats.at("spec")));
  const ExtractorSpec& s = ex.spec();
  if (wf.shapes.size() != s.num_blocks + ex.head().num_layers())
    throw FormatError("extractor weight file does not match its spec");
  for (std::size_t b = 0; b < s.num_blocks; ++b) {
    if (wf.weights[b].rows() != s.per_block_units || wf.weights[b].cols() != s.block_size)
      throw FormatError("extractor block shape mismatch");
    ex.block_weights(b) = wf.weights[b];
    ex.block_biases(b) = wf.biases[b];
  }
  for (std::size_t l = 0; l < ex.head().num_layers(); ++l) {
    const auto& w = wf.weights[s.num_blocks + l];
    if (w.rows() != ex.head().spec(l).units || w.cols() != ex.head().spec(l).fan_in)
      throw FormatError("extractor head shape mismatch");
    ex.head().weights(l) = w;
    ex.head().biases(l) = wf.biases[s.num_blocks + l];
  }
  auto from_text = [](const nlohmann::json& j) {
    std::vector<double> v;
    for (const auto& x : j) v.push_back(parse_real(x.get<std::string>()));
    return v;
  };
  ex.set_standardizer(Standardizer(from_text(stats.at("mean")), from_text(stats.at("scale"))));
  return ex;
}

// ---------------------------------------------------------------------------
// Corpus text file. Line oriented, whitespace separated:
//
//   weightleak-corpus 1
//   config <key>=<value> ...
//   gender_direction <D reals>
//   class_mean <c> <D reals>            (one line per class)
//   global_mean <D reals>
//   speaker <id> <generic|p1|p2> <F|M>
//   speaker_offset <D reals>
//   session_offset <s1|s2> <D reals>    (two lines)
//   pseudo_ivector <D reals>
//   session <s1|s2> <frames>            (two blocks, each followed by
//   <label> <D reals>                    one line per frame)
//   end
//
// Reals use the shortest representation that round-trips exactly.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_reals(std::string& out, std::span<const double> v) {
  for (double x : v) {
    out.push_back(' ');
    append_real(out, x);
  }
}

inline std::vector<double> get_reals(const std::vector<std::string_view>& tok,
                                     std::size_t from, std::size_t dim) {
  if (tok.size() != from + dim)
    throw FormatError("corpus: expected " + std::to_string(dim) + " values");
  std::vector<double> v(dim);
  for (std::size_t i = 0; i < dim; ++i) v[i] = parse_real(tok[from + i]);
  return v;
}

}  // namespace detail

inline std::string corpus_config_line(const CorpusConfig& c) {
  std::string s = "config";
  auto kv = [&](const char* k, const std::string& v) { s += std::string(" ") + k + "=" + v; };
  kv("feature_dim", std::to_string(c.feature_dim));
  kv("num_classes", std::to_string(c.num_classes));
  kv("generic_speakers", std::to_string(c.generic_speakers));
  kv("p1_speakers", std::to_string(c.p1_speakers));
  kv("p2_speakers", std::to_string(c.p2_speakers));
  kv("female_fraction", format_real(c.female_fraction));
  kv("gender_strength", format_real(c.gender_strength));
  kv("speaker_sigma", format_real(c.speaker_sigma));
  kv("session_sigma", format_real(c.session_sigma));
  kv("noise_sigma", format_real(c.noise_sigma));
  kv("class_mean_norm", format_real(c.class_mean_norm));
  kv("frames_per_session", std::to_string(c.frames_per_session));
  kv("seed", std::to_string(c.seed));
  return s;
}

inline void write_corpus(std::ostream& out, const Corpus& corpus) {
  const std::size_t dim = corpus.config.feature_dim;
  std::string buf = "weightleak-corpus 1\n" + corpus_config_line(corpus.config) + "\n";
  buf += "gender_direction";
  detail::put_reals(buf, corpus.gender_direction);
  buf += "\n";
  for (std::size_t c = 0; c < corpus.class_means.rows(); ++c) {
    buf += "class_mean " + std::to_string(c);
    detail::put_reals(buf, corpus.class_means.row(c));
    buf += "\n";
  }
  buf += "global_mean";
  detail::put_reals(buf, corpus.global_mean);
  buf += "\n";
  out << buf;
  for (const auto& p : corpus.speakers) {
    buf.clear();
    buf += "speaker " + p.speaker_id + " " + std::string(split_name(p.split)) + " " +
           gender_code(p.gender) + "\n";
    buf += "speaker_offset";
    detail::put_reals(buf, p.speaker_offset);
    buf += "\n";
    for (int s = 0; s < 2; ++s) {
      buf += "session_offset " + session_name(s);
      detail::put_reals(buf, p.session_offset[s]);
      buf += "\n";
    }
    buf += "pseudo_ivector";
    detail::put_reals(buf, p.pseudo_ivector);
    buf += "\n";
    for (int s = 0; s < 2; ++s) {
      const Dataset<double>& d = p.sessions[s];
      require(d.features.cols() == dim, "corpus: session dimension mismatch");
      buf += "session " + session_name(s) + " " + std::to_string(d.size()) + "\n";
      for (std::size_t i = 0; i < d.size(); ++i) {
        buf += std::to_string(d.labels[i]);
        detail::put_reals(buf, d.features.row(i));
        buf += "\n";
      }
    }
    out << buf;
  }
  out << "end\n";
}

inline void save_corpus(const fs::path& path, const Corpus& corpus) {
  write_atomically(path, [&](std::ostream& out) { write_corpus(out, corpus); });
}

inline CorpusConfig parse_corpus_config(const std::vector<std::string_view>& tok) {
  CorpusConfig c;
  for (std::size_t i = 1; i < tok.size(); ++i) {
    const auto eq = tok[i].find('=');
    if (eq == std::string_view::npos) throw FormatError("corpus: bad config entry");
    const std::string_view k = tok[i].substr(0, eq), v = tok[i].substr(eq + 1);
    if (k == "feature_dim") c.feature_dim = parse_int<std::size_t>(v);
    else if (k == "num_classes") c.num_classes = parse_int<std::size_t>(v);
    else if (k == "generic_speakers") c.generic_speakers = parse_int<std::size_t>(v);
    else if (k == "p1_speakers") c.p1_speakers = parse_int<std::size_t>(v);
    else if (k == "p2_speakers") c.p2_speakers = parse_int<std::size_t>(v);
    else if (k == "female_fraction") c.female_fraction = parse_real(v);
    else if (k == "gender_strength") c.gender_strength = parse_real(v);
    else if (k == "speaker_sigma") c.speaker_sigma = parse_real(v);
    else if (k == "session_sigma") c.session_sigma = parse_real(v);
    else if (k == "noise_sigma") c.noise_sigma = parse_real(v);
    else if (k == "class_mean_norm") c.class_mean_norm = parse_real(v);
    else if (k == "frames_per_session") c.frames_per_session = parse_int<std::size_t>(v);
    else if (k == "seed") c.seed = parse_int<std::uint64_t>(v);
    else throw FormatError("corpus: unknown config key '" + std::string(k) + "'");
  }
  return c;
}

inline Corpus read_corpus(std::string_view text) {
  std::size_t pos = 0;
  std::size_t line_no = 0;
  auto next = [&]() -> std::vector<std::string_view> {
    if (pos >= text.size()) throw FormatError("corpus: unexpected end of file");
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    return split_ws(line);
  };
  auto expect = [&](const std::vector<std::string_view>& tok, std::string_view key) {
    if (tok.empty() || tok[0] != key)
      throw FormatError("corpus line " + std::to_string(line_no) + ": expected '" +
                        std::string(key) + "'");
  };

  Corpus corpus;
  auto tok = next();
  if (tok.size() != 2 || tok[0] != "weightleak-corpus")
    throw FormatError("not a corpus file");
  if (tok[1] != "1") throw FormatError("unsupported corpus version");
  tok = next();
  expect(tok, "config");
  corpus.config = parse_corpus_config(tok);
  const std::size_t dim = corpus.config.feature_dim;
  tok = next();
  expect(tok, "gender_direction");
  corpus.gender_direction = detail::get_reals(tok, 1, dim);
  corpus.class_means.resize(corpus.config.num_classes, dim);
  for (std::size_t c = 0; c < corpus.config.num_classes; ++c) {
    tok = next();
    expect(tok, "class_mean");
    if (tok.size() < 2 || parse_int<std::size_t>(tok[1]) != c)
      throw FormatError("corpus: class means out of order");
    const auto v = detail::get_reals(tok, 2, dim);
    std::copy(v.begin(), v.end(), corpus.class_means.row(c).begin());
  }
  tok = next();
  expect(tok, "global_mean");
  corpus.global_mean = detail::get_reals(tok, 1, dim);

  for (;;) {
    tok = next();
    if (!tok.empty() && tok[0] == "end") break;
    expect(tok, "speaker");
    if (tok.size() != 4) throw FormatError("corpus: malformed speaker line");
    SpeakerProfile p;
    p.speaker_id = std::string(tok[1]);
    p.split = parse_split(tok[2]);
    p.gender = parse_gender(tok[3]);
    tok = next();
    expect(tok, "speaker_offset");
    p.speaker_offset = detail::get_reals(tok, 1, dim);
    for (int s = 0; s < 2; ++s) {
      tok = next();
      expect(tok, "session_offset");
      if (tok.size() < 2 || tok[1] != session_name(s))
        throw FormatError("corpus: session offsets out of order");
      p.session_offset[s] = detail::get_reals(tok, 2, dim);
    }
    tok = next();
    expect(tok, "pseudo_ivector");
    p.pseudo_ivector = detail::get_reals(tok, 1, dim);
    for (int s = 0; s < 2; ++s) {
      tok = next();
      expect(tok, "session");
      if (tok.size() != 3 || tok[1] != session_name(s))
        throw FormatError("corpus: malformed session header");
      const auto frames = parse_int<std::size_t>(tok[2]);
      Dataset<double>& d = p.sessions[s];
      d.features.resize(frames, dim);
      d.labels.resize(frames);
      for (std::size_t i = 0; i < frames; ++i) {
        tok = next();
        if (tok.size() != dim + 1) throw FormatError("corpus: malformed frame line");
        d.labels[i] = parse_int<std::size_t>(tok[0]);
        if (d.labels[i] >= corpus.config.num_classes)
          throw FormatError("corpus: frame label out of range");
        for (std::size_t k = 0; k < dim; ++k) d.features(i, k) = parse_real(tok[k + 1]);
      }
    }
    corpus.speakers.push_back(std::move(p));
  }
  return corpus;
}

inline Corpus load_corpus(const fs::path& path) { return read_corpus(read_file(path)); }

// ---------------------------------------------------------------------------
// Trial lists, keys and scores, one trial per line:
//   trials: <enroll_id> <test_id>
//   key:    <enroll_id> <test_id> <target|nontarget>
//   scores: <enroll_id> <test_id> <score>
// Side ids are <speaker_id>-s1 (enrollment) and <speaker_id>-s2 (test).
// ---------------------------------------------------------------------------

inline std::string trial_side_id(const std::string& speaker, SessionIndex s) {
  return speaker + "-" + session_name(s);
}

inline std::string format_trials(std::span<const std::string> speakers,
                                 std::span<const Trial> trials) {
  std::string out;
  for (const Trial& t : trials)
    out += trial_side_id(speakers[t.enroll], 0) + " " +
           trial_side_id(speakers[t.test], 1) + "\n";
  return out;
}

inline std::string format_key(std::span<const std::string> speakers,
                              std::span<const Trial> trials) {
  std::string out;
  for (const Trial& t : trials)
    out += trial_side_id(speakers[t.enroll], 0) + " " +
           trial_side_id(speakers[t.test], 1) +
           (t.is_target ? " target\n" : " nontarget\n");
  return out;
}

inline std::string format_scores(std::span<const std::string> speakers,
                                 const TrialScoreSet& set) {
  std::string out;
  for (std::size_t i = 0; i < set.trials.size(); ++i) {
    const Trial& t = set.trials[i];
    out += trial_side_id(speakers[t.enroll], 0) + " " +
           trial_side_id(speakers[t.test], 1) + " ";
    append_real(out, set.scores[i]);
    out += "\n";
  }
  return out;
}

// Reads score and key files back into target / non-target score lists.
inline TrialScoreSet read_scores_with_key(std::string_view scores_text,
                                          std::string_view key_text) {
  std::map<std::pair<std::string, std::string>, bool> key;
  std::size_t pos = 0;
  while (pos < key_text.size()) {
    std::size_t nl = key_text.find('\n', pos);
    if (nl == std::string_view::npos) nl = key_text.size();
    const auto tok = split_ws(key_text.substr(pos, nl - pos));
    pos = nl + 1;
    if (tok.empty()) continue;
    if (tok.size() != 3 || (tok[2] != "target" && tok[2] != "nontarget"))
      throw FormatError("key: malformed line");
    key[{std::string(tok[0]), std::string(tok[1])}] = tok[2] == "target";
  }
  TrialScoreSet set;
  pos = 0;
  while (pos < scores_text.size()) {
    std::size_t nl = scores_text.find('\n', pos);
    if (nl == std::string_view::npos) nl = scores_text.size();
    const auto tok = split_ws(scores_text.substr(pos, nl - pos));
    pos = nl + 1;
    if (tok.empty()) continue;
    if (tok.size() != 3) throw FormatError("scores: malformed line");
    auto it = key.find({std::string(tok[0]), std::string(tok[1])});
    if (it == key.end()) throw FormatError("scores: trial missing from key");
    set.trials.push_back({0, 0, it->second});
    set.scores.push_back(parse_real(tok[2]));
    (it->second ? set.num_target : set.num_nontarget)++;
  }
  return set;
}

// Embedding file, one line per embedding:
//   <speaker_id> <s1|s2> <layer (1-based)> <values...>
inline std::string format_embeddings(const std::vector<SpeakerEmbedding>& es) {
  std::string out;
  for (const auto& e : es) {
    out += e.speaker_id + " " + session_name(e.session) + " " + std::to_string(e.layer + 1);
    detail::put_reals(out, e.vector);
    out += "\n";
  }
  return out;
}

inline std::vector<SpeakerEmbedding> parse_embeddings(std::string_view text) {
  std::vector<SpeakerEmbedding> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto tok = split_ws(text.substr(pos, nl - pos));
    pos = nl + 1;
    if (tok.empty()) continue;
    if (tok.size() < 4 || (tok[1] != "s1" && tok[1] != "s2"))
      throw FormatError("embeddings: malformed line");
    SpeakerEmbedding e;
    e.speaker_id = std::string(tok[0]);
    e.session = tok[1] == "s1" ? 0 : 1;
    e.layer = parse_int<std::size_t>(tok[2]) - 1;
    for (std::size_t i = 3; i < tok.size(); ++i) e.vector.push_back(parse_real(tok[i]));
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace weightleak
