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
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>
#include "weightleak/attack.hpp"
#include "weightleak/cluster.hpp"
#include "weightleak/corpus.hpp"
#include "weightleak/extractor.hpp"
#include "weightleak/io.hpp"
#include "weightleak/parallel.hpp"
#include "weightleak/personalize.hpp"
#include "weightleak/verify.hpp"

namespace weightleak {

// Extractor trained on `train`, evaluated on `eval`.
struct Direction {
  Split train = Split::kP1;
  Split eval = Split::kP2;

  std::string name() const {
    return std::string(split_name(train)) + "-" + std::string(split_name(eval));
  }

  static Direction parse(std::string_view s) {
    const auto dash = s.find('-');
    require(dash != std::string_view::npos, "bad direction '" + std::string(s) + "'");
    Direction d{parse_split(s.substr(0, dash)), parse_split(s.substr(dash + 1))};
    require(d.train != d.eval && d.train != Split::kGeneric && d.eval != Split::kGeneric,
            "direction '" + std::string(s) + "' must pair p1 and p2");
    return d;
  }

  friend bool operator==(const Direction&, const Direction&) = default;
};

struct ExperimentConfig {
  std::string experiment = "desk";
  std::uint64_t seed = 1;
  CorpusConfig corpus;
  SurrogateTopology topology;
  TrainConfig generic = default_generic_config();
  TrainConfig personalization = default_personalize_config();
  AttackOptions attack;
  // 0-based hidden layer indices; empty means every hidden layer.
  std::vector<std::size_t> layers;
  ExtractorSpec extractor;
  ExtractorTrainConfig extractor_training;
  std::vector<Direction> directions{{Split::kP1, Split::kP2}, {Split::kP2, Split::kP1}};
  bool run_gender = true;
  bool run_extractor = true;
  bool run_raw_cosine = true;
  // Empty: keep everything in memory.
  std::string output_dir;
  Precision weight_precision = Precision::k64;
  // 0: one worker per hardware thread.
  std::size_t threads = 0;

  std::vector<std::size_t> resolved_layers() const {
    if (!layers.empty()) return layers;
    std::vector<std::size_t> all(topology.num_layers);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }

  std::size_t worker_count() const {
    return threads == 0 ? default_thread_count() : threads;
  }

  // Stage seeds all derive from the master seed.
  CorpusConfig resolved_corpus() const {
    CorpusConfig c = corpus;
    c.seed = mix_seed(seed, "corpus");
    return c;
  }
  SurrogateTopology resolved_topology() const {
    SurrogateTopology t = topology;
    t.input_dim = corpus.feature_dim;
    t.output_dim = corpus.num_classes;
    return t;
  }
  TrainConfig resolved_generic() const {
    TrainConfig t = generic;
    t.seed = mix_seed(seed, "generic");
    return t;
  }
  TrainConfig resolved_personalization() const {
    TrainConfig t = personalization;
    t.seed = mix_seed(seed, "personalize");
    return t;
  }
  ExtractorTrainConfig resolved_extractor_training(const Direction& d,
                                                   std::size_t layer) const {
    ExtractorTrainConfig t = extractor_training;
    t.seed = mix_seed(seed, "extractor/" + d.name() + "/" + std::to_string(layer));
    return t;
  }

  void validate() const {
    corpus.validate();
    resolved_topology().validate();
    for (std::size_t l : layers)
      require(l < topology.num_layers, "config: layer index out of range");
    for (const auto& d : directions) {
      require(d.train != d.eval, "config: split roles must be disjoint");
      require(d.train != Split::kGeneric && d.eval != Split::kGeneric,
              "config: the generic split cannot be an attack split");
    }
    require(generic.batch_size >= 1 && personalization.batch_size >= 1,
            "config: batch sizes must be >= 1");
    require(personalization.epochs >= 1, "config: personalization needs >= 1 epoch");
    require(corpus.generic_speakers >= 1, "config: need generic speakers");
    require(extractor.num_classes >= 2, "config: extractor needs >= 2 classes");
  }
};

// ---------------------------------------------------------------------------
// Config file: JSON. Omitted keys keep their defaults, unknown keys are
// rejected. See README for the full key list.
// ---------------------------------------------------------------------------

namespace detail {

class JsonReader {
 public:
  JsonReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw Error("config: '" + where_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& field) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      field = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw Error("config: bad value for '" + where_ + "." + key + "': " + e.what());
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw Error("config: unknown key '" + where_ + "." + it.key() + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline void read_train(const nlohmann::json& j, const std::string& where, TrainConfig& t) {
  JsonReader r(j, where);
  r.read("initial_lr", t.schedule.initial_lr);
  r.read("final_lr", t.schedule.final_lr);
  r.read("epochs", t.epochs);
  r.read("batch_size", t.batch_size);
  r.read("per_sample_lr", t.per_sample_lr);
  r.finish();
}

inline nlohmann::json write_train(const TrainConfig& t) {
  return {{"initial_lr", t.schedule.initial_lr}, {"final_lr", t.schedule.final_lr},
          {"epochs", t.epochs}, {"batch_size", t.batch_size},
          {"per_sample_lr", t.per_sample_lr}};
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::JsonReader r(j, "config");
  r.read("experiment", c.experiment);
  r.read("seed", c.seed);
  r.read("output_dir", c.output_dir);
  r.read("threads", c.threads);
  int precision = 64;
  r.read("weight_precision", precision);
  require(precision == 32 || precision == 64, "config: weight_precision must be 32 or 64");
  c.weight_precision = precision == 32 ? Precision::k32 : Precision::k64;
  if (const auto* cj = r.child("corpus")) {
    detail::JsonReader cr(*cj, "corpus");
    CorpusConfig& k = c.corpus;
    cr.read("feature_dim", k.feature_dim);
    cr.read("num_classes", k.num_classes);
    cr.read("generic_speakers", k.generic_speakers);
    cr.read("p1_speakers", k.p1_speakers);
    cr.read("p2_speakers", k.p2_speakers);
    cr.read("female_fraction", k.female_fraction);
    cr.read("gender_strength", k.gender_strength);
    cr.read("speaker_sigma", k.speaker_sigma);
    cr.read("session_sigma", k.session_sigma);
    cr.read("noise_sigma", k.noise_sigma);
    cr.read("class_mean_norm", k.class_mean_norm);
    cr.read("frames_per_session", k.frames_per_session);
    cr.finish();
  }
  if (const auto* tj = r.child("topology")) {
    detail::JsonReader tr(*tj, "topology");
    tr.read("num_layers", c.topology.num_layers);
    tr.read("hidden_units", c.topology.hidden_units);
    tr.finish();
  }
  if (const auto* gj = r.child("generic_training")) detail::read_train(*gj, "generic_training", c.generic);
  if (const auto* pj = r.child("personalization")) detail::read_train(*pj, "personalization", c.personalization);
  if (const auto* aj = r.child("attack")) {
    detail::JsonReader ar(*aj, "attack");
    std::string source(source_name(c.attack.source));
    ar.read("source", source);
    c.attack.source = parse_source(source);
    ar.read("with_bias", c.attack.with_bias);
    ar.read("gender_both_sessions", c.attack.gender_both_sessions);
    std::vector<std::size_t> layers;
    ar.read("layers", layers);
    for (std::size_t l : layers) {
      require(l >= 1, "config: attack.layers are 1-based");
      c.layers.push_back(l - 1);
    }
    ar.finish();
  }
  if (const auto* ej = r.child("extractor")) {
    detail::JsonReader er(*ej, "extractor");
    er.read("per_block_units", c.extractor.per_block_units);
    er.read("fc_units", c.extractor.fc_units);
    er.read("num_classes", c.extractor.num_classes);
    er.read("embed_post_activation", c.extractor.embed_post_activation);
    er.read("learning_rate", c.extractor_training.learning_rate);
    er.read("batch_size", c.extractor_training.batch_size);
    er.read("epochs", c.extractor_training.epochs);
    er.read("holdout_fraction", c.extractor_training.holdout_fraction);
    er.finish();
  }
  if (j.contains("directions")) {
    std::vector<std::string> names;
    r.read("directions", names);
    c.directions.clear();
    for (const auto& n : names) c.directions.push_back(Direction::parse(n));
  } else {
    r.child("directions");
  }
  if (const auto* sj = r.child("stages")) {
    detail::JsonReader sr(*sj, "stages");
    sr.read("gender", c.run_gender);
    sr.read("extractor", c.run_extractor);
    sr.read("raw_cosine", c.run_raw_cosine);
    sr.finish();
  }
  r.finish();
  c.extractor.source = c.attack.source;
  c.extractor.with_bias = c.attack.with_bias;
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  const CorpusConfig& k = c.corpus;
  std::vector<std::size_t> layers;
  for (std::size_t l : c.layers) layers.push_back(l + 1);
  std::vector<std::string> dirs;
  for (const auto& d : c.directions) dirs.push_back(d.name());
  return {
      {"experiment", c.experiment},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"threads", c.threads},
      {"weight_precision", static_cast<int>(c.weight_precision)},
      {"corpus",
       {{"feature_dim", k.feature_dim}, {"num_classes", k.num_classes},
        {"generic_speakers", k.generic_speakers}, {"p1_speakers", k.p1_speakers},
        {"p2_speakers", k.p2_speakers}, {"female_fraction", k.female_fraction},
        {"gender_strength", k.gender_strength}, {"speaker_sigma", k.speaker_sigma},
        {"session_sigma", k.session_sigma}, {"noise_sigma", k.noise_sigma},
        {"class_mean_norm", k.class_mean_norm},
        {"frames_per_session", k.frames_per_session}}},
      {"topology",
       {{"num_layers", c.topology.num_layers}, {"hidden_units", c.topology.hidden_units}}},
      {"generic_training", detail::write_train(c.generic)},
      {"personalization", detail::write_train(c.personalization)},
      {"attack",
       {{"source", source_name(c.attack.source)}, {"with_bias", c.attack.with_bias},
        {"gender_both_sessions", c.attack.gender_both_sessions}, {"layers", layers}}},
      {"extractor",
       {{"per_block_units", c.extractor.per_block_units},
        {"fc_units", c.extractor.fc_units},
        {"num_classes", c.extractor.num_classes},
        {"embed_post_activation", c.extractor.embed_post_activation},
        {"learning_rate", c.extractor_training.learning_rate},
        {"batch_size", c.extractor_training.batch_size},
        {"epochs", c.extractor_training.epochs},
        {"holdout_fraction", c.extractor_training.holdout_fraction}}},
      {"directions", dirs},
      {"stages",
       {{"gender", c.run_gender}, {"extractor", c.run_extractor},
        {"raw_cosine", c.run_raw_cosine}}},
  };
}

inline ExperimentConfig load_config(const fs::path& path) {
  try {
    return config_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("config: '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Report rows.
// ---------------------------------------------------------------------------

inline constexpr const char* kMetricPurity = "purity";
inline constexpr const char* kMetricEerExtractor = "eer_extractor";
inline constexpr const char* kMetricEerRaw = "eer_raw_cosine";

struct ReportRow {
  std::string experiment;
  std::size_t layer = 0;  // 1-based
  std::string metric;
  std::string direction;
  std::uint64_t seed = 0;
  double value = 0;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

inline constexpr const char* kReportHeader = "experiment,layer,metric,direction,seed,value";

inline std::string format_report_csv(const std::vector<ReportRow>& rows) {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : rows) {
    out += r.experiment + "," + std::to_string(r.layer) + "," + r.metric + "," +
           r.direction + "," + std::to_string(r.seed) + ",";
    append_real(out, r.value);
    out += "\n";
  }
  return out;
}

inline std::vector<ReportRow> parse_report_csv(std::string_view text) {
  std::vector<ReportRow> rows;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    if (header) {
      if (line != kReportHeader) throw FormatError("report: unexpected header");
      header = false;
      continue;
    }
    std::vector<std::string_view> f;
    std::size_t s = 0;
    for (;;) {
      const std::size_t c = line.find(',', s);
      f.push_back(line.substr(s, c == std::string_view::npos ? std::string_view::npos : c - s));
      if (c == std::string_view::npos) break;
      s = c + 1;
    }
    if (f.size() != 6) throw FormatError("report: expected 6 columns");
    rows.push_back({std::string(f[0]), parse_int<std::size_t>(f[1]), std::string(f[2]),
                    std::string(f[3]), parse_int<std::uint64_t>(f[4]), parse_real(f[5])});
  }
  return rows;
}

inline nlohmann::json report_json(const ExperimentConfig& cfg,
                                  const std::vector<ReportRow>& rows) {
  nlohmann::json j;
  j["format"] = "weightleak-report";
  j["version"] = 1;
  j["config"] = config_to_json(cfg);
  // Execution details do not affect results; keep reports location-free.
  j["config"].erase("output_dir");
  j["config"].erase("threads");
  j["columns"] = {"experiment", "layer", "metric", "direction", "seed", "value"};
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows)
    arr.push_back({{"experiment", r.experiment}, {"layer", r.layer}, {"metric", r.metric},
                   {"direction", r.direction}, {"seed", r.seed}, {"value", format_real(r.value)}});
  j["rows"] = arr;
  return j;
}

// A stage failure, tagged with the stage name and the artifact it was
// producing or reading.
class StageError : public Error {
 public:
  StageError(std::string stage, fs::path artifact, const std::string& what)
      : Error("stage '" + stage + "' failed [" + artifact.string() + "]: " + what),
        stage_(std::move(stage)),
        artifact_(std::move(artifact)) {}
  const std::string& stage() const { return stage_; }
  const fs::path& artifact() const { return artifact_; }

 private:
  std::string stage_;
  fs::path artifact_;
};

template <typename Fn>
decltype(auto) in_stage(const char* stage, const fs::path& artifact, Fn&& fn) {
  try {
    return std::forward<Fn>(fn)();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, artifact, e.what());
  }
}

// ---------------------------------------------------------------------------
// Pipeline: synth -> pretrain -> personalize -> gender clustering ->
// extractor training -> embedding -> trials -> scoring -> report.
//
// Each stage result is computed on first use. With an output directory,
// every stage first looks for its artifact and only recomputes (and writes)
// when the artifact is missing, so deleting downstream files and re-running
// resumes from the last persisted stage.
// ---------------------------------------------------------------------------

class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.extractor.source = cfg_.attack.source;
    cfg_.extractor.with_bias = cfg_.attack.with_bias;
    cfg_.validate();
    if (persistent()) {
      in_stage("setup", config_path(), [&] {
        fs::create_directories(dir());
        if (fs::exists(config_path())) {
          auto stored = nlohmann::json::parse(read_file(config_path()));
          auto current = config_to_json(cfg_);
          for (auto* j : {&stored, &current}) {
            j->erase("threads");
            j->erase("output_dir");
          }
          if (stored != current)
            throw Error("output directory holds artifacts of a different configuration");
        }
        const std::string text = config_to_json(cfg_).dump(2) + "\n";
        write_atomically(config_path(), [&](std::ostream& o) { o << text; });
      });
    }
  }

  const ExperimentConfig& config() const { return cfg_; }
  bool persistent() const { return !cfg_.output_dir.empty(); }
  fs::path dir() const { return fs::path(cfg_.output_dir); }

  // Artifact paths.
  fs::path config_path() const { return dir() / "config.json"; }
  fs::path corpus_path() const { return dir() / "corpus.txt"; }
  fs::path generic_path() const { return dir() / "generic.wlkw"; }
  fs::path model_path(Split s, const std::string& spk, SessionIndex sess) const {
    return dir() / "models" / std::string(split_name(s)) /
           (spk + "-" + session_name(sess) + ".wlkw");
  }
  fs::path gender_path() const { return dir() / "gender_purity.csv"; }
  fs::path extractor_path(const Direction& d, std::size_t layer) const {
    return dir() / "extractors" / d.name() / (layer_tag(layer) + ".wlkw");
  }
  fs::path embeddings_path(const Direction& d, std::size_t layer) const {
    return dir() / "embeddings" / d.name() / (layer_tag(layer) + ".txt");
  }
  fs::path trials_path(const Direction& d) const {
    return dir() / "trials" / (d.name() + ".trials");
  }
  fs::path key_path(const Direction& d) const {
    return dir() / "trials" / (d.name() + ".key");
  }
  fs::path scores_path(const Direction& d, std::size_t layer, const char* kind) const {
    return dir() / "scores" / d.name() / (layer_tag(layer) + "." + kind + ".scores");
  }
  fs::path eer_path() const { return dir() / "eer.csv"; }
  fs::path report_path() const { return dir() / "report.csv"; }
  fs::path report_json_path() const { return dir() / "report.json"; }

  const Corpus& corpus() {
    if (!corpus_) {
      corpus_ = in_stage("synth", corpus_path(), [&] {
        if (persistent() && fs::exists(corpus_path())) return load_corpus(corpus_path());
        Corpus c = generate_corpus(cfg_.resolved_corpus());
        if (persistent()) save_corpus(corpus_path(), c);
        return c;
      });
    }
    return *corpus_;
  }

  const std::shared_ptr<const WeightSnapshot>& generic() {
    if (!generic_) {
      const Corpus& c = corpus();
      generic_ = in_stage("pretrain", generic_path(), [&] {
        if (persistent() && fs::exists(generic_path()))
          return std::make_shared<const WeightSnapshot>(load_snapshot(generic_path()));
        GenericModel g =
            train_generic(c.generic_pool(), cfg_.resolved_topology(), cfg_.resolved_generic());
        if (persistent()) save_snapshot(generic_path(), g.snapshot, cfg_.weight_precision);
        return std::make_shared<const WeightSnapshot>(std::move(g.snapshot));
      });
    }
    return generic_;
  }

  const std::vector<PersonalizedModel>& models(Split split) {
    auto it = models_.find(split);
    if (it != models_.end()) return it->second;
    const auto base = generic();
    const auto speakers = corpus().split(split);
    const TrainConfig tc = cfg_.resolved_personalization();
    std::vector<PersonalizedModel> out(speakers.size() * 2);
    parallel_for(
        out.size(),
        [&](std::size_t i) {
          const SpeakerProfile& p = *speakers[i / 2];
          const auto s = static_cast<SessionIndex>(i % 2);
          const fs::path path = model_path(split, p.speaker_id, s);
          in_stage("personalize", path, [&] {
            if (persistent() && fs::exists(path)) {
              PersonalizedModel m;
              m.base = base;
              m.adapted = load_snapshot(path);
              require(m.adapted.provenance == Provenance{p.speaker_id, s},
                      "model file '" + path.string() + "' has unexpected provenance");
              m.speaker_id = p.speaker_id;
              m.session = s;
              m.config = tc;
              out[i] = std::move(m);
              return;
            }
            out[i] = personalize(base, p.sessions[s], p.speaker_id, s, tc);
            if (persistent()) save_snapshot(path, out[i].adapted, cfg_.weight_precision);
          });
        },
        cfg_.worker_count());
    return models_.emplace(split, std::move(out)).first->second;
  }

  std::map<std::string, Gender> genders() {
    std::map<std::string, Gender> g;
    for (const auto& p : corpus().speakers) g[p.speaker_id] = p.gender;
    return g;
  }

  // Purity rows for every (direction, layer), clustering the eval split.
  std::vector<ReportRow> gender_rows() {
    if (persistent() && fs::exists(gender_path()))
      return in_stage("attack-gender", gender_path(),
                      [&] { return parse_report_csv(read_file(gender_path())); });
    std::vector<ReportRow> rows;
    const auto layers = cfg_.resolved_layers();
    const auto g = genders();
    for (const auto& d : cfg_.directions) {
      const auto& ms = models(d.eval);
      in_stage("attack-gender", gender_path(), [&] {
        std::vector<double> purity(layers.size());
        parallel_for(
            layers.size(),
            [&](std::size_t i) {
              purity[i] = gender_cluster_per_layer(ms, g, layers[i], cfg_.attack).purity;
            },
            cfg_.worker_count());
        for (std::size_t i = 0; i < layers.size(); ++i)
          rows.push_back({cfg_.experiment, layers[i] + 1, kMetricPurity, d.name(), cfg_.seed,
                          purity[i]});
      });
    }
    if (persistent()) {
      const std::string text = format_report_csv(rows);
      in_stage("attack-gender", gender_path(), [&] {
        write_atomically(gender_path(), [&](std::ostream& o) { o << text; });
      });
    }
    return rows;
  }

  const MultiStreamExtractor& extractor(const Direction& d, std::size_t layer) {
    auto it = extractors_.find({d.name(), layer});
    if (it != extractors_.end()) return it->second;
    auto [ex, trace] = load_or_train_extractor(d, layer);
    if (trace) traces_.emplace(std::make_pair(d.name(), layer), std::move(*trace));
    return extractors_.emplace(std::make_pair(d.name(), layer), std::move(ex)).first->second;
  }

  // Trains (or loads) the extractors of several layers, in parallel.
  void train_extractors(const Direction& d, const std::vector<std::size_t>& layers) {
    corpus();
    models(d.train);
    std::vector<std::size_t> todo;
    for (std::size_t l : layers)
      if (!extractors_.count({d.name(), l})) todo.push_back(l);
    std::vector<std::pair<MultiStreamExtractor, std::optional<ExtractorTraining>>> out(
        todo.size());
    parallel_for(
        todo.size(), [&](std::size_t i) { out[i] = load_or_train_extractor(d, todo[i]); },
        cfg_.worker_count());
    for (std::size_t i = 0; i < todo.size(); ++i) {
      if (out[i].second) traces_.emplace(std::make_pair(d.name(), todo[i]), std::move(*out[i].second));
      extractors_.emplace(std::make_pair(d.name(), todo[i]), std::move(out[i].first));
    }
  }

  // Training trace, available when the extractor was trained in this process.
  const ExtractorTraining* training_trace(const Direction& d, std::size_t layer) const {
    auto it = traces_.find({d.name(), layer});
    return it == traces_.end() ? nullptr : &it->second;
  }

  std::vector<SpeakerEmbedding> embeddings(const Direction& d, std::size_t layer) {
    const fs::path path = embeddings_path(d, layer);
    if (persistent() && fs::exists(path))
      return in_stage("embed", path, [&] { return parse_embeddings(read_file(path)); });
    const MultiStreamExtractor& ex = extractor(d, layer);
    const auto& eval = models(d.eval);
    return in_stage("embed", path, [&] {
      std::vector<SpeakerEmbedding> out;
      for (const auto& v : layer_vectors(eval, layer, cfg_.attack.source, cfg_.attack.with_bias))
        out.push_back(embed(ex, v));
      if (persistent()) {
        const std::string text = format_embeddings(out);
        write_atomically(path, [&](std::ostream& o) { o << text; });
      }
      return out;
    });
  }

  // Eval-split speaker ids in trial order.
  std::vector<std::string> eval_speakers(const Direction& d) {
    std::vector<std::string> ids;
    for (const auto* p : corpus().split(d.eval)) ids.push_back(p->speaker_id);
    return ids;
  }

  std::vector<Trial> trials(const Direction& d) {
    const auto ids = eval_speakers(d);
    std::vector<Trial> t = generate_trials(ids.size());
    if (persistent() && !(fs::exists(trials_path(d)) && fs::exists(key_path(d)))) {
      in_stage("trials", trials_path(d), [&] {
        const std::string tr = format_trials(ids, t), key = format_key(ids, t);
        write_atomically(trials_path(d), [&](std::ostream& o) { o << tr; });
        write_atomically(key_path(d), [&](std::ostream& o) { o << key; });
      });
    }
    return t;
  }

  TrialScoreSet extractor_scores(const Direction& d, std::size_t layer) {
    return scored(d, layer, "extractor", [&] {
      const auto pairs = order_pairs(d, pair_embeddings(embeddings(d, layer)));
      return score_trials(pairs, trials(d));
    });
  }

  TrialScoreSet raw_scores(const Direction& d, std::size_t layer) {
    return scored(d, layer, "raw", [&] {
      const auto pairs = order_pairs(
          d, pair_sessions(layer_vectors(models(d.eval), layer, WeightSource::kRaw,
                                         cfg_.attack.with_bias)));
      return score_trials(pairs, trials(d));
    });
  }

  std::vector<ReportRow> eer_rows() {
    if (persistent() && fs::exists(eer_path()))
      return in_stage("score", eer_path(), [&] { return parse_report_csv(read_file(eer_path())); });
    std::vector<ReportRow> rows;
    const auto layers = cfg_.resolved_layers();
    for (const auto& d : cfg_.directions) {
      if (cfg_.run_extractor) train_extractors(d, layers);
      for (std::size_t l : layers) {
        if (cfg_.run_extractor)
          rows.push_back({cfg_.experiment, l + 1, kMetricEerExtractor, d.name(), cfg_.seed,
                          compute_eer(extractor_scores(d, l)).eer_percent});
        if (cfg_.run_raw_cosine)
          rows.push_back({cfg_.experiment, l + 1, kMetricEerRaw, d.name(), cfg_.seed,
                          compute_eer(raw_scores(d, l)).eer_percent});
      }
    }
    if (persistent()) {
      const std::string text = format_report_csv(rows);
      in_stage("score", eer_path(), [&] {
        write_atomically(eer_path(), [&](std::ostream& o) { o << text; });
      });
    }
    return rows;
  }

  // Every enabled metric, ordered by direction, layer, then metric.
  std::vector<ReportRow> report() {
    std::vector<ReportRow> all;
    if (cfg_.run_gender) {
      const auto g = gender_rows();
      all.insert(all.end(), g.begin(), g.end());
    }
    if (cfg_.run_extractor || cfg_.run_raw_cosine) {
      const auto e = eer_rows();
      all.insert(all.end(), e.begin(), e.end());
    }
    auto metric_rank = [](const std::string& m) {
      return m == kMetricPurity ? 0 : m == kMetricEerExtractor ? 1 : 2;
    };
    std::map<std::string, std::size_t> dir_rank;
    for (const auto& d : cfg_.directions) dir_rank.emplace(d.name(), dir_rank.size());
    std::stable_sort(all.begin(), all.end(), [&](const ReportRow& a, const ReportRow& b) {
      const auto ka = std::make_tuple(dir_rank[a.direction], a.layer, metric_rank(a.metric));
      const auto kb = std::make_tuple(dir_rank[b.direction], b.layer, metric_rank(b.metric));
      return ka < kb;
    });
    if (persistent()) {
      const std::string csv = format_report_csv(all);
      const std::string json = report_json(cfg_, all).dump(2) + "\n";
      in_stage("report", report_path(), [&] {
        write_atomically(report_path(), [&](std::ostream& o) { o << csv; });
        write_atomically(report_json_path(), [&](std::ostream& o) { o << json; });
      });
    }
    return all;
  }

 private:
  static std::string layer_tag(std::size_t layer) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "layer%02zu", layer + 1);
    return buf;
  }

  // Reads only state that train_extractors() has already materialized.
  std::pair<MultiStreamExtractor, std::optional<ExtractorTraining>> load_or_train_extractor(
      const Direction& d, std::size_t layer) {
    const fs::path path = extractor_path(d, layer);
    const auto& train = models(d.train);
    const Corpus& c = corpus();
    return in_stage("train-extractor", path, [&]()
        -> std::pair<MultiStreamExtractor, std::optional<ExtractorTraining>> {
      if (persistent() && fs::exists(path) && fs::exists(extractor_stats_path(path)))
        return {load_extractor(path), std::nullopt};
      const auto vectors = layer_vectors(train, layer, cfg_.attack.source, cfg_.attack.with_bias);
      ExtractorSpec spec = cfg_.extractor;
      const ExtractorSpec shape = extractor_spec_for(vectors.front());
      spec.target_layer = layer;
      spec.num_blocks = shape.num_blocks;
      spec.block_size = shape.block_size;
      const auto labels = model_class_labels(train, c, spec.num_classes);
      ExtractorTraining t =
          train_extractor(vectors, labels, spec, cfg_.resolved_extractor_training(d, layer));
      if (persistent()) save_extractor(path, t.extractor, cfg_.weight_precision);
      MultiStreamExtractor ex = t.extractor;
      return {std::move(ex), std::move(t)};
    });
  }

  std::vector<SessionPair> order_pairs(const Direction& d, std::vector<SessionPair> pairs) {
    std::map<std::string, std::size_t> at;
    for (std::size_t i = 0; i < pairs.size(); ++i) at[pairs[i].speaker_id] = i;
    std::vector<SessionPair> out;
    for (const auto& id : eval_speakers(d)) {
      auto it = at.find(id);
      require(it != at.end(), "scoring: no vectors for speaker '" + id + "'");
      out.push_back(std::move(pairs[it->second]));
    }
    return out;
  }

  template <typename Fn>
  TrialScoreSet scored(const Direction& d, std::size_t layer, const char* kind, Fn compute) {
    const fs::path path = scores_path(d, layer, kind);
    const auto ids = eval_speakers(d);
    if (persistent() && fs::exists(path) && fs::exists(key_path(d))) {
      return in_stage("score", path, [&] {
        TrialScoreSet set = read_scores_with_key(read_file(path), read_file(key_path(d)));
        set.trials = generate_trials(ids.size());
        return set;
      });
    }
    TrialScoreSet set = compute();
    if (persistent()) {
      in_stage("score", path, [&] {
        const std::string text = format_scores(ids, set);
        write_atomically(path, [&](std::ostream& o) { o << text; });
      });
    }
    return set;
  }

  ExperimentConfig cfg_;
  std::optional<Corpus> corpus_;
  std::shared_ptr<const WeightSnapshot> generic_;
  std::map<Split, std::vector<PersonalizedModel>> models_;
  std::map<std::pair<std::string, std::size_t>, MultiStreamExtractor> extractors_;
  std::map<std::pair<std::string, std::size_t>, ExtractorTraining> traces_;
};

inline std::vector<ReportRow> run_pipeline(const ExperimentConfig& cfg) {
  Pipeline p(cfg);
  return p.report();
}

}  // namespace weightleak
