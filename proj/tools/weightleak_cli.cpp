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


// Command-line driver. Every stage subcommand loads the experiment config,
// reuses whatever artifacts already exist in the output directory and
// materializes the ones it owns.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "weightleak/pipeline.hpp"

namespace {

using weightleak::Direction;
using weightleak::ExperimentConfig;
using weightleak::Pipeline;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  std::optional<std::size_t> threads;
};

ExperimentConfig resolve(const Options& o, bool needs_output_dir) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : weightleak::load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
  if (o.threads) cfg.threads = *o.threads;
  if (needs_output_dir && cfg.output_dir.empty())
    throw weightleak::Error("this subcommand needs an output directory (config output_dir or --output-dir)");
  return cfg;
}

void log(const std::string& msg) { std::cerr << "weightleak: " << msg << "\n"; }

void print_rows(const std::vector<weightleak::ReportRow>& rows) {
  std::cout << weightleak::format_report_csv(rows);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weight-change leakage experiments on personalized acoustic models"};
  app.require_subcommand(1);
  Options opt;

  auto add = [&](const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "Master seed; overrides the config");
    sub->add_option("--output-dir", opt.output_dir, "Artifact directory; overrides the config");
    sub->add_option("--threads", opt.threads, "Worker threads (0 = hardware concurrency)");
    return sub;
  };

  add("synth", "Generate the synthetic corpus");
  add("pretrain", "Train the generic model");
  add("personalize", "Personalize one model per speaker session");
  add("attack-gender", "Per-layer Ward clustering and gender purity");
  add("train-extractor", "Train one embedding extractor per layer and direction");
  add("embed", "Extract embeddings of the evaluation speakers");
  add("trials", "Write trial lists and keys");
  add("score", "Score trials and compute EERs");
  add("report", "Write report.csv and report.json");
  add("run-all", "Run every stage; works in memory when no output directory is set");
  add("print-config", "Print the resolved configuration as JSON");

  CLI11_PARSE(app, argc, argv);
  const std::string cmd = app.get_subcommands().front()->get_name();

  try {
    if (cmd == "print-config") {
      std::cout << weightleak::config_to_json(resolve(opt, false)).dump(2) << "\n";
      return 0;
    }
    Pipeline p(resolve(opt, cmd != "run-all"));
    const ExperimentConfig& cfg = p.config();
    const auto layers = cfg.resolved_layers();

    if (cmd == "synth") {
      const auto& c = p.corpus();
      for (const auto& w : c.warnings) log("warning: " + w);
      log(std::to_string(c.speakers.size()) + " speakers -> " + p.corpus_path().string());
    } else if (cmd == "pretrain") {
      p.generic();
      log("generic model -> " + p.generic_path().string());
    } else if (cmd == "personalize") {
      std::size_t n = 0;
      for (auto split : {weightleak::Split::kP1, weightleak::Split::kP2}) n += p.models(split).size();
      log(std::to_string(n) + " personalized models -> " + (p.dir() / "models").string());
    } else if (cmd == "attack-gender") {
      print_rows(p.gender_rows());
    } else if (cmd == "train-extractor") {
      for (const auto& d : cfg.directions) p.train_extractors(d, layers);
      log("extractors -> " + (p.dir() / "extractors").string());
    } else if (cmd == "embed") {
      for (const auto& d : cfg.directions)
        for (std::size_t l : layers) p.embeddings(d, l);
      log("embeddings -> " + (p.dir() / "embeddings").string());
    } else if (cmd == "trials") {
      for (const auto& d : cfg.directions) {
        const auto t = p.trials(d);
        log(d.name() + ": " + std::to_string(t.size()) + " trials -> " + p.trials_path(d).string());
      }
    } else if (cmd == "score") {
      print_rows(p.eer_rows());
    } else if (cmd == "report" || cmd == "run-all") {
      const auto rows = p.report();
      print_rows(rows);
      if (p.persistent()) log("report -> " + p.report_path().string());
    }
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return 1;
  }
  return 0;
}
