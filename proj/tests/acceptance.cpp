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


// Acceptance run: one PASS/FAIL line per criterion, exit status = number of
// failed criteria. Unit-level checks run first; the end-to-end trends train
// the full 13x32 surrogate and take several minutes on one core.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oracles.hpp"
#include "weightleak/pipeline.hpp"

namespace weightleak {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Outcome {
  bool ok = false;
  std::string detail;
};

class Scoreboard {
 public:
  void record(const std::string& name, const Outcome& o, double secs, double limit) {
    const bool in_time = secs <= limit;
    const bool pass = o.ok && in_time;
    std::printf("%s %s: %s [%.1f s, limit %.0f s%s]\n", pass ? "PASS" : "FAIL", name.c_str(),
                o.detail.c_str(), secs, limit, in_time ? "" : ", over budget");
    std::fflush(stdout);
    ++total_;
    if (!pass) ++failed_;
  }
  int failed() const { return failed_; }
  int total() const { return total_; }

 private:
  int total_ = 0;
  int failed_ = 0;
};

template <typename Fn>
void run(Scoreboard& board, const std::string& name, double limit, Fn&& fn) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("error: ") + e.what()};
  }
  board.record(name, o, seconds_since(t0), limit);
}

// ---------------------------------------------------------------------------
// Unit-level criteria.
// ---------------------------------------------------------------------------

Outcome gradient_check() {
  double worst = 0;
  int nets = 0;
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    Network<double> net({{6, 7, Activation::kRelu}, {7, 5, Activation::kRelu},
                         {5, 4, Activation::kSoftmax}});
    initialize(net, seed);
    Rng rng(seed + 100);
    std::normal_distribution<double> nd;
    for (std::size_t l = 0; l < net.num_layers(); ++l)
      for (double& b : net.biases(l)) b = 0.1 * nd(rng);
    Matrix<double> x(5, 6);
    for (double& v : x.values()) v = nd(rng);
    std::vector<std::size_t> y(5);
    for (auto& v : y) v = std::uniform_int_distribution<std::size_t>(0, 3)(rng);
    worst = std::max(worst, oracle::max_gradient_error(net, x, y, 1e-5));
    ++nets;
  }
  return {worst < 1e-4, "max relative error " + fmt("%.2e", worst) + " over " +
                            std::to_string(nets) + " seeded 3-layer nets (need < 1e-4)"};
}

Outcome ward_oracle() {
  Rng rng(2024);
  std::uniform_int_distribution<std::size_t> size(2, 10), dim(1, 6);
  std::normal_distribution<double> nd;
  int mismatched = 0;
  double worst = 0;
  for (int inst = 0; inst < 200; ++inst) {
    oracle::Points p(size(rng), std::vector<double>(dim(rng)));
    for (auto& row : p)
      for (double& v : row) v = nd(rng);
    const Dendrogram fast = ward_linkage(p), slow = oracle::naive_ward(p);
    if (!oracle::same_dendrogram(fast, slow, 1e-9)) ++mismatched;
    for (std::size_t m = 0; m < fast.merges.size() && m < slow.merges.size(); ++m)
      worst = std::max(worst, std::abs(fast.merges[m].cost - slow.merges[m].cost));
  }
  return {mismatched == 0, std::to_string(200 - mismatched) +
                               "/200 dendrograms identical to the naive oracle, max cost diff " +
                               fmt("%.1e", worst)};
}

Outcome purity_suite() {
  const std::vector<std::size_t> two{0, 0, 1, 1};
  const std::vector<Gender> g2{Gender::kMale, Gender::kMale, Gender::kFemale, Gender::kFemale};
  const double perfect = purity<Gender>(two, g2);
  const std::vector<std::size_t> c{0, 0, 0, 1, 1};
  const std::vector<Gender> t{Gender::kMale, Gender::kMale, Gender::kFemale, Gender::kFemale,
                              Gender::kFemale};
  const double hand = purity<Gender>(c, t);

  Rng rng(77);
  std::uniform_int_distribution<std::size_t> cl(0, 4), tr(0, 2);
  std::vector<std::size_t> clusters(40), truth(40);
  for (auto& v : clusters) v = cl(rng);
  for (auto& v : truth) v = tr(rng);
  const double ref = purity<std::size_t>(clusters, truth);
  std::vector<std::size_t> perm(5);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  int invariant = 0;
  for (int i = 0; i < 100; ++i) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> relabeled(clusters.size());
    for (std::size_t k = 0; k < clusters.size(); ++k) relabeled[k] = perm[clusters[k]];
    invariant += purity<std::size_t>(relabeled, truth) == ref;
  }
  return {perfect == 1.0 && hand == 0.8 && invariant == 100,
          "perfect " + fmt("%.3f", perfect) + ", {m,m,f|f,f} " + fmt("%.3f", hand) +
              ", relabelings invariant " + std::to_string(invariant) + "/100"};
}

Outcome eer_oracle() {
  Rng rng(31);
  std::uniform_int_distribution<int> nt(1, 100), nn(1, 900), round(0, 2);
  std::normal_distribution<double> nd, shift(0.0, 1.5);
  double worst = 0;
  int instances = 0;
  for (int inst = 0; inst < 300; ++inst) {
    const double mu = shift(rng);
    const int r = round(rng);
    auto draw = [&](double m) {
      double v = m + nd(rng);
      if (r > 0) v = std::round(v * (r == 1 ? 4 : 40)) / (r == 1 ? 4 : 40);
      return v;
    };
    std::vector<double> tar(static_cast<std::size_t>(nt(rng)));
    std::vector<double> non(static_cast<std::size_t>(nn(rng)));
    for (double& v : tar) v = draw(mu);
    for (double& v : non) v = draw(0.0);
    worst = std::max(worst, std::abs(compute_eer(tar, non).eer_percent -
                                     oracle::brute_force_eer(tar, non)));
    ++instances;
  }
  std::vector<double> tar(5000), non(20000);
  for (double& v : tar) v = nd(rng);
  for (double& v : non) v = nd(rng);
  const double null_eer = compute_eer(tar, non).eer_percent;
  const double separated = compute_eer({0.9, 0.8, 0.95}, {0.1, 0.2, -0.5, 0.3}).eer_percent;
  return {worst <= 1e-9 && std::abs(null_eer - 50) <= 2 && separated == 0,
          std::to_string(instances) + " instances <= 1000 scores, max diff " + fmt("%.1e", worst) +
              "; null EER " + fmt("%.2f", null_eer) + "% at 25000 trials; separated " +
              fmt("%.1f", separated) + "%"};
}

Outcome trial_counts() {
  bool ok = true;
  std::string detail;
  for (std::size_t n : {1u, 2u, 40u, 463u, 581u}) {
    const auto t = generate_trials(n);
    const auto targets = static_cast<std::size_t>(
        std::count_if(t.begin(), t.end(), [](const Trial& x) { return x.is_target; }));
    ok = ok && targets == n && t.size() - targets == n * (n - 1);
    if (n >= 463) detail += "n=" + std::to_string(n) + ": " + std::to_string(t.size() - targets) + " non-target; ";
  }
  const auto big = generate_trials(463).size() - 463, bigger = generate_trials(581).size() - 581;
  ok = ok && big == 213906 && bigger == 336980;
  return {ok, detail + "targets = n for n in {1,2,40,463,581}"};
}

// Points on a dyadic grid, shifted by a dyadic vector: every operation is
// exact, so the dendrograms must agree bit for bit.
Outcome shift_invariance_exact() {
  Rng rng(8);
  std::uniform_int_distribution<int> grid(-64, 64);
  int identical = 0;
  for (int inst = 0; inst < 50; ++inst) {
    oracle::Points p(12, std::vector<double>(9)), q = p;
    std::vector<double> shift(9);
    for (double& s : shift) s = grid(rng) / 1024.0;
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t d = 0; d < 9; ++d) {
        p[i][d] = grid(rng) / 8.0;
        q[i][d] = p[i][d] + shift[d];
      }
    identical += ward_linkage(p) == ward_linkage(q);
  }
  return {identical == 50, std::to_string(identical) + "/50 exact-arithmetic instances bitwise identical"};
}

Outcome block_diagonal() {
  double worst = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    ExtractorSpec s;
    s.num_blocks = 32;
    s.block_size = 33;
    MultiStreamExtractor ex(s);
    ex.initialize(seed);
    Rng rng(seed);
    std::normal_distribution<double> nd;
    for (std::size_t b = 0; b < s.num_blocks; ++b)
      for (double& v : ex.block_biases(b)) v = 0.1 * nd(rng);
    Matrix<double> x(6, s.input_dim());
    for (double& v : x.values()) v = nd(rng);
    ExtractorActivations acts;
    ex.forward(x, acts);
    BatchActivations<double> ref;
    forward_batch(ex.to_dense(), x, ref);
    for (std::size_t k = 0; k < acts.block_pre.size(); ++k)
      worst = std::max(worst, std::abs(acts.block_pre.data()[k] - ref.pre[0].data()[k]));
    for (std::size_t l = 0; l < acts.head.pre.size(); ++l)
      for (std::size_t k = 0; k < acts.head.pre[l].size(); ++k)
        worst = std::max(worst, std::abs(acts.head.pre[l].data()[k] - ref.pre[l + 1].data()[k]));
  }
  return {worst <= 1e-12, "32 blocks x 33 inputs x 32 units, max activation diff " +
                              fmt("%.1e", worst) + " over 3 seeds (need <= 1e-12)"};
}

// ---------------------------------------------------------------------------
// End-to-end trends.
// ---------------------------------------------------------------------------

constexpr std::size_t kGenderSeeds = 5;
constexpr std::size_t kSvSeeds = 3;
const std::vector<std::size_t> kEarlyLayers{0, 1, 2, 3, 4};   // 1..5
const std::vector<std::size_t> kMiddleLayers{4, 5, 6, 7, 8};  // 5..9

ExperimentConfig trend_config(std::uint64_t seed, std::size_t threads) {
  ExperimentConfig c;
  c.experiment = "acceptance";
  c.seed = seed;
  c.threads = threads;
  return c;
}

struct RawDeltaCheck {
  int layers = 0;
  int same_structure = 0;
  double worst_rel = 0;
};

// Ward on raw adapted weights vs. on deltas, for every layer of real models.
RawDeltaCheck raw_vs_delta(const std::vector<PersonalizedModel>& models, std::size_t num_layers) {
  RawDeltaCheck r;
  for (std::size_t l = 0; l < num_layers; ++l) {
    oracle::Points raw, delta;
    for (const auto& m : models) {
      if (m.session != 0) continue;
      raw.push_back(flatten_layer(m, l, WeightSource::kRaw, true).values);
      delta.push_back(flatten_layer(m, l, WeightSource::kDelta, true).values);
    }
    const Dendrogram a = ward_linkage(raw), b = ward_linkage(delta);
    ++r.layers;
    double rel = 0;
    for (std::size_t m = 0; m < a.merges.size(); ++m)
      rel = std::max(rel, std::abs(a.merges[m].cost - b.merges[m].cost) /
                              std::max(b.merges[m].cost, 1e-300));
    r.worst_rel = std::max(r.worst_rel, rel);
    r.same_structure += oracle::same_dendrogram(a, b, 0.0);
  }
  return r;
}

struct TrendData {
  // [seed][layer] purity on the eval split.
  std::vector<std::map<std::size_t, double>> purity, purity_null;
  double majority = 0, majority_null = 0;
  double gender_secs = 0;
  // (layer) -> per seed/direction EERs.
  std::map<std::size_t, std::vector<double>> eer_extractor, eer_raw;
  double sv_secs = 0;
  RawDeltaCheck raw_delta;
  double raw_delta_secs = 0;
};

std::map<std::size_t, double> gender_purity(Pipeline& p, const std::vector<std::size_t>& layers,
                                            double& majority) {
  std::map<std::size_t, double> out;
  const auto& models = p.models(Split::kP2);
  const auto genders = p.genders();
  for (std::size_t l : layers) {
    const GenderClustering g = gender_cluster_per_layer(models, genders, l, p.config().attack);
    out[l] = g.purity;
    majority = g.majority_baseline;
  }
  return out;
}

void run_trends(TrendData& data, std::size_t threads) {
  for (std::uint64_t seed = 1; seed <= kGenderSeeds; ++seed) {
    Pipeline p(trend_config(seed, threads));
    auto t0 = Clock::now();
    data.purity.push_back(gender_purity(p, kEarlyLayers, data.majority));
    const double shared = seconds_since(t0);
    data.gender_secs += shared;
    // Corpus, generic model and eval-split models also serve verification.
    if (seed <= kSvSeeds) data.sv_secs += shared;
    std::fprintf(stderr, "acceptance: gender seed %llu done (%.0f s so far)\n",
                 static_cast<unsigned long long>(seed), data.gender_secs);

    if (seed == 1) {
      t0 = Clock::now();
      data.raw_delta = raw_vs_delta(p.models(Split::kP2), p.config().topology.num_layers);
      data.raw_delta_secs = seconds_since(t0);
    }
    if (seed > kSvSeeds) continue;
    t0 = Clock::now();
    for (const Direction d : {Direction{Split::kP1, Split::kP2}, Direction{Split::kP2, Split::kP1}}) {
      p.train_extractors(d, kMiddleLayers);
      for (std::size_t l : kMiddleLayers) {
        data.eer_extractor[l].push_back(compute_eer(p.extractor_scores(d, l)).eer_percent);
        data.eer_raw[l].push_back(compute_eer(p.raw_scores(d, l)).eer_percent);
      }
    }
    data.sv_secs += seconds_since(t0);
    std::fprintf(stderr, "acceptance: verification seed %llu done (%.0f s so far)\n",
                 static_cast<unsigned long long>(seed), data.sv_secs);
  }
  for (std::uint64_t seed = 1; seed <= kGenderSeeds; ++seed) {
    ExperimentConfig c = trend_config(seed, threads);
    c.corpus.gender_strength = 0;
    Pipeline p(c);
    const auto t0 = Clock::now();
    data.purity_null.push_back(gender_purity(p, kEarlyLayers, data.majority_null));
    data.gender_secs += seconds_since(t0);
  }
}

double mean_at(const std::vector<std::map<std::size_t, double>>& runs, std::size_t layer) {
  double s = 0;
  for (const auto& r : runs) s += r.at(layer);
  return s / static_cast<double>(runs.size());
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

Outcome gender_trend(const TrendData& d) {
  std::size_t best = kEarlyLayers.front();
  std::string per_layer;
  for (std::size_t l : kEarlyLayers) {
    if (mean_at(d.purity, l) > mean_at(d.purity, best)) best = l;
    per_layer += " L" + std::to_string(l + 1) + "=" + fmt("%.3f", mean_at(d.purity, l)) + "/" +
                 fmt("%.3f", mean_at(d.purity_null, l));
  }
  const double top = mean_at(d.purity, best), null = mean_at(d.purity_null, best);
  const bool ok = top >= 0.90 && std::abs(null - d.majority_null) <= 0.05;
  return {ok, "best layer " + std::to_string(best + 1) + ": mean purity " + fmt("%.3f", top) +
                  " (need >= 0.90); at gender_strength=0 " + fmt("%.3f", null) +
                  " vs majority " + fmt("%.3f", d.majority_null) +
                  " (need within 0.05); per layer default/null:" + per_layer};
}

Outcome sv_trend(const TrendData& d) {
  std::size_t best = kMiddleLayers.front();
  std::string per_layer;
  for (std::size_t l : kMiddleLayers) {
    if (mean(d.eer_extractor.at(l)) < mean(d.eer_extractor.at(best))) best = l;
    per_layer += " L" + std::to_string(l + 1) + "=" + fmt("%.1f", mean(d.eer_extractor.at(l))) +
                 "/" + fmt("%.1f", mean(d.eer_raw.at(l)));
  }
  const double ext = mean(d.eer_extractor.at(best)), raw = mean(d.eer_raw.at(best));
  const bool ok = ext <= 35 && raw - ext >= 10 && raw >= 45 && raw <= 55;
  return {ok, "best middle layer " + std::to_string(best + 1) + ": extractor EER " +
                  fmt("%.1f", ext) + "% (need <= 35), raw cosine " + fmt("%.1f", raw) +
                  "% (need in [45,55] and >= extractor + 10); " + std::to_string(kSvSeeds) +
                  " seeds x 2 directions; per layer extractor/raw:" + per_layer};
}

// ---------------------------------------------------------------------------
// Determinism through the CLI.
// ---------------------------------------------------------------------------

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = read_file(e.path());
  return out;
}

Outcome determinism(const std::string& cli, const fs::path& work) {
  fs::create_directories(work);
  const fs::path cfg = work / "tiny.json";
  const std::string text = R"({
  "experiment": "determinism", "seed": 11,
  "corpus": {"generic_speakers": 4, "p1_speakers": 8, "p2_speakers": 6,
             "frames_per_session": 300, "feature_dim": 8, "num_classes": 5},
  "topology": {"num_layers": 4, "hidden_units": 8},
  "generic_training": {"epochs": 2},
  "personalization": {"epochs": 2, "batch_size": 64},
  "extractor": {"per_block_units": 4, "fc_units": [16, 8], "num_classes": 3, "epochs": 4},
  "attack": {"layers": [1, 3]}
})";
  write_atomically(cfg, [&](std::ostream& o) { o << text << "\n"; });
  std::vector<std::map<std::string, std::string>> runs;
  for (int threads : {1, 2}) {
    const fs::path out = work / ("run" + std::to_string(threads));
    fs::remove_all(out);
    const std::string cmd = "\"" + cli + "\" run-all --config \"" + cfg.string() +
                            "\" --output-dir \"" + out.string() + "\" --threads " +
                            std::to_string(threads) + " > \"" + (work / "cli.log").string() +
                            "\" 2>&1";
    if (std::system(cmd.c_str()) != 0)
      return {false, "run-all failed; see " + (work / "cli.log").string()};
    auto files = tree_bytes(out);
    files.erase("config.json");  // records the output directory
    runs.push_back(std::move(files));
  }
  std::size_t weights = 0, differ = 0;
  for (const auto& [name, bytes] : runs[0]) {
    if (name.ends_with(".wlkw")) ++weights;
    auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != bytes) ++differ;
  }
  const bool same_set = runs[0].size() == runs[1].size();
  const bool have_reports = runs[0].count("report.csv") && runs[0].count("report.json");
  return {same_set && differ == 0 && have_reports && weights > 0,
          std::to_string(runs[0].size()) + " artifacts (" + std::to_string(weights) +
              " weight files, report.csv, report.json) compared across two runs, " +
              std::to_string(differ) + " differ"};
}

}  // namespace
}  // namespace weightleak

int main(int argc, char** argv) {
  using namespace weightleak;
  CLI::App app{"weightleak acceptance run"};
  std::string cli;
  std::string workdir = (fs::temp_directory_path() / "weightleak_acceptance").string();
  std::size_t threads = 0;
  bool skip_trends = false;
  app.add_option("--cli", cli, "Path to the weightleak executable")->required();
  app.add_option("--workdir", workdir, "Scratch directory");
  app.add_option("--threads", threads, "Worker threads for the end-to-end runs (0 = all)");
  app.add_flag("--skip-trends", skip_trends, "Only run the fast criteria");
  CLI11_PARSE(app, argc, argv);

  Scoreboard board;
  run(board, "gradient-correctness", 1, gradient_check);
  run(board, "ward-oracle-equivalence", 10, ward_oracle);
  run(board, "purity-suite", 1, purity_suite);
  run(board, "eer-oracle-equivalence", 5, eer_oracle);
  run(board, "trial-count-identity", 1, trial_counts);
  run(board, "block-diagonal-equivalence", 1, block_diagonal);

  if (!skip_trends) {
    TrendData data;
    const auto t0 = Clock::now();
    bool trends_ok = true;
    std::string err;
    try {
      run_trends(data, threads);
    } catch (const std::exception& e) {
      trends_ok = false;
      err = e.what();
    }
    std::fprintf(stderr, "acceptance: end-to-end runs took %.0f s\n", seconds_since(t0));
    if (!trends_ok) {
      for (const char* name : {"raw-vs-delta-clustering", "gender-trend", "speaker-verification-trend"})
        board.record(name, {false, "error: " + err}, 0, 0);
    } else {
      const auto t1 = Clock::now();
      const Outcome exact = shift_invariance_exact();
      const double exact_secs = seconds_since(t1);
      const RawDeltaCheck& r = data.raw_delta;
      board.record("raw-vs-delta-clustering",
                   {exact.ok && r.same_structure == r.layers,
                    exact.detail + "; personalized models: " + std::to_string(r.same_structure) +
                        "/" + std::to_string(r.layers) +
                        " layers with bitwise-identical dendrograms, max relative cost diff " +
                        fmt("%.1e", r.worst_rel)},
                   exact_secs + data.raw_delta_secs, 5);
      board.record("gender-trend", gender_trend(data), data.gender_secs, 15 * 60);
      board.record("speaker-verification-trend", sv_trend(data), data.sv_secs, 30 * 60);
    }
  }
  run(board, "determinism", 600, [&] { return determinism(cli, fs::path(workdir) / "determinism"); });

  std::printf("%d/%d criteria passed\n", board.total() - board.failed(), board.total());
  return board.failed();
}
