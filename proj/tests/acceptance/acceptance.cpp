// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "clinpred/common.hpp"
#include "clinpred/featurize.hpp"
#include "clinpred/interpret.hpp"
#include "clinpred/models.hpp"
#include "clinpred/pipeline.hpp"
#include "clinpred/topics.hpp"
#include "clinpred/train_eval.hpp"
#include "clinpred/windowing.hpp"
#include "oracles.hpp"

using namespace clinpred;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// 1. gradients

Verdict gradient_check() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  nn::SeqBatch x;
  for (int t = 0; t < 6; ++t) {
    nn::Matrix m(3, 5);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    x.steps.push_back(m);
  }
  const std::vector<int> y = {0, 2, 3};
  const std::vector<double> w = {1.5, 0.5, 1.0, 1.0};
  Verdict out{true, ""};
  for (auto kind : {ModelKind::Lstm, ModelKind::Cnn, ModelKind::Lr}) {
    ModelConfig c;
    c.kind = kind;
    c.input_width = 5;
    c.num_classes = 4;
    c.lstm_units = 4;
    c.cnn_filters = 4;
    c.cnn_hidden = 6;
    c.seed = 17;
    auto m = build_model(c);
    const double tol = kind == ModelKind::Lr ? 1e-5 : 1e-4;
    const auto r = grad_check(*m, x, y, w, ForwardOptions{true, 7});
    out.pass = out.pass && r.max_relative_error <= tol;
    out.detail += std::string(to_string(kind)) + " " + fmt("%.2e", r.max_relative_error) + "; ";
  }
  const double s = seconds_since(t0);
  out.pass = out.pass && s < 60.0;
  out.detail += fmt("%.1fs", s);
  return out;
}

// ---------------------------------------------------------------------------
// 2. labeling

Verdict labeling_oracle() {
  int mismatches = 0, checked = 0;
  for (auto kind : {InterventionKind::Vent, InterventionKind::ColBol}) {
    const LabelScheme scheme = label_scheme(kind);
    for (int bits = 0; bits < 16; ++bits) {
      std::vector<std::uint8_t> s(4);
      for (int i = 0; i < 4; ++i) s[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>((bits >> (3 - i)) & 1);
      for (std::uint8_t entry : {std::uint8_t{0}, std::uint8_t{1}}) {
        ++checked;
        if (label_window(s, scheme, entry) != oracle::label(s, has_duration(kind), entry)) ++mismatches;
      }
    }
  }
  return {mismatches == 0, std::to_string(checked) + " cases, " + std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------------------
// 3. AUC

Verdict auc_oracle() {
  std::mt19937_64 rng(3);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 99);
    const int levels = trial % 3 == 0 ? 4 : 1000;  // coarse levels force ties
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] = static_cast<double>(rng() % levels) / levels;
      y[static_cast<std::size_t>(i)] = static_cast<int>(rng() % 2);
    }
    y[0] = 0;
    y[1] = 1;
    if (roc_auc(s, y) != oracle::pair_auc(s, y)) ++mismatches;
  }
  return {mismatches == 0, "1000 instances, " + std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------------------
// 4. macro AUC

Verdict macro_arithmetic() {
  const std::vector<double> per_class = {0.75, 0.90, 0.97, 0.97};
  const double m = macro_auc(per_class);
  const std::string shown = format_auc(m);
  return {std::abs(m - 0.8975) <= 1e-12 && shown == "0.90", fmt("%.6f", m) + " shown " + shown};
}

// ---------------------------------------------------------------------------
// 5. word encoding

Verdict word_encoding() {
  constexpr int kHours = 3449;  // 3449 x 29 >= 1e5 cells
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z(0.0, 3.0);
  std::bernoulli_distribution present(0.7);
  NormalizationStats stats;
  for (int v = 0; v < kNumVariables; ++v) {
    auto& s = stats.vars[static_cast<std::size_t>(v)];
    s.mean = 10.0 * v;
    s.std = 1.0 + v % 5;
    s.count = 100;
  }
  MeasurementGrid grid(kHours);
  for (int t = 0; t < kHours; ++t)
    for (int v = 0; v < kNumVariables; ++v)
      if (present(rng)) {
        double zz = z(rng);
        if (t % 7 == 0) zz = std::round(zz * 2) / 2;
        const auto& s = stats.vars[static_cast<std::size_t>(v)];
        grid.set(t, v, s.mean + s.std * zz);
      }
  const Eigen::MatrixXd block = encode_words(grid, stats);
  long violations = 0, cells = 0;
  for (int t = 0; t < kHours; ++t)
    for (int v = 0; v < kNumVariables; ++v) {
      ++cells;
      const auto seg = block.row(t).segment(v * kWordBins, kWordBins);
      const auto& cell = grid.at(t, v);
      if (!cell) {
        violations += (seg.array() != 0.0).any();
        continue;
      }
      const auto& s = stats.vars[static_cast<std::size_t>(v)];
      const int bin = oracle::word_bin((*cell - s.mean) / s.std);
      bool ok = seg.sum() == 1.0;
      for (int b = 0; b < kWordBins; ++b) ok = ok && seg(b) == (b == bin + kMaxAbsZ ? 1.0 : 0.0);
      violations += !ok;
    }
  return {violations == 0 && cells >= 100000,
          std::to_string(cells) + " cells, " + std::to_string(violations) + " violations"};
}

// ---------------------------------------------------------------------------
// 6 and 7. synthetic cohort

RunConfig cohort_config() {
  RunConfig cfg;
  cfg.seed = 11;
  cfg.patients = 1000;
  cfg.max_hours = 96;
  cfg.intervention = InterventionKind::Vent;
  cfg.topics = 10;
  cfg.lda_iterations = 50;
  cfg.lstm_units = 32;
  cfg.cnn_filters = 16;
  cfg.cnn_hidden = 32;
  cfg.learning_rate = 3e-3;
  cfg.max_epochs = 15;
  cfg.patience = 3;
  return cfg;
}

struct CohortRun {
  SynthCohort cohort;
  CohortSplit split;
  TopicModel topics;
};

double onset_auc(Model& m, const ExampleSet& test) {
  const auto r = evaluate(m, test, "");
  return r.class_auc[kOnset].value_or(NAN);
}

Verdict end_to_end(const CohortRun& run, const RunConfig& cfg, Clock::time_point t0) {
  const auto labels = split_labels(run.split, run.cohort.stays.size());
  const FeatureStore store =
      featurize_cohort(run.cohort.stays, run.split.train, run.topics, FeatureMode::Words, cfg.intervention, cfg);
  const WindowedSplits w = window_store(store, labels, cfg);
  double auc[3] = {};
  const ModelKind kinds[3] = {ModelKind::Lr, ModelKind::Lstm, ModelKind::Cnn};
  for (int k = 0; k < 3; ++k) {
    auto m = build_model(model_config(cfg, kinds[k], *store.schema));
    train(*m, w.train, w.validation, train_config(cfg, nullptr));
    auc[k] = onset_auc(*m, w.test);
  }
  const double s = seconds_since(t0);
  const bool pass = auc[1] >= 0.85 && auc[2] >= 0.85 && auc[1] >= auc[0] + 0.03 && auc[2] >= auc[0] + 0.03 &&
                    s <= 900.0;
  return {pass, "onset AUC lr " + fmt("%.3f", auc[0]) + ", lstm " + fmt("%.3f", auc[1]) + ", cnn " +
                    fmt("%.3f", auc[2]) + "; " + fmt("%.0fs", s)};
}

Verdict occlusion_fidelity(const CohortRun& run, RunConfig cfg) {
  // Raw measurements keep one column per vital, so a noise-filled column
  // stays inside the range the model saw in training.
  cfg.mode = FeatureMode::Raw;
  cfg.patience = 10;
  cfg.max_epochs = 30;
  const auto labels = split_labels(run.split, run.cohort.stays.size());
  const FeatureStore store =
      featurize_cohort(run.cohort.stays, run.split.train, run.topics, cfg.mode, cfg.intervention, cfg);
  const WindowedSplits w = window_store(store, labels, cfg);
  auto m = build_model(model_config(cfg, ModelKind::Lstm, *store.schema));
  train(*m, w.train, w.validation, train_config(cfg, nullptr));
  const OcclusionReport rep = rank_features(*m, w.test, *store.schema, derive_seed(*cfg.seed, 0x0cc1));

  const DriverManifest& d = run.cohort.manifest.driver(cfg.intervention);
  bool pass = true;
  std::string detail;
  for (const auto& f : d.drivers) {
    const int r = rep.rank_of(f);
    const double delta = r < 0 ? NAN : rep.entries[rep.ranking[static_cast<std::size_t>(r)]].delta_auc[kOnset];
    pass = pass && r >= 0 && r < 3 && delta >= 0.1;
    detail += f + " rank " + std::to_string(r + 1) + " d=" + fmt("%.3f", delta) + "; ";
  }
  double worst = 0.0;
  std::string worst_name;
  for (const auto& f : run.cohort.manifest.noise_only) {
    const int r = rep.rank_of(f);
    if (r < 0) {
      pass = false;
      continue;
    }
    const double delta = rep.entries[rep.ranking[static_cast<std::size_t>(r)]].delta_auc[kOnset];
    if (!(std::abs(delta) <= std::abs(worst))) {
      worst = delta;
      worst_name = f;
    }
  }
  pass = pass && !run.cohort.manifest.noise_only.empty() && std::abs(worst) <= 0.02;
  detail += "worst noise-only " + worst_name + " d=" + fmt("%.4f", worst);
  return {pass, detail};
}

// ---------------------------------------------------------------------------
// 8. activation maximization

Verdict activation_maximization() {
  bool monotone = true;
  for (auto kind : {ModelKind::Lstm, ModelKind::Cnn, ModelKind::Lr}) {
    ModelConfig c;
    c.kind = kind;
    c.input_width = 12;
    c.num_classes = 4;
    c.lstm_units = 8;
    c.cnn_filters = 4;
    c.cnn_hidden = 8;
    c.seed = 8;
    auto m = build_model(c);
    const auto h = activation_maximize(*m, kOnset, AscentConfig{100, 0.5, 30, 2});
    for (std::size_t s = 1; s < h.objective.size(); ++s) monotone = monotone && h.objective[s] >= h.objective[s - 1];
  }

  ModelConfig c;
  c.kind = ModelKind::Lr;
  c.input_width = 12;
  c.num_classes = 4;
  auto m = build_lr(c);
  auto& w = dynamic_cast<LrModel&>(*m).linear().weight.value;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> mag(0.5, 1.5);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = (rng() & 1 ? 1.0 : -1.0) * mag(rng);
  long mismatches = 0;
  for (int cls = 0; cls < 4; ++cls) {
    const auto h = activation_maximize(*m, cls, AscentConfig{200, 0.1, 30, 3});
    for (std::size_t s = 1; s < h.objective.size(); ++s) monotone = monotone && h.objective[s] >= h.objective[s - 1];
    for (int t = 0; t < h.input.rows(); ++t)
      for (int v = 0; v < h.input.cols(); ++v)
        mismatches += h.input(t, v) != (w(cls, t * 12 + v) > 0 ? 1.0 : 0.0);
  }
  return {monotone && mismatches == 0, std::string("traces ") + (monotone ? "non-decreasing" : "DECREASE") +
                                           ", box corner mismatches " + std::to_string(mismatches)};
}

// ---------------------------------------------------------------------------
// 9. reproducibility

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + CLINPRED_CLI_PATH + "\" " + args + " >>\"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

Verdict reproducibility() {
  const fs::path root = fs::temp_directory_path() / ("clinpred_accept_" + std::to_string(std::random_device{}()));
  const std::string common =
      " --seed 5 --patients 200 --max-hours 72 --topics 4 --lda-iterations 20 --fold-in 10"
      " --lstm-units 8 --cnn-filters 4 --cnn-hidden 8 --max-epochs 3 --patience 2 --ascent-steps 20 --top-k 5";
  for (const char* run : {"a", "b"}) {
    const fs::path dir = root / run;
    fs::create_directories(dir);
    const std::string args = common + " --workdir \"" + dir.string() + "\"";
    for (const std::string model : {"lstm", "cnn", "lr"})
      for (const auto& sub : subcommands()) {
        if (model != "lstm" && (sub == "synth" || sub == "fit-topics" || sub == "featurize" || sub == "window"))
          continue;
        if (run_cli(sub + args + " --model " + model, root / "log.txt") != 0) {
          std::error_code ec;
          fs::remove_all(root, ec);
          return {false, sub + " failed for " + model};
        }
      }
  }
  int compared = 0, differing = 0;
  std::string first_diff;
  for (const auto& e : fs::directory_iterator(root / "a")) {
    const std::string name = e.path().filename().string();
    const std::string ext = e.path().extension().string();
    const bool wanted = ext == ".ckpt" || name.rfind("metrics_", 0) == 0 || name.rfind("report", 0) == 0 ||
                        name.rfind("fig_", 0) == 0;
    if (!wanted) continue;
    ++compared;
    if (!fs::exists(root / "b" / name) || slurp(e.path()) != slurp(root / "b" / name)) {
      ++differing;
      if (first_diff.empty()) first_diff = name;
    }
  }
  std::error_code ec;
  fs::remove_all(root, ec);
  return {compared >= 8 && differing == 0, std::to_string(compared) + " artifacts compared, " +
                                               std::to_string(differing) + " differ" +
                                               (first_diff.empty() ? "" : " (" + first_diff + ")")};
}

// ---------------------------------------------------------------------------
// 10. LDA

std::vector<TokenCounts> disjoint_corpus(int docs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> word(0, 199);
  std::vector<TokenCounts> out;
  for (int d = 0; d < docs; ++d) {
    const char* prefix = d % 2 ? "alpha" : "beta";
    TokenCounts doc;
    for (int i = 0; i < 60; ++i) ++doc[std::string(prefix) + std::to_string(word(rng))];
    out.push_back(doc);
  }
  return out;
}

Verdict lda_recovery() {
  const auto t0 = Clock::now();
  const auto train_docs = disjoint_corpus(400, 10);
  const auto held_out = disjoint_corpus(60, 11);
  LdaConfig c;
  c.topics = 2;
  c.alpha = 0.5;
  c.iterations = 200;
  c.min_doc_freq = 1;
  c.seed = 10;
  const TopicModel m = fit_lda(train_docs, c);
  const auto V = static_cast<double>(m.vocab.size());
  std::set<std::string> prefixes;
  int impure = 0;
  for (int k = 0; k < 2; ++k) {
    std::set<std::string> p;
    for (const auto& w : top_words(m, k, 20)) p.insert(w.substr(0, w.find_first_of("0123456789")));
    impure += p.size() != 1;
    prefixes.insert(p.begin(), p.end());
  }
  const double pp = perplexity(m, held_out);
  const double s = seconds_since(t0);
  const bool pass = V <= 500 && impure == 0 && prefixes.size() == 2 && pp < V && s < 60.0;
  return {pass, "vocab " + fmt("%.0f", V) + ", impure topics " + std::to_string(impure) + ", perplexity " +
                    fmt("%.1f", pp) + " vs uniform " + fmt("%.0f", V) + "; " + fmt("%.1fs", s)};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Verdict()>& fn) {
    const auto t0 = Clock::now();
    Verdict o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s  %2d %-28s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  };

  report(1, "gradient check", gradient_check);
  report(2, "labeling oracle", labeling_oracle);
  report(3, "auc oracle", auc_oracle);
  report(4, "macro auc arithmetic", macro_arithmetic);
  report(5, "word encoding", word_encoding);

  const RunConfig cfg = cohort_config();
  const auto t6 = Clock::now();
  CohortRun run;
  std::string setup_error;
  try {
    run.cohort = generate(synth_config(cfg));
    run.split = make_split(run.cohort.stays, cfg);
    run.topics = fit_topics(run.cohort.stays, run.split.train, cfg);
  } catch (const std::exception& e) {
    setup_error = e.what();
  }
  auto guarded = [&](auto fn) {
    return [&, fn]() -> Verdict {
      if (!setup_error.empty()) return {false, "cohort setup failed: " + setup_error};
      return fn();
    };
  };
  report(6, "synthetic end-to-end", guarded([&] { return end_to_end(run, cfg, t6); }));
  report(7, "occlusion fidelity", guarded([&] { return occlusion_fidelity(run, cfg); }));
  report(8, "activation maximization", activation_maximization);
  report(9, "reproducibility", reproducibility);
  report(10, "lda recovery", lda_recovery);

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
