#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "clinpred/common.hpp"
#include "clinpred/models.hpp"
#include "clinpred/train_eval.hpp"
#include "oracles.hpp"

using namespace clinpred;

namespace {

const LabelScheme kVent = label_scheme(InterventionKind::Vent);
const LabelScheme kBolus = label_scheme(InterventionKind::ColBol);

ExampleSet separable_set(int n, int V, std::uint64_t seed, int classes = 4) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto src = std::make_shared<Eigen::MatrixXd>(n * 6, V);
  for (Eigen::Index i = 0; i < src->size(); ++i) src->data()[i] = u(rng);
  ExampleSet set;
  set.schema_hash = 1;
  set.width = V;
  set.kind = classes == 4 ? InterventionKind::Vent : InterventionKind::ColBol;
  for (int i = 0; i < n; ++i) {
    Example e;
    e.source = src;
    e.row = 6 * i;
    e.length = 6;
    e.kind = set.kind;
    e.label = i % 7 == 0 ? 0 : 1 + i % (classes - 1);  // class 0 is rare
    src->block(6 * i, e.label, 6, 1).array() += 1.5;
    set.examples.push_back(e);
  }
  return set;
}

ModelConfig small(ModelKind kind, int classes = 4) {
  ModelConfig c;
  c.kind = kind;
  c.input_width = 5;
  c.num_classes = classes;
  c.lstm_units = 6;
  c.cnn_filters = 3;
  c.cnn_hidden = 8;
  c.seed = 3;
  c.schema_hash = 1;
  return c;
}

std::vector<double> random_scores(int n, std::mt19937_64& rng, int levels) {
  std::uniform_int_distribution<int> d(0, levels - 1);
  std::vector<double> s(static_cast<std::size_t>(n));
  for (auto& v : s) v = d(rng) / static_cast<double>(levels);
  return s;
}

}  // namespace

TEST(ClassWeights, Examples) {
  std::vector<int> balanced = {0, 1, 0, 1};
  EXPECT_EQ(class_weights(balanced, kBolus), (std::vector<double>{1.0, 1.0}));
  std::vector<int> skewed(100, 1);
  for (int i = 0; i < 90; ++i) skewed[static_cast<std::size_t>(i)] = 0;
  auto w = class_weights(skewed, kBolus);
  EXPECT_NEAR(w[0], 0.2, 1e-12);
  EXPECT_NEAR(w[1], 1.8, 1e-12);
  // Before rescaling: N / (K n_k) = 0.555... and 5.0, ratio 9.
  EXPECT_NEAR(w[1] / w[0], (100.0 / 20) / (100.0 / 180), 1e-12);
}

TEST(ClassWeights, AbsentClassNamed) {
  std::vector<int> y = {0, 1, 3, 3};
  try {
    class_weights(y, kVent);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("stay_on"), std::string::npos) << e.what();
  }
}

TEST(ClassWeights, PositiveWithMeanOne) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> y;
    for (int i = 0; i < 200; ++i) y.push_back(static_cast<int>(rng() % 4));
    for (int c = 0; c < 4; ++c) y.push_back(c);
    auto w = class_weights(y, kVent);
    double s = 0;
    for (double v : w) {
      EXPECT_GT(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s / 4, 1.0, 1e-12);
  }
}

TEST(UniformWeights, LossEqualsUnweighted) {
  std::mt19937_64 rng(2);
  nn::Matrix p = nn::softmax(nn::Matrix::Random(30, 4));
  std::vector<int> y;
  for (int i = 0; i < 30; ++i) y.push_back(static_cast<int>(rng() % 4));
  std::vector<double> ones(4, 1.0);
  double plain = 0;
  for (int i = 0; i < 30; ++i) plain -= std::log(p(i, y[static_cast<std::size_t>(i)]));
  EXPECT_EQ(nn::weighted_cross_entropy(p, y, ones), plain / 30);
}

TEST(RocAuc, Examples) {
  std::vector<double> s = {0.9, 0.8, 0.3, 0.2};
  std::vector<int> y = {1, 1, 0, 0};
  EXPECT_EQ(roc_auc(s, y), 1.0);
  std::vector<double> flat(4, 0.4);
  EXPECT_EQ(roc_auc(flat, y), 0.5);
  std::vector<int> one_class = {1, 1, 1, 1};
  EXPECT_THROW(roc_auc(s, one_class), ValidationError);
  std::vector<double> nan = {0.1, NAN, 0.2, 0.3};
  EXPECT_THROW(roc_auc(nan, y), NumericError);
}

TEST(RocAuc, MatchesPairCountingWithTies) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 99);
    auto s = random_scores(n, rng, trial % 2 ? 5 : 1000);
    std::vector<int> y(static_cast<std::size_t>(n));
    for (auto& v : y) v = static_cast<int>(rng() % 2);
    y[0] = 0;
    y[1] = 1;
    EXPECT_EQ(roc_auc(s, y), oracle::pair_auc(s, y));
  }
}

TEST(RocAuc, MonotoneInvarianceAndComplement) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = random_scores(60, rng, 8);
    std::vector<int> y(60), flipped(60);
    for (std::size_t i = 0; i < 60; ++i) {
      y[i] = static_cast<int>(rng() % 2);
      flipped[i] = 1 - y[i];
    }
    y[0] = 0;
    y[1] = 1;
    flipped[0] = 1;
    flipped[1] = 0;
    std::vector<double> t(60);
    for (std::size_t i = 0; i < 60; ++i) t[i] = std::exp(3 * s[i]) - 7;
    EXPECT_EQ(roc_auc(t, y), roc_auc(s, y));
    EXPECT_DOUBLE_EQ(roc_auc(s, y) + roc_auc(s, flipped), 1.0);
  }
}

TEST(MacroAuc, PublishedAggregation) {
  std::vector<double> per_class = {0.75, 0.90, 0.97, 0.97};
  EXPECT_NEAR(macro_auc(per_class), 0.8975, 1e-12);
  EXPECT_EQ(format_auc(macro_auc(per_class)), "0.90");
  EXPECT_THROW(macro_auc(std::vector<double>{}), ValidationError);
}

TEST(MacroAuc, DuplicatingAClassLeavesMacroUnchanged) {
  std::mt19937_64 rng(6);
  const int n = 80;
  nn::Matrix probs(n, 4);
  std::vector<int> labels(n);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < n; ++i) {
    labels[static_cast<std::size_t>(i)] = i % 4;
    for (int c = 0; c < 4; ++c) probs(i, c) = u(rng) + (c == i % 4 ? 0.3 : 0.0);
  }
  auto base = evaluate_probabilities(probs, labels, kVent, "m");
  nn::Matrix doubled(n + n / 4, 4);
  doubled.topRows(n) = probs;
  std::vector<int> dl = labels;
  int r = n;
  for (int i = 0; i < n; ++i)
    if (labels[static_cast<std::size_t>(i)] == 2) {
      doubled.row(r++) = probs.row(i);
      dl.push_back(2);
    }
  auto dup = evaluate_probabilities(doubled, dl, kVent, "m");
  EXPECT_DOUBLE_EQ(dup.class_auc[2].value(), base.class_auc[2].value());
  EXPECT_EQ(dup.class_counts[2], 2 * base.class_counts[2]);
}

TEST(Evaluate, UniformPredictorAndPartialReport) {
  nn::Matrix p = nn::Matrix::Constant(12, 4, 0.25);
  std::vector<int> y = {0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3};
  auto r = evaluate_probabilities(p, y, kVent, "flat");
  for (const auto& a : r.class_auc) EXPECT_EQ(*a, 0.5);
  EXPECT_EQ(r.macro, 0.5);
  EXPECT_FALSE(r.partial);
  std::vector<int> missing = {0, 1, 3, 3, 0, 1, 3, 3, 0, 1, 3, 3};
  auto q = evaluate_probabilities(p, missing, kVent, "flat");
  EXPECT_TRUE(q.partial);
  EXPECT_FALSE(q.class_auc[2].has_value());
  EXPECT_EQ(q.class_counts[2], 0);
}

TEST(Evaluate, ReportJsonRoundTrip) {
  nn::Matrix p = nn::Matrix::Random(20, 4).array().abs();
  std::vector<int> y;
  for (int i = 0; i < 20; ++i) y.push_back(i % 3 == 0 ? 0 : i % 3 == 1 ? 1 : 3);
  auto r = evaluate_probabilities(p, y, kVent, "lstm");
  auto back = EvalReport::from_json(r.to_json());
  EXPECT_EQ(back.class_names, r.class_names);
  EXPECT_EQ(back.class_counts, r.class_counts);
  EXPECT_EQ(back.class_auc, r.class_auc);
  EXPECT_EQ(back.macro, r.macro);
  EXPECT_EQ(back.partial, r.partial);
  EXPECT_THROW(EvalReport::from_json("{}"), SchemaError);
}

TEST(MetricsCsv, TableLayout) {
  std::vector<double> per_class = {0.75, 0.90, 0.97, 0.97};
  EvalReport r;
  r.intervention = "vent";
  r.model = "lstm_words";
  r.class_names = {"onset", "wean", "stay_on", "stay_off"};
  r.class_counts = {1, 1, 1, 1};
  for (double a : per_class) r.class_auc.emplace_back(a);
  r.macro = macro_auc(per_class);
  std::ostringstream os;
  std::vector<EvalReport> reports = {r};
  write_metrics_csv(os, reports);
  EXPECT_EQ(os.str(),
            "intervention,model,class,auc\n"
            "vent,lstm_words,onset,0.750000\n"
            "vent,lstm_words,wean,0.900000\n"
            "vent,lstm_words,stay_on,0.970000\n"
            "vent,lstm_words,stay_off,0.970000\n"
            "vent,lstm_words,macro,0.897500\n");
}

TEST(Train, SeparableReachesPerfectTrainingAuc) {
  auto set = separable_set(140, 5, 7);
  for (auto kind : {ModelKind::Lr, ModelKind::Lstm, ModelKind::Cnn}) {
    auto m = build_model(small(kind));
    TrainConfig tc;
    tc.batch_size = 32;
    tc.learning_rate = 0.02;
    tc.max_epochs = 50;
    tc.patience = 50;
    tc.l2 = 0.0;
    auto h = train(*m, set, set, tc);
    EXPECT_LE(h.best_epoch, 50);
    EXPECT_EQ(h.best_val_macro_auc, 1.0) << to_string(kind);
    EXPECT_EQ(evaluate(*m, set, "").macro, 1.0) << to_string(kind);
  }
}

TEST(Train, DeterministicGivenSeed) {
  auto set = separable_set(70, 5, 8);
  auto run = [&] {
    auto m = build_model(small(ModelKind::Lstm));
    TrainConfig tc;
    tc.batch_size = 16;
    tc.max_epochs = 4;
    tc.seed = 12;
    auto h = train(*m, set, set, tc);
    return std::make_pair(h, predict_proba(*m, set));
  };
  auto [h1, p1] = run();
  auto [h2, p2] = run();
  ASSERT_EQ(h1.epochs.size(), h2.epochs.size());
  for (std::size_t i = 0; i < h1.epochs.size(); ++i) {
    EXPECT_EQ(h1.epochs[i].loss, h2.epochs[i].loss);
    EXPECT_EQ(h1.epochs[i].val_macro_auc, h2.epochs[i].val_macro_auc);
  }
  EXPECT_EQ(p1, p2);
}

TEST(Train, EarlyStopFiresPatienceEpochsAfterBest) {
  auto train_set = separable_set(70, 5, 9);
  auto val = separable_set(40, 5, 10);
  // Shuffle validation labels so validation AUC stalls quickly.
  std::mt19937_64 rng(3);
  for (auto& e : val.examples) e.label = static_cast<int>(rng() % 4);
  for (int patience : {1, 2, 3}) {
    auto m = build_model(small(ModelKind::Lr));
    TrainConfig tc;
    tc.batch_size = 16;
    tc.learning_rate = 0.05;
    tc.patience = patience;
    tc.max_epochs = 60;
    auto h = train(*m, train_set, val, tc);
    ASSERT_TRUE(h.stopped_early);
    EXPECT_EQ(static_cast<int>(h.epochs.size()), h.best_epoch + patience);
    double best = -1;
    for (const auto& e : h.epochs) best = std::max(best, e.val_macro_auc);
    EXPECT_EQ(best, h.best_val_macro_auc);
    // Restored parameters reproduce the best validation score.
    EXPECT_EQ(evaluate(*m, val, "").macro, h.best_val_macro_auc);
  }
}

TEST(Train, NonFiniteLossAborts) {
  auto set = separable_set(30, 5, 11);
  auto poisoned = std::make_shared<Eigen::MatrixXd>(*set.examples[0].source);
  (*poisoned)(0, 0) = NAN;
  for (auto& e : set.examples) e.source = poisoned;
  auto m = build_model(small(ModelKind::Lr));
  TrainConfig tc;
  EXPECT_THROW(train(*m, set, set, tc), NumericError);
}

TEST(Train, RejectsBadConfig) {
  auto set = separable_set(30, 5, 12);
  auto m = build_model(small(ModelKind::Lr));
  TrainConfig tc;
  tc.batch_size = 0;
  EXPECT_THROW(train(*m, set, set, tc), ValidationError);
  tc = TrainConfig{};
  tc.patience = 0;
  EXPECT_THROW(train(*m, set, set, tc), ValidationError);
}
