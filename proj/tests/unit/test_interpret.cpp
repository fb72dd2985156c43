#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "clinpred/common.hpp"
#include "clinpred/interpret.hpp"
#include "clinpred/models.hpp"

using namespace clinpred;

namespace {

constexpr int kLen = 6;
constexpr int kPlanted = 3;
constexpr int kTwinA = 10, kTwinB = 20;

const FeatureSchema& raw_schema() {
  static const FeatureSchema s(FeatureMode::Raw, 2);
  return s;
}

// Labels cycle through the four classes. The planted column separates onset
// from the rest; the twin columns carry the same weaker signal.
ExampleSet planted_set(int n, std::uint64_t seed) {
  const int V = raw_schema().width();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto src = std::make_shared<Eigen::MatrixXd>(n * kLen, V);
  for (Eigen::Index i = 0; i < src->size(); ++i) src->data()[i] = u(rng);
  ExampleSet set;
  set.schema_hash = raw_schema().hash();
  set.width = V;
  set.kind = InterventionKind::Vent;
  for (int i = 0; i < n; ++i) {
    Example e;
    e.source = src;
    e.row = kLen * i;
    e.length = kLen;
    e.kind = set.kind;
    e.label = i % 4;
    e.stay_id = "S" + std::to_string(i);
    const bool onset = e.label == kOnset;
    for (int t = 0; t < kLen; ++t) {
      (*src)(kLen * i + t, kPlanted) = onset ? 0.9 : 0.1;
      (*src)(kLen * i + t, kTwinA) = (onset ? 0.55 : 0.45) + 0.3 * (u(rng) - 0.5);
      (*src)(kLen * i + t, kTwinB) = (onset ? 0.55 : 0.45) + 0.3 * (u(rng) - 0.5);
    }
    set.examples.push_back(e);
  }
  return set;
}

ModelConfig config(ModelKind kind) {
  ModelConfig c;
  c.kind = kind;
  c.input_width = raw_schema().width();
  c.num_classes = 4;
  c.lstm_units = 4;
  c.cnn_filters = 4;
  c.cnn_hidden = 6;
  c.seed = 5;
  c.schema_hash = raw_schema().hash();
  return c;
}

// LR whose onset row reads the planted and twin columns; everything else
// gets tiny weights.
std::unique_ptr<Model> planted_lr() {
  auto m = build_lr(config(ModelKind::Lr));
  auto& w = dynamic_cast<LrModel&>(*m).linear().weight.value;
  const int V = raw_schema().width();
  w *= 0.01;
  for (int t = 0; t < kLen; ++t) {
    w(kOnset, t * V + kPlanted) = 5.0;
    w(kOnset, t * V + kTwinA) = 1.0;
    w(kOnset, t * V + kTwinB) = 1.0;
  }
  return m;
}

}  // namespace

TEST(OcclusionUnits, RawModeIsOneColumnEach) {
  const auto& s = raw_schema();
  const auto units = occlusion_units(s);
  ASSERT_EQ(static_cast<int>(units.size()), s.width());
  for (int c = 0; c < s.width(); ++c) {
    ASSERT_EQ(units[static_cast<std::size_t>(c)].columns, std::vector<int>{c});
    EXPECT_EQ(units[static_cast<std::size_t>(c)].name, s.column(c).name);
  }
}

TEST(OcclusionUnits, WordModeGroupsBinsPerVariable) {
  const FeatureSchema s(FeatureMode::Words, 3);
  const auto units = occlusion_units(s);
  ASSERT_EQ(static_cast<int>(units.size()), kNumVariables + (s.width() - s.measurement_width()));
  std::set<int> covered;
  for (int v = 0; v < kNumVariables; ++v) {
    const auto& u = units[static_cast<std::size_t>(v)];
    EXPECT_EQ(u.name, variables()[static_cast<std::size_t>(v)].name);
    ASSERT_EQ(u.columns.size(), 9u);
    for (int c : u.columns) {
      EXPECT_EQ(s.column(c).variable, v);
      covered.insert(c);
    }
  }
  for (std::size_t i = kNumVariables; i < units.size(); ++i) {
    ASSERT_EQ(units[i].columns.size(), 1u);
    covered.insert(units[i].columns[0]);
  }
  EXPECT_EQ(static_cast<int>(covered.size()), s.width());
}

TEST(Occlude, IdentityFillIsExactlyZero) {
  auto set = planted_set(80, 1);
  for (auto kind : {ModelKind::Lr, ModelKind::Lstm, ModelKind::Cnn}) {
    auto m = build_model(config(kind));
    const auto units = occlusion_units(raw_schema());
    for (std::size_t u : {std::size_t{0}, std::size_t{kPlanted}, units.size() - 1}) {
      const auto d = occlude(*m, set, units[u], u, 9, OcclusionFill::Identity);
      ASSERT_EQ(d.size(), 4u);
      for (double x : d) EXPECT_EQ(x, 0.0) << to_string(kind);
    }
  }
}

TEST(Occlude, IgnoredColumnIsExactlyZero) {
  auto set = planted_set(80, 2);
  auto m = planted_lr();
  auto& w = dynamic_cast<LrModel&>(*m).linear().weight.value;
  const int V = raw_schema().width();
  const int ignored = 7;
  for (int t = 0; t < kLen; ++t) w.col(t * V + ignored).setZero();
  const auto units = occlusion_units(raw_schema());
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto d = occlude(*m, set, units[ignored], ignored, seed);
    for (double x : d) EXPECT_EQ(x, 0.0);
  }
}

TEST(Occlude, RejectsBadUnits) {
  auto set = planted_set(20, 3);
  auto m = planted_lr();
  EXPECT_THROW(occlude(*m, set, OcclusionUnit{"none", FeatureGroup::Vital, {}}, 0, 1), ValidationError);
  EXPECT_THROW(occlude(*m, set, OcclusionUnit{"far", FeatureGroup::Vital, {set.width}}, 0, 1), ValidationError);
}

TEST(RankFeatures, PlantedColumnFirstAndRankingIsPermutation) {
  auto set = planted_set(200, 4);
  auto m = planted_lr();
  const auto report = rank_features(*m, set, raw_schema(), 11);
  EXPECT_EQ(report.class_names, (std::vector<std::string>{"onset", "wean", "stay_on", "stay_off"}));
  EXPECT_EQ(report.baseline_auc[kOnset], 1.0);
  ASSERT_EQ(static_cast<int>(report.entries.size()), raw_schema().width());
  std::vector<std::size_t> sorted = report.ranking;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
  const std::string planted = raw_schema().column(kPlanted).name;
  EXPECT_EQ(report.rank_of(planted), 0);
  EXPECT_GE(report.entries[kPlanted].delta_auc[kOnset], 0.1);
  EXPECT_EQ(report.rank_of("no such feature"), -1);
  for (std::size_t r = 1; r < report.ranking.size(); ++r)
    EXPECT_GE(report.entries[report.ranking[r - 1]].delta_auc[kOnset],
              report.entries[report.ranking[r]].delta_auc[kOnset]);
}

TEST(RankFeatures, AgreesWithOccludeAndIsDeterministic) {
  auto set = planted_set(120, 5);
  auto m = planted_lr();
  const auto a = rank_features(*m, set, raw_schema(), 21);
  const auto b = rank_features(*m, set, raw_schema(), 21);
  const auto units = occlusion_units(raw_schema());
  for (std::size_t u = 0; u < units.size(); ++u) {
    EXPECT_EQ(a.entries[u].delta_auc, b.entries[u].delta_auc);
    EXPECT_EQ(a.entries[u].delta_auc, occlude(*m, set, units[u], u, 21));
  }
  EXPECT_EQ(a.ranking, b.ranking);
}

TEST(RankFeatures, TwinColumnsRankAdjacentAcrossSeeds) {
  auto set = planted_set(400, 6);
  auto m = planted_lr();
  // Without the planted column the twins carry the onset signal.
  auto& w = dynamic_cast<LrModel&>(*m).linear().weight.value;
  for (int t = 0; t < kLen; ++t) w(kOnset, t * raw_schema().width() + kPlanted) = 0.0;
  const auto units = occlusion_units(raw_schema());
  std::vector<double> mean(units.size(), 0.0);
  double twin_gap = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = rank_features(*m, set, raw_schema(), seed);
    for (std::size_t u = 0; u < units.size(); ++u) mean[u] += r.entries[u].delta_auc[kOnset] / 5.0;
    twin_gap = std::max(twin_gap, std::abs(r.entries[kTwinA].delta_auc[kOnset] - r.entries[kTwinB].delta_auc[kOnset]));
  }
  std::vector<std::size_t> order(units.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return mean[x] > mean[y]; });
  const auto pos = [&](std::size_t c) { return std::find(order.begin(), order.end(), c) - order.begin(); };
  EXPECT_EQ(std::min(pos(kTwinA), pos(kTwinB)), 0);
  EXPECT_EQ(std::abs(pos(kTwinA) - pos(kTwinB)), 1);
  EXPECT_LT(std::abs(mean[kTwinA] - mean[kTwinB]), 0.02);
  EXPECT_LT(twin_gap, 0.05);
}

TEST(RankFeatures, Errors) {
  auto set = planted_set(20, 7);
  auto m = planted_lr();
  EXPECT_THROW(rank_features(*m, set, FeatureSchema(FeatureMode::Raw, 3), 1), SchemaError);
  EXPECT_THROW(rank_features(*m, set, raw_schema(), 1, 4), ValidationError);
}

TEST(ExtremeExamples, OrderingStatsAndClamp) {
  auto set = planted_set(30, 8);
  auto m = build_model(config(ModelKind::Lstm));
  const auto ex = extreme_examples(*m, set, kOnset, 5);
  const auto probs = predict_proba(*m, set);
  ASSERT_EQ(ex.top.k, 5);
  ASSERT_EQ(ex.bottom.k, 5);
  EXPECT_TRUE(ex.top.top);
  EXPECT_FALSE(ex.bottom.top);
  for (int i = 0; i < 5; ++i) {
    EXPECT_EQ(ex.top.probabilities[static_cast<std::size_t>(i)], probs(static_cast<Eigen::Index>(ex.top.indices[static_cast<std::size_t>(i)]), kOnset));
    if (i > 0) {
      EXPECT_GE(ex.top.probabilities[static_cast<std::size_t>(i - 1)], ex.top.probabilities[static_cast<std::size_t>(i)]);
      EXPECT_LE(ex.bottom.probabilities[static_cast<std::size_t>(i - 1)], ex.bottom.probabilities[static_cast<std::size_t>(i)]);
    }
  }
  EXPECT_GE(*std::min_element(ex.top.probabilities.begin(), ex.top.probabilities.end()),
            *std::max_element(ex.bottom.probabilities.begin(), ex.bottom.probabilities.end()));
  EXPECT_EQ(ex.top.probabilities.front(), probs.col(kOnset).maxCoeff());
  EXPECT_EQ(ex.bottom.probabilities.front(), probs.col(kOnset).minCoeff());

  // Brute-force mean and population std of the top bundle.
  for (int t = 0; t < kLen; ++t)
    for (int v = 0; v < set.width; v += 7) {
      double s = 0, ss = 0;
      for (std::size_t idx : ex.top.indices) s += set.examples[idx].features()(t, v);
      const double mu = s / 5;
      for (std::size_t idx : ex.top.indices) ss += std::pow(set.examples[idx].features()(t, v) - mu, 2);
      EXPECT_NEAR(ex.top.mean(t, v), mu, 1e-12);
      EXPECT_NEAR(ex.top.std(t, v), std::sqrt(ss / 5), 1e-12);
    }

  const auto all = extreme_examples(*m, set, kOnset, 100);
  EXPECT_EQ(all.top.k, 30);
  EXPECT_EQ(all.top.indices.size(), 30u);
  EXPECT_THROW(extreme_examples(*m, set, kOnset, 0), ValidationError);
  EXPECT_THROW(extreme_examples(*m, set, 4, 3), ValidationError);
}

TEST(ExtremeExamples, PlantedColumnSeparatesBundles) {
  auto set = planted_set(200, 9);
  auto m = planted_lr();
  const auto ex = extreme_examples(*m, set, kOnset, 10);
  for (int t = 0; t < kLen; ++t) {
    const double pooled = std::sqrt((std::pow(ex.top.std(t, kPlanted), 2) + std::pow(ex.bottom.std(t, kPlanted), 2)) / 2);
    EXPECT_GE(ex.top.mean(t, kPlanted) - ex.bottom.mean(t, kPlanted), std::max(pooled, 1e-9));
  }
}

TEST(ActivationMaximize, LinearModelReachesBoxCorner) {
  auto m = build_lr(config(ModelKind::Lr));
  auto& w = dynamic_cast<LrModel&>(*m).linear().weight.value;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = (rng() & 1 ? 1.0 : -1.0) * u(rng);
  const int V = raw_schema().width();
  for (int cls = 0; cls < 4; ++cls) {
    const auto h = activation_maximize(*m, cls, AscentConfig{200, 0.1, 30, 4});
    ASSERT_EQ(h.input.rows(), kLen);
    ASSERT_EQ(h.input.cols(), V);
    for (int t = 0; t < kLen; ++t)
      for (int v = 0; v < V; ++v) EXPECT_EQ(h.input(t, v), w(cls, t * V + v) > 0 ? 1.0 : 0.0);
    for (std::size_t s = 1; s < h.objective.size(); ++s) EXPECT_GE(h.objective[s], h.objective[s - 1]);
  }
}

TEST(ActivationMaximize, TraceNonDecreasingForNetworks) {
  for (auto kind : {ModelKind::Lstm, ModelKind::Cnn}) {
    auto m = build_model(config(kind));
    const auto h = activation_maximize(*m, kOnset, AscentConfig{60, 0.5, 30, 8});
    ASSERT_EQ(h.objective.size(), 61u);
    for (std::size_t s = 1; s < h.objective.size(); ++s) EXPECT_GE(h.objective[s], h.objective[s - 1]) << s;
    EXPECT_GT(h.objective.back(), h.objective.front());
    EXPECT_GE(h.input.minCoeff(), 0.0);
    EXPECT_LE(h.input.maxCoeff(), 1.0);
    const auto again = activation_maximize(*m, kOnset, AscentConfig{60, 0.5, 30, 8});
    EXPECT_EQ(again.input, h.input);
  }
}

TEST(ActivationMaximize, NonFiniteGradientRaises) {
  auto m = build_lr(config(ModelKind::Lr));
  dynamic_cast<LrModel&>(*m).linear().weight.value(kOnset, 0) = std::nan("");
  EXPECT_THROW(activation_maximize(*m, kOnset, AscentConfig{5, 0.1, 30, 1}), NumericError);
  EXPECT_THROW(activation_maximize(*m, 4, AscentConfig{}), ValidationError);
  EXPECT_THROW(activation_maximize(*m, 0, AscentConfig{5, 0.0, 30, 1}), ValidationError);
}

TEST(Writers, CsvShapes) {
  auto set = planted_set(40, 10);
  auto m = planted_lr();
  const auto report = rank_features(*m, set, raw_schema(), 1);
  std::ostringstream occ;
  write_occlusion_csv(occ, report);
  const std::string text = occ.str();
  EXPECT_EQ(text.rfind("feature,group,class,delta_auc\n", 0), 0u);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 4 * raw_schema().width());
  const std::string first = raw_schema().column(report.ranking[0]).name + ",";
  EXPECT_EQ(text.find(first), std::string("feature,group,class,delta_auc\n").size());

  std::ostringstream traj;
  write_trajectory_csv(traj, raw_schema(), extreme_examples(*m, set, kOnset, 3));
  const std::string t = traj.str();
  EXPECT_EQ(std::count(t.begin(), t.end(), '\n'), 1 + 2 * kLen * raw_schema().width());

  std::ostringstream hal;
  write_hallucination_csv(hal, raw_schema(), activation_maximize(*m, kOnset, AscentConfig{3, 0.1, 5, 1}));
  const std::string hs = hal.str();
  EXPECT_EQ(std::count(hs.begin(), hs.end(), '\n'), 1 + kLen * raw_schema().width());
}

TEST(Writers, SvgIsWellFormedAndEscaped) {
  std::ostringstream bar;
  write_bar_svg(bar, "a < b & c", {"x", "y"}, {0.2, -0.1});
  const std::string b = bar.str();
  EXPECT_EQ(b.rfind("<svg", 0), 0u);
  EXPECT_NE(b.find("a &lt; b &amp; c"), std::string::npos);
  EXPECT_NE(b.find("</svg>"), std::string::npos);
  EXPECT_EQ(b.find("nan"), std::string::npos);

  std::ostringstream line;
  write_line_svg(line, "t", {PlotSeries{"s1", {0, 1, 2}, {1, 2, 3}, {0.1, 0.1, 0.1}}, PlotSeries{"s2", {0, 1, 2}, {3, 2, 1}, {}}});
  const std::string l = line.str();
  size_t polylines = 0;
  for (size_t p = l.find("<polyline"); p != std::string::npos; p = l.find("<polyline", p + 1)) ++polylines;
  EXPECT_EQ(polylines, 2u);
  EXPECT_NE(l.find("</svg>"), std::string::npos);
}
