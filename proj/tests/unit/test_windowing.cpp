#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <set>

#include "clinpred/common.hpp"
#include "clinpred/synth.hpp"
#include "clinpred/windowing.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace clinpred;
using clinpred::testing::make_stay;

namespace {

const LabelScheme kVent = label_scheme(InterventionKind::Vent);
const LabelScheme kBolus = label_scheme(InterventionKind::ColBol);

int lab(std::vector<std::uint8_t> s, const LabelScheme& scheme = kVent,
        std::optional<std::uint8_t> entry = std::nullopt) {
  return label_window(s, scheme, entry);
}

std::shared_ptr<const Eigen::MatrixXd> hour_matrix(int hours, int width = 3) {
  Eigen::MatrixXd m(hours, width);
  for (int t = 0; t < hours; ++t) m.row(t).setConstant(t);
  return std::make_shared<const Eigen::MatrixXd>(m);
}

}  // namespace

TEST(LabelScheme, ClassCounts) {
  EXPECT_EQ(kVent.num_classes(), 4);
  EXPECT_EQ(label_scheme(InterventionKind::Vaso).num_classes(), 4);
  EXPECT_EQ(kBolus.num_classes(), 2);
  EXPECT_EQ(label_scheme(InterventionKind::CrysBol).num_classes(), 2);
  EXPECT_EQ(kVent.class_name(kOnset), "onset");
  EXPECT_EQ(kBolus.class_name(kNoOnset), "no_onset");
}

TEST(LabelWindow, ReferenceExamples) {
  EXPECT_EQ(lab({0, 0, 1, 1}), kOnset);
  EXPECT_EQ(lab({0, 0, 0, 0}), kStayOff);
  EXPECT_EQ(lab({1, 1, 1, 1}), kStayOn);
  EXPECT_EQ(lab({1, 1, 0, 0}), kWean);
  EXPECT_EQ(lab({1, 0, 0, 1}), kOnset);
  EXPECT_EQ(lab({0, 1, 0, 0}, kBolus), kOnset);
  EXPECT_EQ(lab({0, 0, 0, 0}, kBolus), kNoOnset);
}

TEST(LabelWindow, EntryStateParticipates) {
  EXPECT_EQ(lab({1, 1, 1, 1}, kVent, 0), kOnset);
  EXPECT_EQ(lab({0, 0, 0, 0}, kVent, 1), kWean);
  EXPECT_EQ(lab({1, 1, 1, 1}, kVent, 1), kStayOn);
}

TEST(LabelWindow, MatchesOracleExhaustively) {
  for (int bits = 0; bits < 16; ++bits) {
    std::vector<std::uint8_t> s(4);
    for (int i = 0; i < 4; ++i) s[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>((bits >> (3 - i)) & 1);
    for (std::optional<std::uint8_t> e : {std::optional<std::uint8_t>(), std::optional<std::uint8_t>(0),
                                          std::optional<std::uint8_t>(1)}) {
      EXPECT_EQ(lab(s, kVent, e), oracle::label(s, true, e)) << bits;
      EXPECT_EQ(lab(s, kBolus, e), oracle::label(s, false, e)) << bits;
    }
  }
}

TEST(LabelWindow, RejectsNonBinary) {
  EXPECT_THROW(lab({0, 2, 0, 0}), ValidationError);
  EXPECT_THROW(lab({0, 0, 0, 0}, kVent, 3), ValidationError);
}

TEST(Slide, CountsFromSpanArithmetic) {
  WindowConfig c;
  const std::vector<std::uint8_t> t16(16, 0), t15(15, 0), t20(20, 0);
  EXPECT_EQ(slide(hour_matrix(16), t16, c, kVent, "a").size(), 1u);
  EXPECT_EQ(slide(hour_matrix(15), t15, c, kVent, "a").size(), 0u);
  EXPECT_EQ(slide(hour_matrix(20), t20, c, kVent, "a").size(), 5u);
  for (int stride : {1, 2, 3, 7})
    for (int n = 12; n <= 60; ++n) {
      WindowConfig s;
      s.stride = stride;
      const std::vector<std::uint8_t> t(static_cast<std::size_t>(n), 0);
      const auto ex = slide(hour_matrix(n), t, s, kVent, "a");
      const std::size_t expect = n < 16 ? 0 : static_cast<std::size_t>((n - 16) / stride + 1);
      EXPECT_EQ(ex.size(), expect);
      EXPECT_EQ(expected_window_count(n, s), expect);
    }
}

TEST(Slide, GapSeparatesLookbackFromPrediction) {
  WindowConfig c;
  std::vector<std::uint8_t> track(40, 0);
  for (int t = 20; t < 40; ++t) track[static_cast<std::size_t>(t)] = 1;
  const auto ex = slide(hour_matrix(40), track, c, kVent, "a");
  for (const auto& e : ex) {
    const auto f = e.features();
    ASSERT_EQ(f.rows(), 6);
    EXPECT_EQ(f(0, 0), e.start_hour);
    const int last_lookback = static_cast<int>(f(5, 0));
    const int first_pred = last_lookback + 1 + c.gap;
    std::vector<std::uint8_t> slice(track.begin() + first_pred, track.begin() + first_pred + 4);
    EXPECT_EQ(e.label, oracle::label(slice, true, track[static_cast<std::size_t>(first_pred - 1)]));
  }
  // start 2: lookback 2-7, prediction 14-17, all off
  EXPECT_EQ(ex[2].label, kStayOff);
  // start 8: prediction 20-23 with entry state 0 at hour 19
  EXPECT_EQ(ex[8].label, kOnset);
  EXPECT_EQ(ex[9].label, kStayOn);
}

TEST(Split, SizesAndPartition) {
  std::vector<PatientStay> stays;
  for (int i = 0; i < 100; ++i) stays.push_back(make_stay(20, static_cast<std::uint64_t>(i), "S" + std::to_string(i)));
  auto s = split_cohort(stays, 1);
  EXPECT_EQ(s.train.size(), 70u);
  EXPECT_EQ(s.validation.size(), 10u);
  EXPECT_EQ(s.test.size(), 20u);
  std::set<std::size_t> all;
  for (const auto* part : {&s.train, &s.validation, &s.test}) all.insert(part->begin(), part->end());
  EXPECT_EQ(all.size(), 100u);
  auto again = split_cohort(stays, 1);
  EXPECT_EQ(again.train, s.train);
  EXPECT_EQ(again.test, s.test);
  EXPECT_THROW(split_cohort(std::span<const PatientStay>(stays.data(), 9), 1), ValidationError);
}

TEST(Split, StratifiedOnSyntheticCohort) {
  SynthConfig c = default_synth_config();
  c.patients = 1000;
  c.seed = 21;
  auto cohort = generate(c);
  auto s = split_cohort(cohort.stays, 4);
  EXPECT_LE(s.max_stratum_deviation, 0.02);
  std::set<std::string> train_ids;
  for (std::size_t i : s.train) train_ids.insert(cohort.stays[i].stay_id);
  for (std::size_t i : s.test) EXPECT_FALSE(train_ids.count(cohort.stays[i].stay_id));
}

TEST(ClassProportions, SumToOneAndFormat) {
  WindowConfig c;
  std::vector<std::uint8_t> track(60, 0);
  for (int t = 25; t < 45; ++t) track[static_cast<std::size_t>(t)] = 1;
  const auto ex = slide(hour_matrix(60), track, c, kVent, "a");
  auto p = class_proportions(ex, kVent);
  EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
  const std::vector<Example> one(ex.begin(), ex.begin() + 1);
  auto q = class_proportions(one, kVent);
  EXPECT_EQ(q[static_cast<std::size_t>(ex[0].label)], 1.0);
  const std::vector<double> table = {0.005, 0.017, 0.18, 0.798};
  EXPECT_EQ(format_proportions(kVent, table), "vent | onset 0.005 | wean 0.017 | stay off 0.798 | stay on 0.180");
}

TEST(Shard, RoundTrip) {
  clinpred::testing::TempDir dir("windowing");
  WindowConfig c;
  std::vector<std::uint8_t> track(30, 0);
  track[25] = 1;
  auto m = std::make_shared<const Eigen::MatrixXd>(Eigen::MatrixXd::Random(30, 4));
  const auto ex = slide(m, track, c, kVent, "S7");
  write_shard(dir / "s.bin", 0xfeed, 4, InterventionKind::Vent, ex, 0xbeef);
  auto back = read_shard(dir / "s.bin");
  EXPECT_EQ(back.schema_hash, 0xfeedu);
  EXPECT_EQ(back.run_hash, 0xbeefu);
  EXPECT_EQ(back.width, 4);
  ASSERT_EQ(back.size(), ex.size());
  for (std::size_t i = 0; i < ex.size(); ++i) {
    EXPECT_EQ(back.examples[i].label, ex[i].label);
    EXPECT_EQ(back.examples[i].start_hour, ex[i].start_hour);
    EXPECT_EQ(back.examples[i].stay_id, "S7");
    // float32 storage
    EXPECT_TRUE(Eigen::MatrixXd(back.examples[i].features()).isApprox(
        Eigen::MatrixXd(ex[i].features()).cast<float>().cast<double>(), 0.0));
  }
}
