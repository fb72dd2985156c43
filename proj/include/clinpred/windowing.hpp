#pragma once

// Sliding lookback windows with a gap before the prediction window, outcome
// labels, and patient-level cohort splits.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "clinpred/core.hpp"
#include "clinpred/featurize.hpp"

namespace clinpred {

struct WindowConfig {
  int lookback = 6;
  int gap = 6;
  int horizon = 4;
  int stride = 1;

  int span() const { return lookback + gap + horizon; }
  void validate() const;
};

// Class ids. Duration interventions use all four; boluses use Onset/NoOnset.
enum Outcome : int { kOnset = 0, kWean = 1, kStayOn = 2, kStayOff = 3 };
inline constexpr int kNoOnset = 1;

struct LabelScheme {
  InterventionKind kind = InterventionKind::Vent;

  int num_classes() const { return has_duration(kind) ? 4 : 2; }
  std::string class_name(int id) const;
};

inline LabelScheme label_scheme(InterventionKind kind) { return LabelScheme{kind}; }

// Labels a prediction-window slice. `entry_state` is the track value in the
// hour before the slice; when given it participates in transition detection.
// Onset wins when both transitions occur.
int label_window(std::span<const std::uint8_t> slice, const LabelScheme& scheme,
                 std::optional<std::uint8_t> entry_state = std::nullopt);

// One training instance: a lookback-length view into a feature matrix.
struct Example {
  std::shared_ptr<const Eigen::MatrixXd> source;
  int row = 0;     // first row of the window inside `source`
  int length = 0;  // lookback hours
  int label = 0;
  InterventionKind kind = InterventionKind::Vent;
  std::string stay_id;
  int start_hour = 0;

  auto features() const { return source->middleRows(row, length); }
};

// Windows start at 0, stride, 2*stride, ... while the whole
// lookback+gap+horizon span fits in the stay.
std::vector<Example> slide(std::shared_ptr<const Eigen::MatrixXd> matrix,
                           std::span<const std::uint8_t> track, const WindowConfig& config,
                           const LabelScheme& scheme, const std::string& stay_id);

std::size_t expected_window_count(int stay_hours, const WindowConfig& config);

struct CohortSplit {
  std::vector<std::size_t> train, validation, test;  // indices into the cohort
  // Largest |fraction ever receiving intervention in a split - cohort
  // fraction| over interventions and splits.
  double max_stratum_deviation = 0.0;
};

struct SplitRatios {
  double train = 0.7, validation = 0.1, test = 0.2;
};

// Patient-level split stratified on which interventions each stay ever
// received. Warns on stderr when the deviation exceeds 2 percentage points.
CohortSplit split_cohort(std::span<const PatientStay> stays, std::uint64_t seed,
                         SplitRatios ratios = {});

std::vector<double> class_proportions(std::span<const Example> examples, const LabelScheme& scheme);
std::vector<long> class_counts(std::span<const Example> examples, const LabelScheme& scheme);

// "vent | onset 0.005 | wean 0.017 | stay off 0.798 | stay on 0.180"
std::string format_proportions(const LabelScheme& scheme, std::span<const double> fractions);

// Example shards: header with schema hash and shape, then records of
// (label, start hour, stay id, lookback x V float32). Reading puts every
// window into one backing matrix.
void write_shard(const std::filesystem::path& path, std::uint64_t schema_hash, int width,
                 InterventionKind kind, std::span<const Example> examples,
                 std::uint64_t run_hash = 0);

// A set of windows sharing one feature schema.
struct ExampleSet {
  std::uint64_t schema_hash = 0;
  std::uint64_t run_hash = 0;  // config hash of the run that wrote it
  int width = 0;
  InterventionKind kind = InterventionKind::Vent;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
  std::vector<int> labels() const;
};

ExampleSet read_shard(const std::filesystem::path& path);

}  // namespace clinpred
