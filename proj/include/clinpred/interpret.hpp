#pragma once

// Feature occlusion, top/bottom activating trajectories and activation
// maximization, plus CSV and SVG emitters for their results.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "clinpred/featurize.hpp"
#include "clinpred/models.hpp"
#include "clinpred/windowing.hpp"

namespace clinpred {

// A set of columns occluded together. In word mode a variable's nine bins
// form one unit; every other column is its own unit.
struct OcclusionUnit {
  std::string name;
  FeatureGroup group;
  std::vector<int> columns;
};

std::vector<OcclusionUnit> occlusion_units(const FeatureSchema& schema);

enum class OcclusionFill {
  Noise,     // fresh uniform [0, 1) per example, hour and column
  Identity,  // the original values; a no-op control
};

// Per-class AUC(original) - AUC(occluded). Noise comes from a generator
// seeded by (seed, unit_index).
std::vector<double> occlude(Model& model, const ExampleSet& set, const OcclusionUnit& unit,
                            std::size_t unit_index, std::uint64_t seed,
                            OcclusionFill fill = OcclusionFill::Noise);

struct OcclusionEntry {
  std::string feature;
  FeatureGroup group;
  std::vector<double> delta_auc;  // per class
};

struct OcclusionReport {
  std::vector<std::string> class_names;
  std::vector<double> baseline_auc;
  int ranked_class = 0;
  std::vector<OcclusionEntry> entries;  // in schema order
  std::vector<std::size_t> ranking;     // entries by delta of ranked_class, descending

  // Rank (0-based) of a feature, or -1.
  int rank_of(const std::string& feature) const;
};

OcclusionReport rank_features(Model& model, const ExampleSet& set, const FeatureSchema& schema,
                              std::uint64_t seed, int ranked_class = kOnset);

struct TrajectoryBundle {
  bool top = true;
  int k = 0;
  std::vector<std::size_t> indices;  // into the example set, by probability
  std::vector<double> probabilities;
  Eigen::MatrixXd mean;  // lookback x V
  Eigen::MatrixXd std;   // population
};

struct ExtremeExamples {
  TrajectoryBundle top, bottom;
};

ExtremeExamples extreme_examples(Model& model, const ExampleSet& set, int target_class, int k = 10);

struct Hallucination {
  Eigen::MatrixXd input;          // lookback x V, inside [0, 1]
  std::vector<double> objective;  // logit before the first step and after each step
};

struct AscentConfig {
  int steps = 200;
  double step_size = 0.1;
  int max_halvings = 30;
  std::uint64_t seed = 0;
};

// Gradient ascent on the target class logit from uniform random input,
// clamping to [0, 1] and halving the step until the objective does not
// drop. Throws NumericError on a non-finite gradient.
Hallucination activation_maximize(Model& model, int target_class, const AscentConfig& config);

void write_occlusion_csv(std::ostream& os, const OcclusionReport& report);
void write_trajectory_csv(std::ostream& os, const FeatureSchema& schema, const ExtremeExamples& ex);
void write_hallucination_csv(std::ostream& os, const FeatureSchema& schema, const Hallucination& h);

struct PlotSeries {
  std::string name;
  std::vector<double> x, y, err;  // err may be empty
};

// Horizontal bars, one per label.
void write_bar_svg(std::ostream& os, const std::string& title, const std::vector<std::string>& labels,
                   const std::vector<double>& values);
// Line plots sharing axes, with optional symmetric error bars.
void write_line_svg(std::ostream& os, const std::string& title, const std::vector<PlotSeries>& series);

}  // namespace clinpred
