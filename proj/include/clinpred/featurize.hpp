#pragma once

// Hourly feature matrices: measurement block (raw or physiological words),
// topic block, static block, intervention state and time of day.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "clinpred/core.hpp"
#include "clinpred/topics.hpp"

namespace clinpred {

inline constexpr int kWordBins = 9;  // z in [-4, 4]
inline constexpr int kMaxAbsZ = 4;
inline constexpr int kStaticWidth =
    1 + kNumGenders + kNumEthnicities + kNumIcuUnits + kNumAdmissionTypes;

struct VariableStats {
  double mean = 0.0;
  double std = 1.0;  // population
  double min = 0.0;
  double max = 1.0;
  long count = 0;
};

// Training-split statistics. Age range feeds the static block.
struct NormalizationStats {
  std::array<VariableStats, kNumVariables> vars{};
  double age_min = 0.0;
  double age_max = 1.0;

  std::uint64_t hash() const;
};

// Throws ValidationError naming the variable when it has fewer than two
// observations or zero variance.
NormalizationStats compute_stats(std::span<const PatientStay> train_stays);

enum class FeatureMode { Raw, Words };
std::string_view to_string(FeatureMode m);
FeatureMode parse_feature_mode(std::string_view s);

enum class FeatureGroup { Vital, Lab, Topic, Static, InterventionState, TimeOfDay };
std::string_view to_string(FeatureGroup g);

struct ColumnDescriptor {
  std::string name;
  FeatureGroup group;
  int variable = -1;  // measurement columns only
};

class FeatureSchema {
 public:
  FeatureSchema(FeatureMode mode, int n_topics);

  FeatureMode mode() const { return mode_; }
  int n_topics() const { return n_topics_; }
  int width() const { return static_cast<int>(columns_.size()); }
  const std::vector<ColumnDescriptor>& columns() const { return columns_; }
  const ColumnDescriptor& column(int i) const { return columns_.at(static_cast<std::size_t>(i)); }

  int measurement_width() const;
  int topic_offset() const { return measurement_width(); }
  int static_offset() const { return topic_offset() + n_topics_; }
  int intervention_column() const { return static_offset() + kStaticWidth; }
  int time_of_day_column() const { return intervention_column() + 1; }

  std::uint64_t hash() const;

 private:
  FeatureMode mode_;
  int n_topics_;
  std::vector<ColumnDescriptor> columns_;
};

struct FeatureMatrix {
  std::shared_ptr<const FeatureSchema> schema;
  std::string stay_id;
  Eigen::MatrixXd values;  // n_hours x V

  int n_hours() const { return static_cast<int>(values.rows()); }
};

// n_hours x 261 one-hot block; absent cells leave all nine columns zero.
Eigen::MatrixXd encode_words(const MeasurementGrid& grid, const NormalizationStats& stats);

// Rounded, clamped z-score bin for one value (half away from zero).
int word_bin(double value, const VariableStats& stats);

// n_hours x 29: forward fill, training mean before the first observation,
// then min-max scaling clamped to [0, 1].
Eigen::MatrixXd normalize_impute(const MeasurementGrid& grid, const NormalizationStats& stats);

struct TimedTopics {
  int hour = 0;
  DocTopicDist dist;
};

// Row t is the mean of all note distributions with hour <= t; zero before
// the first note.
Eigen::MatrixXd aggregate_topics(std::span<const TimedTopics> notes, int n_topics, int n_hours);
Eigen::MatrixXd aggregate_topics(std::span<const Note> notes, const TopicModel& model,
                                 int n_hours, int fold_in_iterations = 50,
                                 std::uint64_t seed = 0);

Eigen::RowVectorXd encode_statics(const StaticProfile& statics, const NormalizationStats& stats);

struct AssembleOptions {
  int fold_in_iterations = 50;
  std::uint64_t seed = 0;
};

FeatureMatrix assemble(const PatientStay& stay, std::shared_ptr<const FeatureSchema> schema,
                       const NormalizationStats& stats, const TopicModel& topics,
                       InterventionKind kind, const AssembleOptions& options = {});

// Collection of per-stay matrices for one intervention kind.
struct FeatureStore {
  std::shared_ptr<const FeatureSchema> schema;
  InterventionKind kind = InterventionKind::Vent;
  std::uint64_t stats_hash = 0;
  std::uint64_t run_hash = 0;
  std::vector<FeatureMatrix> matrices;
  std::vector<InterventionTrack> tracks;
};

void write_feature_csv(std::ostream& os, const FeatureMatrix& m);

// Binary store: magic, schema mode/topics/hash, stats and run hashes, kind, then per stay the id,
// hour count, track and row-major doubles.
void write_feature_store(const std::filesystem::path& path, const FeatureStore& store);
FeatureStore read_feature_store(const std::filesystem::path& path);

}  // namespace clinpred
