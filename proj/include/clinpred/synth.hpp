#pragma once

// Synthetic ICU cohorts with planted, documented precursors of each
// intervention.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clinpred/core.hpp"

namespace clinpred {

struct VariableProfile {
  double mean = 0.0;
  double std = 1.0;        // stationary std of the autoregressive part
  double circadian = 0.0;  // sinusoid amplitude in units of std
  double missing = 0.1;    // per-hour probability of no measurement
};

const std::array<VariableProfile, kNumVariables>& default_variable_profiles();

// How a precursor is planted in the `lead_time` hours before each onset.
enum class DriverShape {
  // Two vitals jump together by +-effect std with a random common sign.
  // Equally frequent decoy spans move them in opposite directions, so no
  // additive function of the inputs separates the two.
  CoupledPair,
  OneSided,    // the driver moves by effect std (sign of effect)
  TopicShift,  // notes gain a dedicated topic with weight `effect`
};
std::string_view to_string(DriverShape s);

struct InterventionRule {
  InterventionKind kind = InterventionKind::Vent;
  DriverShape shape = DriverShape::OneSided;
  std::vector<std::string> drivers;  // variable names, or the topic name
  double effect = 3.0;
  double onset_hazard = 0.01;  // per eligible hour
  double severity_threshold = 0.0;
  int min_duration = 6;   // duration kinds only
  int max_duration = 24;
  double decoy_hazard = 0.0;  // CoupledPair only
};

struct SynthTopic {
  std::string name;
  std::vector<std::string> words;
};

struct SynthConfig {
  int patients = 200;
  int min_hours = 24;
  int max_hours = 168;
  int lead_time = 16;
  double ar_coefficient = 0.8;
  double measurement_noise = 0.1;  // in units of std
  double repeat_probability = 0.3; // second measurement in the same hour
  std::array<VariableProfile, kNumVariables> variables = default_variable_profiles();
  std::vector<InterventionRule> rules;
  std::vector<SynthTopic> background_topics;
  SynthTopic acuity_topic;
  double note_rate = 0.15;  // notes per hour
  double tokens_per_note = 40.0;
  double acuity_weight = 1.5;
  std::uint64_t seed = 0;

  void validate() const;
};

SynthConfig default_synth_config();

struct DriverManifest {
  InterventionKind kind;
  DriverShape shape;
  std::vector<std::string> drivers;
  int lead_time = 0;
  double effect = 0.0;
  std::vector<std::string> topic_words;  // TopicShift only
};

struct SignalManifest {
  std::uint64_t seed = 0;
  int patients = 0;
  std::vector<DriverManifest> interventions;
  std::vector<std::string> noise_only;  // variables that drive nothing

  const DriverManifest& driver(InterventionKind kind) const;
  std::string to_json(std::uint64_t run_hash = 0) const;
  static SignalManifest from_json(const std::string& text);
};

struct SynthCohort {
  std::vector<PatientStay> stays;
  SignalManifest manifest;
};

SynthCohort generate(const SynthConfig& config);

// One stay; `plant` false gives the same draws without any precursor.
PatientStay generate_stay(const SynthConfig& config, int index, bool plant = true);

SignalManifest make_manifest(const SynthConfig& config);

struct AuditReport {
  long onsets_checked = 0;
  long cells_checked = 0;
  std::vector<std::string> problems;

  bool ok() const { return problems.empty(); }
};

// Regenerates each stay without planting and checks that every vital
// driver moved by exactly the manifested amount in the lead hours of every
// onset found in the tracks, and nowhere else apart from decoy spans. Notes
// outside lead hours must be unchanged.
AuditReport audit(const SynthConfig& config, const std::vector<PatientStay>& stays);

void write_manifest_file(const std::filesystem::path& path, const SignalManifest& manifest,
                         std::uint64_t run_hash = 0);
SignalManifest read_manifest_file(const std::filesystem::path& path);

}  // namespace clinpred
