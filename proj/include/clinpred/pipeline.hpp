#pragma once

// Run configuration and the pipeline stages behind the command-line tool.
// Each stage reads its declared inputs from the work directory, writes its
// outputs there and stamps them with the run's config hash.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clinpred/featurize.hpp"
#include "clinpred/interpret.hpp"
#include "clinpred/models.hpp"
#include "clinpred/synth.hpp"
#include "clinpred/topics.hpp"
#include "clinpred/train_eval.hpp"
#include "clinpred/windowing.hpp"

namespace clinpred {

struct RunConfig {
  std::optional<std::uint64_t> seed;
  std::filesystem::path workdir = ".";
  std::filesystem::path cohort;  // empty: <workdir>/cohort.ndjson

  InterventionKind intervention = InterventionKind::Vent;
  ModelKind model = ModelKind::Lstm;
  FeatureMode mode = FeatureMode::Words;

  int patients = 200;
  int min_hours = 24;
  int max_hours = 168;
  int lead_time = 16;

  int topics = 50;
  int lda_iterations = 200;
  int min_doc_freq = 5;
  int fold_in = 50;

  WindowConfig window;

  int batch = 128;
  double learning_rate = 1e-3;
  double l2 = 1e-4;
  int patience = 5;
  int max_epochs = 50;

  int lstm_units = 512;
  int cnn_filters = 64;
  int cnn_hidden = 128;
  double lstm_keep = 0.8;
  double cnn_keep = 0.5;

  std::string target_class = "onset";
  int top_k = 10;
  int ascent_steps = 200;
  double ascent_step = 0.1;

  // Sets one key from its text form. Throws ValidationError on an unknown
  // key or a malformed value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  // Hash over every non-path key.
  std::uint64_t hash() const;
  std::uint64_t require_seed() const;
  void validate() const;

  std::filesystem::path cohort_path() const;
  std::filesystem::path manifest_path() const;
  std::filesystem::path path(const std::string& name) const { return workdir / name; }
  // "<mode>_<intervention>" and "<model>_<mode>_<intervention>".
  std::string data_tag() const;
  std::string model_tag() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
  bool is_path;
};

const std::vector<ConfigKey>& config_keys();

// Flat "key = value" lines; '#' starts a comment.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

// Stage building blocks, usable without touching the disk.
SynthConfig synth_config(const RunConfig& cfg);
LdaConfig lda_config(const RunConfig& cfg);
CohortSplit make_split(const std::vector<PatientStay>& stays, const RunConfig& cfg);
TopicModel fit_topics(const std::vector<PatientStay>& stays, const std::vector<std::size_t>& train,
                      const RunConfig& cfg);
FeatureStore featurize_cohort(const std::vector<PatientStay>& stays,
                              const std::vector<std::size_t>& train, const TopicModel& topics,
                              FeatureMode mode, InterventionKind kind, const RunConfig& cfg);

struct WindowedSplits {
  ExampleSet train, validation, test;
};

// split_of[i] is 0/1/2 (train/validation/test) for the i-th store matrix.
WindowedSplits window_store(const FeatureStore& store, const std::vector<int>& split_of,
                            const RunConfig& cfg);
std::vector<int> split_labels(const CohortSplit& split, std::size_t n);

ModelConfig model_config(const RunConfig& cfg, ModelKind kind, const FeatureSchema& schema);
TrainConfig train_config(const RunConfig& cfg, std::ostream* log);

// Subcommands. Each logs the config hash to `log`.
void run_synth(const RunConfig& cfg, std::ostream& log);
void run_fit_topics(const RunConfig& cfg, std::ostream& log);
void run_featurize(const RunConfig& cfg, std::ostream& log);
void run_window(const RunConfig& cfg, std::ostream& log);
void run_train(const RunConfig& cfg, std::ostream& log);
void run_evaluate(const RunConfig& cfg, std::ostream& log);
void run_occlude(const RunConfig& cfg, std::ostream& log);
void run_trajectories(const RunConfig& cfg, std::ostream& log);
void run_hallucinate(const RunConfig& cfg, std::ostream& log);
void run_report(const RunConfig& cfg, std::ostream& log);

const std::vector<std::string>& subcommands();
void run_subcommand(const std::string& name, const RunConfig& cfg, std::ostream& log);

}  // namespace clinpred
