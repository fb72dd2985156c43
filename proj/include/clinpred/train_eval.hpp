#pragma once

// Weighted-loss training with early stopping on validation macro AUC, and
// one-vs-rest AUC evaluation.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clinpred/models.hpp"
#include "clinpred/windowing.hpp"

namespace clinpred {

// w_k = N / (K n_k), rescaled to mean 1. Throws ValidationError naming the
// first absent class.
std::vector<double> class_weights(std::span<const int> labels, const LabelScheme& scheme);

struct TrainConfig {
  int batch_size = 128;
  double learning_rate = 1e-3;
  double l2 = 1e-4;
  int patience = 5;
  int max_epochs = 50;
  std::uint64_t seed = 0;
  std::ostream* log = nullptr;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;  // mean weighted data loss plus the L2 term
  double val_macro_auc = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_macro_auc = 0.0;
  bool stopped_early = false;
};

// Trains in place and leaves the best-validation parameters in the model.
// Throws NumericError when the loss becomes non-finite.
TrainHistory train(Model& model, const ExampleSet& train_set, const ExampleSet& validation_set,
                   const TrainConfig& config);

// Mann-Whitney AUC with midranks for ties. Throws ValidationError unless
// both label values occur.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

double macro_auc(std::span<const double> per_class);

// Two decimals, as in the published tables.
std::string format_auc(double auc);

struct EvalReport {
  std::string intervention;
  std::string model;
  std::vector<std::string> class_names;
  std::vector<long> class_counts;
  std::vector<std::optional<double>> class_auc;  // empty when the class is absent
  double macro = 0.0;                            // over the classes that have an AUC
  bool partial = false;

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

// One-vs-rest AUC per class from the given probabilities.
EvalReport evaluate_probabilities(const nn::Matrix& probs, std::span<const int> labels,
                                  const LabelScheme& scheme, const std::string& model_name);

EvalReport evaluate(Model& model, const ExampleSet& test_set, const std::string& model_name);

// intervention,model,class,auc with a trailing macro row.
void write_metrics_csv(std::ostream& os, std::span<const EvalReport> reports);
void write_history_csv(std::ostream& os, const TrainHistory& history);

}  // namespace clinpred
