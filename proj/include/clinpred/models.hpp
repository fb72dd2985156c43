#pragma once

// The three classifiers over lookback windows: a two-layer LSTM, a
// multi-granularity temporal CNN, and a logistic-regression baseline.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "clinpred/nn.hpp"
#include "clinpred/windowing.hpp"

namespace clinpred {

enum class ModelKind { Lstm, Cnn, Lr };
std::string_view to_string(ModelKind k);
ModelKind parse_model_kind(std::string_view s);

struct ModelConfig {
  ModelKind kind = ModelKind::Lstm;
  int input_width = 0;      // V
  int sequence_length = 6;  // lookback hours
  int num_classes = 4;      // N_C
  int lstm_units = 512;     // both stacked layers
  int cnn_filters = 64;
  std::vector<int> cnn_widths = {3, 4, 5};
  int cnn_pool = 3;
  int cnn_hidden = 128;
  double lstm_keep = 0.8;
  double cnn_keep = 0.5;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
  std::uint64_t schema_hash = 0;

  void validate() const;
  std::uint64_t hash() const;
};

struct ForwardOptions {
  bool training = false;
  std::uint64_t mask_seed = 0;  // dropout masks are a pure function of this
};

class Model {
 public:
  explicit Model(ModelConfig config);
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  std::span<nn::Parameter* const> parameters() { return params_; }
  std::vector<const nn::Parameter*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  // Pre-softmax scores, batch x N_C. Caches what backward needs.
  virtual nn::Matrix forward(const nn::SeqBatch& x, const ForwardOptions& options) = 0;
  // Accumulates parameter gradients for the last forward and returns the
  // gradient with respect to its input.
  virtual nn::SeqBatch backward(const nn::Matrix& grad_logits) = 0;

 protected:
  void register_parameters(const std::vector<nn::Parameter*>& ps);

  ModelConfig config_;

 private:
  std::vector<nn::Parameter*> params_;
};

class LstmModel final : public Model {
 public:
  explicit LstmModel(const ModelConfig& config);

  nn::Matrix forward(const nn::SeqBatch& x, const ForwardOptions& options) override;
  nn::SeqBatch backward(const nn::Matrix& grad_logits) override;

  // Top-layer hidden state at the last step.
  nn::Matrix encode(const nn::SeqBatch& x, const ForwardOptions& options);

  nn::LstmLayer& layer(int i) { return i == 0 ? lower_ : upper_; }
  nn::Dense& head() { return head_; }

 private:
  nn::LstmLayer lower_, upper_;
  nn::Dense head_;
  std::vector<nn::Matrix> masks_;
  int length_ = 0;
};

class CnnModel final : public Model {
 public:
  explicit CnnModel(const ModelConfig& config);

  nn::Matrix forward(const nn::SeqBatch& x, const ForwardOptions& options) override;
  nn::SeqBatch backward(const nn::Matrix& grad_logits) override;

  int pooled_length() const { return config_.sequence_length / config_.cnn_pool; }
  int flattened_width() const;
  nn::Conv1d& branch(int i) { return convs_[static_cast<std::size_t>(i)]; }
  nn::Dense& hidden() { return fc1_; }
  nn::Dense& output() { return fc2_; }
  // Pre-pooling branch outputs (after the rectifier) of the last forward.
  const std::vector<std::vector<nn::Matrix>>& branch_activations() const { return activations_; }

 private:
  std::vector<nn::Conv1d> convs_;
  std::vector<nn::MaxPool1d> pools_;
  nn::Dense fc1_, fc2_;
  std::vector<std::vector<nn::Matrix>> activations_;
  nn::Matrix hidden_pre_, mask_;
};

class LrModel final : public Model {
 public:
  explicit LrModel(const ModelConfig& config);

  nn::Matrix forward(const nn::SeqBatch& x, const ForwardOptions& options) override;
  nn::SeqBatch backward(const nn::Matrix& grad_logits) override;

  nn::Dense& linear() { return linear_; }

 private:
  nn::Dense linear_;
  int batch_ = 0;
};

std::unique_ptr<Model> build_lstm(const ModelConfig& config);
std::unique_ptr<Model> build_cnn(const ModelConfig& config);
std::unique_ptr<Model> build_lr(const ModelConfig& config);
std::unique_ptr<Model> build_model(const ModelConfig& config);

nn::SeqBatch make_batch(std::span<const Example> examples, std::span<const std::size_t> indices);
nn::SeqBatch make_batch(std::span<const Example> examples);

// Evaluation-mode probabilities, batch x N_C.
nn::Matrix predict_proba(Model& model, const nn::SeqBatch& x);
// Throws SchemaError when the set's schema does not match the model.
nn::Matrix predict_proba(Model& model, const ExampleSet& set, std::size_t batch_size = 512);
void check_schema(const Model& model, const ExampleSet& set);

// Weighted cross-entropy of the model on (x, targets), leaving gradients in
// the parameters. Returns the data loss (no L2 term).
double loss_and_gradients(Model& model, const nn::SeqBatch& x, std::span<const int> targets,
                          std::span<const double> class_weights, const ForwardOptions& options,
                          nn::SeqBatch* input_grad = nullptr);

// Central-difference check of every parameter gradient of the data loss.
nn::GradCheckReport grad_check(Model& model, const nn::SeqBatch& x, std::span<const int> targets,
                               std::span<const double> class_weights,
                               const ForwardOptions& options = {}, double step = 1e-5,
                               double floor = 1e-6);

// Same, for the gradient with respect to the input batch.
nn::GradCheckReport input_grad_check(Model& model, const nn::SeqBatch& x,
                                     std::span<const int> targets,
                                     std::span<const double> class_weights,
                                     const ForwardOptions& options = {}, double step = 1e-5,
                                     double floor = 1e-6);

// Versioned binary checkpoint: header (kind, shapes, hyperparameters, seed,
// schema hash, config hash, run hash) then parameters in declaration order.
void save_checkpoint(const std::filesystem::path& path, const Model& model, std::uint64_t run_hash = 0);
std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path,
                                       std::uint64_t* run_hash = nullptr);

}  // namespace clinpred
