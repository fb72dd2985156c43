#pragma once

// Numeric core: LSTM cell and layer, temporal convolution, max pooling,
// dense layers, softmax, weighted cross-entropy, dropout and Adam. Every
// layer has a hand-written backward pass. Batches are time-major: step t of
// a sequence batch is a (batch x width) matrix.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace clinpred::nn {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct Parameter {
  Parameter(std::string name, Eigen::Index rows, Eigen::Index cols, bool regularized);

  std::string name;
  Matrix value;
  Matrix grad;
  bool regularized;  // weights take the L2 penalty, biases do not
};

struct SeqBatch {
  std::vector<Matrix> steps;

  int length() const { return static_cast<int>(steps.size()); }
  int batch() const { return steps.empty() ? 0 : static_cast<int>(steps.front().rows()); }
  int width() const { return steps.empty() ? 0 : static_cast<int>(steps.front().cols()); }
};

Matrix sigmoid(const Matrix& z);
Matrix relu(const Matrix& z);

// Row-wise softmax with max subtraction.
Matrix softmax(const Matrix& logits);

inline constexpr double kLogClamp = 1e-12;

// -(1/N) sum_i w[y_i] log max(p[i, y_i], 1e-12).
double weighted_cross_entropy(const Matrix& probs, std::span<const int> targets,
                              std::span<const double> class_weights);

// Gradient of weighted_cross_entropy(softmax(z)) with respect to z:
// (1/N) w[y_i] (p_i - onehot(y_i)).
Matrix weighted_cross_entropy_grad(const Matrix& probs, std::span<const int> targets,
                                   std::span<const double> class_weights);

// Inverted dropout: each entry is 1/keep with probability keep, else 0.
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double keep, std::mt19937_64& rng);

void init_uniform(Parameter& p, double bound, std::mt19937_64& rng);

struct HiddenState {
  Matrix h;  // batch x units
  Matrix c;
};

struct CellCache {
  Matrix joined;  // [h_{t-1}, x_t]
  Matrix f, i, candidate, o;
  Matrix c_prev, c, tanh_c;
};

class LstmLayer {
 public:
  LstmLayer(const std::string& name, int input_width, int units);

  int units() const { return units_; }
  int input_width() const { return input_width_; }
  std::vector<Parameter*> parameters();

  // One step: gates from [h_{t-1}, x_t], c_t = f*c_{t-1} + i*c~, h_t = o*tanh(c_t).
  HiddenState cell(const Matrix& x, const HiddenState& prev, CellCache* cache = nullptr) const;

  // Runs all steps from a zero state and returns h_t for every step.
  std::vector<Matrix> forward(const std::vector<Matrix>& inputs);
  // grad_h[t] is dL/dh_t arriving from above. Returns dL/dx_t and
  // accumulates parameter gradients.
  std::vector<Matrix> backward(const std::vector<Matrix>& grad_h);

  Parameter w_f, w_i, w_c, w_o;  // units x (units + input_width)
  Parameter b_f, b_i, b_c, b_o;  // 1 x units

 private:
  int input_width_;
  int units_;
  std::vector<CellCache> caches_;
};

// Same-padded, stride-1 temporal convolution. Tap k of the kernel lives in
// rows [k*C, (k+1)*C) of `weight`; the left pad is (width-1)/2 so even
// widths put the extra zero on the right.
class Conv1d {
 public:
  Conv1d(const std::string& name, int in_channels, int filters, int width);

  int width() const { return width_; }
  int filters() const { return filters_; }
  int in_channels() const { return in_channels_; }
  int pad_left() const { return (width_ - 1) / 2; }
  std::vector<Parameter*> parameters() { return {&weight, &bias}; }

  std::vector<Matrix> forward(const std::vector<Matrix>& inputs);
  std::vector<Matrix> backward(const std::vector<Matrix>& grad_out);

  Parameter weight;  // (width * in_channels) x filters
  Parameter bias;    // 1 x filters

 private:
  int in_channels_, filters_, width_;
  std::vector<Matrix> inputs_;
};

// Non-overlapping max pooling over time; a trailing partial block is
// dropped. The first maximal index takes the gradient on ties.
class MaxPool1d {
 public:
  explicit MaxPool1d(int pool) : pool_(pool) {}

  int pool() const { return pool_; }
  std::vector<Matrix> forward(const std::vector<Matrix>& inputs);
  std::vector<Matrix> backward(const std::vector<Matrix>& grad_out);

 private:
  int pool_;
  int input_length_ = 0;
  std::vector<Eigen::MatrixXi> argmax_;
};

class Dense {
 public:
  Dense(const std::string& name, int in, int out);

  std::vector<Parameter*> parameters() { return {&weight, &bias}; }
  Matrix forward(const Matrix& x);
  Matrix backward(const Matrix& grad_out);

  Parameter weight;  // out x in
  Parameter bias;    // 1 x out

 private:
  Matrix input_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double l2 = 0.0;
};

struct AdamState {
  AdamConfig config;
  long step = 0;
  std::vector<Matrix> m, v;  // lazily shaped like the parameters
};

// Bias-corrected Adam on each parameter's grad, after adding l2 * value to
// the gradient of regularized parameters.
void adam_step(std::span<Parameter* const> params, AdamState& state);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  Eigen::Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

// Relative error used by the gradient checks: |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

// Central-difference check of the gradients that `compute_grads` leaves in
// each parameter's grad against `loss` evaluated at perturbed values.
GradCheckReport grad_check(std::span<Parameter* const> params, const std::function<double()>& loss,
                           const std::function<void()>& compute_grads, double step = 1e-5,
                           double floor = 1e-6);

void write_parameters(std::ostream& os, std::span<const Parameter* const> params);
void read_parameters(std::istream& is, std::span<Parameter* const> params);

}  // namespace clinpred::nn
