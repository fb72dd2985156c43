#include "clinpred/nn.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "clinpred/binary_io.hpp"
#include "clinpred/common.hpp"

namespace clinpred::nn {

Parameter::Parameter(std::string name_, Eigen::Index rows, Eigen::Index cols, bool regularized_)
    : name(std::move(name_)),
      value(Matrix::Zero(rows, cols)),
      grad(Matrix::Zero(rows, cols)),
      regularized(regularized_) {}

Matrix sigmoid(const Matrix& z) {
  return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

Matrix relu(const Matrix& z) { return z.cwiseMax(0.0); }

Matrix softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

namespace {

void check_targets(const Matrix& probs, std::span<const int> targets,
                   std::span<const double> class_weights) {
  if (static_cast<Eigen::Index>(targets.size()) != probs.rows())
    throw ValidationError("target count does not match prediction rows");
  if (static_cast<Eigen::Index>(class_weights.size()) != probs.cols())
    throw ValidationError("class weight count does not match class count");
  for (int t : targets)
    if (t < 0 || t >= probs.cols()) throw ValidationError("target class out of range");
}

}  // namespace

double weighted_cross_entropy(const Matrix& probs, std::span<const int> targets,
                              std::span<const double> class_weights) {
  check_targets(probs, targets, class_weights);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int y = targets[static_cast<std::size_t>(i)];
    sum -= class_weights[static_cast<std::size_t>(y)] * std::log(std::max(probs(i, y), kLogClamp));
  }
  return sum / static_cast<double>(probs.rows());
}

Matrix weighted_cross_entropy_grad(const Matrix& probs, std::span<const int> targets,
                                   std::span<const double> class_weights) {
  check_targets(probs, targets, class_weights);
  Matrix grad = probs;
  const double inv_n = 1.0 / static_cast<double>(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int y = targets[static_cast<std::size_t>(i)];
    grad(i, y) -= 1.0;
    grad.row(i) *= class_weights[static_cast<std::size_t>(y)] * inv_n;
  }
  return grad;
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double keep, std::mt19937_64& rng) {
  if (!(keep > 0.0) || keep > 1.0) throw ValidationError("dropout keep probability must be in (0, 1]");
  if (keep == 1.0) return Matrix::Ones(rows, cols);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Matrix mask(rows, cols);
  const double scale = 1.0 / keep;
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) mask(r, c) = unit(rng) < keep ? scale : 0.0;
  return mask;
}

void init_uniform(Parameter& p, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index c = 0; c < p.value.cols(); ++c)
    for (Eigen::Index r = 0; r < p.value.rows(); ++r) p.value(r, c) = dist(rng);
}

// ---------------------------------------------------------------------------
// LSTM

LstmLayer::LstmLayer(const std::string& name, int input_width, int units)
    : w_f(name + ".w_f", units, units + input_width, true),
      w_i(name + ".w_i", units, units + input_width, true),
      w_c(name + ".w_c", units, units + input_width, true),
      w_o(name + ".w_o", units, units + input_width, true),
      b_f(name + ".b_f", 1, units, false),
      b_i(name + ".b_i", 1, units, false),
      b_c(name + ".b_c", 1, units, false),
      b_o(name + ".b_o", 1, units, false),
      input_width_(input_width),
      units_(units) {
  if (units < 1 || input_width < 1) throw ValidationError("LSTM layer sizes must be positive");
}

std::vector<Parameter*> LstmLayer::parameters() {
  return {&w_f, &w_i, &w_c, &w_o, &b_f, &b_i, &b_c, &b_o};
}

HiddenState LstmLayer::cell(const Matrix& x, const HiddenState& prev, CellCache* cache) const {
  if (x.cols() != input_width_ || prev.h.cols() != units_ || prev.c.cols() != units_ ||
      prev.h.rows() != x.rows() || prev.c.rows() != x.rows())
    throw ValidationError("LSTM cell shape mismatch");
  Matrix joined(x.rows(), units_ + input_width_);
  joined << prev.h, x;

  auto gate = [&](const Parameter& w, const Parameter& b) -> Matrix {
    Matrix z = joined * w.value.transpose();
    z.rowwise() += b.value.row(0);
    return z;
  };
  Matrix f = sigmoid(gate(w_f, b_f));
  Matrix i = sigmoid(gate(w_i, b_i));
  Matrix candidate = gate(w_c, b_c).array().tanh().matrix();
  Matrix o = sigmoid(gate(w_o, b_o));

  HiddenState next;
  next.c = f.cwiseProduct(prev.c) + i.cwiseProduct(candidate);
  Matrix tanh_c = next.c.array().tanh().matrix();
  next.h = o.cwiseProduct(tanh_c);
  if (cache) {
    cache->joined = std::move(joined);
    cache->f = std::move(f);
    cache->i = std::move(i);
    cache->candidate = std::move(candidate);
    cache->o = std::move(o);
    cache->c_prev = prev.c;
    cache->c = next.c;
    cache->tanh_c = std::move(tanh_c);
  }
  return next;
}

std::vector<Matrix> LstmLayer::forward(const std::vector<Matrix>& inputs) {
  if (inputs.empty()) throw ValidationError("LSTM input sequence is empty");
  const Eigen::Index batch = inputs.front().rows();
  HiddenState state{Matrix::Zero(batch, units_), Matrix::Zero(batch, units_)};
  caches_.assign(inputs.size(), CellCache{});
  std::vector<Matrix> out;
  out.reserve(inputs.size());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    state = cell(inputs[t], state, &caches_[t]);
    out.push_back(state.h);
  }
  return out;
}

std::vector<Matrix> LstmLayer::backward(const std::vector<Matrix>& grad_h) {
  if (grad_h.size() != caches_.size()) throw ValidationError("LSTM backward without matching forward");
  const std::size_t T = caches_.size();
  const Eigen::Index batch = caches_.front().joined.rows();
  Matrix dh_next = Matrix::Zero(batch, units_);
  Matrix dc_next = Matrix::Zero(batch, units_);
  std::vector<Matrix> grad_x(T);
  for (std::size_t step = T; step-- > 0;) {
    const CellCache& k = caches_[step];
    Matrix dh = grad_h[step] + dh_next;
    Matrix d_o = dh.cwiseProduct(k.tanh_c);
    Matrix dc = dc_next + dh.cwiseProduct(k.o).cwiseProduct(
                              (1.0 - k.tanh_c.array().square()).matrix());
    Matrix dz_f = (dc.array() * k.c_prev.array() * k.f.array() * (1.0 - k.f.array())).matrix();
    Matrix dz_i = (dc.array() * k.candidate.array() * k.i.array() * (1.0 - k.i.array())).matrix();
    Matrix dz_c = (dc.array() * k.i.array() * (1.0 - k.candidate.array().square())).matrix();
    Matrix dz_o = (d_o.array() * k.o.array() * (1.0 - k.o.array())).matrix();
    dc_next = dc.cwiseProduct(k.f);

    w_f.grad.noalias() += dz_f.transpose() * k.joined;
    w_i.grad.noalias() += dz_i.transpose() * k.joined;
    w_c.grad.noalias() += dz_c.transpose() * k.joined;
    w_o.grad.noalias() += dz_o.transpose() * k.joined;
    b_f.grad += dz_f.colwise().sum();
    b_i.grad += dz_i.colwise().sum();
    b_c.grad += dz_c.colwise().sum();
    b_o.grad += dz_o.colwise().sum();

    Matrix djoined = dz_f * w_f.value;
    djoined.noalias() += dz_i * w_i.value;
    djoined.noalias() += dz_c * w_c.value;
    djoined.noalias() += dz_o * w_o.value;
    dh_next = djoined.leftCols(units_);
    grad_x[step] = djoined.rightCols(input_width_);
  }
  return grad_x;
}

// ---------------------------------------------------------------------------
// Convolution and pooling

Conv1d::Conv1d(const std::string& name, int in_channels, int filters, int width)
    : weight(name + ".weight", static_cast<Eigen::Index>(width) * in_channels, filters, true),
      bias(name + ".bias", 1, filters, false),
      in_channels_(in_channels),
      filters_(filters),
      width_(width) {
  if (in_channels < 1 || filters < 1 || width < 1)
    throw ValidationError("convolution sizes must be positive");
}

std::vector<Matrix> Conv1d::forward(const std::vector<Matrix>& inputs) {
  const int T = static_cast<int>(inputs.size());
  if (T == 0) throw ValidationError("convolution input is empty");
  for (const auto& x : inputs)
    if (x.cols() != in_channels_) throw ValidationError("convolution channel mismatch");
  inputs_ = inputs;
  const Eigen::Index batch = inputs.front().rows();
  std::vector<Matrix> out(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    Matrix y(batch, filters_);
    y.rowwise() = bias.value.row(0);
    for (int k = 0; k < width_; ++k) {
      const int s = t + k - pad_left();
      if (s < 0 || s >= T) continue;
      y.noalias() += inputs[static_cast<std::size_t>(s)] *
                     weight.value.middleRows(static_cast<Eigen::Index>(k) * in_channels_, in_channels_);
    }
    out[static_cast<std::size_t>(t)] = std::move(y);
  }
  return out;
}

std::vector<Matrix> Conv1d::backward(const std::vector<Matrix>& grad_out) {
  const int T = static_cast<int>(inputs_.size());
  if (static_cast<int>(grad_out.size()) != T) throw ValidationError("convolution backward mismatch");
  const Eigen::Index batch = inputs_.front().rows();
  std::vector<Matrix> grad_x(static_cast<std::size_t>(T), Matrix::Zero(batch, in_channels_));
  for (int t = 0; t < T; ++t) {
    const Matrix& dy = grad_out[static_cast<std::size_t>(t)];
    bias.grad += dy.colwise().sum();
    for (int k = 0; k < width_; ++k) {
      const int s = t + k - pad_left();
      if (s < 0 || s >= T) continue;
      auto tap = static_cast<Eigen::Index>(k) * in_channels_;
      weight.grad.middleRows(tap, in_channels_).noalias() +=
          inputs_[static_cast<std::size_t>(s)].transpose() * dy;
      grad_x[static_cast<std::size_t>(s)].noalias() +=
          dy * weight.value.middleRows(tap, in_channels_).transpose();
    }
  }
  return grad_x;
}

std::vector<Matrix> MaxPool1d::forward(const std::vector<Matrix>& inputs) {
  input_length_ = static_cast<int>(inputs.size());
  if (input_length_ < pool_) throw ValidationError("sequence shorter than pooling size");
  const int out_len = input_length_ / pool_;
  const Eigen::Index rows = inputs.front().rows(), cols = inputs.front().cols();
  std::vector<Matrix> out(static_cast<std::size_t>(out_len));
  argmax_.assign(static_cast<std::size_t>(out_len), Eigen::MatrixXi::Zero(rows, cols));
  for (int p = 0; p < out_len; ++p) {
    Matrix best = inputs[static_cast<std::size_t>(p * pool_)];
    auto& arg = argmax_[static_cast<std::size_t>(p)];
    for (int j = 1; j < pool_; ++j) {
      const Matrix& x = inputs[static_cast<std::size_t>(p * pool_ + j)];
      for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r)
          if (x(r, c) > best(r, c)) {
            best(r, c) = x(r, c);
            arg(r, c) = j;
          }
    }
    out[static_cast<std::size_t>(p)] = std::move(best);
  }
  return out;
}

std::vector<Matrix> MaxPool1d::backward(const std::vector<Matrix>& grad_out) {
  if (grad_out.size() != argmax_.size()) throw ValidationError("pooling backward mismatch");
  const Eigen::Index rows = grad_out.front().rows(), cols = grad_out.front().cols();
  std::vector<Matrix> grad_x(static_cast<std::size_t>(input_length_), Matrix::Zero(rows, cols));
  for (std::size_t p = 0; p < grad_out.size(); ++p)
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index r = 0; r < rows; ++r)
        grad_x[p * static_cast<std::size_t>(pool_) + static_cast<std::size_t>(argmax_[p](r, c))](r, c) +=
            grad_out[p](r, c);
  return grad_x;
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(const std::string& name, int in, int out)
    : weight(name + ".weight", out, in, true), bias(name + ".bias", 1, out, false) {
  if (in < 1 || out < 1) throw ValidationError("dense layer sizes must be positive");
}

Matrix Dense::forward(const Matrix& x) {
  if (x.cols() != weight.value.cols()) throw ValidationError("dense input width mismatch");
  input_ = x;
  Matrix y = x * weight.value.transpose();
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Dense::backward(const Matrix& grad_out) {
  weight.grad.noalias() += grad_out.transpose() * input_;
  bias.grad += grad_out.colwise().sum();
  return grad_out * weight.value;
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(std::span<Parameter* const> params, AdamState& state) {
  const auto& cfg = state.config;
  if (state.m.empty()) {
    for (const Parameter* p : params) {
      state.m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      state.v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.m.size() != params.size()) throw ValidationError("Adam state does not match parameters");
  ++state.step;
  const double correction1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t n = 0; n < params.size(); ++n) {
    Parameter& p = *params[n];
    Matrix g = p.grad;
    if (cfg.l2 > 0.0 && p.regularized) g += cfg.l2 * p.value;
    Matrix& m = state.m[n];
    Matrix& v = state.v[n];
    if (m.rows() != g.rows() || m.cols() != g.cols()) throw ValidationError("Adam shape mismatch");
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double m_hat = m(i) / correction1;
      const double denom = std::sqrt(v(i) / correction2) + cfg.epsilon;
      if (denom > 0.0) p.value(i) -= cfg.learning_rate * m_hat / denom;
    }
  }
}

// ---------------------------------------------------------------------------
// Gradient checking

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport grad_check(std::span<Parameter* const> params, const std::function<double()>& loss,
                           const std::function<void()>& compute_grads, double step, double floor) {
  compute_grads();
  std::vector<Matrix> analytic;
  for (const Parameter* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  for (std::size_t n = 0; n < params.size(); ++n) {
    Parameter& p = *params[n];
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double saved = p.value(i);
      p.value(i) = saved + step;
      const double up = loss();
      p.value(i) = saved - step;
      const double down = loss();
      p.value(i) = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(analytic[n](i), numeric, floor);
      ++report.checked;
      if (!std::isfinite(err)) throw NumericError("non-finite gradient in " + p.name);
      if (err > report.max_relative_error || report.worst_index < 0) {
        report.max_relative_error = err;
        report.worst_parameter = p.name;
        report.worst_index = i;
        report.worst_analytic = analytic[n](i);
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

void write_parameters(std::ostream& os, std::span<const Parameter* const> params) {
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    bin::put_string(os, p->name);
    bin::put<std::int64_t>(os, p->value.rows());
    bin::put<std::int64_t>(os, p->value.cols());
    os.write(reinterpret_cast<const char*>(p->value.data()),
             static_cast<std::streamsize>(p->value.size() * static_cast<Eigen::Index>(sizeof(double))));
  }
}

void read_parameters(std::istream& is, std::span<Parameter* const> params) {
  if (bin::get<std::uint32_t>(is) != params.size())
    throw SchemaError("checkpoint parameter count does not match model");
  for (Parameter* p : params) {
    auto name = bin::get_string(is);
    auto rows = bin::get<std::int64_t>(is);
    auto cols = bin::get<std::int64_t>(is);
    if (name != p->name || rows != p->value.rows() || cols != p->value.cols())
      throw SchemaError("checkpoint parameter '" + name + "' does not match model parameter '" +
                        p->name + "'");
    if (!is.read(reinterpret_cast<char*>(p->value.data()),
                 static_cast<std::streamsize>(p->value.size() * static_cast<Eigen::Index>(sizeof(double)))))
      throw ValidationError("truncated checkpoint");
  }
}

}  // namespace clinpred::nn
