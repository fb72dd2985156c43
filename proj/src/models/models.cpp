#include "clinpred/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "clinpred/binary_io.hpp"
#include "clinpred/common.hpp"

namespace clinpred {

using nn::Matrix;
using nn::SeqBatch;

std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Lstm: return "lstm";
    case ModelKind::Cnn: return "cnn";
    case ModelKind::Lr: return "lr";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view s) {
  if (s == "lstm") return ModelKind::Lstm;
  if (s == "cnn") return ModelKind::Cnn;
  if (s == "lr") return ModelKind::Lr;
  throw ValidationError("unknown model kind '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  if (input_width < 1 || sequence_length < 1 || num_classes < 2)
    throw ValidationError("model input width, sequence length and class count must be positive");
  if (lstm_units < 1 || cnn_filters < 1 || cnn_hidden < 1 || cnn_pool < 1 || cnn_widths.empty())
    throw ValidationError("model layer widths must be positive");
  for (int w : cnn_widths)
    if (w < 1) throw ValidationError("convolution widths must be positive");
  if (!(lstm_keep > 0.0 && lstm_keep <= 1.0) || !(cnn_keep > 0.0 && cnn_keep <= 1.0))
    throw ValidationError("keep probabilities must be in (0, 1]");
  if (!(l2 >= 0.0)) throw ValidationError("L2 weight must be non-negative");
  if (kind == ModelKind::Cnn && sequence_length < cnn_pool)
    throw ValidationError("sequence shorter than the pooling size");
}

std::uint64_t ModelConfig::hash() const {
  Fnv1a h;
  h.str("clinpred-model-v1").i64(static_cast<int>(kind)).i64(input_width).i64(sequence_length)
      .i64(num_classes).i64(lstm_units).i64(cnn_filters).i64(cnn_pool).i64(cnn_hidden)
      .f64(lstm_keep).f64(cnn_keep).f64(l2).u64(seed).u64(schema_hash);
  for (int w : cnn_widths) h.i64(w);
  return h.digest();
}

Model::Model(ModelConfig config) : config_(std::move(config)) { config_.validate(); }

std::vector<const nn::Parameter*> Model::parameters() const {
  return {params_.begin(), params_.end()};
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void Model::zero_grad() {
  for (auto* p : params_) p->grad.setZero();
}

void Model::register_parameters(const std::vector<nn::Parameter*>& ps) {
  params_.insert(params_.end(), ps.begin(), ps.end());
}

namespace {

void check_input(const SeqBatch& x, const ModelConfig& c) {
  if (x.length() != c.sequence_length || x.width() != c.input_width || x.batch() < 1)
    throw SchemaError("input batch shape (" + std::to_string(x.length()) + " x " +
                      std::to_string(x.width()) + ") does not match model (" +
                      std::to_string(c.sequence_length) + " x " + std::to_string(c.input_width) +
                      ")");
}

// Uniform(+-1/sqrt(fan_in)) weights, zero biases.
void init_glorotless(nn::Parameter& w, int fan_in, std::mt19937_64& rng) {
  nn::init_uniform(w, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

}  // namespace

// ---------------------------------------------------------------------------

LstmModel::LstmModel(const ModelConfig& config)
    : Model(config),
      lower_("lstm0", config.input_width, config.lstm_units),
      upper_("lstm1", config.lstm_units, config.lstm_units),
      head_("head", config.lstm_units, config.num_classes) {
  std::mt19937_64 rng(config.seed);
  for (auto* layer : {&lower_, &upper_}) {
    const int fan_in = layer->units() + layer->input_width();
    for (auto* w : {&layer->w_f, &layer->w_i, &layer->w_c, &layer->w_o}) init_glorotless(*w, fan_in, rng);
    layer->b_f.value.setConstant(1.0);
    register_parameters(layer->parameters());
  }
  init_glorotless(head_.weight, config.lstm_units, rng);
  register_parameters(head_.parameters());
}

Matrix LstmModel::encode(const SeqBatch& x, const ForwardOptions& options) {
  check_input(x, config_);
  length_ = x.length();
  std::vector<Matrix> lower_out = lower_.forward(x.steps);
  masks_.clear();
  if (options.training && config_.lstm_keep < 1.0) {
    std::mt19937_64 rng(options.mask_seed);
    for (auto& h : lower_out) {
      masks_.push_back(nn::dropout_mask(h.rows(), h.cols(), config_.lstm_keep, rng));
      h = h.cwiseProduct(masks_.back());
    }
  }
  std::vector<Matrix> upper_out = upper_.forward(lower_out);
  return upper_out.back();
}

Matrix LstmModel::forward(const SeqBatch& x, const ForwardOptions& options) {
  return head_.forward(encode(x, options));
}

SeqBatch LstmModel::backward(const Matrix& grad_logits) {
  Matrix dh_top = head_.backward(grad_logits);
  std::vector<Matrix> grad_upper(static_cast<std::size_t>(length_),
                                 Matrix::Zero(dh_top.rows(), dh_top.cols()));
  grad_upper.back() = dh_top;
  std::vector<Matrix> grad_mid = upper_.backward(grad_upper);
  if (!masks_.empty())
    for (std::size_t t = 0; t < grad_mid.size(); ++t) grad_mid[t] = grad_mid[t].cwiseProduct(masks_[t]);
  return SeqBatch{lower_.backward(grad_mid)};
}

// ---------------------------------------------------------------------------

CnnModel::CnnModel(const ModelConfig& config)
    : Model(config),
      fc1_("fc1", 1, 1),
      fc2_("fc2", 1, 1) {
  convs_.reserve(config.cnn_widths.size());
  for (std::size_t b = 0; b < config.cnn_widths.size(); ++b) {
    convs_.emplace_back("conv" + std::to_string(config.cnn_widths[b]), config.input_width,
                        config.cnn_filters, config.cnn_widths[b]);
    pools_.emplace_back(config.cnn_pool);
  }
  fc1_ = nn::Dense("fc1", flattened_width(), config.cnn_hidden);
  fc2_ = nn::Dense("fc2", config.cnn_hidden, config.num_classes);

  std::mt19937_64 rng(config.seed);
  for (auto& conv : convs_) {
    init_glorotless(conv.weight, conv.width() * conv.in_channels(), rng);
    register_parameters(conv.parameters());
  }
  init_glorotless(fc1_.weight, flattened_width(), rng);
  init_glorotless(fc2_.weight, config.cnn_hidden, rng);
  register_parameters(fc1_.parameters());
  register_parameters(fc2_.parameters());
}

int CnnModel::flattened_width() const {
  return static_cast<int>(config_.cnn_widths.size()) * pooled_length() * config_.cnn_filters;
}

Matrix CnnModel::forward(const SeqBatch& x, const ForwardOptions& options) {
  check_input(x, config_);
  const Eigen::Index batch = x.batch();
  const int F = config_.cnn_filters;
  const int P = pooled_length();
  Matrix flat(batch, flattened_width());
  activations_.assign(convs_.size(), {});
  for (std::size_t b = 0; b < convs_.size(); ++b) {
    std::vector<Matrix> conv_out = convs_[b].forward(x.steps);
    for (auto& y : conv_out) y = nn::relu(y);
    activations_[b] = conv_out;
    std::vector<Matrix> pooled = pools_[b].forward(conv_out);
    for (int p = 0; p < P; ++p)
      flat.middleCols((static_cast<Eigen::Index>(b) * P + p) * F, F) = pooled[static_cast<std::size_t>(p)];
  }
  hidden_pre_ = fc1_.forward(flat);
  Matrix hidden = nn::relu(hidden_pre_);
  if (options.training && config_.cnn_keep < 1.0) {
    std::mt19937_64 rng(options.mask_seed);
    mask_ = nn::dropout_mask(hidden.rows(), hidden.cols(), config_.cnn_keep, rng);
    hidden = hidden.cwiseProduct(mask_);
  } else {
    mask_.resize(0, 0);
  }
  return fc2_.forward(hidden);
}

SeqBatch CnnModel::backward(const Matrix& grad_logits) {
  const int F = config_.cnn_filters;
  const int P = pooled_length();
  Matrix d_hidden = fc2_.backward(grad_logits);
  if (mask_.size() > 0) d_hidden = d_hidden.cwiseProduct(mask_);
  d_hidden = d_hidden.cwiseProduct((hidden_pre_.array() > 0.0).cast<double>().matrix());
  Matrix d_flat = fc1_.backward(d_hidden);

  SeqBatch grad_x;
  for (std::size_t b = 0; b < convs_.size(); ++b) {
    std::vector<Matrix> d_pooled(static_cast<std::size_t>(P));
    for (int p = 0; p < P; ++p)
      d_pooled[static_cast<std::size_t>(p)] =
          d_flat.middleCols((static_cast<Eigen::Index>(b) * P + p) * F, F);
    std::vector<Matrix> d_conv = pools_[b].backward(d_pooled);
    for (std::size_t t = 0; t < d_conv.size(); ++t)
      d_conv[t] = d_conv[t].cwiseProduct((activations_[b][t].array() > 0.0).cast<double>().matrix());
    std::vector<Matrix> dx = convs_[b].backward(d_conv);
    if (grad_x.steps.empty()) grad_x.steps = std::move(dx);
    else
      for (std::size_t t = 0; t < dx.size(); ++t) grad_x.steps[t] += dx[t];
  }
  return grad_x;
}

// ---------------------------------------------------------------------------

LrModel::LrModel(const ModelConfig& config)
    : Model(config),
      linear_("linear", config.sequence_length * config.input_width, config.num_classes) {
  std::mt19937_64 rng(config.seed);
  init_glorotless(linear_.weight, config.sequence_length * config.input_width, rng);
  register_parameters(linear_.parameters());
}

Matrix LrModel::forward(const SeqBatch& x, const ForwardOptions&) {
  check_input(x, config_);
  const int V = config_.input_width;
  Matrix flat(x.batch(), x.length() * V);
  for (int t = 0; t < x.length(); ++t)
    flat.middleCols(static_cast<Eigen::Index>(t) * V, V) = x.steps[static_cast<std::size_t>(t)];
  batch_ = x.batch();
  return linear_.forward(flat);
}

SeqBatch LrModel::backward(const Matrix& grad_logits) {
  const int V = config_.input_width;
  Matrix d_flat = linear_.backward(grad_logits);
  SeqBatch grad_x;
  for (int t = 0; t < config_.sequence_length; ++t)
    grad_x.steps.push_back(d_flat.middleCols(static_cast<Eigen::Index>(t) * V, V));
  return grad_x;
}

// ---------------------------------------------------------------------------

std::unique_ptr<Model> build_lstm(const ModelConfig& config) {
  if (config.kind != ModelKind::Lstm) throw ValidationError("build_lstm needs an LSTM config");
  return std::make_unique<LstmModel>(config);
}

std::unique_ptr<Model> build_cnn(const ModelConfig& config) {
  if (config.kind != ModelKind::Cnn) throw ValidationError("build_cnn needs a CNN config");
  return std::make_unique<CnnModel>(config);
}

std::unique_ptr<Model> build_lr(const ModelConfig& config) {
  if (config.kind != ModelKind::Lr) throw ValidationError("build_lr needs an LR config");
  return std::make_unique<LrModel>(config);
}

std::unique_ptr<Model> build_model(const ModelConfig& config) {
  switch (config.kind) {
    case ModelKind::Lstm: return build_lstm(config);
    case ModelKind::Cnn: return build_cnn(config);
    case ModelKind::Lr: return build_lr(config);
  }
  throw ValidationError("unknown model kind");
}

SeqBatch make_batch(std::span<const Example> examples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ValidationError("empty batch");
  const auto& first = examples[indices.front()];
  const int T = first.length;
  const auto V = first.source->cols();
  const auto B = static_cast<Eigen::Index>(indices.size());
  SeqBatch batch;
  batch.steps.assign(static_cast<std::size_t>(T), Matrix(B, V));
  for (Eigen::Index b = 0; b < B; ++b) {
    const Example& e = examples[indices[static_cast<std::size_t>(b)]];
    if (e.length != T || e.source->cols() != V) throw SchemaError("examples in a batch differ in shape");
    for (int t = 0; t < T; ++t) batch.steps[static_cast<std::size_t>(t)].row(b) = e.source->row(e.row + t);
  }
  return batch;
}

SeqBatch make_batch(std::span<const Example> examples) {
  std::vector<std::size_t> idx(examples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return make_batch(examples, idx);
}

Matrix predict_proba(Model& model, const SeqBatch& x) {
  return nn::softmax(model.forward(x, ForwardOptions{}));
}

void check_schema(const Model& model, const ExampleSet& set) {
  if (set.schema_hash != model.config().schema_hash)
    throw SchemaError("example schema " + hex64(set.schema_hash) + " does not match model schema " +
                      hex64(model.config().schema_hash));
  if (set.width != model.config().input_width) throw SchemaError("example width does not match model");
}

Matrix predict_proba(Model& model, const ExampleSet& set, std::size_t batch_size) {
  check_schema(model, set);
  Matrix out(static_cast<Eigen::Index>(set.size()), model.config().num_classes);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const std::size_t end = std::min(set.size(), start + batch_size);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        predict_proba(model, make_batch(set.examples, idx));
  }
  return out;
}

double loss_and_gradients(Model& model, const SeqBatch& x, std::span<const int> targets,
                          std::span<const double> class_weights, const ForwardOptions& options,
                          SeqBatch* input_grad) {
  model.zero_grad();
  Matrix probs = nn::softmax(model.forward(x, options));
  double loss = nn::weighted_cross_entropy(probs, targets, class_weights);
  SeqBatch gx = model.backward(nn::weighted_cross_entropy_grad(probs, targets, class_weights));
  if (input_grad) *input_grad = std::move(gx);
  return loss;
}

nn::GradCheckReport grad_check(Model& model, const SeqBatch& x, std::span<const int> targets,
                               std::span<const double> class_weights, const ForwardOptions& options,
                               double step, double floor) {
  auto loss = [&] {
    return nn::weighted_cross_entropy(nn::softmax(model.forward(x, options)), targets, class_weights);
  };
  auto grads = [&] { loss_and_gradients(model, x, targets, class_weights, options); };
  return nn::grad_check(model.parameters(), loss, grads, step, floor);
}

nn::GradCheckReport input_grad_check(Model& model, const SeqBatch& x, std::span<const int> targets,
                                     std::span<const double> class_weights,
                                     const ForwardOptions& options, double step, double floor) {
  // Wrap the input as parameters so the generic checker can perturb it.
  std::vector<nn::Parameter> inputs;
  for (int t = 0; t < x.length(); ++t) {
    inputs.emplace_back("input[" + std::to_string(t) + "]", x.batch(), x.width(), false);
    inputs.back().value = x.steps[static_cast<std::size_t>(t)];
  }
  std::vector<nn::Parameter*> ptrs;
  for (auto& p : inputs) ptrs.push_back(&p);
  auto current = [&] {
    SeqBatch b;
    for (auto& p : inputs) b.steps.push_back(p.value);
    return b;
  };
  auto loss = [&] {
    return nn::weighted_cross_entropy(nn::softmax(model.forward(current(), options)), targets,
                                      class_weights);
  };
  auto grads = [&] {
    SeqBatch gx;
    loss_and_gradients(model, current(), targets, class_weights, options, &gx);
    for (std::size_t t = 0; t < inputs.size(); ++t) inputs[t].grad = gx.steps[t];
  };
  return nn::grad_check(ptrs, loss, grads, step, floor);
}

namespace {
constexpr char kCheckpointMagic[5] = "CPCK";
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, std::uint64_t run_hash) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot write " + path.string());
  const auto& c = model.config();
  bin::put_magic(os, kCheckpointMagic, kCheckpointVersion);
  bin::put<std::int32_t>(os, static_cast<std::int32_t>(c.kind));
  bin::put<std::uint64_t>(os, c.schema_hash);
  bin::put<std::uint64_t>(os, c.hash());
  bin::put<std::uint64_t>(os, run_hash);
  bin::put<std::uint64_t>(os, c.seed);
  for (int v : {c.input_width, c.sequence_length, c.num_classes, c.lstm_units, c.cnn_filters,
                c.cnn_pool, c.cnn_hidden})
    bin::put<std::int32_t>(os, v);
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(c.cnn_widths.size()));
  for (int w : c.cnn_widths) bin::put<std::int32_t>(os, w);
  bin::put<double>(os, c.lstm_keep);
  bin::put<double>(os, c.cnn_keep);
  bin::put<double>(os, c.l2);
  auto params = model.parameters();
  nn::write_parameters(os, params);
}

std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path, std::uint64_t* run_hash) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read " + path.string());
  bin::expect_magic(is, kCheckpointMagic, kCheckpointVersion, path.string());
  ModelConfig c;
  c.kind = static_cast<ModelKind>(bin::get<std::int32_t>(is));
  c.schema_hash = bin::get<std::uint64_t>(is);
  const auto config_hash = bin::get<std::uint64_t>(is);
  const auto stored_run_hash = bin::get<std::uint64_t>(is);
  if (run_hash) *run_hash = stored_run_hash;
  c.seed = bin::get<std::uint64_t>(is);
  for (int* v : {&c.input_width, &c.sequence_length, &c.num_classes, &c.lstm_units, &c.cnn_filters,
                 &c.cnn_pool, &c.cnn_hidden})
    *v = bin::get<std::int32_t>(is);
  c.cnn_widths.resize(bin::get<std::uint32_t>(is));
  for (int& w : c.cnn_widths) w = bin::get<std::int32_t>(is);
  c.lstm_keep = bin::get<double>(is);
  c.cnn_keep = bin::get<double>(is);
  c.l2 = bin::get<double>(is);
  if (c.hash() != config_hash) throw SchemaError("checkpoint header hash mismatch in " + path.string());
  auto model = build_model(c);
  nn::read_parameters(is, model->parameters());
  return model;
}

}  // namespace clinpred
