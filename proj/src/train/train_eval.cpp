#include "clinpred/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>

#include <json.hpp>

#include "clinpred/common.hpp"

namespace clinpred {

std::vector<double> class_weights(std::span<const int> labels, const LabelScheme& scheme) {
  const int k = scheme.num_classes();
  std::vector<long> counts(static_cast<std::size_t>(k), 0);
  for (int y : labels) {
    if (y < 0 || y >= k) throw ValidationError("label " + std::to_string(y) + " out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  for (int c = 0; c < k; ++c)
    if (counts[static_cast<std::size_t>(c)] == 0)
      throw ValidationError("class '" + scheme.class_name(c) + "' has no training examples");
  std::vector<double> w(static_cast<std::size_t>(k));
  const double n = static_cast<double>(labels.size());
  for (int c = 0; c < k; ++c) w[static_cast<std::size_t>(c)] = n / (k * static_cast<double>(counts[static_cast<std::size_t>(c)]));
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / k;
  for (double& x : w) x /= mean;
  return w;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  if (patience < 1) throw ValidationError("patience must be at least 1");
  if (max_epochs < 1) throw ValidationError("max epochs must be at least 1");
  if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (!(l2 >= 0.0)) throw ValidationError("L2 weight must be non-negative");
}

namespace {

double l2_term(const Model& model, double l2) {
  if (l2 == 0.0) return 0.0;
  double s = 0.0;
  for (const auto* p : model.parameters())
    if (p->regularized) s += p->value.squaredNorm();
  return 0.5 * l2 * s;
}

std::vector<nn::Matrix> snapshot(const Model& model) {
  std::vector<nn::Matrix> out;
  for (const auto* p : model.parameters()) out.push_back(p->value);
  return out;
}

void restore(Model& model, const std::vector<nn::Matrix>& values) {
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace

TrainHistory train(Model& model, const ExampleSet& train_set, const ExampleSet& validation_set,
                   const TrainConfig& config) {
  config.validate();
  if (train_set.size() == 0 || validation_set.size() == 0)
    throw ValidationError("training and validation sets must be non-empty");
  check_schema(model, train_set);
  check_schema(model, validation_set);
  const LabelScheme scheme = label_scheme(train_set.kind);
  if (scheme.num_classes() != model.config().num_classes)
    throw SchemaError("model class count does not match the intervention");

  const std::vector<int> labels = train_set.labels();
  const std::vector<int> val_labels = validation_set.labels();
  const std::vector<double> weights = class_weights(labels, scheme);

  nn::AdamState adam;
  adam.config.learning_rate = config.learning_rate;
  adam.config.l2 = config.l2;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> targets;
  std::vector<std::size_t> batch_idx;

  TrainHistory history;
  history.best_val_macro_auc = -1.0;
  std::vector<nn::Matrix> best = snapshot(model);
  std::uint64_t step = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                       order.begin() + static_cast<std::ptrdiff_t>(end));
      targets.resize(batch_idx.size());
      for (std::size_t i = 0; i < batch_idx.size(); ++i) targets[i] = labels[batch_idx[i]];
      nn::SeqBatch x = make_batch(train_set.examples, batch_idx);
      ForwardOptions opts{true, derive_seed(config.seed ^ 0x5eedULL, ++step)};
      const double loss = loss_and_gradients(model, x, targets, weights, opts);
      if (!std::isfinite(loss))
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                           ", batch starting at " + std::to_string(start) + ", step " +
                           std::to_string(step));
      nn::adam_step(model.parameters(), adam);
      loss_sum += loss * static_cast<double>(batch_idx.size());
    }
    const double epoch_loss = loss_sum / static_cast<double>(order.size()) + l2_term(model, config.l2);
    if (!std::isfinite(epoch_loss))
      throw NumericError("non-finite loss after epoch " + std::to_string(epoch));

    EvalReport val = evaluate_probabilities(predict_proba(model, validation_set), val_labels, scheme, "");
    history.epochs.push_back({epoch, epoch_loss, val.macro});
    if (config.log) {
      char line[128];
      std::snprintf(line, sizeof line, "epoch %d loss %.6f val_macro_auc %.4f\n", epoch, epoch_loss,
                    val.macro);
      *config.log << line << std::flush;
    }
    if (val.macro > history.best_val_macro_auc) {
      history.best_val_macro_auc = val.macro;
      history.best_epoch = epoch;
      best = snapshot(model);
    } else if (epoch - history.best_epoch >= config.patience) {
      history.stopped_early = true;
      break;
    }
  }
  restore(model, best);
  return history;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
  for (double s : scores)
    if (std::isnan(s)) throw NumericError("NaN score passed to roc_auc");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  long long n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError("labels must be 0 or 1");
    n_pos += y;
  }
  const long long n = static_cast<long long>(labels.size());
  const long long n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ValidationError("AUC is undefined with a single label value");

  // Twice the positive rank sum with midranks, kept in integers.
  long long twice_rank_sum = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i + 1;
    long long pos_in_group = labels[idx[i]];
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) pos_in_group += labels[idx[j++]];
    const long long g = static_cast<long long>(j - i);
    twice_rank_sum += pos_in_group * (2 * static_cast<long long>(i) + g + 1);
    i = j;
  }
  const long long twice_u = twice_rank_sum - n_pos * (n_pos + 1);
  return static_cast<double>(twice_u) / static_cast<double>(2 * n_pos * n_neg);
}

double macro_auc(std::span<const double> per_class) {
  if (per_class.empty()) throw ValidationError("macro AUC of no classes");
  double s = 0.0;
  for (double a : per_class) s += a;
  return s / static_cast<double>(per_class.size());
}

std::string format_auc(double auc) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", auc);
  return buf;
}

EvalReport evaluate_probabilities(const nn::Matrix& probs, std::span<const int> labels,
                                  const LabelScheme& scheme, const std::string& model_name) {
  const int k = scheme.num_classes();
  if (probs.cols() != k || probs.rows() != static_cast<Eigen::Index>(labels.size()))
    throw SchemaError("probability matrix shape does not match labels");
  EvalReport r;
  r.intervention = std::string(to_string(scheme.kind));
  r.model = model_name;
  r.class_counts.assign(static_cast<std::size_t>(k), 0);
  for (int y : labels) ++r.class_counts.at(static_cast<std::size_t>(y));
  std::vector<double> present;
  std::vector<double> scores(labels.size());
  std::vector<int> binary(labels.size());
  for (int c = 0; c < k; ++c) {
    r.class_names.push_back(scheme.class_name(c));
    const long n_c = r.class_counts[static_cast<std::size_t>(c)];
    if (n_c == 0 || n_c == static_cast<long>(labels.size())) {
      r.class_auc.emplace_back();
      r.partial = true;
      continue;
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = probs(static_cast<Eigen::Index>(i), c);
      binary[i] = labels[i] == c ? 1 : 0;
    }
    const double auc = roc_auc(scores, binary);
    r.class_auc.emplace_back(auc);
    present.push_back(auc);
  }
  r.macro = present.empty() ? 0.5 : macro_auc(present);
  return r;
}

EvalReport evaluate(Model& model, const ExampleSet& test_set, const std::string& model_name) {
  if (test_set.size() == 0) throw ValidationError("empty test set");
  return evaluate_probabilities(predict_proba(model, test_set), test_set.labels(),
                                label_scheme(test_set.kind), model_name);
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["intervention"] = intervention;
  j["model"] = model;
  j["class_names"] = class_names;
  j["class_counts"] = class_counts;
  nlohmann::json aucs = nlohmann::json::array();
  for (const auto& a : class_auc) aucs.push_back(a ? nlohmann::json(*a) : nlohmann::json(nullptr));
  j["class_auc"] = aucs;
  j["macro"] = macro;
  j["partial"] = partial;
  return j.dump();
}

EvalReport EvalReport::from_json(const std::string& text) {
  EvalReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.intervention = j.at("intervention").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.class_names = j.at("class_names").get<std::vector<std::string>>();
    r.class_counts = j.at("class_counts").get<std::vector<long>>();
    for (const auto& a : j.at("class_auc"))
      r.class_auc.push_back(a.is_null() ? std::nullopt : std::optional<double>(a.get<double>()));
    r.macro = j.at("macro").get<double>();
    r.partial = j.at("partial").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad evaluation report: ") + e.what());
  }
  if (r.class_auc.size() != r.class_names.size() || r.class_counts.size() != r.class_names.size())
    throw SchemaError("evaluation report arrays differ in length");
  return r;
}

namespace {
std::string fixed(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}
}  // namespace

void write_metrics_csv(std::ostream& os, std::span<const EvalReport> reports) {
  os << "intervention,model,class,auc\n";
  for (const auto& r : reports) {
    for (std::size_t c = 0; c < r.class_names.size(); ++c)
      os << r.intervention << ',' << r.model << ',' << r.class_names[c] << ','
         << (r.class_auc[c] ? fixed(*r.class_auc[c], 6) : std::string("NA")) << '\n';
    os << r.intervention << ',' << r.model << ",macro," << fixed(r.macro, 6) << '\n';
  }
}

void write_history_csv(std::ostream& os, const TrainHistory& history) {
  os << "epoch,loss,val_macro_auc\n";
  for (const auto& e : history.epochs)
    os << e.epoch << ',' << fixed(e.loss, 8) << ',' << fixed(e.val_macro_auc, 6) << '\n';
}

}  // namespace clinpred
