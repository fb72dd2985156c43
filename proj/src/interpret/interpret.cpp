#include "clinpred/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "clinpred/common.hpp"
#include "clinpred/train_eval.hpp"

namespace clinpred {

std::vector<OcclusionUnit> occlusion_units(const FeatureSchema& schema) {
  std::vector<OcclusionUnit> units;
  const int measured = schema.measurement_width();
  if (schema.mode() == FeatureMode::Words) {
    for (int v = 0; v < kNumVariables; ++v) {
      OcclusionUnit u{std::string(variables()[static_cast<std::size_t>(v)].name),
                      schema.column(v * kWordBins).group, {}};
      for (int b = 0; b < kWordBins; ++b) u.columns.push_back(v * kWordBins + b);
      units.push_back(std::move(u));
    }
  } else {
    for (int c = 0; c < measured; ++c)
      units.push_back({schema.column(c).name, schema.column(c).group, {c}});
  }
  for (int c = measured; c < schema.width(); ++c)
    units.push_back({schema.column(c).name, schema.column(c).group, {c}});
  return units;
}

namespace {

constexpr std::size_t kEvalBatch = 512;

std::vector<double> per_class_auc(const nn::Matrix& probs, std::span<const int> labels,
                                  const LabelScheme& scheme) {
  EvalReport r = evaluate_probabilities(probs, labels, scheme, "");
  std::vector<double> out;
  for (const auto& a : r.class_auc) out.push_back(a.value_or(std::nan("")));
  return out;
}

// Probabilities with `unit` rewritten in every batch.
nn::Matrix occluded_proba(Model& model, const ExampleSet& set, const OcclusionUnit* unit,
                          std::mt19937_64* rng, OcclusionFill fill) {
  check_schema(model, set);
  nn::Matrix out(static_cast<Eigen::Index>(set.size()), model.config().num_classes);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += kEvalBatch) {
    const std::size_t end = std::min(set.size(), start + kEvalBatch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    nn::SeqBatch x = make_batch(set.examples, idx);
    if (unit && fill == OcclusionFill::Noise) {
      for (Eigen::Index b = 0; b < x.batch(); ++b)
        for (auto& step : x.steps)
          for (int c : unit->columns) step(b, c) = uniform(*rng);
    }
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        predict_proba(model, x);
  }
  return out;
}

void check_unit(const OcclusionUnit& unit, int width) {
  if (unit.columns.empty()) throw ValidationError("occlusion unit '" + unit.name + "' has no columns");
  for (int c : unit.columns)
    if (c < 0 || c >= width)
      throw ValidationError("feature index " + std::to_string(c) + " outside width " + std::to_string(width));
}

}  // namespace

std::vector<double> occlude(Model& model, const ExampleSet& set, const OcclusionUnit& unit,
                            std::size_t unit_index, std::uint64_t seed, OcclusionFill fill) {
  check_unit(unit, set.width);
  const LabelScheme scheme = label_scheme(set.kind);
  const std::vector<int> labels = set.labels();
  const auto base = per_class_auc(occluded_proba(model, set, nullptr, nullptr, fill), labels, scheme);
  std::mt19937_64 rng(derive_seed(seed, unit_index));
  const auto occl = per_class_auc(occluded_proba(model, set, &unit, &rng, fill), labels, scheme);
  std::vector<double> delta(base.size());
  for (std::size_t c = 0; c < base.size(); ++c) delta[c] = base[c] - occl[c];
  return delta;
}

int OcclusionReport::rank_of(const std::string& feature) const {
  for (std::size_t r = 0; r < ranking.size(); ++r)
    if (entries[ranking[r]].feature == feature) return static_cast<int>(r);
  return -1;
}

OcclusionReport rank_features(Model& model, const ExampleSet& set, const FeatureSchema& schema,
                              std::uint64_t seed, int ranked_class) {
  if (schema.width() != set.width) throw SchemaError("schema width does not match the example set");
  const LabelScheme scheme = label_scheme(set.kind);
  if (ranked_class < 0 || ranked_class >= scheme.num_classes())
    throw ValidationError("ranked class out of range");
  const std::vector<int> labels = set.labels();

  OcclusionReport report;
  report.ranked_class = ranked_class;
  for (int c = 0; c < scheme.num_classes(); ++c) report.class_names.push_back(scheme.class_name(c));
  report.baseline_auc =
      per_class_auc(occluded_proba(model, set, nullptr, nullptr, OcclusionFill::Noise), labels, scheme);

  const auto units = occlusion_units(schema);
  for (std::size_t u = 0; u < units.size(); ++u) {
    std::mt19937_64 rng(derive_seed(seed, u));
    const auto occl =
        per_class_auc(occluded_proba(model, set, &units[u], &rng, OcclusionFill::Noise), labels, scheme);
    OcclusionEntry e{units[u].name, units[u].group, {}};
    for (std::size_t c = 0; c < occl.size(); ++c) e.delta_auc.push_back(report.baseline_auc[c] - occl[c]);
    report.entries.push_back(std::move(e));
  }
  report.ranking.resize(report.entries.size());
  std::iota(report.ranking.begin(), report.ranking.end(), std::size_t{0});
  const auto key = [&](std::size_t i) {
    const double d = report.entries[i].delta_auc[static_cast<std::size_t>(ranked_class)];
    return std::isnan(d) ? -std::numeric_limits<double>::infinity() : d;
  };
  std::stable_sort(report.ranking.begin(), report.ranking.end(),
                   [&](std::size_t a, std::size_t b) { return key(a) > key(b); });
  return report;
}

namespace {

TrajectoryBundle make_bundle(const ExampleSet& set, const std::vector<std::size_t>& order,
                             const nn::Matrix& probs, int target_class, bool top, int k) {
  TrajectoryBundle b;
  b.top = top;
  b.k = std::min<int>(k, static_cast<int>(order.size()));
  const int T = set.examples.front().length;
  b.mean = Eigen::MatrixXd::Zero(T, set.width);
  b.std = Eigen::MatrixXd::Zero(T, set.width);
  for (int i = 0; i < b.k; ++i) {
    const std::size_t idx = top ? order[static_cast<std::size_t>(i)] : order[order.size() - 1 - static_cast<std::size_t>(i)];
    b.indices.push_back(idx);
    b.probabilities.push_back(probs(static_cast<Eigen::Index>(idx), target_class));
    b.mean += set.examples[idx].features();
  }
  b.mean /= b.k;
  for (std::size_t idx : b.indices) b.std.array() += (set.examples[idx].features() - b.mean).array().square();
  b.std = (b.std / b.k).cwiseSqrt();
  return b;
}

}  // namespace

ExtremeExamples extreme_examples(Model& model, const ExampleSet& set, int target_class, int k) {
  if (set.size() == 0) throw ValidationError("no examples to rank");
  if (k < 1) throw ValidationError("k must be at least 1");
  if (target_class < 0 || target_class >= model.config().num_classes)
    throw ValidationError("target class out of range");
  const nn::Matrix probs = predict_proba(model, set);
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return probs(static_cast<Eigen::Index>(a), target_class) > probs(static_cast<Eigen::Index>(b), target_class);
  });
  return {make_bundle(set, order, probs, target_class, true, k),
          make_bundle(set, order, probs, target_class, false, k)};
}

namespace {

struct LogitAndGrad {
  double logit;
  nn::Matrix grad;
};

LogitAndGrad logit_and_grad(Model& model, const nn::Matrix& input, int target_class, bool want_grad) {
  nn::SeqBatch x;
  for (Eigen::Index t = 0; t < input.rows(); ++t) x.steps.push_back(input.row(t));
  const nn::Matrix logits = model.forward(x, ForwardOptions{});
  LogitAndGrad out{logits(0, target_class), {}};
  if (!want_grad) return out;
  nn::Matrix seed = nn::Matrix::Zero(1, logits.cols());
  seed(0, target_class) = 1.0;
  model.zero_grad();
  nn::SeqBatch gx = model.backward(seed);
  out.grad.resize(input.rows(), input.cols());
  for (Eigen::Index t = 0; t < input.rows(); ++t) out.grad.row(t) = gx.steps[static_cast<std::size_t>(t)];
  return out;
}

}  // namespace

Hallucination activation_maximize(Model& model, int target_class, const AscentConfig& config) {
  const auto& mc = model.config();
  if (target_class < 0 || target_class >= mc.num_classes) throw ValidationError("target class out of range");
  if (config.steps < 0 || !(config.step_size > 0.0)) throw ValidationError("bad ascent settings");

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  Hallucination h;
  h.input.resize(mc.sequence_length, mc.input_width);
  for (Eigen::Index t = 0; t < h.input.rows(); ++t)
    for (Eigen::Index v = 0; v < h.input.cols(); ++v) h.input(t, v) = uniform(rng);

  LogitAndGrad cur = logit_and_grad(model, h.input, target_class, true);
  h.objective.push_back(cur.logit);
  for (int s = 0; s < config.steps; ++s) {
    if (!cur.grad.allFinite())
      throw NumericError("non-finite input gradient at ascent step " + std::to_string(s) +
                         ", objective " + std::to_string(cur.logit));
    double eta = config.step_size;
    bool accepted = false;
    for (int halving = 0; halving <= config.max_halvings; ++halving, eta *= 0.5) {
      nn::Matrix candidate = (h.input + eta * cur.grad).cwiseMax(0.0).cwiseMin(1.0);
      const double value = logit_and_grad(model, candidate, target_class, false).logit;
      if (std::isfinite(value) && value >= cur.logit) {
        h.input = std::move(candidate);
        accepted = true;
        break;
      }
    }
    if (accepted) cur = logit_and_grad(model, h.input, target_class, true);
    h.objective.push_back(cur.logit);
  }
  return h;
}

namespace {
std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}
}  // namespace

void write_occlusion_csv(std::ostream& os, const OcclusionReport& report) {
  os << "feature,group,class,delta_auc\n";
  for (std::size_t r : report.ranking) {
    const auto& e = report.entries[r];
    for (std::size_t c = 0; c < e.delta_auc.size(); ++c)
      os << e.feature << ',' << to_string(e.group) << ',' << report.class_names[c] << ','
         << (std::isnan(e.delta_auc[c]) ? std::string("NA") : num(e.delta_auc[c])) << '\n';
  }
}

void write_trajectory_csv(std::ostream& os, const FeatureSchema& schema, const ExtremeExamples& ex) {
  os << "feature,hour,mean,std,polarity\n";
  for (const TrajectoryBundle* b : {&ex.top, &ex.bottom})
    for (int v = 0; v < schema.width(); ++v)
      for (Eigen::Index t = 0; t < b->mean.rows(); ++t)
        os << schema.column(v).name << ',' << t << ',' << num(b->mean(t, v)) << ',' << num(b->std(t, v))
           << ',' << (b->top ? "top" : "bottom") << '\n';
}

void write_hallucination_csv(std::ostream& os, const FeatureSchema& schema, const Hallucination& h) {
  os << "feature,hour,value\n";
  for (int v = 0; v < schema.width(); ++v)
    for (Eigen::Index t = 0; t < h.input.rows(); ++t)
      os << schema.column(v).name << ',' << t << ',' << num(h.input(t, v)) << '\n';
}

void write_bar_svg(std::ostream& os, const std::string& title, const std::vector<std::string>& labels,
                   const std::vector<double>& values) {
  const int bar_h = 18, left = 220, width = 640, top = 40;
  const int height = top + bar_h * static_cast<int>(values.size()) + 30;
  double lo = 0.0, hi = 0.0;
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double range = hi - lo > 0 ? hi - lo : 1.0;
  const double plot_w = width - left - 20;
  const double zero_x = left + (0.0 - lo) / range * plot_w;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"10\" y=\"20\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double y = top + bar_h * static_cast<double>(i);
    const double x1 = left + (values[i] - lo) / range * plot_w;
    os << "<text x=\"" << left - 6 << "\" y=\"" << num(y + 12) << "\" text-anchor=\"end\">"
       << xml_escape(labels[i]) << "</text>\n";
    os << "<rect x=\"" << num(std::min(zero_x, x1)) << "\" y=\"" << num(y + 2) << "\" width=\""
       << num(std::abs(x1 - zero_x)) << "\" height=\"" << bar_h - 4 << "\" fill=\"#4878a8\"/>\n";
  }
  os << "<line x1=\"" << num(zero_x) << "\" y1=\"" << top << "\" x2=\"" << num(zero_x) << "\" y2=\""
     << height - 30 << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << left << "\" y=\"" << height - 10 << "\">" << num(lo) << "</text>\n";
  os << "<text x=\"" << width - 20 << "\" y=\"" << height - 10 << "\" text-anchor=\"end\">" << num(hi)
     << "</text>\n</svg>\n";
}

void write_line_svg(std::ostream& os, const std::string& title, const std::vector<PlotSeries>& series) {
  const int width = 640, height = 400, left = 60, right = 160, top = 40, bottom = 40;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool first = true;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const double e = s.err.empty() ? 0.0 : s.err[i];
      if (first) {
        x0 = x1 = s.x[i];
        y0 = s.y[i] - e;
        y1 = s.y[i] + e;
        first = false;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i] - e);
      y1 = std::max(y1, s.y[i] + e);
    }
  if (x1 - x0 <= 0) x1 = x0 + 1;
  if (y1 - y0 <= 0) y1 = y0 + 1;
  const double pw = width - left - right, ph = height - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };
  static const char* colors[] = {"#4878a8", "#d0633b", "#3f9b5f", "#8d5fb8", "#b8a23f", "#555555"};

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"10\" y=\"20\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<text x=\"" << left << "\" y=\"" << height - 20 << "\">" << num(x0) << "</text>\n";
  os << "<text x=\"" << left + pw << "\" y=\"" << height - 20 << "\" text-anchor=\"end\">" << num(x1) << "</text>\n";
  os << "<text x=\"" << left - 4 << "\" y=\"" << top + ph << "\" text-anchor=\"end\">" << num(y0) << "</text>\n";
  os << "<text x=\"" << left - 4 << "\" y=\"" << top + 10 << "\" text-anchor=\"end\">" << num(y1) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = colors[k % (sizeof colors / sizeof *colors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) os << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
    os << "\"/>\n";
    if (!s.err.empty())
      for (std::size_t i = 0; i < s.x.size(); ++i)
        os << "<line x1=\"" << num(px(s.x[i])) << "\" y1=\"" << num(py(s.y[i] - s.err[i])) << "\" x2=\""
           << num(px(s.x[i])) << "\" y2=\"" << num(py(s.y[i] + s.err[i])) << "\" stroke=\"" << color << "\"/>\n";
    os << "<text x=\"" << left + pw + 8 << "\" y=\"" << top + 14 * (k + 1) << "\" fill=\"" << color << "\">"
       << xml_escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace clinpred
