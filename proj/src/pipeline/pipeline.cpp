#include "clinpred/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>
#include <set>
#include <sstream>

#include "clinpred/cohort_io.hpp"
#include "clinpred/common.hpp"

namespace clinpred {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long x = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(x);
  } catch (const std::exception&) {
    throw ValidationError("'" + key + "' expects an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ValidationError("'" + key + "' expects a number, got '" + v + "'");
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct KeyOps {
  ConfigKey key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define INT_KEY(name, field, help)                                                        \
  KeyOps {                                                                                \
    {name, help, false}, [](RunConfig& c, const std::string& v) { c.field = to_int(name, v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }                        \
  }
#define DOUBLE_KEY(name, field, help)                                                        \
  KeyOps {                                                                                   \
    {name, help, false}, [](RunConfig& c, const std::string& v) { c.field = to_double(name, v); }, \
        [](const RunConfig& c) { return fmt(c.field); }                                      \
  }

const std::vector<KeyOps>& key_ops() {
  static const std::vector<KeyOps> ops = {
      {{"seed", "global seed (required)", false},
       [](RunConfig& c, const std::string& v) {
         try {
           std::size_t used = 0;
           if (v.empty() || v.front() < '0' || v.front() > '9') throw std::invalid_argument(v);
           c.seed = std::stoull(v, &used);
           if (used != v.size()) throw std::invalid_argument(v);
         } catch (const std::exception&) {
           throw ValidationError("'seed' expects a non-negative integer, got '" + v + "'");
         }
       },
       [](const RunConfig& c) { return c.seed ? std::to_string(*c.seed) : std::string(); }},
      {{"workdir", "directory for stage artifacts", true},
       [](RunConfig& c, const std::string& v) { c.workdir = v; },
       [](const RunConfig& c) { return c.workdir.string(); }},
      {{"cohort", "cohort NDJSON path (default <workdir>/cohort.ndjson)", true},
       [](RunConfig& c, const std::string& v) { c.cohort = v; },
       [](const RunConfig& c) { return c.cohort.string(); }},
      {{"out", "synth: cohort output path (same as --cohort)", true},
       [](RunConfig& c, const std::string& v) { c.cohort = v; },
       [](const RunConfig& c) { return c.cohort.string(); }},
      {{"intervention", "vent, nivent, vaso, colbol or crysbol", false},
       [](RunConfig& c, const std::string& v) { c.intervention = parse_intervention(v); },
       [](const RunConfig& c) { return std::string(to_string(c.intervention)); }},
      {{"model", "lstm, cnn or lr", false},
       [](RunConfig& c, const std::string& v) { c.model = parse_model_kind(v); },
       [](const RunConfig& c) { return std::string(to_string(c.model)); }},
      {{"mode", "raw or words", false},
       [](RunConfig& c, const std::string& v) { c.mode = parse_feature_mode(v); },
       [](const RunConfig& c) { return std::string(to_string(c.mode)); }},
      INT_KEY("patients", patients, "synthetic cohort size"),
      INT_KEY("min-hours", min_hours, "shortest synthetic stay"),
      INT_KEY("max-hours", max_hours, "longest synthetic stay"),
      INT_KEY("lead-time", lead_time, "hours of planted precursor before each onset"),
      INT_KEY("topics", topics, "LDA topic count"),
      INT_KEY("lda-iterations", lda_iterations, "Gibbs sweeps for LDA"),
      INT_KEY("min-doc-freq", min_doc_freq, "vocabulary document-frequency cutoff"),
      INT_KEY("fold-in", fold_in, "Gibbs sweeps when inferring note topics"),
      INT_KEY("lookback", window.lookback, "lookback hours"),
      INT_KEY("gap", window.gap, "gap hours"),
      INT_KEY("horizon", window.horizon, "prediction window hours"),
      INT_KEY("stride", window.stride, "window stride"),
      INT_KEY("batch", batch, "mini-batch size"),
      DOUBLE_KEY("lr", learning_rate, "Adam learning rate"),
      DOUBLE_KEY("l2", l2, "L2 weight on weights"),
      INT_KEY("patience", patience, "early-stopping patience in epochs"),
      INT_KEY("max-epochs", max_epochs, "epoch limit"),
      INT_KEY("lstm-units", lstm_units, "units in each LSTM layer"),
      INT_KEY("cnn-filters", cnn_filters, "filters per convolution branch"),
      INT_KEY("cnn-hidden", cnn_hidden, "CNN hidden layer width"),
      DOUBLE_KEY("lstm-keep", lstm_keep, "LSTM dropout keep probability"),
      DOUBLE_KEY("cnn-keep", cnn_keep, "CNN dropout keep probability"),
      {{"target-class", "class for trajectories and hallucinations", false},
       [](RunConfig& c, const std::string& v) { c.target_class = v; },
       [](const RunConfig& c) { return c.target_class; }},
      INT_KEY("top-k", top_k, "examples per trajectory bundle"),
      INT_KEY("ascent-steps", ascent_steps, "activation maximization steps"),
      DOUBLE_KEY("ascent-step", ascent_step, "activation maximization step size"),
  };
  return ops;
}

#undef INT_KEY
#undef DOUBLE_KEY

const KeyOps& find_key(const std::string& key) {
  for (const auto& k : key_ops())
    if (k.key.name == key) return k;
  throw ValidationError("unknown configuration key '" + key + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& k : key_ops()) out.push_back(k.key);
    return out;
  }();
  return keys;
}

void RunConfig::set(const std::string& key, const std::string& value) { find_key(key).set(*this, value); }
std::string RunConfig::get(const std::string& key) const { return find_key(key).get(*this); }

std::uint64_t RunConfig::hash() const {
  Fnv1a h;
  h.str("clinpred-run-v1");
  for (const auto& k : key_ops())
    if (!k.key.is_path) h.str(k.key.name).str(k.get(*this));
  return h.digest();
}

std::uint64_t RunConfig::require_seed() const {
  if (!seed) throw ValidationError("a seed is required (--seed or 'seed' in the config file)");
  return *seed;
}

void RunConfig::validate() const {
  require_seed();
  window.validate();
  if (topics < 1 || lda_iterations < 1 || fold_in < 1 || min_doc_freq < 1)
    throw ValidationError("topic settings must be positive");
  if (top_k < 1 || ascent_steps < 0 || !(ascent_step > 0.0)) throw ValidationError("bad interpretation settings");
}

std::filesystem::path RunConfig::cohort_path() const {
  return cohort.empty() ? workdir / "cohort.ndjson" : cohort;
}

std::filesystem::path RunConfig::manifest_path() const {
  auto p = cohort_path();
  return p.replace_extension(".manifest.json");
}

std::string RunConfig::data_tag() const {
  return std::string(to_string(mode)) + "_" + std::string(to_string(intervention));
}

std::string RunConfig::model_tag() const { return std::string(to_string(model)) + "_" + data_tag(); }

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot read config file " + path.string());
  std::map<std::string, std::string> out;
  int lineno = 0;
  for (std::string line; std::getline(is, line);) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    find_key(key);
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

// ---------------------------------------------------------------------------

SynthConfig synth_config(const RunConfig& cfg) {
  SynthConfig s = default_synth_config();
  s.patients = cfg.patients;
  s.min_hours = cfg.min_hours;
  s.max_hours = cfg.max_hours;
  s.lead_time = cfg.lead_time;
  s.seed = derive_seed(cfg.require_seed(), 0x5e17);
  return s;
}

LdaConfig lda_config(const RunConfig& cfg) {
  LdaConfig c;
  c.topics = cfg.topics;
  c.iterations = cfg.lda_iterations;
  c.min_doc_freq = cfg.min_doc_freq;
  c.seed = derive_seed(cfg.require_seed(), 0x1da);
  return c;
}

CohortSplit make_split(const std::vector<PatientStay>& stays, const RunConfig& cfg) {
  return split_cohort(stays, derive_seed(cfg.require_seed(), 0x5b17));
}

TopicModel fit_topics(const std::vector<PatientStay>& stays, const std::vector<std::size_t>& train,
                      const RunConfig& cfg) {
  std::vector<TokenCounts> corpus;
  for (std::size_t i : train)
    for (const auto& n : stays[i].notes) corpus.push_back(n.tokens);
  if (corpus.empty()) throw ValidationError("no notes in the training split");
  return fit_lda(corpus, lda_config(cfg));
}

FeatureStore featurize_cohort(const std::vector<PatientStay>& stays,
                              const std::vector<std::size_t>& train, const TopicModel& topics,
                              FeatureMode mode, InterventionKind kind, const RunConfig& cfg) {
  std::vector<PatientStay> train_stays;
  for (std::size_t i : train) train_stays.push_back(stays[i]);
  const NormalizationStats stats = compute_stats(train_stays);
  FeatureStore store;
  store.schema = std::make_shared<const FeatureSchema>(mode, topics.topics());
  store.kind = kind;
  store.stats_hash = stats.hash();
  AssembleOptions opts;
  opts.fold_in_iterations = cfg.fold_in;
  opts.seed = derive_seed(cfg.require_seed(), 0xf01d);
  for (const auto& stay : stays) {
    store.matrices.push_back(assemble(stay, store.schema, stats, topics, kind, opts));
    store.tracks.push_back(stay.track(kind));
  }
  return store;
}

std::vector<int> split_labels(const CohortSplit& split, std::size_t n) {
  std::vector<int> out(n, -1);
  for (std::size_t i : split.train) out[i] = 0;
  for (std::size_t i : split.validation) out[i] = 1;
  for (std::size_t i : split.test) out[i] = 2;
  return out;
}

WindowedSplits window_store(const FeatureStore& store, const std::vector<int>& split_of,
                            const RunConfig& cfg) {
  if (split_of.size() != store.matrices.size()) throw ValidationError("split does not cover the store");
  const LabelScheme scheme = label_scheme(store.kind);
  WindowedSplits out;
  for (ExampleSet* s : {&out.train, &out.validation, &out.test}) {
    s->schema_hash = store.schema->hash();
    s->width = store.schema->width();
    s->kind = store.kind;
  }
  for (std::size_t i = 0; i < store.matrices.size(); ++i) {
    const auto& m = store.matrices[i];
    if (m.n_hours() < cfg.window.span()) continue;
    auto source = std::make_shared<const Eigen::MatrixXd>(m.values);
    auto ex = slide(source, store.tracks[i], cfg.window, scheme, m.stay_id);
    ExampleSet* target = split_of[i] == 0 ? &out.train : split_of[i] == 1 ? &out.validation : &out.test;
    if (split_of[i] < 0) continue;
    target->examples.insert(target->examples.end(), std::make_move_iterator(ex.begin()),
                            std::make_move_iterator(ex.end()));
  }
  return out;
}

ModelConfig model_config(const RunConfig& cfg, ModelKind kind, const FeatureSchema& schema) {
  ModelConfig m;
  m.kind = kind;
  m.input_width = schema.width();
  m.sequence_length = cfg.window.lookback;
  m.num_classes = label_scheme(cfg.intervention).num_classes();
  m.lstm_units = cfg.lstm_units;
  m.cnn_filters = cfg.cnn_filters;
  m.cnn_hidden = cfg.cnn_hidden;
  m.lstm_keep = cfg.lstm_keep;
  m.cnn_keep = cfg.cnn_keep;
  m.l2 = cfg.l2;
  m.seed = derive_seed(cfg.require_seed(), 0x30de1 + static_cast<std::uint64_t>(kind));
  m.schema_hash = schema.hash();
  return m;
}

TrainConfig train_config(const RunConfig& cfg, std::ostream* log) {
  TrainConfig t;
  t.batch_size = cfg.batch;
  t.learning_rate = cfg.learning_rate;
  t.l2 = cfg.l2;
  t.patience = cfg.patience;
  t.max_epochs = cfg.max_epochs;
  t.seed = derive_seed(cfg.require_seed(), 0x7a1);
  t.log = log;
  return t;
}

// ---------------------------------------------------------------------------

namespace {

void begin_stage(const RunConfig& cfg, const std::string& stage, std::ostream& log) {
  cfg.validate();
  std::filesystem::create_directories(cfg.workdir);
  log << stage << ": config_hash=" << hex64(cfg.hash()) << '\n';
}

void require_file(const std::filesystem::path& p, const std::string& made_by) {
  if (!std::filesystem::exists(p))
    throw ValidationError("missing input " + p.string() + " (run '" + made_by + "' first)");
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw ValidationError("cannot write " + p.string());
  return os;
}

std::vector<PatientStay> load_cohort(const RunConfig& cfg) {
  require_file(cfg.cohort_path(), "synth");
  auto stays = read_cohort_file(cfg.cohort_path());
  for (const auto& s : stays) {
    auto v = validate_stay(s);
    if (!v.empty()) throw ValidationError("stay " + s.stay_id + ": " + v.front().field + " " + v.front().rule);
  }
  return stays;
}

const char* kSplitNames[] = {"train", "validation", "test"};

void write_split(const std::filesystem::path& p, const std::vector<PatientStay>& stays,
                 const CohortSplit& split, std::uint64_t run_hash) {
  auto os = open_out(p);
  os << "# run=" << hex64(run_hash) << '\n' << "stay_id,split\n";
  const auto labels = split_labels(split, stays.size());
  for (std::size_t i = 0; i < stays.size(); ++i)
    os << stays[i].stay_id << ',' << kSplitNames[labels[i]] << '\n';
}

std::map<std::string, int> read_split(const std::filesystem::path& p) {
  require_file(p, "fit-topics");
  std::ifstream is(p);
  std::map<std::string, int> out;
  for (std::string line; std::getline(is, line);) {
    if (line.empty() || line.front() == '#' || line == "stay_id,split") continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw SchemaError("malformed split file " + p.string());
    const std::string name = line.substr(comma + 1);
    int s = -1;
    for (int k = 0; k < 3; ++k)
      if (name == kSplitNames[k]) s = k;
    if (s < 0) throw SchemaError("unknown split '" + name + "' in " + p.string());
    out[line.substr(0, comma)] = s;
  }
  return out;
}

std::filesystem::path phi_path(const RunConfig& c) { return c.path("topics_phi.csv"); }
std::filesystem::path vocab_path(const RunConfig& c) { return c.path("topics_vocab.txt"); }
std::filesystem::path store_path(const RunConfig& c) { return c.path("features_" + c.data_tag() + ".bin"); }
std::filesystem::path shard_path(const RunConfig& c, int split) {
  return c.path("shard_" + c.data_tag() + "_" + kSplitNames[split] + ".bin");
}
std::filesystem::path checkpoint_path(const RunConfig& c) { return c.path("model_" + c.model_tag() + ".ckpt"); }

ExampleSet load_shard(const RunConfig& cfg, int split) {
  require_file(shard_path(cfg, split), "window");
  ExampleSet set = read_shard(shard_path(cfg, split));
  const FeatureSchema expected(cfg.mode, cfg.topics);
  if (set.schema_hash != expected.hash())
    throw SchemaError("shard " + shard_path(cfg, split).string() + " has schema " + hex64(set.schema_hash) +
                      ", expected " + hex64(expected.hash()) + " for mode " + std::string(to_string(cfg.mode)) +
                      " with " + std::to_string(cfg.topics) + " topics");
  if (set.kind != cfg.intervention) throw SchemaError("shard intervention does not match --intervention");
  return set;
}

std::unique_ptr<Model> load_model(const RunConfig& cfg) {
  require_file(checkpoint_path(cfg), "train");
  auto model = load_checkpoint(checkpoint_path(cfg));
  const FeatureSchema expected(cfg.mode, cfg.topics);
  if (model->config().schema_hash != expected.hash())
    throw SchemaError("checkpoint schema does not match mode/topics of this run");
  return model;
}

int class_id(const RunConfig& cfg) {
  const LabelScheme scheme = label_scheme(cfg.intervention);
  for (int c = 0; c < scheme.num_classes(); ++c)
    if (scheme.class_name(c) == cfg.target_class) return c;
  throw ValidationError("class '" + cfg.target_class + "' does not exist for " +
                        std::string(to_string(cfg.intervention)));
}

std::string stamp(const RunConfig& cfg) { return "# run=" + hex64(cfg.hash()) + "\n"; }
std::string svg_stamp(const RunConfig& cfg) { return "<!-- run=" + hex64(cfg.hash()) + " -->\n"; }

std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::vector<std::vector<std::string>> rows;
  bool header = true;
  for (std::string line; std::getline(is, line);) {
    if (line.empty() || line.front() == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

// Bar chart of the eight features whose occlusion hurts the ranked class most.
void occlusion_figure(std::ostream& os, const std::string& title,
                      const std::vector<std::pair<std::string, double>>& ranked) {
  std::vector<std::string> labels;
  std::vector<double> values;
  for (std::size_t i = 0; i < std::min<std::size_t>(8, ranked.size()); ++i) {
    labels.push_back(ranked[i].first);
    values.push_back(ranked[i].second);
  }
  write_bar_svg(os, title, labels, values);
}

// Line chart of the four features whose top and bottom means differ most.
void trajectory_figure(std::ostream& os, const std::string& title,
                       const std::vector<std::vector<std::string>>& rows) {
  std::map<std::string, std::map<std::string, PlotSeries>> by_feature;  // feature -> polarity
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (r.size() < 5) continue;
    auto& s = by_feature[r[0]][r[4]];
    if (s.x.empty() && r[4] == "top") order.push_back(r[0]);
    s.name = r[0] + " (" + r[4] + ")";
    s.x.push_back(std::stod(r[1]));
    s.y.push_back(std::stod(r[2]));
    s.err.push_back(std::stod(r[3]));
  }
  std::vector<std::pair<double, std::string>> spread;
  for (const auto& f : order) {
    const auto& top = by_feature[f]["top"];
    const auto& bot = by_feature[f]["bottom"];
    double d = 0.0;
    for (std::size_t i = 0; i < std::min(top.y.size(), bot.y.size()); ++i) d += std::abs(top.y[i] - bot.y[i]);
    spread.emplace_back(-d, f);
  }
  std::stable_sort(spread.begin(), spread.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<PlotSeries> series;
  for (std::size_t i = 0; i < std::min<std::size_t>(4, spread.size()); ++i) {
    series.push_back(by_feature[spread[i].second]["top"]);
    series.push_back(by_feature[spread[i].second]["bottom"]);
  }
  write_line_svg(os, title, series);
}

// Line chart of the four synthesized features farthest from the midpoint.
void hallucination_figure(std::ostream& os, const std::string& title,
                          const std::vector<std::vector<std::string>>& rows) {
  std::map<std::string, PlotSeries> by_feature;
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (r.size() < 3) continue;
    auto& s = by_feature[r[0]];
    if (s.x.empty()) order.push_back(r[0]);
    s.name = r[0];
    s.x.push_back(std::stod(r[1]));
    s.y.push_back(std::stod(r[2]));
  }
  std::vector<std::pair<double, std::string>> score;
  for (const auto& f : order) {
    double d = 0.0;
    for (double y : by_feature[f].y) d += std::abs(y - 0.5);
    score.emplace_back(-d, f);
  }
  std::stable_sort(score.begin(), score.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<PlotSeries> series;
  for (std::size_t i = 0; i < std::min<std::size_t>(4, score.size()); ++i) series.push_back(by_feature[score[i].second]);
  write_line_svg(os, title, series);
}

}  // namespace

void run_synth(const RunConfig& cfg, std::ostream& log) {
  begin_stage(cfg, "synth", log);
  const SynthConfig sc = synth_config(cfg);
  SynthCohort cohort = generate(sc);
  if (!cfg.cohort_path().parent_path().empty()) std::filesystem::create_directories(cfg.cohort_path().parent_path());
  write_cohort_file(cfg.cohort_path(), cohort.stays, cfg.hash());
  write_manifest_file(cfg.manifest_path(), cohort.manifest, cfg.hash());
  log << "synth: wrote " << cohort.stays.size() << " stays to " << cfg.cohort_path().string() << " and "
      << cfg.manifest_path().string() << '\n';
}

void run_fit_topics(const RunConfig& cfg, std::ostream& log) {
  begin_stage(cfg, "fit-topics", log);
  const auto stays = load_cohort(cfg);
  const CohortSplit split = make_split(stays, cfg);
  write_split(cfg.path("split.csv"), stays, split, cfg.hash());
  const TopicModel model = fit_topics(stays, split.train, cfg);
  save_topic_model(model, phi_path(cfg), vocab_path(cfg), cfg.hash());
  log << "fit-topics: " << model.topics() << " topics over " << model.vocab.size() << " terms; split "
      << split.train.size() << "/" << split.validation.size() << "/" << split.test.size() << '\n';
}

void run_featurize(const RunConfig& cfg, std::ostream& log) {
  begin_stage(cfg, "featurize", log);
  const auto stays = load_cohort(cfg);
  const auto split = read_split(cfg.path("split.csv"));
  require_file(phi_path(cfg), "fit-topics");
  const TopicModel topics = load_topic_model(phi_path(cfg), vocab_path(cfg));
  if (topics.topics() != cfg.topics)
    throw SchemaError("topic model has " + std::to_string(topics.topics()) + " topics, config says " +
                      std::to_string(cfg.topics));
  std::vector<std::size_t> train;
  for (std::size_t i = 0; i < stays.size(); ++i) {
    auto it = split.find(stays[i].stay_id);
    if (it == split.end()) throw SchemaError("stay " + stays[i].stay_id + " missing from split file");
    if (it->second == 0) train.push_back(i);
  }
  FeatureStore store = featurize_cohort(stays, train, topics, cfg.mode, cfg.intervention, cfg);
  store.run_hash = cfg.hash();
  write_feature_store(store_path(cfg), store);
  log << "featurize: " << store.matrices.size() << " stays, width " << store.schema->width() << " -> "
      << store_path(cfg).string() << '\n';
}

void run_window(const RunConfig& cfg, std::ostream& log) {
  begin_stage(cfg, "window", log);
  require_file(store_path(cfg), "featurize");
  const FeatureStore store = read_feature_store(store_path(cfg));
  const FeatureSchema expected(cfg.mode, cfg.topics);
  if (store.schema->hash() != expected.hash())
    throw SchemaError("feature store schema does not match mode/topics of this run");
  if (store.kind != cfg.intervention) throw SchemaError("feature store intervention does not match");
  const auto split = read_split(cfg.path("split.csv"));
  std::vector<int> split_of;
  for (const auto& m : store.matrices) {
    auto it = split.find(m.stay_id);
    if (it == split.end()) throw SchemaError("stay " + m.stay_id + " missing from split file");
    split_of.push_back(it->second);
  }
  const WindowedSplits w = window_store(store, split_of, cfg);
  const LabelScheme scheme = label_scheme(cfg.intervention);
  auto os = open_out(cfg.path("windows_" + cfg.data_tag() + ".csv"));
  os << stamp(cfg) << "split,class,count,fraction\n";
  int k = 0;
  for (const ExampleSet* s : {&w.train, &w.validation, &w.test}) {
    write_shard(shard_path(cfg, k), s->schema_hash, s->width, s->kind, s->examples, cfg.hash());
    const auto counts = class_counts(s->examples, scheme);
    const auto props = class_proportions(s->examples, scheme);
    for (int c = 0; c < scheme.num_classes(); ++c) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", props[static_cast<std::size_t>(c)]);
      os << kSplitNames[k] << ',' << scheme.class_name(c) << ',' << counts[static_cast<std::size_t>(c)] << ','
         << buf << '\n';
    }
    log << "window: " << kSplitNames[k] << " " << s->size() << " examples, "
        << format_proportions(scheme, props) << '\n';
    ++k;
  }
}

void run_train(const RunConfig& cfg, std::ostream& log) {
  begin_stage(cfg, "train", log);
  const ExampleSet train_set = load_shard(cfg, 0);
  const ExampleSet val_set = load_shard(cfg, 1);
  const FeatureSchema schema(cfg.mode, cfg.topics);
  auto model = build_model(model_config(cfg, cfg.model, schema));
  log << "train: " << to_string(cfg.model) << " with " << model->parameter_count() << " parameters on "
      << train_set.size() << " examples\n";
  const TrainHistory history = train(*model, train_set, val_set, train_config(cfg, &log));
  save_checkpoint(checkpoint_path(cfg), *model, cfg.hash());
  auto os = open_out(cfg.path("history_" + cfg.model_tag() + ".csv"));
  os << stamp(cfg);
  write_history_csv(os, history);
  log << "train: best epoch " << history.best_epoch << " val macro AUC " << format_auc(history.best_val_macro_auc)
      << " -> " << checkpoint_path(cfg).string() << '\n';
}

void run_evaluate(const RunConfig& cfg, std::ostream& log) {
  begin_stage(cfg, "evaluate", log);
  auto model = load_model(cfg);
  const ExampleSet test = load_shard(cfg, 2);
  const EvalReport report =
      evaluate(*model, test, std::string(to_string(cfg.model)) + "_" + std::string(to_string(cfg.mode)));
  {
    auto os = open_out(cfg.path("metrics_" + cfg.model_tag() + ".csv"));
    os << stamp(cfg);
    write_metrics_csv(os, std::span<const EvalReport>(&report, 1));
  }
  {
    auto os = open_out(cfg.path("eval_" + cfg.model_tag() + ".json"));
    os << report.to_json() << '\n';
  }
  for (std::size_t c = 0; c < report.class_names.size(); ++c)
    log << "evaluate: " << report.class_names[c] << " AUC "
        << (report.class_auc[c] ? format_auc(*report.class_auc[c]) : std::string("n/a")) << '\n';
  log << "evaluate: macro AUC " << format_auc(report.macro) << (report.partial ? " (partial)" : "") << '\n';
}

void run_occlude(const RunConfig& cfg, std::ostream& log) {
  begin_stage(cfg, "occlude", log);
  auto model = load_model(cfg);
  const ExampleSet test = load_shard(cfg, 2);
  const FeatureSchema schema(cfg.mode, cfg.topics);
  const OcclusionReport report =
      rank_features(*model, test, schema, derive_seed(cfg.require_seed(), 0x0cc1), class_id(cfg));
  {
    auto os = open_out(cfg.path("occlusion_" + cfg.model_tag() + ".csv"));
    os << stamp(cfg);
    write_occlusion_csv(os, report);
  }
  std::vector<std::pair<std::string, double>> ranked;
  for (std::size_t r : report.ranking)
    ranked.emplace_back(report.entries[r].feature,
                        report.entries[r].delta_auc[static_cast<std::size_t>(report.ranked_class)]);
  auto os = open_out(cfg.path("occlusion_" + cfg.model_tag() + ".svg"));
  os << svg_stamp(cfg);
  occlusion_figure(os, "AUC drop when occluded: " + cfg.model_tag() + " " + cfg.target_class, ranked);
  for (std::size_t i = 0; i < std::min<std::size_t>(8, ranked.size()); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", ranked[i].second);
    log << "occlude: " << i + 1 << ". " << ranked[i].first << " " << buf << '\n';
  }
}

void run_trajectories(const RunConfig& cfg, std::ostream& log) {
  begin_stage(cfg, "trajectories", log);
  auto model = load_model(cfg);
  const ExampleSet test = load_shard(cfg, 2);
  const FeatureSchema schema(cfg.mode, cfg.topics);
  const ExtremeExamples ex = extreme_examples(*model, test, class_id(cfg), cfg.top_k);
  const std::string tag = cfg.model_tag() + "_" + cfg.target_class;
  std::stringstream csv;
  write_trajectory_csv(csv, schema, ex);
  {
    auto os = open_out(cfg.path("trajectories_" + tag + ".csv"));
    os << stamp(cfg) << csv.str();
  }
  auto os = open_out(cfg.path("trajectories_" + tag + ".svg"));
  os << svg_stamp(cfg);
  std::stringstream reread(csv.str());
  std::vector<std::vector<std::string>> rows;
  {
    std::string line;
    std::getline(reread, line);
    while (std::getline(reread, line)) {
      std::vector<std::string> cells;
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
      rows.push_back(std::move(cells));
    }
  }
  trajectory_figure(os, "Most and least likely " + cfg.target_class + ": " + cfg.model_tag(), rows);
  log << "trajectories: top " << ex.top.k << " p in [" << ex.top.probabilities.back() << ", "
      << ex.top.probabilities.front() << "], bottom " << ex.bottom.k << '\n';
}

void run_hallucinate(const RunConfig& cfg, std::ostream& log) {
  begin_stage(cfg, "hallucinate", log);
  auto model = load_model(cfg);
  const FeatureSchema schema(cfg.mode, cfg.topics);
  AscentConfig ac;
  ac.steps = cfg.ascent_steps;
  ac.step_size = cfg.ascent_step;
  ac.seed = derive_seed(cfg.require_seed(), 0xa11c);
  const Hallucination h = activation_maximize(*model, class_id(cfg), ac);
  const std::string tag = cfg.model_tag() + "_" + cfg.target_class;
  std::stringstream csv;
  write_hallucination_csv(csv, schema, h);
  {
    auto os = open_out(cfg.path("hallucination_" + tag + ".csv"));
    os << stamp(cfg) << csv.str();
  }
  {
    auto os = open_out(cfg.path("hallucination_trace_" + tag + ".csv"));
    os << stamp(cfg) << "step,logit\n";
    for (std::size_t i = 0; i < h.objective.size(); ++i) os << i << ',' << fmt(h.objective[i]) << '\n';
  }
  std::vector<std::vector<std::string>> rows;
  {
    std::stringstream reread(csv.str());
    std::string line;
    std::getline(reread, line);
    while (std::getline(reread, line)) {
      std::vector<std::string> cells;
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
      rows.push_back(std::move(cells));
    }
  }
  auto os = open_out(cfg.path("hallucination_" + tag + ".svg"));
  os << svg_stamp(cfg);
  hallucination_figure(os, "Input maximizing " + cfg.target_class + ": " + cfg.model_tag(), rows);
  log << "hallucinate: logit " << h.objective.front() << " -> " << h.objective.back() << '\n';
}

void run_report(const RunConfig& cfg, std::ostream& log) {
  begin_stage(cfg, "report", log);
  std::vector<std::filesystem::path> metrics, occlusions, trajectories, hallucinations;
  for (const auto& entry : std::filesystem::directory_iterator(cfg.workdir)) {
    const std::string name = entry.path().filename().string();
    if (entry.path().extension() != ".csv") continue;
    if (name.rfind("metrics_", 0) == 0) metrics.push_back(entry.path());
    else if (name.rfind("occlusion_", 0) == 0) occlusions.push_back(entry.path());
    else if (name.rfind("trajectories_", 0) == 0) trajectories.push_back(entry.path());
    else if (name.rfind("hallucination_", 0) == 0 && name.rfind("hallucination_trace_", 0) != 0)
      hallucinations.push_back(entry.path());
  }
  for (auto* v : {&metrics, &occlusions, &trajectories, &hallucinations}) std::sort(v->begin(), v->end());
  if (metrics.empty()) throw ValidationError("no metrics_*.csv in " + cfg.workdir.string() + " (run 'evaluate' first)");

  // One row per (intervention, class), one column per model.
  std::vector<std::string> models;
  std::vector<std::pair<std::string, std::string>> rows;
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::string>> cells;
  for (const auto& p : metrics)
    for (const auto& r : read_csv_rows(p)) {
      if (r.size() < 4) throw SchemaError("malformed metrics file " + p.string());
      if (std::find(models.begin(), models.end(), r[1]) == models.end()) models.push_back(r[1]);
      const auto key = std::make_pair(r[0], r[2]);
      if (std::find(rows.begin(), rows.end(), key) == rows.end()) rows.push_back(key);
      cells[key][r[1]] = r[3] == "NA" ? "NA" : format_auc(std::stod(r[3]));
    }
  {
    auto os = open_out(cfg.path("report_table.csv"));
    os << stamp(cfg) << "intervention,class";
    for (const auto& m : models) os << ',' << m;
    os << '\n';
    for (const auto& key : rows) {
      os << key.first << ',' << key.second;
      for (const auto& m : models) {
        auto it = cells[key].find(m);
        os << ',' << (it == cells[key].end() ? "" : it->second);
      }
      os << '\n';
    }
  }
  auto md = open_out(cfg.path("report.md"));
  md << "<!-- run=" << hex64(cfg.hash()) << " -->\n# Intervention prediction results\n\n";
  md << "| intervention | class |";
  for (const auto& m : models) md << ' ' << m << " |";
  md << "\n|---|---|";
  for (std::size_t i = 0; i < models.size(); ++i) md << "---|";
  md << '\n';
  for (const auto& key : rows) {
    md << "| " << key.first << " | " << key.second << " |";
    for (const auto& m : models) {
      auto it = cells[key].find(m);
      md << ' ' << (it == cells[key].end() ? "" : it->second) << " |";
    }
    md << '\n';
  }

  auto stem_after = [](const std::filesystem::path& p, const std::string& prefix) {
    return p.stem().string().substr(prefix.size());
  };
  if (!occlusions.empty() || !trajectories.empty() || !hallucinations.empty()) md << "\n## Figures\n\n";
  for (const auto& p : occlusions) {
    const std::string tag = stem_after(p, "occlusion_");
    std::vector<std::pair<std::string, double>> ranked;
    std::string ranked_class;
    for (const auto& r : read_csv_rows(p)) {
      if (r.size() < 4) throw SchemaError("malformed occlusion file " + p.string());
      if (ranked_class.empty()) ranked_class = r[2];
      if (r[2] == ranked_class && r[3] != "NA") ranked.emplace_back(r[0], std::stod(r[3]));
    }
    auto os = open_out(cfg.path("fig_occlusion_" + tag + ".svg"));
    os << svg_stamp(cfg);
    occlusion_figure(os, "Top features by AUC drop (" + ranked_class + "): " + tag, ranked);
    md << "- fig_occlusion_" << tag << ".svg\n";
  }
  for (const auto& p : trajectories) {
    const std::string tag = stem_after(p, "trajectories_");
    auto os = open_out(cfg.path("fig_trajectories_" + tag + ".svg"));
    os << svg_stamp(cfg);
    trajectory_figure(os, "Top/bottom trajectories: " + tag, read_csv_rows(p));
    md << "- fig_trajectories_" << tag << ".svg\n";
  }
  for (const auto& p : hallucinations) {
    const std::string tag = stem_after(p, "hallucination_");
    auto os = open_out(cfg.path("fig_hallucination_" + tag + ".svg"));
    os << svg_stamp(cfg);
    hallucination_figure(os, "Hallucinated input: " + tag, read_csv_rows(p));
    md << "- fig_hallucination_" << tag << ".svg\n";
  }
  log << "report: " << rows.size() << " rows x " << models.size() << " models -> "
      << cfg.path("report.md").string() << '\n';
}

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = {"synth",        "fit-topics",  "featurize", "window",
                                                 "train",        "evaluate",    "occlude",   "trajectories",
                                                 "hallucinate",  "report"};
  return names;
}

void run_subcommand(const std::string& name, const RunConfig& cfg, std::ostream& log) {
  using Fn = void (*)(const RunConfig&, std::ostream&);
  static const std::map<std::string, Fn> table = {
      {"synth", run_synth},       {"fit-topics", run_fit_topics}, {"featurize", run_featurize},
      {"window", run_window},     {"train", run_train},           {"evaluate", run_evaluate},
      {"occlude", run_occlude},   {"trajectories", run_trajectories},
      {"hallucinate", run_hallucinate}, {"report", run_report}};
  auto it = table.find(name);
  if (it == table.end()) throw ValidationError("unknown subcommand '" + name + "'");
  it->second(cfg, log);
}

}  // namespace clinpred
