#include "clinpred/featurize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "clinpred/binary_io.hpp"
#include "clinpred/common.hpp"

namespace clinpred {

std::uint64_t NormalizationStats::hash() const {
  Fnv1a h;
  for (const auto& v : vars) h.f64(v.mean).f64(v.std).f64(v.min).f64(v.max).i64(v.count);
  return h.f64(age_min).f64(age_max).digest();
}

NormalizationStats compute_stats(std::span<const PatientStay> train_stays) {
  NormalizationStats stats;
  std::array<double, kNumVariables> sum{};
  for (auto& v : stats.vars) {
    v.min = std::numeric_limits<double>::infinity();
    v.max = -std::numeric_limits<double>::infinity();
  }
  for (const auto& stay : train_stays)
    for (int h = 0; h < stay.hours(); ++h)
      for (int v = 0; v < kNumVariables; ++v)
        if (const auto& cell = stay.grid.at(h, v)) {
          auto& s = stats.vars[static_cast<std::size_t>(v)];
          sum[static_cast<std::size_t>(v)] += *cell;
          s.min = std::min(s.min, *cell);
          s.max = std::max(s.max, *cell);
          ++s.count;
        }
  for (int v = 0; v < kNumVariables; ++v) {
    auto& s = stats.vars[static_cast<std::size_t>(v)];
    if (s.count < 2)
      throw ValidationError("degenerate variable '" + std::string(variables()[v].name) +
                            "': fewer than 2 observations in training split");
    s.mean = sum[static_cast<std::size_t>(v)] / static_cast<double>(s.count);
  }
  std::array<double, kNumVariables> sq{};
  for (const auto& stay : train_stays)
    for (int h = 0; h < stay.hours(); ++h)
      for (int v = 0; v < kNumVariables; ++v)
        if (const auto& cell = stay.grid.at(h, v)) {
          double d = *cell - stats.vars[static_cast<std::size_t>(v)].mean;
          sq[static_cast<std::size_t>(v)] += d * d;
        }
  for (int v = 0; v < kNumVariables; ++v) {
    auto& s = stats.vars[static_cast<std::size_t>(v)];
    s.std = std::sqrt(sq[static_cast<std::size_t>(v)] / static_cast<double>(s.count));
    if (!(s.std > 0.0) || !(s.max > s.min))
      throw ValidationError("degenerate variable '" + std::string(variables()[v].name) +
                            "': zero variance in training split");
  }
  if (!train_stays.empty()) {
    stats.age_min = stats.age_max = train_stays.front().statics.age;
    for (const auto& stay : train_stays) {
      stats.age_min = std::min(stats.age_min, stay.statics.age);
      stats.age_max = std::max(stats.age_max, stay.statics.age);
    }
  }
  return stats;
}

std::string_view to_string(FeatureMode m) { return m == FeatureMode::Raw ? "raw" : "words"; }

FeatureMode parse_feature_mode(std::string_view s) {
  if (s == "raw") return FeatureMode::Raw;
  if (s == "words") return FeatureMode::Words;
  throw ValidationError("unknown feature mode '" + std::string(s) + "'");
}

std::string_view to_string(FeatureGroup g) {
  switch (g) {
    case FeatureGroup::Vital: return "vital";
    case FeatureGroup::Lab: return "lab";
    case FeatureGroup::Topic: return "topic";
    case FeatureGroup::Static: return "static";
    case FeatureGroup::InterventionState: return "intervention";
    case FeatureGroup::TimeOfDay: return "time";
  }
  return "?";
}

namespace {

std::string word_column_name(std::string_view variable, int z) {
  std::string name(variable);
  name += '_';
  if (z > 0) name += '+';
  name += std::to_string(z);
  return name;
}

FeatureGroup group_of(int variable) {
  return variables()[static_cast<std::size_t>(variable)].kind == VariableKind::Vital
             ? FeatureGroup::Vital
             : FeatureGroup::Lab;
}

}  // namespace

FeatureSchema::FeatureSchema(FeatureMode mode, int n_topics) : mode_(mode), n_topics_(n_topics) {
  if (n_topics < 1) throw ValidationError("schema needs at least one topic column");
  for (int v = 0; v < kNumVariables; ++v) {
    auto name = variables()[static_cast<std::size_t>(v)].name;
    if (mode == FeatureMode::Raw) {
      columns_.push_back({std::string(name), group_of(v), v});
    } else {
      for (int z = -kMaxAbsZ; z <= kMaxAbsZ; ++z)
        columns_.push_back({word_column_name(name, z), group_of(v), v});
    }
  }
  for (int k = 0; k < n_topics; ++k)
    columns_.push_back({"topic_" + std::to_string(k), FeatureGroup::Topic});
  columns_.push_back({"age", FeatureGroup::Static});
  for (auto g : {Gender::Female, Gender::Male})
    columns_.push_back({"gender_" + std::string(to_string(g)), FeatureGroup::Static});
  for (auto e : {Ethnicity::White, Ethnicity::Black, Ethnicity::Hispanic, Ethnicity::Other})
    columns_.push_back({"ethnicity_" + std::string(to_string(e)), FeatureGroup::Static});
  for (auto u : {IcuUnit::Ccu, IcuUnit::Csru, IcuUnit::Micu, IcuUnit::Sicu, IcuUnit::Tsicu})
    columns_.push_back({"unit_" + std::string(to_string(u)), FeatureGroup::Static});
  for (auto a : {AdmissionType::Elective, AdmissionType::Urgent, AdmissionType::Emergency})
    columns_.push_back({"admission_" + std::string(to_string(a)), FeatureGroup::Static});
  columns_.push_back({"intervention_state", FeatureGroup::InterventionState});
  columns_.push_back({"time_of_day", FeatureGroup::TimeOfDay});
}

int FeatureSchema::measurement_width() const {
  return mode_ == FeatureMode::Raw ? kNumVariables : kNumVariables * kWordBins;
}

std::uint64_t FeatureSchema::hash() const {
  Fnv1a h;
  h.str("clinpred-schema-v1").i64(static_cast<int>(mode_)).i64(n_topics_);
  for (const auto& c : columns_) h.str(c.name);
  return h.digest();
}

int word_bin(double value, const VariableStats& stats) {
  double z = std::round((value - stats.mean) / stats.std);
  return static_cast<int>(std::clamp(z, -static_cast<double>(kMaxAbsZ),
                                     static_cast<double>(kMaxAbsZ)));
}

Eigen::MatrixXd encode_words(const MeasurementGrid& grid, const NormalizationStats& stats) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(grid.n_hours(), kNumVariables * kWordBins);
  for (int h = 0; h < grid.n_hours(); ++h)
    for (int v = 0; v < kNumVariables; ++v)
      if (const auto& cell = grid.at(h, v)) {
        int z = word_bin(*cell, stats.vars[static_cast<std::size_t>(v)]);
        out(h, v * kWordBins + z + kMaxAbsZ) = 1.0;
      }
  return out;
}

Eigen::MatrixXd normalize_impute(const MeasurementGrid& grid, const NormalizationStats& stats) {
  Eigen::MatrixXd out(grid.n_hours(), kNumVariables);
  for (int v = 0; v < kNumVariables; ++v) {
    const auto& s = stats.vars[static_cast<std::size_t>(v)];
    double carried = s.mean;
    const double range = s.max - s.min;
    for (int h = 0; h < grid.n_hours(); ++h) {
      if (const auto& cell = grid.at(h, v)) carried = *cell;
      out(h, v) = std::clamp((carried - s.min) / range, 0.0, 1.0);
    }
  }
  return out;
}

Eigen::MatrixXd aggregate_topics(std::span<const TimedTopics> notes, int n_topics, int n_hours) {
  std::vector<const TimedTopics*> sorted;
  for (const auto& n : notes) {
    if (n.hour < 0 || n.hour >= n_hours)
      throw ValidationError("note hour " + std::to_string(n.hour) + " outside stay");
    if (n.dist.size() != n_topics) throw SchemaError("topic distribution width mismatch");
    sorted.push_back(&n);
  }
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const TimedTopics* a, const TimedTopics* b) { return a->hour < b->hour; });

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_hours, n_topics);
  Eigen::VectorXd running = Eigen::VectorXd::Zero(n_topics);
  std::size_t next = 0;
  int seen = 0;
  for (int t = 0; t < n_hours; ++t) {
    while (next < sorted.size() && sorted[next]->hour <= t) {
      running += sorted[next]->dist;
      ++seen;
      ++next;
    }
    if (seen > 0) out.row(t) = (running / seen).transpose();
  }
  return out;
}

Eigen::MatrixXd aggregate_topics(std::span<const Note> notes, const TopicModel& model, int n_hours,
                                 int fold_in_iterations, std::uint64_t seed) {
  std::vector<TimedTopics> timed;
  timed.reserve(notes.size());
  for (const auto& n : notes)
    timed.push_back({n.hour, infer_topics(model, n.tokens, fold_in_iterations, seed)});
  return aggregate_topics(timed, model.topics(), n_hours);
}

Eigen::RowVectorXd encode_statics(const StaticProfile& s, const NormalizationStats& stats) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(kStaticWidth);
  const double range = stats.age_max - stats.age_min;
  row(0) = range > 0.0 ? std::clamp((s.age - stats.age_min) / range, 0.0, 1.0) : 0.0;
  int off = 1;
  row(off + static_cast<int>(s.gender)) = 1.0;
  off += kNumGenders;
  row(off + static_cast<int>(s.ethnicity)) = 1.0;
  off += kNumEthnicities;
  row(off + static_cast<int>(s.icu_unit)) = 1.0;
  off += kNumIcuUnits;
  row(off + static_cast<int>(s.admission_type)) = 1.0;
  return row;
}

FeatureMatrix assemble(const PatientStay& stay, std::shared_ptr<const FeatureSchema> schema,
                       const NormalizationStats& stats, const TopicModel& topics,
                       InterventionKind kind, const AssembleOptions& options) {
  if (!schema) throw SchemaError("assemble needs a schema");
  if (topics.topics() != schema->n_topics())
    throw SchemaError("topic model has " + std::to_string(topics.topics()) +
                      " topics but schema expects " + std::to_string(schema->n_topics()));
  const int n = stay.hours();
  const auto& track = stay.track(kind);
  if (static_cast<int>(track.size()) != n) throw SchemaError("intervention track length mismatch");

  FeatureMatrix m;
  m.schema = schema;
  m.stay_id = stay.stay_id;
  m.values.resize(n, schema->width());
  const int mw = schema->measurement_width();
  if (schema->mode() == FeatureMode::Raw) m.values.leftCols(mw) = normalize_impute(stay.grid, stats);
  else m.values.leftCols(mw) = encode_words(stay.grid, stats);
  m.values.middleCols(schema->topic_offset(), schema->n_topics()) =
      aggregate_topics(stay.notes, topics, n, options.fold_in_iterations, options.seed);
  m.values.middleCols(schema->static_offset(), kStaticWidth) =
      encode_statics(stay.statics, stats).replicate(n, 1);
  for (int t = 0; t < n; ++t) {
    m.values(t, schema->intervention_column()) = track[static_cast<std::size_t>(t)];
    m.values(t, schema->time_of_day_column()) = ((stay.admit_hour + t) % 24) / 23.0;
  }
  return m;
}

void write_feature_csv(std::ostream& os, const FeatureMatrix& m) {
  const auto& cols = m.schema->columns();
  for (std::size_t c = 0; c < cols.size(); ++c) os << (c ? "," : "") << cols[c].name;
  os << '\n';
  char buf[32];
  for (Eigen::Index r = 0; r < m.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.values.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m.values(r, c));
      os << (c ? "," : "") << buf;
    }
    os << '\n';
  }
}

namespace {
constexpr char kStoreMagic[5] = "CPFS";
constexpr std::uint32_t kStoreVersion = 1;
}  // namespace

void write_feature_store(const std::filesystem::path& path, const FeatureStore& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot write " + path.string());
  bin::put_magic(os, kStoreMagic, kStoreVersion);
  bin::put<std::int32_t>(os, static_cast<std::int32_t>(store.schema->mode()));
  bin::put<std::int32_t>(os, store.schema->n_topics());
  bin::put<std::uint64_t>(os, store.schema->hash());
  bin::put<std::uint64_t>(os, store.stats_hash);
  bin::put<std::uint64_t>(os, store.run_hash);
  bin::put<std::int32_t>(os, static_cast<std::int32_t>(store.kind));
  bin::put<std::uint64_t>(os, store.matrices.size());
  for (std::size_t i = 0; i < store.matrices.size(); ++i) {
    const auto& m = store.matrices[i];
    bin::put_string(os, m.stay_id);
    bin::put<std::int32_t>(os, m.n_hours());
    os.write(reinterpret_cast<const char*>(store.tracks[i].data()),
             static_cast<std::streamsize>(store.tracks[i].size()));
    for (Eigen::Index r = 0; r < m.values.rows(); ++r)
      for (Eigen::Index c = 0; c < m.values.cols(); ++c) bin::put<double>(os, m.values(r, c));
  }
}

FeatureStore read_feature_store(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read " + path.string());
  bin::expect_magic(is, kStoreMagic, kStoreVersion, path.string());
  auto mode = static_cast<FeatureMode>(bin::get<std::int32_t>(is));
  auto n_topics = bin::get<std::int32_t>(is);
  auto schema = std::make_shared<const FeatureSchema>(mode, n_topics);
  if (bin::get<std::uint64_t>(is) != schema->hash())
    throw SchemaError("feature store " + path.string() + " has an unknown schema hash");
  FeatureStore store;
  store.schema = schema;
  store.stats_hash = bin::get<std::uint64_t>(is);
  store.run_hash = bin::get<std::uint64_t>(is);
  store.kind = static_cast<InterventionKind>(bin::get<std::int32_t>(is));
  auto count = bin::get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    FeatureMatrix m;
    m.schema = schema;
    m.stay_id = bin::get_string(is);
    int n = bin::get<std::int32_t>(is);
    InterventionTrack track(static_cast<std::size_t>(n));
    if (!is.read(reinterpret_cast<char*>(track.data()), n))
      throw ValidationError("truncated feature store");
    m.values.resize(n, schema->width());
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < schema->width(); ++c) m.values(r, c) = bin::get<double>(is);
    store.matrices.push_back(std::move(m));
    store.tracks.push_back(std::move(track));
  }
  return store;
}

}  // namespace clinpred
