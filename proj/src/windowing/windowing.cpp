#include "clinpred/windowing.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>

#include "clinpred/binary_io.hpp"
#include "clinpred/common.hpp"

namespace clinpred {

void WindowConfig::validate() const {
  if (lookback < 1 || gap < 1 || horizon < 1 || stride < 1)
    throw ValidationError("window lookback, gap, horizon and stride must be positive");
}

std::string LabelScheme::class_name(int id) const {
  if (has_duration(kind)) {
    switch (id) {
      case kOnset: return "onset";
      case kWean: return "wean";
      case kStayOn: return "stay_on";
      case kStayOff: return "stay_off";
    }
  } else {
    if (id == kOnset) return "onset";
    if (id == kNoOnset) return "no_onset";
  }
  throw ValidationError("class id " + std::to_string(id) + " invalid for " +
                        std::string(to_string(kind)));
}

int label_window(std::span<const std::uint8_t> slice, const LabelScheme& scheme,
                 std::optional<std::uint8_t> entry_state) {
  if (slice.empty()) throw ValidationError("empty prediction window");
  for (auto v : slice)
    if (v > 1) throw ValidationError("non-binary intervention value in prediction window");
  if (entry_state && *entry_state > 1) throw ValidationError("non-binary entry state");

  if (!has_duration(scheme.kind))
    return std::find(slice.begin(), slice.end(), 1) != slice.end() ? kOnset : kNoOnset;

  bool up = false, down = false;
  int prev = entry_state ? *entry_state : slice[0];
  for (auto v : slice) {
    if (prev == 0 && v == 1) up = true;
    if (prev == 1 && v == 0) down = true;
    prev = v;
  }
  if (up) return kOnset;
  if (down) return kWean;
  return slice[0] == 1 ? kStayOn : kStayOff;
}

std::size_t expected_window_count(int stay_hours, const WindowConfig& config) {
  if (stay_hours < config.span()) return 0;
  return static_cast<std::size_t>((stay_hours - config.span()) / config.stride + 1);
}

std::vector<Example> slide(std::shared_ptr<const Eigen::MatrixXd> matrix,
                           std::span<const std::uint8_t> track, const WindowConfig& config,
                           const LabelScheme& scheme, const std::string& stay_id) {
  config.validate();
  const int n = static_cast<int>(matrix->rows());
  if (static_cast<int>(track.size()) != n)
    throw SchemaError("track length does not match feature matrix for " + stay_id);
  std::vector<Example> out;
  out.reserve(expected_window_count(n, config));
  for (int s = 0; s + config.span() <= n; s += config.stride) {
    const int pred = s + config.lookback + config.gap;
    Example ex;
    ex.source = matrix;
    ex.row = s;
    ex.length = config.lookback;
    ex.label = label_window(track.subspan(static_cast<std::size_t>(pred),
                                          static_cast<std::size_t>(config.horizon)),
                            scheme, track[static_cast<std::size_t>(pred - 1)]);
    ex.kind = scheme.kind;
    ex.stay_id = stay_id;
    ex.start_hour = s;
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

constexpr int kStrata = static_cast<int>(kAllInterventions.size());

int signature(const PatientStay& stay) {
  int sig = 0;
  for (int k = 0; k < kStrata; ++k) {
    auto it = stay.interventions.find(kAllInterventions[static_cast<std::size_t>(k)]);
    if (it != stay.interventions.end() &&
        std::find(it->second.begin(), it->second.end(), 1) != it->second.end())
      sig |= 1 << k;
  }
  return sig;
}

}  // namespace

CohortSplit split_cohort(std::span<const PatientStay> stays, std::uint64_t seed,
                         SplitRatios ratios) {
  const std::size_t n = stays.size();
  if (n < 10) throw ValidationError("cohort split needs at least 10 stays");
  const double total_ratio = ratios.train + ratios.validation + ratios.test;
  if (!(ratios.train > 0 && ratios.validation > 0 && ratios.test > 0))
    throw ValidationError("split ratios must be positive");

  std::array<std::size_t, 3> target;
  target[0] = static_cast<std::size_t>(std::llround(n * ratios.train / total_ratio));
  target[1] = static_cast<std::size_t>(std::llround(n * ratios.validation / total_ratio));
  target[2] = n - target[0] - target[1];

  std::vector<int> sig(n);
  for (std::size_t i = 0; i < n; ++i) sig[i] = signature(stays[i]);

  // Group by stratum, shuffle within stratum.
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sig[a] < sig[b]; });

  // Deal the ordered stays out in proportion to the targets: at each step
  // the split furthest behind its quota takes the next stay.
  std::vector<int> split_of(n);
  std::array<std::size_t, 3> assigned{};
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    double best_deficit = -1e300;
    for (int s = 0; s < 3; ++s) {
      double deficit = static_cast<double>(target[static_cast<std::size_t>(s)]) *
                           static_cast<double>(i + 1) / static_cast<double>(n) -
                       static_cast<double>(assigned[static_cast<std::size_t>(s)]);
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = s;
      }
    }
    split_of[order[i]] = best;
    ++assigned[static_cast<std::size_t>(best)];
  }

  // Pairwise swaps between splits to pull every per-intervention count
  // toward its proportional target. Sizes are unchanged by swaps.
  std::array<double, kStrata> positives{};
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < kStrata; ++k)
      if (sig[i] >> k & 1) positives[static_cast<std::size_t>(k)] += 1.0;
  std::array<std::array<double, kStrata>, 3> count{};
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < kStrata; ++k)
      if (sig[i] >> k & 1) count[static_cast<std::size_t>(split_of[i])][static_cast<std::size_t>(k)] += 1.0;
  auto goal = [&](int s, int k) {
    return positives[static_cast<std::size_t>(k)] * static_cast<double>(target[static_cast<std::size_t>(s)]) /
           static_cast<double>(n);
  };
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  const std::size_t max_tries = 40 * n;
  std::size_t since_improvement = 0;
  for (std::size_t t = 0; t < max_tries && since_improvement < 8 * n; ++t) {
    std::size_t a = pick(rng), b = pick(rng);
    int sa = split_of[a], sb = split_of[b];
    if (sa == sb || sig[a] == sig[b]) {
      ++since_improvement;
      continue;
    }
    double delta = 0.0;
    for (int k = 0; k < kStrata; ++k) {
      double d = static_cast<double>((sig[b] >> k & 1) - (sig[a] >> k & 1));
      if (d == 0.0) continue;
      double ca = count[static_cast<std::size_t>(sa)][static_cast<std::size_t>(k)] - goal(sa, k);
      double cb = count[static_cast<std::size_t>(sb)][static_cast<std::size_t>(k)] - goal(sb, k);
      delta += (ca + d) * (ca + d) - ca * ca + (cb - d) * (cb - d) - cb * cb;
    }
    if (delta < -1e-12) {
      for (int k = 0; k < kStrata; ++k) {
        double d = static_cast<double>((sig[b] >> k & 1) - (sig[a] >> k & 1));
        count[static_cast<std::size_t>(sa)][static_cast<std::size_t>(k)] += d;
        count[static_cast<std::size_t>(sb)][static_cast<std::size_t>(k)] -= d;
      }
      std::swap(split_of[a], split_of[b]);
      since_improvement = 0;
    } else {
      ++since_improvement;
    }
  }

  CohortSplit out;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = split_of[i] == 0 ? out.train : split_of[i] == 1 ? out.validation : out.test;
    dst.push_back(i);
  }
  for (int s = 0; s < 3; ++s)
    for (int k = 0; k < kStrata; ++k) {
      double frac_all = positives[static_cast<std::size_t>(k)] / static_cast<double>(n);
      double frac_split = count[static_cast<std::size_t>(s)][static_cast<std::size_t>(k)] /
                          static_cast<double>(target[static_cast<std::size_t>(s)]);
      out.max_stratum_deviation = std::max(out.max_stratum_deviation, std::abs(frac_split - frac_all));
    }
  if (out.max_stratum_deviation > 0.02)
    std::cerr << "warning: stratified split deviates by "
              << out.max_stratum_deviation * 100.0 << " percentage points\n";
  return out;
}

std::vector<long> class_counts(std::span<const Example> examples, const LabelScheme& scheme) {
  std::vector<long> counts(static_cast<std::size_t>(scheme.num_classes()), 0);
  for (const auto& e : examples) {
    if (e.label < 0 || e.label >= scheme.num_classes())
      throw ValidationError("example label outside label scheme");
    ++counts[static_cast<std::size_t>(e.label)];
  }
  return counts;
}

std::vector<double> class_proportions(std::span<const Example> examples, const LabelScheme& scheme) {
  if (examples.empty()) throw ValidationError("class proportions of an empty example set");
  auto counts = class_counts(examples, scheme);
  std::vector<double> out;
  for (long c : counts) out.push_back(static_cast<double>(c) / static_cast<double>(examples.size()));
  return out;
}

std::string format_proportions(const LabelScheme& scheme, std::span<const double> fractions) {
  // Column order of the published class-proportion table.
  std::vector<std::pair<std::string, int>> cols;
  if (has_duration(scheme.kind))
    cols = {{"onset", kOnset}, {"wean", kWean}, {"stay off", kStayOff}, {"stay on", kStayOn}};
  else
    cols = {{"onset", kOnset}};
  std::string out(to_string(scheme.kind));
  char buf[64];
  for (const auto& [name, id] : cols) {
    std::snprintf(buf, sizeof buf, " | %s %.3f", name.c_str(), fractions[static_cast<std::size_t>(id)]);
    out += buf;
  }
  return out;
}

namespace {
constexpr char kShardMagic[5] = "CPEX";
constexpr std::uint32_t kShardVersion = 1;
}  // namespace

void write_shard(const std::filesystem::path& path, std::uint64_t schema_hash, int width,
                 InterventionKind kind, std::span<const Example> examples, std::uint64_t run_hash) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot write " + path.string());
  bin::put_magic(os, kShardMagic, kShardVersion);
  bin::put<std::uint64_t>(os, schema_hash);
  bin::put<std::uint64_t>(os, run_hash);
  bin::put<std::int32_t>(os, width);
  bin::put<std::int32_t>(os, static_cast<std::int32_t>(kind));
  const int length = examples.empty() ? 0 : examples.front().length;
  bin::put<std::int32_t>(os, length);
  bin::put<std::uint64_t>(os, examples.size());
  for (const auto& e : examples) {
    if (e.length != length || e.source->cols() != width)
      throw SchemaError("example shape does not match shard header");
    bin::put<std::int32_t>(os, e.label);
    bin::put<std::int32_t>(os, e.start_hour);
    bin::put_string(os, e.stay_id);
    auto f = e.features();
    for (int r = 0; r < length; ++r)
      for (int c = 0; c < width; ++c) bin::put<float>(os, static_cast<float>(f(r, c)));
  }
}

std::vector<int> ExampleSet::labels() const {
  std::vector<int> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.label);
  return out;
}

ExampleSet read_shard(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read " + path.string());
  bin::expect_magic(is, kShardMagic, kShardVersion, path.string());
  ExampleSet shard;
  shard.schema_hash = bin::get<std::uint64_t>(is);
  shard.run_hash = bin::get<std::uint64_t>(is);
  shard.width = bin::get<std::int32_t>(is);
  shard.kind = static_cast<InterventionKind>(bin::get<std::int32_t>(is));
  const int length = bin::get<std::int32_t>(is);
  const auto count = bin::get<std::uint64_t>(is);
  if (length < 0 || shard.width < 0) throw SchemaError("bad shard header in " + path.string());
  shard.examples.reserve(count);
  // All windows share one backing matrix.
  auto data = std::make_shared<Eigen::MatrixXd>(static_cast<Eigen::Index>(count) * length, shard.width);
  for (std::uint64_t i = 0; i < count; ++i) {
    Example e;
    e.label = bin::get<std::int32_t>(is);
    e.start_hour = bin::get<std::int32_t>(is);
    e.stay_id = bin::get_string(is);
    e.kind = shard.kind;
    e.length = length;
    e.row = static_cast<int>(i) * length;
    for (int r = 0; r < length; ++r)
      for (int c = 0; c < shard.width; ++c) (*data)(e.row + r, c) = bin::get<float>(is);
    e.source = data;
    shard.examples.push_back(std::move(e));
  }
  return shard;
}

}  // namespace clinpred
