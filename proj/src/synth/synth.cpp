#include "clinpred/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "clinpred/common.hpp"

namespace clinpred {

const std::array<VariableProfile, kNumVariables>& default_variable_profiles() {
  // Same order as variables().
  static const std::array<VariableProfile, kNumVariables> table = {{
      {12.0, 3.0, 0.0, 0.7},     // anion_gap
      {24.0, 3.0, 0.0, 0.7},     // bicarbonate
      {7.38, 0.05, 0.0, 0.75},   // blood_ph
      {25.0, 10.0, 0.0, 0.7},    // blood_urea_nitrogen
      {104.0, 4.0, 0.0, 0.7},    // chloride
      {1.2, 0.5, 0.0, 0.7},      // creatinine
      {60.0, 10.0, 0.3, 0.1},    // diastolic_blood_pressure
      {0.4, 0.1, 0.0, 0.5},      // fraction_inspired_oxygen
      {12.0, 2.0, 0.2, 0.4},     // glascow_coma_scale_total
      {130.0, 30.0, 0.2, 0.6},   // glucose
      {85.0, 12.0, 0.4, 0.08},   // heart_rate
      {31.0, 4.0, 0.0, 0.7},     // hematocrit
      {10.5, 1.5, 0.0, 0.7},     // hemoglobin
      {1.3, 0.3, 0.0, 0.8},      // inr
      {2.0, 0.8, 0.0, 0.8},      // lactate
      {2.0, 0.2, 0.0, 0.8},      // magnesium
      {78.0, 10.0, 0.3, 0.1},    // mean_blood_pressure
      {97.0, 2.0, 0.1, 0.08},    // oxygen_saturation
      {32.0, 6.0, 0.0, 0.8},     // partial_thromboplastin_time
      {3.5, 0.8, 0.0, 0.8},      // phosphate
      {200.0, 60.0, 0.0, 0.7},   // platelets
      {4.1, 0.4, 0.0, 0.7},      // potassium
      {14.0, 2.0, 0.0, 0.8},     // prothrombin_time
      {18.0, 4.0, 0.3, 0.08},    // respiratory_rate
      {139.0, 3.0, 0.0, 0.7},    // sodium
      {120.0, 15.0, 0.4, 0.08},  // systolic_blood_pressure
      {37.0, 0.5, 0.5, 0.3},     // temperature
      {80.0, 15.0, 0.0, 0.9},    // weight
      {10.0, 3.0, 0.0, 0.7},     // white_blood_cell_count
  }};
  return table;
}

std::string_view to_string(DriverShape s) {
  switch (s) {
    case DriverShape::CoupledPair: return "coupled_pair";
    case DriverShape::OneSided: return "one_sided";
    case DriverShape::TopicShift: return "topic_shift";
  }
  return "?";
}

namespace {

DriverShape parse_shape(std::string_view s) {
  if (s == "coupled_pair") return DriverShape::CoupledPair;
  if (s == "one_sided") return DriverShape::OneSided;
  if (s == "topic_shift") return DriverShape::TopicShift;
  throw SchemaError("unknown driver shape '" + std::string(s) + "'");
}

SynthTopic topic(std::string name, std::vector<std::string> words) {
  return {std::move(name), std::move(words)};
}

const SynthTopic* find_topic(const SynthConfig& c, const std::string& name) {
  for (const auto& r : c.background_topics)
    if (r.name == name) return &r;
  return nullptr;
}

}  // namespace

SynthConfig default_synth_config() {
  SynthConfig c;
  using K = InterventionKind;
  c.rules = {
      {K::Vent, DriverShape::CoupledPair, {"respiratory_rate", "heart_rate"}, 3.0, 0.015, 0.2, 8, 36, 0.03},
      {K::NiVent, DriverShape::TopicShift, {"niv_topic"}, 3.0, 0.008, 0.2, 6, 24, 0.0},
      {K::Vaso, DriverShape::OneSided, {"systolic_blood_pressure"}, -3.0, 0.012, 0.2, 6, 24, 0.0},
      {K::ColBol, DriverShape::TopicShift, {"colloid_topic"}, 3.0, 0.006, 0.2, 1, 1, 0.0},
      {K::CrysBol, DriverShape::TopicShift, {"crystalloid_topic"}, 3.0, 0.012, 0.2, 1, 1, 0.0},
  };
  c.background_topics = {
      topic("cardiac", {"rhythm", "sinus", "murmur", "echo", "ejection", "tachycardia", "atrial",
                        "telemetry", "troponin", "ischemia", "stent", "cath"}),
      topic("renal", {"urine", "foley", "oliguria", "dialysis", "kidney", "nephrology", "output",
                      "diuresis", "lasix", "creat", "electrolytes", "replete"}),
      topic("neuro", {"sedation", "propofol", "pupils", "reactive", "alert", "oriented", "confused",
                      "agitated", "restraints", "neuro", "seizure", "commands"}),
      topic("skin", {"wound", "dressing", "decubitus", "sacrum", "incision", "drainage", "erythema",
                     "intact", "turned", "pressure", "ulcer", "skin"}),
      topic("social", {"family", "daughter", "son", "wife", "husband", "meeting", "update", "goals",
                       "code", "consent", "visited", "questions"}),
      topic("nutrition", {"tube", "feeds", "residuals", "npo", "diet", "insulin", "sliding",
                          "scale", "bowel", "stool", "abdomen", "distended"}),
      topic("infection", {"fever", "cultures", "vancomycin", "zosyn", "sputum", "pneumonia",
                          "sepsis", "antibiotics", "wbc", "lactate", "source", "febrile"}),
      topic("niv_topic", {"bipap", "cpap", "mask", "noninvasive", "facemask", "seal", "tolerating",
                          "leak", "ipap", "epap", "fitted", "straps"}),
      topic("colloid_topic", {"albumin", "colloid", "hespan", "oncotic", "protein", "hetastarch",
                              "plasmanate", "infused", "vial", "challenge", "expander", "ffp"}),
      topic("crystalloid_topic", {"saline", "bolus", "lactated", "ringers", "crystalloid", "liter",
                                  "wide", "open", "fluids", "resuscitation", "ns", "lr"}),
  };
  c.acuity_topic = topic("acuity", {"critical", "unstable", "worsening", "emergent", "rapid",
                                    "response", "escalate", "concern", "deteriorating", "icu",
                                    "attending", "paged"});
  return c;
}

void SynthConfig::validate() const {
  if (patients < 1) throw ValidationError("patient count must be positive");
  if (min_hours < 12 || max_hours > 240 || min_hours > max_hours)
    throw ValidationError("stay-length range must lie inside [12, 240]");
  if (lead_time < 1 || lead_time >= min_hours)
    throw ValidationError("lead time must be positive and shorter than the minimum stay");
  auto prob = [](double p, const std::string& what) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(what + " must be a probability");
  };
  if (!(ar_coefficient >= 0.0 && ar_coefficient < 1.0))
    throw ValidationError("autoregressive coefficient must be in [0, 1)");
  prob(repeat_probability, "repeat probability");
  prob(note_rate, "note rate");
  if (!(tokens_per_note > 0.0)) throw ValidationError("tokens per note must be positive");
  for (int v = 0; v < kNumVariables; ++v) {
    const auto& p = variables[static_cast<std::size_t>(v)];
    prob(p.missing, std::string(clinpred::variables()[static_cast<std::size_t>(v)].name) + " missing rate");
    if (!(p.std > 0.0)) throw ValidationError("variable std must be positive");
  }
  for (const auto& r : rules) {
    prob(r.onset_hazard, "onset hazard");
    prob(r.decoy_hazard, "decoy hazard");
    prob(r.severity_threshold, "severity threshold");
    if (r.min_duration < 1 || r.max_duration < r.min_duration)
      throw ValidationError("bad episode duration range");
    if (r.shape == DriverShape::TopicShift) {
      if (r.drivers.size() != 1 || !find_topic(*this, r.drivers.front()))
        throw ValidationError("topic driver must name one background topic");
    } else {
      if (r.drivers.size() != (r.shape == DriverShape::CoupledPair ? 2u : 1u))
        throw ValidationError("wrong number of drivers for " + std::string(to_string(r.shape)));
      for (const auto& d : r.drivers)
        if (!variable_index(d)) throw ValidationError("unknown driver variable '" + d + "'");
    }
  }
}

namespace {

struct Schedule {
  InterventionTrack track;
  std::vector<int> onsets;
  std::vector<double> signs;          // per onset, CoupledPair only
  std::vector<std::pair<int, double>> decoys;  // start, sign of drivers[0]
};

// Stay-level draws are split into streams so that every phase consumes the
// same numbers whether or not precursors are planted.
enum Stream : std::uint64_t { kProfile = 1, kSeverity, kSchedule, kLatent, kObserve, kNotes };

Schedule schedule(const SynthConfig& c, const InterventionRule& r, const std::vector<double>& severity,
                  std::mt19937_64& rng) {
  const int n = static_cast<int>(severity.size());
  const int L = c.lead_time;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Schedule s;
  s.track.assign(static_cast<std::size_t>(n), 0);
  int next_allowed = L;
  for (int h = 0; h < n; ++h) {
    const double draw = u(rng);
    if (h < next_allowed || severity[static_cast<std::size_t>(h)] < r.severity_threshold) continue;
    if (draw >= r.onset_hazard) continue;
    const int d = has_duration(r.kind)
                      ? std::uniform_int_distribution<int>(r.min_duration, r.max_duration)(rng)
                      : 1;
    s.onsets.push_back(h);
    s.signs.push_back(u(rng) < 0.5 ? -1.0 : 1.0);
    for (int t = h; t < std::min(n, h + d); ++t) s.track[static_cast<std::size_t>(t)] = 1;
    // The next lead span starts after this episode ends.
    next_allowed = h + d + L;
  }
  if (r.decoy_hazard > 0.0) {
    std::vector<std::uint8_t> busy(static_cast<std::size_t>(n), 0);
    for (int h : s.onsets)
      for (int t = std::max(0, h - L); t < h; ++t) busy[static_cast<std::size_t>(t)] = 1;
    for (int t = 0; t < n; ++t)
      if (s.track[static_cast<std::size_t>(t)]) busy[static_cast<std::size_t>(t)] = 1;
    for (int h = 0; h + L <= n;) {
      const double draw = u(rng);
      const double sign = u(rng) < 0.5 ? -1.0 : 1.0;
      bool free = true;
      for (int t = h; t < h + L && free; ++t) free = !busy[static_cast<std::size_t>(t)];
      if (free && draw < r.decoy_hazard) {
        s.decoys.emplace_back(h, sign);
        h += L;
      } else {
        ++h;
      }
    }
  }
  return s;
}

}  // namespace

PatientStay generate_stay(const SynthConfig& c, int index, bool plant) {
  const std::uint64_t stay_seed = derive_seed(c.seed, static_cast<std::uint64_t>(index));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  PatientStay stay;
  char id[32];
  std::snprintf(id, sizeof id, "S%06d", index);
  stay.stay_id = id;

  std::mt19937_64 prof(derive_seed(stay_seed, kProfile));
  const int n = std::uniform_int_distribution<int>(c.min_hours, c.max_hours)(prof);
  stay.admit_hour = std::uniform_int_distribution<int>(0, 23)(prof);
  stay.statics.gender = static_cast<Gender>(std::uniform_int_distribution<int>(0, kNumGenders - 1)(prof));
  stay.statics.age = std::round(std::uniform_real_distribution<double>(18.0, 90.0)(prof));
  stay.statics.ethnicity =
      static_cast<Ethnicity>(std::uniform_int_distribution<int>(0, kNumEthnicities - 1)(prof));
  stay.statics.icu_unit = static_cast<IcuUnit>(std::uniform_int_distribution<int>(0, kNumIcuUnits - 1)(prof));
  stay.statics.admission_type =
      static_cast<AdmissionType>(std::uniform_int_distribution<int>(0, kNumAdmissionTypes - 1)(prof));

  // Latent severity in (0, 1): logistic of a slow AR(1) process.
  std::mt19937_64 sev_rng(derive_seed(stay_seed, kSeverity));
  std::vector<double> severity(static_cast<std::size_t>(n));
  {
    const double phi = 0.97;
    double a = normal(sev_rng);
    for (int t = 0; t < n; ++t) {
      if (t > 0) a = phi * a + std::sqrt(1.0 - phi * phi) * normal(sev_rng);
      severity[static_cast<std::size_t>(t)] = 1.0 / (1.0 + std::exp(-2.0 * a));
    }
  }

  // Planted shifts per variable and hour, and topic boosts per hour.
  std::vector<std::vector<double>> shift(kNumVariables, std::vector<double>(static_cast<std::size_t>(n), 0.0));
  std::vector<std::vector<double>> topic_boost(c.background_topics.size(),
                                               std::vector<double>(static_cast<std::size_t>(n), 0.0));
  std::mt19937_64 sched_rng(derive_seed(stay_seed, kSchedule));
  for (InterventionKind kind : kAllInterventions) {
    const InterventionRule* rule = nullptr;
    for (const auto& r : c.rules)
      if (r.kind == kind) rule = &r;
    if (!rule) {
      stay.interventions[kind] = InterventionTrack(static_cast<std::size_t>(n), 0);
      continue;
    }
    Schedule s = schedule(c, *rule, severity, sched_rng);
    stay.interventions[kind] = s.track;
    if (!plant) continue;
    const int L = c.lead_time;
    auto apply = [&](int start, int end, double sign0, double sign1) {
      for (std::size_t j = 0; j < rule->drivers.size(); ++j) {
        const int v = *variable_index(rule->drivers[j]);
        const double mag = rule->effect * c.variables[static_cast<std::size_t>(v)].std;
        for (int t = std::max(0, start); t < end; ++t)
          shift[static_cast<std::size_t>(v)][static_cast<std::size_t>(t)] += (j == 0 ? sign0 : sign1) * mag;
      }
    };
    for (std::size_t o = 0; o < s.onsets.size(); ++o) {
      const int h = s.onsets[o];
      switch (rule->shape) {
        case DriverShape::CoupledPair: apply(h - L, h, s.signs[o], s.signs[o]); break;
        case DriverShape::OneSided: apply(h - L, h, 1.0, 1.0); break;
        case DriverShape::TopicShift: {
          std::size_t k = 0;
          while (c.background_topics[k].name != rule->drivers.front()) ++k;
          for (int t = std::max(0, h - L); t < h; ++t) topic_boost[k][static_cast<std::size_t>(t)] = rule->effect;
          break;
        }
      }
    }
    for (const auto& [start, sign] : s.decoys) apply(start, start + L, sign, -sign);
  }

  // Latent values: mean + circadian sinusoid on the wall clock + AR(1).
  std::mt19937_64 lat_rng(derive_seed(stay_seed, kLatent));
  std::vector<std::vector<double>> latent(kNumVariables, std::vector<double>(static_cast<std::size_t>(n)));
  for (int v = 0; v < kNumVariables; ++v) {
    const auto& p = c.variables[static_cast<std::size_t>(v)];
    const double phase = 2.0 * std::numbers::pi * unit(lat_rng);
    const double phi = c.ar_coefficient;
    double e = normal(lat_rng);
    for (int t = 0; t < n; ++t) {
      if (t > 0) e = phi * e + std::sqrt(1.0 - phi * phi) * normal(lat_rng);
      const double clock = static_cast<double>((stay.admit_hour + t) % 24);
      latent[static_cast<std::size_t>(v)][static_cast<std::size_t>(t)] =
          p.mean + p.std * (p.circadian * std::sin(2.0 * std::numbers::pi * clock / 24.0 + phase) + e) +
          shift[static_cast<std::size_t>(v)][static_cast<std::size_t>(t)];
    }
  }

  // Jittered raw events, bucketed back into hours by ingestion.
  std::mt19937_64 obs_rng(derive_seed(stay_seed, kObserve));
  std::uniform_real_distribution<double> jitter(-29.0, 29.0);
  std::vector<RawEvent> events;
  for (int t = 0; t < n; ++t)
    for (int v = 0; v < kNumVariables; ++v) {
      const auto& p = c.variables[static_cast<std::size_t>(v)];
      if (unit(obs_rng) < p.missing) continue;
      const int count = unit(obs_rng) < c.repeat_probability ? 2 : 1;
      for (int i = 0; i < count; ++i) {
        const double minutes = std::max(0.0, 60.0 * t + jitter(obs_rng));
        const double value = latent[static_cast<std::size_t>(v)][static_cast<std::size_t>(t)] +
                             c.measurement_noise * p.std * normal(obs_rng);
        events.push_back({minutes, std::string(variables()[static_cast<std::size_t>(v)].name), value});
      }
    }
  stay.grid = ingest_events(events, n);

  // Notes: background mixture, acuity weight tracking severity, and the
  // planted topic boosts.
  std::mt19937_64 note_rng(derive_seed(stay_seed, kNotes));
  std::gamma_distribution<double> gamma(0.5, 1.0);
  const std::size_t nb = c.background_topics.size();
  std::vector<double> weights(nb + 1);
  for (int t = 0; t < n; ++t) {
    if (unit(note_rng) >= c.note_rate) continue;
    const int tokens = std::max(1, std::poisson_distribution<int>(c.tokens_per_note)(note_rng));
    double total = 0.0;
    for (std::size_t k = 0; k < nb; ++k) {
      // Driver topics only appear through the boost.
      bool is_driver = false;
      for (const auto& r : c.rules)
        if (r.shape == DriverShape::TopicShift && r.drivers.front() == c.background_topics[k].name)
          is_driver = true;
      const double g = gamma(note_rng);
      weights[k] = (is_driver ? 0.02 * g : g) + topic_boost[k][static_cast<std::size_t>(t)];
      total += weights[k];
    }
    weights[nb] = c.acuity_weight * severity[static_cast<std::size_t>(t)];
    total += weights[nb];
    Note note{t, {}};
    for (int i = 0; i < tokens; ++i) {
      double draw = unit(note_rng) * total;
      std::size_t k = 0;
      while (k < nb && draw >= weights[k]) draw -= weights[k++];
      const auto& words = k < nb ? c.background_topics[k].words : c.acuity_topic.words;
      const auto w = std::min(words.size() - 1, static_cast<std::size_t>(unit(note_rng) * static_cast<double>(words.size())));
      ++note.tokens[words[w]];
    }
    stay.notes.push_back(std::move(note));
  }
  return stay;
}

SignalManifest make_manifest(const SynthConfig& c) {
  SignalManifest m;
  m.seed = c.seed;
  m.patients = c.patients;
  std::vector<std::string> used;
  for (const auto& r : c.rules) {
    DriverManifest d{r.kind, r.shape, r.drivers, c.lead_time, r.effect, {}};
    if (r.shape == DriverShape::TopicShift) d.topic_words = find_topic(c, r.drivers.front())->words;
    else used.insert(used.end(), r.drivers.begin(), r.drivers.end());
    m.interventions.push_back(std::move(d));
  }
  for (const auto& v : variables())
    if (std::find(used.begin(), used.end(), v.name) == used.end()) m.noise_only.emplace_back(v.name);
  return m;
}

SynthCohort generate(const SynthConfig& config) {
  config.validate();
  SynthCohort out;
  out.stays.reserve(static_cast<std::size_t>(config.patients));
  for (int i = 0; i < config.patients; ++i) out.stays.push_back(generate_stay(config, i, true));
  out.manifest = make_manifest(config);
  return out;
}

const DriverManifest& SignalManifest::driver(InterventionKind kind) const {
  for (const auto& d : interventions)
    if (d.kind == kind) return d;
  throw ValidationError("manifest has no entry for " + std::string(to_string(kind)));
}

std::string SignalManifest::to_json(std::uint64_t run_hash) const {
  nlohmann::ordered_json j;
  if (run_hash) j["run"] = hex64(run_hash);
  j["seed"] = seed;
  j["patients"] = patients;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& d : interventions) {
    nlohmann::ordered_json e;
    e["intervention"] = std::string(to_string(d.kind));
    e["shape"] = std::string(to_string(d.shape));
    e["drivers"] = d.drivers;
    e["lead_time"] = d.lead_time;
    e["effect"] = d.effect;
    e["topic_words"] = d.topic_words;
    arr.push_back(e);
  }
  j["interventions"] = arr;
  j["noise_only"] = noise_only;
  return j.dump(2);
}

SignalManifest SignalManifest::from_json(const std::string& text) {
  SignalManifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.seed = j.at("seed").get<std::uint64_t>();
    m.patients = j.at("patients").get<int>();
    for (const auto& e : j.at("interventions"))
      m.interventions.push_back({parse_intervention(e.at("intervention").get<std::string>()),
                                 parse_shape(e.at("shape").get<std::string>()),
                                 e.at("drivers").get<std::vector<std::string>>(),
                                 e.at("lead_time").get<int>(), e.at("effect").get<double>(),
                                 e.at("topic_words").get<std::vector<std::string>>()});
    m.noise_only = j.at("noise_only").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad manifest: ") + e.what());
  }
  return m;
}

void write_manifest_file(const std::filesystem::path& path, const SignalManifest& manifest,
                         std::uint64_t run_hash) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot write " + path.string());
  os << manifest.to_json(run_hash) << '\n';
}

SignalManifest read_manifest_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return SignalManifest::from_json(ss.str());
}

AuditReport audit(const SynthConfig& c, const std::vector<PatientStay>& stays) {
  AuditReport report;
  auto problem = [&](const std::string& s) {
    if (report.problems.size() < 50) report.problems.push_back(s);
  };
  const int L = c.lead_time;
  for (std::size_t i = 0; i < stays.size(); ++i) {
    const PatientStay& got = stays[i];
    const PatientStay ref = generate_stay(c, static_cast<int>(i), false);
    if (ref.stay_id != got.stay_id || ref.hours() != got.hours()) {
      problem(got.stay_id + ": does not match generation order");
      continue;
    }
    const int n = got.hours();
    std::vector<std::uint8_t> topic_lead(static_cast<std::size_t>(n), 0);
    for (const auto& r : c.rules) {
      const auto& track = got.track(r.kind);
      if (track != ref.track(r.kind)) problem(got.stay_id + ": track changed by planting");
      std::vector<std::uint8_t> lead(static_cast<std::size_t>(n), 0);
      for (int h = 1; h < n; ++h)
        if (track[static_cast<std::size_t>(h)] && !track[static_cast<std::size_t>(h - 1)]) {
          ++report.onsets_checked;
          if (h < L) problem(got.stay_id + ": onset before the lead time");
          for (int t = std::max(0, h - L); t < h; ++t) lead[static_cast<std::size_t>(t)] = 1;
        }
      if (r.shape == DriverShape::TopicShift) {
        for (int t = 0; t < n; ++t) topic_lead[static_cast<std::size_t>(t)] |= lead[static_cast<std::size_t>(t)];
        continue;
      }
      std::vector<int> vars;
      for (const auto& d : r.drivers) vars.push_back(*variable_index(d));
      // Per hour, the observed shift of each driver (0 when unobserved).
      std::vector<std::vector<double>> diff(vars.size(), std::vector<double>(static_cast<std::size_t>(n), 0.0));
      std::vector<std::vector<bool>> seen(vars.size(), std::vector<bool>(static_cast<std::size_t>(n), false));
      for (std::size_t j = 0; j < vars.size(); ++j) {
        const double mag = std::abs(r.effect) * c.variables[static_cast<std::size_t>(vars[j])].std;
        for (int t = 0; t < n; ++t) {
          const auto& a = got.grid.at(t, vars[j]);
          const auto& b = ref.grid.at(t, vars[j]);
          if (a.has_value() != b.has_value()) {
            problem(got.stay_id + ": missingness changed by planting");
            continue;
          }
          if (!a) continue;
          ++report.cells_checked;
          const double d = *a - *b;
          const double tol = 1e-9 * (std::abs(*a) + std::abs(*b) + mag);
          diff[j][static_cast<std::size_t>(t)] = d;
          seen[j][static_cast<std::size_t>(t)] = true;
          const bool is_lead = lead[static_cast<std::size_t>(t)];
          const bool moved = std::abs(std::abs(d) - mag) <= tol;
          const bool still = std::abs(d) <= tol;
          if (is_lead && !moved)
            problem(got.stay_id + ": " + r.drivers[j] + " not shifted at lead hour " + std::to_string(t));
          if (!is_lead && !still && !(r.shape == DriverShape::CoupledPair && moved))
            problem(got.stay_id + ": " + r.drivers[j] + " shifted outside lead hours at " + std::to_string(t));
          if (r.shape == DriverShape::OneSided && is_lead && moved && (d > 0) != (r.effect > 0))
            problem(got.stay_id + ": " + r.drivers[j] + " shifted the wrong way at " + std::to_string(t));
          if (!is_lead && !still && track[static_cast<std::size_t>(t)])
            problem(got.stay_id + ": decoy during an episode at " + std::to_string(t));
        }
      }
      if (r.shape == DriverShape::CoupledPair) {
        for (int t = 0; t < n; ++t) {
          const auto ts = static_cast<std::size_t>(t);
          if (!seen[0][ts] || !seen[1][ts]) continue;
          const double a = diff[0][ts], b = diff[1][ts];
          if (a == 0.0 && b == 0.0) continue;
          const bool same = (a > 0) == (b > 0);
          if (lead[ts] && !same) problem(got.stay_id + ": lead drivers disagree in sign at " + std::to_string(t));
          if (!lead[ts] && same) problem(got.stay_id + ": decoy drivers agree in sign at " + std::to_string(t));
        }
      }
    }
    // Notes outside topic lead hours are untouched.
    std::vector<const Note*> a, b;
    for (const auto& note : got.notes)
      if (!topic_lead[static_cast<std::size_t>(note.hour)]) a.push_back(&note);
    for (const auto& note : ref.notes)
      if (!topic_lead[static_cast<std::size_t>(note.hour)]) b.push_back(&note);
    bool same = a.size() == b.size();
    for (std::size_t k = 0; same && k < a.size(); ++k) same = *a[k] == *b[k];
    if (!same) problem(got.stay_id + ": notes outside lead hours changed by planting");
  }
  return report;
}

}  // namespace clinpred
