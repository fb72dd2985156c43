#include "clinpred/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "clinpred/common.hpp"

namespace clinpred {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex64(std::string_view s) {
  if (s.empty() || s.size() > 16) throw ValidationError("bad hex hash: " + std::string(s));
  std::uint64_t v = 0;
  for (char ch : s) {
    v <<= 4;
    if (ch >= '0' && ch <= '9') v |= static_cast<std::uint64_t>(ch - '0');
    else if (ch >= 'a' && ch <= 'f') v |= static_cast<std::uint64_t>(ch - 'a' + 10);
    else if (ch >= 'A' && ch <= 'F') v |= static_cast<std::uint64_t>(ch - 'A' + 10);
    else throw ValidationError("bad hex hash: " + std::string(s));
  }
  return v;
}

const std::array<VariableInfo, kNumVariables>& variables() {
  using K = VariableKind;
  static const std::array<VariableInfo, kNumVariables> table = {{
      {"anion_gap", K::Lab},
      {"bicarbonate", K::Lab},
      {"blood_ph", K::Lab},
      {"blood_urea_nitrogen", K::Lab},
      {"chloride", K::Lab},
      {"creatinine", K::Lab},
      {"diastolic_blood_pressure", K::Vital},
      {"fraction_inspired_oxygen", K::Vital},
      {"glascow_coma_scale_total", K::Vital},
      {"glucose", K::Lab},
      {"heart_rate", K::Vital},
      {"hematocrit", K::Lab},
      {"hemoglobin", K::Lab},
      {"inr", K::Lab},
      {"lactate", K::Lab},
      {"magnesium", K::Lab},
      {"mean_blood_pressure", K::Vital},
      {"oxygen_saturation", K::Vital},
      {"partial_thromboplastin_time", K::Lab},
      {"phosphate", K::Lab},
      {"platelets", K::Lab},
      {"potassium", K::Lab},
      {"prothrombin_time", K::Lab},
      {"respiratory_rate", K::Vital},
      {"sodium", K::Lab},
      {"systolic_blood_pressure", K::Vital},
      {"temperature", K::Vital},
      {"weight", K::Vital},
      {"white_blood_cell_count", K::Lab},
  }};
  return table;
}

std::optional<int> variable_index(std::string_view name) {
  const auto& vars = variables();
  for (int i = 0; i < kNumVariables; ++i)
    if (vars[i].name == name) return i;
  return std::nullopt;
}

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<std::string_view, N>& names,
                std::string_view what) {
  for (std::size_t i = 0; i < N; ++i)
    if (names[i] == s) return static_cast<Enum>(i);
  throw ValidationError("unknown " + std::string(what) + ": '" + std::string(s) + "'");
}

constexpr std::array<std::string_view, 5> kInterventionNames = {
    "vent", "nivent", "vaso", "colbol", "crysbol"};
constexpr std::array<std::string_view, 2> kGenderNames = {"F", "M"};
constexpr std::array<std::string_view, 4> kEthnicityNames = {
    "white", "black", "hispanic", "other"};
constexpr std::array<std::string_view, 5> kUnitNames = {"CCU", "CSRU", "MICU",
                                                        "SICU", "TSICU"};
constexpr std::array<std::string_view, 3> kAdmissionNames = {
    "elective", "urgent", "emergency"};

}  // namespace

std::string_view to_string(InterventionKind k) {
  return kInterventionNames[static_cast<std::size_t>(k)];
}
InterventionKind parse_intervention(std::string_view s) {
  return parse_enum<InterventionKind>(s, kInterventionNames, "intervention");
}
std::string_view to_string(Gender g) { return kGenderNames[static_cast<std::size_t>(g)]; }
std::string_view to_string(Ethnicity e) {
  return kEthnicityNames[static_cast<std::size_t>(e)];
}
std::string_view to_string(IcuUnit u) { return kUnitNames[static_cast<std::size_t>(u)]; }
std::string_view to_string(AdmissionType a) {
  return kAdmissionNames[static_cast<std::size_t>(a)];
}
Gender parse_gender(std::string_view s) {
  return parse_enum<Gender>(s, kGenderNames, "gender");
}
Ethnicity parse_ethnicity(std::string_view s) {
  return parse_enum<Ethnicity>(s, kEthnicityNames, "ethnicity");
}
IcuUnit parse_icu_unit(std::string_view s) {
  return parse_enum<IcuUnit>(s, kUnitNames, "icu unit");
}
AdmissionType parse_admission_type(std::string_view s) {
  return parse_enum<AdmissionType>(s, kAdmissionNames, "admission type");
}

MeasurementGrid::MeasurementGrid(int n_hours) : n_hours_(n_hours) {
  if (n_hours < 0) throw ValidationError("negative grid length");
  cells_.resize(static_cast<std::size_t>(n_hours) * kNumVariables);
}

std::size_t MeasurementGrid::index(int hour, int variable) const {
  if (hour < 0 || hour >= n_hours_ || variable < 0 || variable >= kNumVariables)
    throw std::out_of_range("measurement cell (" + std::to_string(hour) + ", " +
                            std::to_string(variable) + ") out of range");
  return static_cast<std::size_t>(hour) * kNumVariables + static_cast<std::size_t>(variable);
}

const InterventionTrack& PatientStay::track(InterventionKind k) const {
  auto it = interventions.find(k);
  if (it == interventions.end())
    throw ValidationError("stay " + stay_id + " has no track for " +
                          std::string(to_string(k)));
  return it->second;
}

int round_to_hour(double minutes) {
  return static_cast<int>(std::floor(minutes / 60.0 + 0.5));
}

MeasurementGrid ingest_events(std::span<const RawEvent> events, std::optional<int> n_hours) {
  struct Bucketed {
    int hour;
    int variable;
    double value;
  };
  std::vector<Bucketed> bucketed;
  bucketed.reserve(events.size());
  int last_hour = -1;
  for (const auto& e : events) {
    auto var = variable_index(e.variable);
    if (!var) throw SchemaError("unknown variable '" + e.variable + "'");
    if (!(e.minutes >= 0.0))
      throw ValidationError("event for '" + e.variable + "' at negative time " +
                            std::to_string(e.minutes));
    int hour = round_to_hour(e.minutes);
    last_hour = std::max(last_hour, hour);
    bucketed.push_back({hour, *var, e.value});
  }
  int hours = n_hours.value_or(last_hour + 1);
  if (last_hour >= hours)
    throw ValidationError("event at hour " + std::to_string(last_hour) +
                          " beyond stay length " + std::to_string(hours));

  // Sorting makes the per-cell sums independent of input order.
  std::sort(bucketed.begin(), bucketed.end(), [](const Bucketed& a, const Bucketed& b) {
    if (a.hour != b.hour) return a.hour < b.hour;
    if (a.variable != b.variable) return a.variable < b.variable;
    return a.value < b.value;
  });

  MeasurementGrid grid(hours);
  for (std::size_t i = 0; i < bucketed.size();) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < bucketed.size() && bucketed[j].hour == bucketed[i].hour &&
           bucketed[j].variable == bucketed[i].variable) {
      sum += bucketed[j].value;
      ++j;
    }
    grid.set(bucketed[i].hour, bucketed[i].variable, sum / static_cast<double>(j - i));
    i = j;
  }
  return grid;
}

std::vector<Violation> validate_stay(const PatientStay& stay) {
  std::vector<Violation> out;
  const int n = stay.hours();
  if (stay.stay_id.empty()) out.push_back({"stay_id", "empty identifier"});
  if (n < kMinStayHours) out.push_back({"grid", "length < 12"});
  if (n > kMaxStayHours) out.push_back({"grid", "length > 240"});
  if (stay.admit_hour < 0 || stay.admit_hour > 23)
    out.push_back({"admit_hour", "outside 0-23"});
  if (!std::isfinite(stay.statics.age) || stay.statics.age < 0.0)
    out.push_back({"statics.age", "not a finite non-negative number"});
  for (int h = 0; h < n; ++h)
    for (int v = 0; v < kNumVariables; ++v)
      if (const auto& cell = stay.grid.at(h, v); cell && !std::isfinite(*cell))
        out.push_back({"grid", "non-finite measurement"});
  for (std::size_t i = 0; i < stay.notes.size(); ++i) {
    const auto& note = stay.notes[i];
    if (note.hour < 0 || note.hour >= n)
      out.push_back({"notes[" + std::to_string(i) + "].hour", "note hour outside stay"});
    for (const auto& [term, count] : note.tokens)
      if (count <= 0) {
        out.push_back({"notes[" + std::to_string(i) + "].tokens", "non-positive count"});
        break;
      }
  }
  for (const auto& [kind, track] : stay.interventions) {
    std::string field = "interventions." + std::string(to_string(kind));
    if (static_cast<int>(track.size()) != n)
      out.push_back({field, "track length mismatch"});
    if (std::any_of(track.begin(), track.end(), [](std::uint8_t v) { return v > 1; }))
      out.push_back({field, "non-binary value"});
  }
  return out;
}

}  // namespace clinpred
