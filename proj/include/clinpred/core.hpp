#pragma once

// In-memory representation of ICU stays: hourly measurement grid, notes,
// intervention tracks and static demographics.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace clinpred {

inline constexpr int kNumVariables = 29;
inline constexpr int kMinStayHours = 12;
inline constexpr int kMaxStayHours = 240;

enum class VariableKind { Vital, Lab };

struct VariableInfo {
  std::string_view name;
  VariableKind kind;
};

// The 29 time-varying vitals and labs, in column order.
const std::array<VariableInfo, kNumVariables>& variables();
std::optional<int> variable_index(std::string_view name);

enum class InterventionKind { Vent, NiVent, Vaso, ColBol, CrysBol };
inline constexpr std::array<InterventionKind, 5> kAllInterventions = {
    InterventionKind::Vent, InterventionKind::NiVent, InterventionKind::Vaso,
    InterventionKind::ColBol, InterventionKind::CrysBol};

// Boluses are point administrations; the other three run for durations.
constexpr bool has_duration(InterventionKind k) {
  return k == InterventionKind::Vent || k == InterventionKind::NiVent ||
         k == InterventionKind::Vaso;
}
std::string_view to_string(InterventionKind k);
InterventionKind parse_intervention(std::string_view s);

enum class Gender { Female, Male };
enum class Ethnicity { White, Black, Hispanic, Other };
enum class IcuUnit { Ccu, Csru, Micu, Sicu, Tsicu };
enum class AdmissionType { Elective, Urgent, Emergency };

inline constexpr int kNumGenders = 2;
inline constexpr int kNumEthnicities = 4;
inline constexpr int kNumIcuUnits = 5;
inline constexpr int kNumAdmissionTypes = 3;

std::string_view to_string(Gender g);
std::string_view to_string(Ethnicity e);
std::string_view to_string(IcuUnit u);
std::string_view to_string(AdmissionType a);
Gender parse_gender(std::string_view s);
Ethnicity parse_ethnicity(std::string_view s);
IcuUnit parse_icu_unit(std::string_view s);
AdmissionType parse_admission_type(std::string_view s);

struct StaticProfile {
  Gender gender = Gender::Female;
  double age = 0.0;
  Ethnicity ethnicity = Ethnicity::White;
  IcuUnit icu_unit = IcuUnit::Micu;
  AdmissionType admission_type = AdmissionType::Emergency;

  bool operator==(const StaticProfile&) const = default;
};

// hours x 29 cells; a missing measurement is an empty optional.
class MeasurementGrid {
 public:
  MeasurementGrid() = default;
  explicit MeasurementGrid(int n_hours);

  int n_hours() const { return n_hours_; }
  static constexpr int n_variables() { return kNumVariables; }

  const std::optional<double>& at(int hour, int variable) const {
    return cells_[index(hour, variable)];
  }
  void set(int hour, int variable, std::optional<double> v) {
    cells_[index(hour, variable)] = v;
  }

  bool operator==(const MeasurementGrid&) const = default;

 private:
  std::size_t index(int hour, int variable) const;

  int n_hours_ = 0;
  std::vector<std::optional<double>> cells_;
};

using TokenCounts = std::map<std::string, int>;

struct Note {
  int hour = 0;
  TokenCounts tokens;

  bool operator==(const Note&) const = default;
};

using InterventionTrack = std::vector<std::uint8_t>;

struct PatientStay {
  std::string stay_id;
  // Wall-clock hour (0-23) of ICU admission; stay hour t falls on clock hour
  // (admit_hour + t) mod 24.
  int admit_hour = 0;
  StaticProfile statics;
  MeasurementGrid grid;
  // Kept in input order; several notes may share an hour.
  std::vector<Note> notes;
  std::map<InterventionKind, InterventionTrack> interventions;

  int hours() const { return grid.n_hours(); }
  const InterventionTrack& track(InterventionKind k) const;

  bool operator==(const PatientStay&) const = default;
};

struct RawEvent {
  double minutes = 0.0;  // relative to ICU admission
  std::string variable;
  double value = 0.0;
};

// Rounds minutes to the nearest hour, half up (minute 30 -> hour 1).
int round_to_hour(double minutes);

// Buckets events into hourly cells and averages duplicates. When n_hours is
// not given the grid ends at the last populated hour. Throws SchemaError on
// an unknown variable and ValidationError on negative or out-of-range times.
MeasurementGrid ingest_events(std::span<const RawEvent> events,
                              std::optional<int> n_hours = std::nullopt);

struct Violation {
  std::string field;
  std::string rule;
};

std::vector<Violation> validate_stay(const PatientStay& stay);

}  // namespace clinpred
