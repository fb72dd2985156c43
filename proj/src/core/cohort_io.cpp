#include "clinpred/cohort_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "clinpred/common.hpp"

namespace clinpred {

using nlohmann::json;

std::string stay_to_json_line(const PatientStay& stay) {
  json j;
  j["stay_id"] = stay.stay_id;
  j["admit_hour"] = stay.admit_hour;
  j["n_hours"] = stay.hours();
  j["statics"] = {
      {"gender", to_string(stay.statics.gender)},
      {"age", stay.statics.age},
      {"ethnicity", to_string(stay.statics.ethnicity)},
      {"icu_unit", to_string(stay.statics.icu_unit)},
      {"admission_type", to_string(stay.statics.admission_type)},
  };
  json meas = json::object();
  for (int v = 0; v < kNumVariables; ++v) {
    json col = json::array();
    for (int h = 0; h < stay.hours(); ++h) {
      const auto& cell = stay.grid.at(h, v);
      col.push_back(cell ? json(*cell) : json(nullptr));
    }
    meas[std::string(variables()[v].name)] = std::move(col);
  }
  j["measurements"] = std::move(meas);
  json notes = json::array();
  for (const auto& note : stay.notes)
    notes.push_back({{"hour", note.hour}, {"tokens", note.tokens}});
  j["notes"] = std::move(notes);
  json tracks = json::object();
  for (const auto& [kind, track] : stay.interventions)
    tracks[std::string(to_string(kind))] = track;
  j["interventions"] = std::move(tracks);
  return j.dump();
}

PatientStay stay_from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed cohort line: ") + e.what());
  }
  try {
    PatientStay stay;
    stay.stay_id = j.at("stay_id").get<std::string>();
    stay.admit_hour = j.at("admit_hour").get<int>();
    const int n = j.at("n_hours").get<int>();
    const auto& st = j.at("statics");
    stay.statics.gender = parse_gender(st.at("gender").get<std::string>());
    stay.statics.age = st.at("age").get<double>();
    stay.statics.ethnicity = parse_ethnicity(st.at("ethnicity").get<std::string>());
    stay.statics.icu_unit = parse_icu_unit(st.at("icu_unit").get<std::string>());
    stay.statics.admission_type =
        parse_admission_type(st.at("admission_type").get<std::string>());

    stay.grid = MeasurementGrid(n);
    for (const auto& [name, col] : j.at("measurements").items()) {
      auto v = variable_index(name);
      if (!v) throw SchemaError("unknown variable '" + name + "' in cohort");
      if (static_cast<int>(col.size()) != n)
        throw ValidationError("measurement column '" + name + "' has wrong length");
      for (int h = 0; h < n; ++h)
        if (!col[h].is_null()) stay.grid.set(h, *v, col[h].get<double>());
    }
    for (const auto& nj : j.at("notes"))
      stay.notes.push_back({nj.at("hour").get<int>(), nj.at("tokens").get<TokenCounts>()});
    for (const auto& [name, track] : j.at("interventions").items())
      stay.interventions[parse_intervention(name)] = track.get<InterventionTrack>();
    return stay;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("cohort line missing or mistyped field: ") + e.what());
  }
}

void write_cohort(std::ostream& os, const std::vector<PatientStay>& stays) {
  for (const auto& s : stays) os << stay_to_json_line(s) << '\n';
}

std::vector<PatientStay> read_cohort(std::istream& is) {
  std::vector<PatientStay> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line.front() == '#') continue;
    out.push_back(stay_from_json_line(line));
  }
  return out;
}

void write_cohort_file(const std::filesystem::path& path, const std::vector<PatientStay>& stays,
                       std::uint64_t run_hash) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot write " + path.string());
  if (run_hash) os << "# run=" << hex64(run_hash) << '\n';
  write_cohort(os, stays);
}

std::vector<PatientStay> read_cohort_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read " + path.string());
  return read_cohort(is);
}

}  // namespace clinpred
