#pragma once

// Newline-delimited JSON cohort files, one stay per line. Key names are
// documented in docs/cohort_schema.md.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "clinpred/core.hpp"

namespace clinpred {

std::string stay_to_json_line(const PatientStay& stay);
PatientStay stay_from_json_line(const std::string& line);

void write_cohort(std::ostream& os, const std::vector<PatientStay>& stays);
std::vector<PatientStay> read_cohort(std::istream& is);

// A nonzero run hash is written as a leading "# run=<hex>" line; readers
// skip lines starting with '#'.
void write_cohort_file(const std::filesystem::path& path, const std::vector<PatientStay>& stays,
                       std::uint64_t run_hash = 0);
std::vector<PatientStay> read_cohort_file(const std::filesystem::path& path);

}  // namespace clinpred
