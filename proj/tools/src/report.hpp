#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

namespace leica::cli {

using Json = nlohmann::ordered_json;

inline constexpr const char* kReportSchema = "leica-report/1";

// Shortest decimal form that reads back to the same double.
std::string format_double(double v);

Json optional_number(const std::optional<double>& v);

// Every field is quoted when it contains a comma, quote or newline.
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace leica::cli
