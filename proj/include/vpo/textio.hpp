#pragma once

#include <string>
#include <vector>

namespace vpo::textio {

// Doubles are always printed with 17 significant digits so that every text
// format in the project round-trips bit-exactly and reruns are byte-identical.
std::string fmt(double v);

double parse_double(const std::string& token);

std::vector<std::string> split(const std::string& line, char delim);

}  // namespace vpo::textio
