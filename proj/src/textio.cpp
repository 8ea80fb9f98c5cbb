#include "vpo/textio.hpp"

#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "vpo/errors.hpp"

namespace vpo::textio {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& token) {
  const char* begin = token.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    throw ConfigError("bad numeric token: '" + token + "'");
  }
  return v;
}

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, delim)) out.push_back(cur);
  return out;
}

}  // namespace vpo::textio
