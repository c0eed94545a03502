#include "seqinf/report.hpp"

#include <fstream>
#include <sstream>

#include "seqinf/errors.hpp"

namespace seqinf {

void RunReport::write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write report: " + path);
  out << header_.dump() << '\n';
  for (const auto& line : lines_) out << line.dump() << '\n';
}

std::string RunReport::summary(double wall_seconds) const {
  std::ostringstream out;
  out << "[" << command_ << "] seed=" << seed_;
  int metrics = 0, results = 0, artifacts = 0;
  for (const auto& line : lines_) {
    const std::string type = line.at("type").get<std::string>();
    if (type == "metric") {
      ++metrics;
      out << "\n  " << line.at("name").get<std::string>() << " = " << line.at("value").dump();
    } else if (type == "artifact") {
      ++artifacts;
    } else {
      ++results;
    }
  }
  out << "\n  rows=" << results << " artifacts=" << artifacts << " metrics=" << metrics;
  if (wall_seconds >= 0.0) out << " wall=" << wall_seconds << "s";
  return out.str();
}

}  // namespace seqinf
