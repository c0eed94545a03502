#pragma once

#include <json.hpp>

#include <string>
#include <vector>

namespace seqinf {

// Line-delimited JSON report. The file content is a pure function of the
// command inputs and seed: wall-clock and other volatile facts go only to the
// human-readable summary stream, never into the file.
class RunReport {
 public:
  RunReport(std::string command, std::uint64_t seed) : command_(std::move(command)), seed_(seed) {
    header_["type"] = "run";
    header_["command"] = command_;
    header_["seed"] = seed_;
    header_["config"] = nlohmann::ordered_json::object();
  }

  template <typename T>
  void config(const std::string& key, const T& value) {
    header_["config"][key] = value;
  }

  template <typename T>
  void metric(const std::string& name, const T& value) {
    nlohmann::ordered_json line;
    line["type"] = "metric";
    line["name"] = name;
    line["value"] = value;
    lines_.push_back(std::move(line));
  }

  void artifact(const std::string& kind, const std::string& path) {
    nlohmann::ordered_json line;
    line["type"] = "artifact";
    line["kind"] = kind;
    line["path"] = path;
    lines_.push_back(std::move(line));
  }

  void row(nlohmann::ordered_json line) {
    if (!line.contains("type")) line["type"] = "result";
    lines_.push_back(std::move(line));
  }

  void write(const std::string& path) const;
  // one-paragraph summary for stdout; includes wall-clock when given
  std::string summary(double wall_seconds = -1.0) const;

 private:
  std::string command_;
  std::uint64_t seed_;
  nlohmann::ordered_json header_;
  std::vector<nlohmann::ordered_json> lines_;
};

}  // namespace seqinf
