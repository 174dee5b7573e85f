#pragma once

#include "rtp/common.hpp"
#include "rtp/metrics.hpp"

#include <map>
#include <string>
#include <vector>

namespace rtp {

inline constexpr const char* kToolVersion = "rtp 0.1.0";

// Writes via a temporary file in the same directory, then renames, so a crash
// never leaves a partially written artifact behind.
void atomic_write_file(const std::string& path, const std::string& content);

// Rationale-score exchange format: one JSON object per line with keys
// sample_id, class_index and scores.
ExternalScores load_scores_file(const std::string& path);
std::string scores_to_jsonl(const ExternalScores& scores);

struct RunManifest {
  std::string command;
  std::string version = kToolVersion;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config;  // resolved key -> value
  std::vector<std::string> inputs;
  std::vector<std::string> artifacts;

  std::string to_json() const;
  void write(const std::string& path) const;  // atomic
};

}  // namespace rtp
