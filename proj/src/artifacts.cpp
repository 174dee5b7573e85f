#include "rtp/artifacts.hpp"

#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace rtp {

namespace fs = std::filesystem;
using nlohmann::json;

void atomic_write_file(const std::string& path, const std::string& content) {
  const fs::path target(path);
  const fs::path tmp = target.parent_path() / (target.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write file: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ValidationError("failed writing file: " + tmp.string());
  }
  fs::rename(tmp, target);
}

ExternalScores load_scores_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open scores file: " + path);
  ExternalScores out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded())
      throw ValidationError("scores file line " + std::to_string(line_no) +
                            ": malformed JSON");
    try {
      const std::string id = rec.at("sample_id").get<std::string>();
      const int cls = rec.at("class_index").get<int>();
      const std::vector<Scalar> values =
          rec.at("scores").get<std::vector<Scalar>>();
      Vector v(static_cast<Eigen::Index>(values.size()));
      for (std::size_t i = 0; i < values.size(); ++i)
        v[static_cast<Eigen::Index>(i)] = values[i];
      out[{id, cls}] = std::move(v);
    } catch (const json::exception& e) {
      throw ValidationError("scores file line " + std::to_string(line_no) +
                            ": " + e.what());
    }
  }
  return out;
}

std::string scores_to_jsonl(const ExternalScores& scores) {
  std::string out;
  for (const auto& [key, v] : scores) {
    json rec;
    rec["sample_id"] = key.first;
    rec["class_index"] = key.second;
    std::vector<Scalar> values(v.data(), v.data() + v.size());
    rec["scores"] = values;
    out += rec.dump();
    out += "\n";
  }
  return out;
}

std::string RunManifest::to_json() const {
  json j;
  j["command"] = command;
  j["version"] = version;
  j["seed"] = seed;
  j["config"] = config;
  j["inputs"] = inputs;
  j["artifacts"] = artifacts;
  return j.dump(2) + "\n";
}

void RunManifest::write(const std::string& path) const {
  atomic_write_file(path, to_json());
}

}  // namespace rtp
