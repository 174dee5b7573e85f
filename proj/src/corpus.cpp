#include "rtp/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace rtp {

using nlohmann::json;

int Sample::num_positive() const {
  int n = 0;
  for (int y : labels) n += (y != 0);
  return n;
}

void Sample::validate() const {
  for (int y : labels) {
    if (y != 0 && y != 1)
      throw ValidationError("sample '" + id + "': labels must be 0 or 1");
  }
  const int len = static_cast<int>(tokens.size());
  for (const auto& [cls, spans] : annotations) {
    if (cls < 0 || cls >= num_classes())
      throw ValidationError("sample '" + id + "': annotation class " +
                            std::to_string(cls) + " out of range");
    int prev_end = 0;
    for (const auto& [start, end] : spans) {
      if (start < 0 || start >= end || end > len)
        throw ValidationError("sample '" + id + "': span [" +
                              std::to_string(start) + ", " +
                              std::to_string(end) + ") out of bounds for " +
                              std::to_string(len) + " tokens");
      if (start < prev_end)
        throw ValidationError("sample '" + id +
                              "': overlapping spans for class " +
                              std::to_string(cls));
      prev_end = end;
    }
  }
}

void SynthConfig::validate() const {
  if (samples < 1) throw ValidationError("synth: samples must be >= 1");
  if (num_classes < 1) throw ValidationError("synth: num_classes must be >= 1");
  if (seq_len_range.first < 1 || seq_len_range.first > seq_len_range.second)
    throw ValidationError("synth: invalid seq_len_range");
  if (span_len_range.first < 1 || span_len_range.first > span_len_range.second)
    throw ValidationError("synth: invalid span_len_range");
  if (spans_per_positive < 1)
    throw ValidationError("synth: spans_per_positive must be >= 1");
  if (noise_rate < 0.0 || noise_rate > 1.0)
    throw ValidationError("synth: noise_rate must be in [0, 1]");
  if (triggers_per_class < 1)
    throw ValidationError("synth: triggers_per_class must be >= 1");
  if (span_len_range.second > seq_len_range.first)
    throw ValidationError("synth: spans longer than the shortest sequence");
  // Worst case every class is positive; all planted spans must fit.
  const long worst =
      static_cast<long>(num_classes) * spans_per_positive * span_len_range.second;
  if (worst > seq_len_range.first)
    throw ValidationError(
        "synth: num_classes * spans_per_positive * max span length exceeds "
        "the shortest sequence");
  if (filler_begin() + 1 > vocab_size)
    throw ValidationError(
        "synth: vocab too small for disjoint trigger sets plus filler tokens");
}

Span SynthConfig::trigger_range(int c) const {
  return {c * triggers_per_class, (c + 1) * triggers_per_class};
}

namespace {

Sample sample_from_json(const json& rec, int line_no) {
  const std::string where = "line " + std::to_string(line_no);
  if (!rec.is_object()) throw ValidationError(where + ": record is not a JSON object");
  Sample s;
  try {
    s.id = rec.at("id").get<std::string>();
    s.tokens = rec.at("tokens").get<std::vector<int>>();
    s.labels = rec.at("labels").get<std::vector<int>>();
    if (rec.contains("annotations") && !rec.at("annotations").is_null()) {
      for (const auto& [key, spans] : rec.at("annotations").items()) {
        const int cls = std::stoi(key);
        std::vector<Span> parsed;
        for (const auto& sp : spans) {
          if (!sp.is_array() || sp.size() != 2)
            throw ValidationError("sample '" + s.id + "': span is not a pair");
          parsed.emplace_back(sp[0].get<int>(), sp[1].get<int>());
        }
        std::sort(parsed.begin(), parsed.end());
        s.annotations[cls] = std::move(parsed);
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(where + ": " + e.what());
  } catch (const std::invalid_argument&) {
    throw ValidationError(where + ": annotation keys must be class indices");
  }
  s.validate();
  return s;
}

}  // namespace

std::vector<Sample> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus file: " + path);
  std::vector<Sample> corpus;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded())
      throw ValidationError("line " + std::to_string(line_no) +
                            ": malformed JSON record in " + path);
    corpus.push_back(sample_from_json(rec, line_no));
  }
  return corpus;
}

void save_corpus(const std::vector<Sample>& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write corpus file: " + path);
  for (const Sample& s : corpus) {
    json rec;
    rec["id"] = s.id;
    rec["tokens"] = s.tokens;
    rec["labels"] = s.labels;
    if (s.annotations.empty()) {
      rec["annotations"] = nullptr;
    } else {
      json ann = json::object();
      for (const auto& [cls, spans] : s.annotations) {
        json arr = json::array();
        for (const auto& [a, b] : spans) arr.push_back(json::array({a, b}));
        ann[std::to_string(cls)] = std::move(arr);
      }
      rec["annotations"] = std::move(ann);
    }
    out << rec.dump() << "\n";
  }
}

std::vector<Segment> segment_sample(const Sample& s, int max_segment_len,
                                    int overlap_len) {
  if (overlap_len < 0 || overlap_len >= max_segment_len)
    throw ValidationError("segmentation requires 0 <= overlap_len < max_segment_len");
  const int doc_len = static_cast<int>(s.tokens.size());
  const int stride = max_segment_len - overlap_len;
  std::vector<Segment> segments;
  for (int offset = 0;; offset += stride) {
    const int len = std::min(max_segment_len, doc_len - offset);
    Segment seg;
    seg.parent_id = s.id;
    seg.offset = offset;
    seg.tokens.assign(s.tokens.begin() + offset, s.tokens.begin() + offset + len);
    segments.push_back(std::move(seg));
    if (offset + len >= doc_len) break;
  }
  return segments;
}

Vector blend_segment_scores(
    const std::vector<std::pair<int, Vector>>& segment_scores, int doc_len,
    int overlap_len) {
  if (segment_scores.empty())
    throw ValidationError("blend: no segments supplied");
  if (segment_scores.front().first != 0)
    throw ValidationError("blend: first segment must start at offset 0");

  Vector out(doc_len);
  int covered = 0;  // blended prefix [0, covered)
  for (std::size_t k = 0; k < segment_scores.size(); ++k) {
    const auto& [offset, scores] = segment_scores[k];
    const int len = static_cast<int>(scores.size());
    if (offset < 0 || len < 1 || offset + len > doc_len)
      throw ValidationError("blend: segment exceeds document bounds");
    if (offset > covered)
      throw ValidationError("blend: gap between consecutive segments");
    const int ol = covered - offset;
    if (k > 0 && ol != overlap_len)
      throw ValidationError("blend: inconsistent overlap between segments");
    if (ol >= len)
      throw ValidationError("blend: segment lies inside already-covered range");
    for (int t = 0; t < ol; ++t) {
      const Scalar w_late = static_cast<Scalar>(t + 1) / static_cast<Scalar>(ol + 1);
      out[offset + t] = (1.0 - w_late) * out[offset + t] + w_late * scores[t];
    }
    for (int t = ol; t < len; ++t) out[offset + t] = scores[t];
    covered = offset + len;
  }
  if (covered != doc_len)
    throw ValidationError("blend: segments do not cover the whole document");
  return out;
}

Vector zero_sentence_final_scores(const std::vector<int>& tokens, Vector scores,
                                  const std::vector<int>& punctuation_ids) {
  if (static_cast<int>(tokens.size()) != scores.size())
    throw ValidationError("zero_sentence_final_scores: length mismatch");
  for (int i = 0; i < scores.size(); ++i) {
    for (int p : punctuation_ids) {
      if (tokens[static_cast<std::size_t>(i)] == p) {
        scores[i] = 0.0;
        break;
      }
    }
  }
  return scores;
}

std::vector<Sample> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::vector<Sample> corpus;
  corpus.reserve(static_cast<std::size_t>(cfg.samples));

  for (int n = 0; n < cfg.samples; ++n) {
    Sample s;
    {
      std::ostringstream name;
      name << "synth-" << std::setw(6) << std::setfill('0') << n;
      s.id = name.str();
    }
    const int len = rng.int_range(cfg.seq_len_range.first, cfg.seq_len_range.second);

    s.labels.assign(static_cast<std::size_t>(cfg.num_classes), 0);
    for (int c = 0; c < cfg.num_classes; ++c)
      if (rng.uniform() < 0.35) s.labels[static_cast<std::size_t>(c)] = 1;
    if (s.num_positive() == 0)
      s.labels[static_cast<std::size_t>(rng.below(cfg.num_classes))] = 1;

    // Plan all planted spans, then place them with the cut-point trick:
    // k sorted offsets into the free space yield non-overlapping positions.
    struct Planted {
      int cls;
      int len;
      int start = 0;
    };
    std::vector<Planted> plan;
    for (int c = 0; c < cfg.num_classes; ++c) {
      if (!s.labels[static_cast<std::size_t>(c)]) continue;
      for (int k = 0; k < cfg.spans_per_positive; ++k)
        plan.push_back({c, rng.int_range(cfg.span_len_range.first,
                                         cfg.span_len_range.second)});
    }
    int total_span = 0;
    for (const auto& p : plan) total_span += p.len;
    const int free_space = len - total_span;
    std::vector<int> cuts(plan.size());
    for (auto& c : cuts) c = rng.below(free_space + 1);
    std::sort(cuts.begin(), cuts.end());
    int placed = 0;
    for (std::size_t i = 0; i < plan.size(); ++i) {
      plan[i].start = cuts[i] + placed;
      placed += plan[i].len;
    }

    // Filler everywhere, then overwrite planted spans with trigger tokens.
    const int filler_count = cfg.vocab_size - cfg.filler_begin();
    s.tokens.resize(static_cast<std::size_t>(len));
    std::vector<char> in_span(static_cast<std::size_t>(len), 0);
    for (const auto& p : plan)
      for (int t = p.start; t < p.start + p.len; ++t)
        in_span[static_cast<std::size_t>(t)] = 1;
    for (int t = 0; t < len; ++t) {
      if (in_span[static_cast<std::size_t>(t)]) continue;
      int id = cfg.filler_begin() + rng.below(filler_count);
      if (cfg.noise_rate > 0.0 && rng.uniform() < cfg.noise_rate)
        id = rng.below(cfg.filler_begin());  // spurious trigger token
      s.tokens[static_cast<std::size_t>(t)] = id;
    }
    for (const auto& p : plan) {
      const auto [lo, hi] = cfg.trigger_range(p.cls);
      for (int t = p.start; t < p.start + p.len; ++t)
        s.tokens[static_cast<std::size_t>(t)] = lo + rng.below(hi - lo);
      s.annotations[p.cls].emplace_back(p.start, p.start + p.len);
    }
    for (auto& [cls, spans] : s.annotations) std::sort(spans.begin(), spans.end());

    s.validate();
    corpus.push_back(std::move(s));
  }
  return corpus;
}

}  // namespace rtp
