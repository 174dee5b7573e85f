#pragma once

#include "rtp/common.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace rtp {

// Half-open token span [start, end).
using Span = std::pair<int, int>;

struct Sample {
  std::string id;
  std::vector<int> tokens;                       // ids in [0, vocab_size)
  std::vector<int> labels;                       // one 0/1 entry per class
  std::map<int, std::vector<Span>> annotations;  // class -> sorted spans

  int num_positive() const;
  int num_classes() const { return static_cast<int>(labels.size()); }

  // Checks span bounds, ordering and overlap; throws ValidationError.
  void validate() const;
};

struct Segment {
  std::string parent_id;
  int offset = 0;
  std::vector<int> tokens;
};

struct SynthConfig {
  int vocab_size = 200;
  int num_classes = 3;
  int samples = 2000;
  std::pair<int, int> seq_len_range{20, 40};
  std::pair<int, int> span_len_range{3, 5};
  int spans_per_positive = 1;
  double noise_rate = 0.0;
  std::uint64_t seed = 1;
  int triggers_per_class = 5;

  void validate() const;
  // Token-id block [lo, hi) owned by class c as planted triggers.
  Span trigger_range(int c) const;
  int filler_begin() const { return num_classes * triggers_per_class; }
};

// One JSON object per line; see README for the schema.
std::vector<Sample> load_corpus(const std::string& path);
void save_corpus(const std::vector<Sample>& corpus, const std::string& path);

std::vector<Segment> segment_sample(const Sample& s, int max_segment_len,
                                    int overlap_len);

// Linear cross-fade of per-segment scores back into one document-length
// vector. Inside an overlap of length OL the later segment's weight ramps
// (t+1)/(OL+1) so neither endpoint switches discontinuously.
Vector blend_segment_scores(
    const std::vector<std::pair<int, Vector>>& segment_scores, int doc_len,
    int overlap_len);

// Optional post-processing: zero the score of sentence-final punctuation.
Vector zero_sentence_final_scores(const std::vector<int>& tokens, Vector scores,
                                  const std::vector<int>& punctuation_ids);

// Planted-span corpus: class c is positive iff at least one span of class-c
// trigger tokens was planted; annotations record exactly those spans.
std::vector<Sample> generate_synthetic(const SynthConfig& cfg);

}  // namespace rtp
