#pragma once

#include "rtp/corpus.hpp"
#include "rtp/model.hpp"

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rtp {

// One evaluated (sample, ground-truth class) pair: continuous scores plus
// the binary token-level ground truth derived from annotation spans.
struct ScoredRationale {
  std::string sample_id;
  int class_index = 0;
  Vector scores;
  std::vector<int> gt;
};

// Expands a sample's annotation spans for one class into a token-level
// binary vector.
std::vector<int> annotation_tokens(const Sample& sample, int class_index);

struct MetricsReport {
  Scalar clf_f1 = 0.0;
  Scalar auc_pr = 0.0;
  Scalar token_f1 = 0.0;
  Scalar d_token_f1 = 0.0;
  Scalar iou_f1 = 0.0;
  Scalar d_iou_f1 = 0.0;
  Scalar sufficiency = 0.0;
  Scalar comprehensiveness = 0.0;
  Scalar perf = 0.0;  // token_f1 + iou_f1 + comprehensiveness - sufficiency

  struct Pair {
    std::string sample_id;
    int class_index = 0;
    Scalar auc_pr = 0.0, token_f1 = 0.0, d_token_f1 = 0.0;
    Scalar iou_f1 = 0.0, d_iou_f1 = 0.0;
    Scalar sufficiency = 0.0, comprehensiveness = 0.0;
  };
  std::vector<Pair> per_pair;

  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
};

// --- token-level agreement -------------------------------------------------

// Area under the precision-recall curve of ranking gt by scores; tied scores
// form one step. gt must contain at least one positive.
Scalar auc_pr(const Vector& scores, const std::vector<int>& gt);

// Binary selection of the ceil(percent/100 * L) highest-scoring positions;
// ties broken toward the lower index.
std::vector<int> top_fraction_select(const Vector& scores, int percent);

// Mean F1 over the 19 selections at p = 5, 10, ..., 95.
Scalar token_f1_sweep(const Vector& scores, const std::vector<int>& gt);

// F1 of the top-k selection with k = number of annotated tokens.
Scalar discrete_token_f1(const Vector& scores, const std::vector<int>& gt);

// --- span-level agreement ----------------------------------------------------

std::vector<Span> extract_spans(const std::vector<int>& binary);

// Harmonic mean of span IoU precision/recall for one binary prediction.
Scalar iou_f1_at(const std::vector<int>& binary_pred,
                 const std::vector<int>& binary_gt);

Scalar iou_f1_sweep(const Vector& scores, const std::vector<int>& gt);
Scalar discrete_iou_f1(const Vector& scores, const std::vector<int>& gt);

// --- faithfulness ------------------------------------------------------------

// Class probability for possibly oversized token sequences: oversized
// documents are segmented (510/100 scheme by default) and segment
// probabilities averaged.
Vector predict_probs(const Model& model, const std::vector<int>& tokens,
                     int max_segment_len = 510, int overlap_len = 100);

Scalar sufficiency(const Model& model, const Sample& sample,
                   const Vector& scores, int class_index,
                   int max_segment_len = 510, int overlap_len = 100);
Scalar comprehensiveness(const Model& model, const Sample& sample,
                         const Vector& scores, int class_index,
                         int max_segment_len = 510, int overlap_len = 100);

// Macro-F1 of the model's label predictions over a corpus.
Scalar classification_f1(const Model& model, const std::vector<Sample>& corpus,
                         int max_segment_len = 510, int overlap_len = 100);

// --- full evaluation -----------------------------------------------------------

struct EvalOptions {
  int max_segment_len = 510;
  int overlap_len = 100;
  bool faithfulness = true;
  std::vector<int> punctuation_ids;  // empty disables sentence-final zeroing
  int jobs = 1;
};

// Externally supplied rationale scores keyed by (sample id, class index).
using ExternalScores = std::map<std::pair<std::string, int>, Vector>;

// Per-class, per-token rationale scores for one sample, segment-blended.
Matrix score_sample(const Model& model, const Sample& sample,
                    int max_segment_len, int overlap_len);

MetricsReport evaluate(const Model& model, const std::vector<Sample>& corpus,
                       const EvalOptions& opts,
                       const ExternalScores* external = nullptr);

}  // namespace rtp
