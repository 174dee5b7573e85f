#pragma once

#include "rtp/corpus.hpp"
#include "rtp/metrics.hpp"
#include "rtp/model.hpp"
#include "rtp/objective.hpp"

#include <string>
#include <vector>

namespace rtp {

enum class SelectionMetric { mean5_plus_clf, aucpr_plus_clf };

std::string to_string(SelectionMetric metric);
SelectionMetric selection_metric_from_string(const std::string& name);

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  Scalar learning_rate = 3e-4;
  Scalar weight_decay = 0.01;
  Scalar grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
  int eval_every = 1;
  SelectionMetric selection_metric = SelectionMetric::aucpr_plus_clf;
  // Ramp the rationale weights g2..g5 linearly over the first epoch so the
  // freshly initialized classifier does not push noise through the blends.
  bool warmup_rationale = true;
  int max_segment_len = 510;
  int overlap_len = 100;
  int eval_jobs = 1;    // worker threads for the per-epoch validation
  std::string run_dir;  // empty: keep no artifacts on disk

  void validate() const;
};

struct EpochStats {
  Scalar ce = 0.0, pos = 0.0, neg = 0.0, sparsity = 0.0, smoothness = 0.0;
  Scalar total = 0.0;
  Scalar post_clip_norm = 0.0;  // max over the epoch's optimizer steps
};

struct TrainState {
  int epochs_run = 0;
  Scalar best_score = 0.0;
  int best_epoch = -1;
  std::string best_checkpoint;
  std::string rng_state;  // serialized generator state after the last step
  std::vector<Scalar> val_history;
  std::vector<EpochStats> loss_history;
};

// Decoupled-weight-decay Adam with global-norm gradient clipping.
class AdamW {
 public:
  AdamW(const Model& model, Scalar learning_rate, Scalar weight_decay,
        Scalar grad_clip_norm);

  // Applies one update in place; returns the post-clip global gradient norm.
  Scalar step(Model& model, std::vector<Matrix>& grads);

 private:
  Scalar lr_, wd_, clip_;
  Scalar beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
  std::vector<bool> decay_;
};

struct ValidationResult {
  Scalar score = 0.0;
  MetricsReport report;
};

Scalar selection_score(const MetricsReport& report, SelectionMetric metric);

ValidationResult validate(const Model& model, const std::vector<Sample>& corpus,
                          SelectionMetric metric, const EvalOptions& eval_opts);

TrainState train(Model& model, const std::vector<Sample>& train_corpus,
                 const std::vector<Sample>& val_corpus, const HyperParams& hp,
                 const TrainConfig& tc);

}  // namespace rtp
