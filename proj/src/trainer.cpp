#include "rtp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace rtp {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(SelectionMetric metric) {
  return metric == SelectionMetric::mean5_plus_clf ? "mean5_plus_clf"
                                                   : "aucpr_plus_clf";
}

SelectionMetric selection_metric_from_string(const std::string& name) {
  if (name == "mean5_plus_clf") return SelectionMetric::mean5_plus_clf;
  if (name == "aucpr_plus_clf") return SelectionMetric::aucpr_plus_clf;
  throw ValidationError("unknown selection_metric: " + name);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (learning_rate <= 0.0) throw ValidationError("train: learning_rate must be > 0");
  if (weight_decay < 0.0) throw ValidationError("train: weight_decay must be >= 0");
  if (grad_clip_norm < 0.0) throw ValidationError("train: grad_clip_norm must be >= 0");
  if (eval_every < 1) throw ValidationError("train: eval_every must be >= 1");
  if (overlap_len < 0 || overlap_len >= max_segment_len)
    throw ValidationError("train: need 0 <= overlap_len < max_segment_len");
}

AdamW::AdamW(const Model& model, Scalar learning_rate, Scalar weight_decay,
             Scalar grad_clip_norm)
    : lr_(learning_rate), wd_(weight_decay), clip_(grad_clip_norm) {
  m_ = model.zeros_like_params();
  v_ = model.zeros_like_params();
  decay_.resize(m_.size());
  for (std::size_t i = 0; i < m_.size(); ++i) decay_[i] = model.decays(i);
}

Scalar AdamW::step(Model& model, std::vector<Matrix>& grads) {
  Scalar sq = 0.0;
  for (const Matrix& g : grads) sq += g.squaredNorm();
  Scalar norm = std::sqrt(sq);
  if (clip_ > 0.0 && norm > clip_) {
    const Scalar scale = clip_ / norm;
    for (Matrix& g : grads) g *= scale;
    norm = clip_;
  }
  ++t_;
  const Scalar bc1 = 1.0 - std::pow(beta1_, static_cast<Scalar>(t_));
  const Scalar bc2 = 1.0 - std::pow(beta2_, static_cast<Scalar>(t_));
  std::vector<Matrix>& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = (beta2_ * v_[i].array() + (1.0 - beta2_) * grads[i].array().square())
                .matrix();
    const auto m_hat = m_[i].array() / bc1;
    const auto v_hat = v_[i].array() / bc2;
    Matrix update = (m_hat / (v_hat.sqrt() + eps_)).matrix();
    if (decay_[i]) update += wd_ * params[i];
    params[i] -= lr_ * update;
  }
  return norm;
}

Scalar selection_score(const MetricsReport& r, SelectionMetric metric) {
  if (metric == SelectionMetric::aucpr_plus_clf) return r.auc_pr + r.clf_f1;
  const Scalar mean5 =
      (r.auc_pr + r.token_f1 + r.d_token_f1 + r.iou_f1 + r.d_iou_f1) / 5.0;
  return mean5 + r.clf_f1;
}

ValidationResult validate(const Model& model, const std::vector<Sample>& corpus,
                          SelectionMetric metric, const EvalOptions& eval_opts) {
  if (metric == SelectionMetric::mean5_plus_clf) {
    bool any_annotated = false;
    for (const Sample& s : corpus) {
      for (const auto& [cls, spans] : s.annotations) {
        if (!spans.empty() && cls < s.num_classes() &&
            s.labels[static_cast<std::size_t>(cls)]) {
          any_annotated = true;
          break;
        }
      }
      if (any_annotated) break;
    }
    if (!any_annotated)
      throw ValidationError(
          "mean5_plus_clf selection requires rationale annotations on the "
          "validation corpus");
  }
  ValidationResult out;
  out.report = evaluate(model, corpus, eval_opts);
  out.score = selection_score(out.report, metric);
  return out;
}

namespace {

json stats_to_json(const EpochStats& st) {
  return {{"ce", st.ce},           {"pos", st.pos},
          {"neg", st.neg},         {"sparsity", st.sparsity},
          {"smoothness", st.smoothness}, {"total", st.total},
          {"post_clip_norm", st.post_clip_norm}};
}

}  // namespace

TrainState train(Model& model, const std::vector<Sample>& train_corpus,
                 const std::vector<Sample>& val_corpus, const HyperParams& hp,
                 const TrainConfig& tc) {
  tc.validate();
  hp.validate();
  if (train_corpus.empty()) throw ValidationError("train: empty training corpus");
  std::size_t longest = 0;
  for (const Sample& s : train_corpus) {
    s.validate();
    if (s.num_positive() < 1)
      throw ValidationError("train: sample '" + s.id + "' has no positive label");
    longest = std::max(longest, s.tokens.size());
  }
  for (const Sample& s : val_corpus) {
    s.validate();
    longest = std::max(longest, s.tokens.size());
  }
  // segments must fit the model once segmentation kicks in
  if (static_cast<int>(longest) + 2 > model.config().max_positions &&
      tc.max_segment_len + 2 > model.config().max_positions)
    throw ValidationError(
        "train: max_segment_len plus special tokens exceeds the model's "
        "max_positions");

  const bool keep_artifacts = !tc.run_dir.empty();
  std::ofstream log;
  if (keep_artifacts) {
    fs::create_directories(tc.run_dir);
    log.open(fs::path(tc.run_dir) / "log.jsonl", std::ios::trunc);
    if (!log) throw ValidationError("train: cannot write log under " + tc.run_dir);
  }

  Rng rng(tc.seed);
  AdamW opt(model, tc.learning_rate, tc.weight_decay, tc.grad_clip_norm);
  TrainState state;
  std::vector<Matrix> grads = model.zeros_like_params();

  const int n = static_cast<int>(train_corpus.size());
  const int steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;

  EvalOptions eval_opts;
  eval_opts.max_segment_len = tc.max_segment_len;
  eval_opts.overlap_len = tc.overlap_len;
  eval_opts.jobs = tc.eval_jobs;
  eval_opts.faithfulness = false;  // selection uses agreement + clf only

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);

    EpochStats st;
    int step_in_epoch = 0;
    for (int start = 0; start < n; start += tc.batch_size) {
      const int count = std::min(tc.batch_size, n - start);
      for (Matrix& g : grads) g.setZero();

      HyperParams hp_eff = hp;
      if (tc.warmup_rationale && epoch == 0) {
        const Scalar ramp = static_cast<Scalar>(step_in_epoch + 1) /
                            static_cast<Scalar>(steps_per_epoch);
        hp_eff.g2 *= ramp;
        hp_eff.g3 *= ramp;
        hp_eff.g4 *= ramp;
        hp_eff.g5 *= ramp;
      }

      for (int k = 0; k < count; ++k) {
        const Sample& s = train_corpus[static_cast<std::size_t>(
            order[static_cast<std::size_t>(start + k)])];
        const Sample* chosen = &s;
        Sample segment_holder;
        if (static_cast<int>(s.tokens.size()) > tc.max_segment_len) {
          const std::vector<Segment> segs =
              segment_sample(s, tc.max_segment_len, tc.overlap_len);
          const Segment& seg =
              segs[static_cast<std::size_t>(rng.below(static_cast<int>(segs.size())))];
          segment_holder.id = s.id + "@" + std::to_string(seg.offset);
          segment_holder.tokens = seg.tokens;
          segment_holder.labels = s.labels;
          chosen = &segment_holder;
        }
        const ObjectiveBreakdown bd = total_objective(model, *chosen, hp_eff, &grads);
        st.ce += bd.ce_main;
        for (const auto& [c, v] : bd.pos_loss) st.pos += v;
        for (const auto& [c, v] : bd.neg_loss) st.neg += v;
        st.sparsity += bd.sparsity;
        st.smoothness += bd.smoothness;
        st.total += bd.total;
      }
      const Scalar inv = 1.0 / static_cast<Scalar>(count);
      for (Matrix& g : grads) g *= inv;
      st.post_clip_norm = std::max(st.post_clip_norm, opt.step(model, grads));
      ++step_in_epoch;
    }
    const Scalar inv_n = 1.0 / static_cast<Scalar>(n);
    st.ce *= inv_n;
    st.pos *= inv_n;
    st.neg *= inv_n;
    st.sparsity *= inv_n;
    st.smoothness *= inv_n;
    st.total *= inv_n;
    state.loss_history.push_back(st);
    state.epochs_run = epoch + 1;

    json line;
    line["epoch"] = epoch;
    line["train_loss_terms"] = stats_to_json(st);

    const bool eval_now = ((epoch + 1) % tc.eval_every == 0) || epoch + 1 == tc.epochs;
    if (eval_now && !val_corpus.empty()) {
      const ValidationResult vr =
          validate(model, val_corpus, tc.selection_metric, eval_opts);
      state.val_history.push_back(vr.score);
      line["val_score"] = vr.score;
      line["metrics"] = json::parse(vr.report.to_json());
      line["metrics"].erase("per_pair");
      if (state.best_epoch < 0 || vr.score > state.best_score) {
        state.best_score = vr.score;
        state.best_epoch = epoch;
        if (keep_artifacts) {
          char name[64];
          std::snprintf(name, sizeof(name), "ckpt_epoch_%03d.bin", epoch);
          const fs::path ckpt = fs::path(tc.run_dir) / name;
          model.save_checkpoint(ckpt.string());
          const fs::path best = fs::path(tc.run_dir) / "ckpt_best.bin";
          fs::remove(best);
          fs::create_symlink(name, best);
          state.best_checkpoint = ckpt.string();
        }
      }
    }
    if (keep_artifacts) log << line.dump() << "\n" << std::flush;
  }
  if (keep_artifacts) {
    const fs::path last = fs::path(tc.run_dir) / "ckpt_last.bin";
    model.save_checkpoint(last.string());
    if (state.best_checkpoint.empty()) state.best_checkpoint = last.string();
  }
  state.rng_state = rng.serialize();
  return state;
}

}  // namespace rtp
