#include "rtp/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

#include "json.hpp"

namespace rtp {

using nlohmann::json;

namespace {

int count_positives(const std::vector<int>& gt) {
  int n = 0;
  for (int g : gt) n += (g != 0);
  return n;
}

void require_positives(const Vector& scores, const std::vector<int>& gt) {
  if (static_cast<std::size_t>(scores.size()) != gt.size())
    throw ValidationError("metrics: score/ground-truth length mismatch");
  if (scores.size() == 0) throw ValidationError("metrics: empty input");
  if (count_positives(gt) == 0)
    throw ValidationError("metrics: ground truth has no positive token");
}

// Indices ordered by score descending, ties by lower index first.
std::vector<int> ranked_indices(const Vector& scores) {
  std::vector<int> idx(static_cast<std::size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  return idx;
}

Scalar binary_f1(const std::vector<int>& pred, const std::vector<int>& gt) {
  int tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (pred[i] && gt[i]) ++tp;
    if (pred[i] && !gt[i]) ++fp;
    if (!pred[i] && gt[i]) ++fn;
  }
  if (2 * tp + fp + fn == 0) return 0.0;
  return 2.0 * tp / static_cast<Scalar>(2 * tp + fp + fn);
}

std::vector<int> top_k_select(const Vector& scores, int k) {
  std::vector<int> out(static_cast<std::size_t>(scores.size()), 0);
  const std::vector<int> idx = ranked_indices(scores);
  for (int i = 0; i < k && i < static_cast<int>(idx.size()); ++i)
    out[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 1;
  return out;
}

constexpr int kSweepPercents[] = {5,  10, 15, 20, 25, 30, 35, 40, 45, 50,
                                  55, 60, 65, 70, 75, 80, 85, 90, 95};

}  // namespace

Scalar auc_pr(const Vector& scores, const std::vector<int>& gt) {
  require_positives(scores, gt);
  const std::vector<int> idx = ranked_indices(scores);
  const Scalar total_pos = static_cast<Scalar>(count_positives(gt));
  Scalar area = 0.0;
  Scalar recall_prev = 0.0;
  int tp = 0, taken = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    // advance over one tie group
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      tp += gt[static_cast<std::size_t>(idx[j])];
      ++taken;
      ++j;
    }
    const Scalar precision = static_cast<Scalar>(tp) / static_cast<Scalar>(taken);
    const Scalar recall = static_cast<Scalar>(tp) / total_pos;
    area += (recall - recall_prev) * precision;
    recall_prev = recall;
    i = j;
  }
  return area;
}

std::vector<int> top_fraction_select(const Vector& scores, int percent) {
  if (percent < 1 || percent > 100)
    throw ValidationError("top_fraction_select: percent out of range");
  const int len = static_cast<int>(scores.size());
  const int k = (percent * len + 99) / 100;  // ceil
  return top_k_select(scores, k);
}

Scalar token_f1_sweep(const Vector& scores, const std::vector<int>& gt) {
  require_positives(scores, gt);
  Scalar total = 0.0;
  for (int p : kSweepPercents) total += binary_f1(top_fraction_select(scores, p), gt);
  return total / 19.0;
}

Scalar discrete_token_f1(const Vector& scores, const std::vector<int>& gt) {
  require_positives(scores, gt);
  return binary_f1(top_k_select(scores, count_positives(gt)), gt);
}

std::vector<Span> extract_spans(const std::vector<int>& binary) {
  std::vector<Span> spans;
  int start = -1;
  for (std::size_t i = 0; i <= binary.size(); ++i) {
    const bool on = i < binary.size() && binary[i] != 0;
    if (on && start < 0) start = static_cast<int>(i);
    if (!on && start >= 0) {
      spans.emplace_back(start, static_cast<int>(i));
      start = -1;
    }
  }
  return spans;
}

namespace {

Scalar span_iou(const Span& a, const Span& b) {
  const int inter = std::max(0, std::min(a.second, b.second) - std::max(a.first, b.first));
  const int uni = (a.second - a.first) + (b.second - b.first) - inter;
  return uni > 0 ? static_cast<Scalar>(inter) / static_cast<Scalar>(uni) : 0.0;
}

Scalar mean_best_iou(const std::vector<Span>& from, const std::vector<Span>& against) {
  if (from.empty()) return 0.0;
  Scalar total = 0.0;
  for (const Span& s : from) {
    Scalar best = 0.0;
    for (const Span& t : against) best = std::max(best, span_iou(s, t));
    total += best;
  }
  return total / static_cast<Scalar>(from.size());
}

}  // namespace

Scalar iou_f1_at(const std::vector<int>& binary_pred,
                 const std::vector<int>& binary_gt) {
  const std::vector<Span> gt_spans = extract_spans(binary_gt);
  if (gt_spans.empty())
    throw ValidationError("iou_f1_at: ground truth has no span");
  const std::vector<Span> pred_spans = extract_spans(binary_pred);
  const Scalar precision = mean_best_iou(pred_spans, gt_spans);
  const Scalar recall = mean_best_iou(gt_spans, pred_spans);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

Scalar iou_f1_sweep(const Vector& scores, const std::vector<int>& gt) {
  require_positives(scores, gt);
  Scalar total = 0.0;
  for (int p : kSweepPercents) total += iou_f1_at(top_fraction_select(scores, p), gt);
  return total / 19.0;
}

Scalar discrete_iou_f1(const Vector& scores, const std::vector<int>& gt) {
  require_positives(scores, gt);
  return iou_f1_at(top_k_select(scores, count_positives(gt)), gt);
}

Vector predict_probs(const Model& model, const std::vector<int>& tokens,
                     int max_segment_len, int overlap_len) {
  if (static_cast<int>(tokens.size()) <= max_segment_len)
    return model.forward_classify(tokens);
  Sample shell;
  shell.id = "(inline)";
  shell.tokens = tokens;
  const std::vector<Segment> segments =
      segment_sample(shell, max_segment_len, overlap_len);
  Vector probs = Vector::Zero(model.config().num_classes);
  for (const Segment& seg : segments) probs += model.forward_classify(seg.tokens);
  return probs / static_cast<Scalar>(segments.size());
}

namespace {

Scalar faithfulness_mean(const Model& model, const Sample& sample,
                         const Vector& scores, int class_index,
                         bool keep_selected, int max_segment_len,
                         int overlap_len) {
  if (class_index < 0 || class_index >= sample.num_classes() ||
      !sample.labels[static_cast<std::size_t>(class_index)])
    throw ValidationError("faithfulness: class " + std::to_string(class_index) +
                          " is not a ground-truth class of sample '" +
                          sample.id + "'");
  if (scores.size() != static_cast<Eigen::Index>(sample.tokens.size()))
    throw ValidationError("faithfulness: scores must cover all content tokens");
  const Scalar base =
      predict_probs(model, sample.tokens, max_segment_len, overlap_len)[class_index];
  Scalar total = 0.0;
  for (int i = 1; i <= 19; ++i) {
    const std::vector<int> selected = top_fraction_select(scores, i * 5);
    std::vector<int> modified = sample.tokens;
    for (std::size_t t = 0; t < modified.size(); ++t) {
      const bool drop = keep_selected ? !selected[t] : selected[t] != 0;
      if (drop) modified[t] = model.pad_id();
    }
    const Scalar p =
        predict_probs(model, modified, max_segment_len, overlap_len)[class_index];
    total += base - p;
  }
  return total / 19.0;
}

}  // namespace

Scalar sufficiency(const Model& model, const Sample& sample,
                   const Vector& scores, int class_index, int max_segment_len,
                   int overlap_len) {
  return faithfulness_mean(model, sample, scores, class_index,
                           /*keep_selected=*/true, max_segment_len, overlap_len);
}

Scalar comprehensiveness(const Model& model, const Sample& sample,
                         const Vector& scores, int class_index,
                         int max_segment_len, int overlap_len) {
  return faithfulness_mean(model, sample, scores, class_index,
                           /*keep_selected=*/false, max_segment_len, overlap_len);
}

Scalar classification_f1(const Model& model, const std::vector<Sample>& corpus,
                         int max_segment_len, int overlap_len) {
  if (corpus.empty())
    throw ValidationError("classification_f1: empty corpus");
  const int nc = model.config().num_classes;
  std::vector<int> tp(static_cast<std::size_t>(nc), 0),
      fp(static_cast<std::size_t>(nc), 0), fn(static_cast<std::size_t>(nc), 0);
  for (const Sample& s : corpus) {
    const Vector probs = predict_probs(model, s.tokens, max_segment_len, overlap_len);
    std::vector<int> pred(static_cast<std::size_t>(nc), 0);
    if (model.config().label_mode == LabelMode::exclusive) {
      Eigen::Index best = 0;
      probs.maxCoeff(&best);
      pred[static_cast<std::size_t>(best)] = 1;
    } else {
      for (int c = 0; c < nc; ++c) pred[static_cast<std::size_t>(c)] = probs[c] > 0.5;
    }
    for (int c = 0; c < nc; ++c) {
      const bool y = s.labels[static_cast<std::size_t>(c)] != 0;
      const bool p = pred[static_cast<std::size_t>(c)] != 0;
      if (p && y) ++tp[static_cast<std::size_t>(c)];
      if (p && !y) ++fp[static_cast<std::size_t>(c)];
      if (!p && y) ++fn[static_cast<std::size_t>(c)];
    }
  }
  Scalar macro = 0.0;
  for (int c = 0; c < nc; ++c) {
    const int denom = 2 * tp[static_cast<std::size_t>(c)] +
                      fp[static_cast<std::size_t>(c)] + fn[static_cast<std::size_t>(c)];
    macro += denom == 0 ? 0.0
                        : 2.0 * tp[static_cast<std::size_t>(c)] /
                              static_cast<Scalar>(denom);
  }
  return macro / static_cast<Scalar>(nc);
}

Matrix score_sample(const Model& model, const Sample& sample,
                    int max_segment_len, int overlap_len) {
  const int nc = model.config().num_classes;
  const int len = static_cast<int>(sample.tokens.size());
  Matrix scores(nc, len);
  if (len == 0) return scores;
  if (len <= max_segment_len) {
    scores = model.forward_full(sample.tokens).mask.m;
    return scores;
  }
  const std::vector<Segment> segments =
      segment_sample(sample, max_segment_len, overlap_len);
  std::vector<Matrix> seg_masks;
  seg_masks.reserve(segments.size());
  for (const Segment& seg : segments)
    seg_masks.push_back(model.forward_full(seg.tokens).mask.m);
  for (int c = 0; c < nc; ++c) {
    std::vector<std::pair<int, Vector>> parts;
    for (std::size_t k = 0; k < segments.size(); ++k)
      parts.emplace_back(segments[k].offset, seg_masks[k].row(c).transpose());
    scores.row(c) = blend_segment_scores(parts, len, overlap_len).transpose();
  }
  return scores;
}

std::vector<int> annotation_tokens(const Sample& sample, int class_index) {
  std::vector<int> gt(sample.tokens.size(), 0);
  const auto it = sample.annotations.find(class_index);
  if (it == sample.annotations.end()) return gt;
  for (const auto& [a, b] : it->second)
    for (int t = a; t < b; ++t) gt[static_cast<std::size_t>(t)] = 1;
  return gt;
}

MetricsReport evaluate(const Model& model, const std::vector<Sample>& corpus,
                       const EvalOptions& opts, const ExternalScores* external) {
  struct PairTask {
    int sample_index;
    int class_index;
  };
  std::vector<PairTask> tasks;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Sample& s = corpus[i];
    for (const auto& [cls, spans] : s.annotations) {
      if (spans.empty()) continue;
      if (cls >= s.num_classes() || !s.labels[static_cast<std::size_t>(cls)])
        continue;  // agreement is judged on ground-truth classes only
      tasks.push_back({static_cast<int>(i), cls});
    }
  }

  std::vector<MetricsReport::Pair> pairs(tasks.size());
  std::map<int, Matrix> cached_scores;  // sample index -> class x token scores

  auto run_task = [&](std::size_t t, const Matrix* scores_for_sample) {
    const PairTask& task = tasks[t];
    const Sample& s = corpus[static_cast<std::size_t>(task.sample_index)];
    Vector scores;
    if (external) {
      const auto it = external->find({s.id, task.class_index});
      if (it == external->end())
        throw ValidationError("no external scores for sample '" + s.id +
                              "' class " + std::to_string(task.class_index));
      scores = it->second;
      if (scores.size() != static_cast<Eigen::Index>(s.tokens.size()))
        throw ValidationError("external scores for sample '" + s.id +
                              "' have wrong length");
    } else {
      scores = scores_for_sample->row(task.class_index).transpose();
    }
    if (!opts.punctuation_ids.empty())
      scores = zero_sentence_final_scores(s.tokens, scores, opts.punctuation_ids);

    ScoredRationale pair;
    pair.sample_id = s.id;
    pair.class_index = task.class_index;
    pair.scores = std::move(scores);
    pair.gt = annotation_tokens(s, task.class_index);
    MetricsReport::Pair& out = pairs[t];
    out.sample_id = pair.sample_id;
    out.class_index = pair.class_index;
    out.auc_pr = auc_pr(pair.scores, pair.gt);
    out.token_f1 = token_f1_sweep(pair.scores, pair.gt);
    out.d_token_f1 = discrete_token_f1(pair.scores, pair.gt);
    out.iou_f1 = iou_f1_sweep(pair.scores, pair.gt);
    out.d_iou_f1 = discrete_iou_f1(pair.scores, pair.gt);
    if (opts.faithfulness) {
      out.sufficiency = sufficiency(model, s, pair.scores, pair.class_index,
                                    opts.max_segment_len, opts.overlap_len);
      out.comprehensiveness =
          comprehensiveness(model, s, pair.scores, pair.class_index,
                            opts.max_segment_len, opts.overlap_len);
    }
  };

  const int jobs = std::max(1, opts.jobs);
  if (jobs == 1 || tasks.size() < 2) {
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      const Sample& s = corpus[static_cast<std::size_t>(tasks[t].sample_index)];
      Matrix* cached = nullptr;
      if (!external) {
        auto [it, fresh] = cached_scores.try_emplace(tasks[t].sample_index);
        if (fresh)
          it->second = score_sample(model, s, opts.max_segment_len, opts.overlap_len);
        cached = &it->second;
      }
      run_task(t, cached);
    }
  } else {
    // fan out over pairs; deterministic because results land by index
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
    for (int w = 0; w < jobs; ++w) {
      workers.emplace_back([&, w] {
        try {
          for (std::size_t t = next.fetch_add(1); t < tasks.size();
               t = next.fetch_add(1)) {
            Matrix scores;
            const Sample& s = corpus[static_cast<std::size_t>(tasks[t].sample_index)];
            if (!external)
              scores = score_sample(model, s, opts.max_segment_len, opts.overlap_len);
            run_task(t, external ? nullptr : &scores);
          }
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& th : workers) th.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  MetricsReport report;
  report.per_pair = std::move(pairs);
  report.clf_f1 =
      classification_f1(model, corpus, opts.max_segment_len, opts.overlap_len);
  if (!report.per_pair.empty()) {
    const Scalar n = static_cast<Scalar>(report.per_pair.size());
    for (const auto& p : report.per_pair) {
      report.auc_pr += p.auc_pr / n;
      report.token_f1 += p.token_f1 / n;
      report.d_token_f1 += p.d_token_f1 / n;
      report.iou_f1 += p.iou_f1 / n;
      report.d_iou_f1 += p.d_iou_f1 / n;
      report.sufficiency += p.sufficiency / n;
      report.comprehensiveness += p.comprehensiveness / n;
    }
  }
  report.perf = report.token_f1 + report.iou_f1 + report.comprehensiveness -
                report.sufficiency;
  return report;
}

std::string MetricsReport::to_json() const {
  json j;
  j["clf_f1"] = clf_f1;
  j["auc_pr"] = auc_pr;
  j["token_f1"] = token_f1;
  j["d_token_f1"] = d_token_f1;
  j["iou_f1"] = iou_f1;
  j["d_iou_f1"] = d_iou_f1;
  j["sufficiency"] = sufficiency;
  j["comprehensiveness"] = comprehensiveness;
  j["perf"] = perf;
  json pp = json::array();
  for (const auto& p : per_pair)
    pp.push_back({{"sample_id", p.sample_id},
                  {"class_index", p.class_index},
                  {"auc_pr", p.auc_pr},
                  {"token_f1", p.token_f1},
                  {"d_token_f1", p.d_token_f1},
                  {"iou_f1", p.iou_f1},
                  {"d_iou_f1", p.d_iou_f1},
                  {"sufficiency", p.sufficiency},
                  {"comprehensiveness", p.comprehensiveness}});
  j["per_pair"] = std::move(pp);
  return j.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  json j = json::parse(text);
  MetricsReport r;
  r.clf_f1 = j.at("clf_f1").get<Scalar>();
  r.auc_pr = j.at("auc_pr").get<Scalar>();
  r.token_f1 = j.at("token_f1").get<Scalar>();
  r.d_token_f1 = j.at("d_token_f1").get<Scalar>();
  r.iou_f1 = j.at("iou_f1").get<Scalar>();
  r.d_iou_f1 = j.at("d_iou_f1").get<Scalar>();
  r.sufficiency = j.at("sufficiency").get<Scalar>();
  r.comprehensiveness = j.at("comprehensiveness").get<Scalar>();
  r.perf = j.at("perf").get<Scalar>();
  for (const auto& p : j.at("per_pair")) {
    MetricsReport::Pair pair;
    pair.sample_id = p.at("sample_id").get<std::string>();
    pair.class_index = p.at("class_index").get<int>();
    pair.auc_pr = p.at("auc_pr").get<Scalar>();
    pair.token_f1 = p.at("token_f1").get<Scalar>();
    pair.d_token_f1 = p.at("d_token_f1").get<Scalar>();
    pair.iou_f1 = p.at("iou_f1").get<Scalar>();
    pair.d_iou_f1 = p.at("d_iou_f1").get<Scalar>();
    pair.sufficiency = p.at("sufficiency").get<Scalar>();
    pair.comprehensiveness = p.at("comprehensiveness").get<Scalar>();
    r.per_pair.push_back(std::move(pair));
  }
  return r;
}

}  // namespace rtp
