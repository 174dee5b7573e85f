// rtp — rationalized transformer predictor laboratory.
//
// Subcommands: synth (planted-span corpus generation), train, eval, explain.
// Every command writes a run manifest before doing work; reports and corpora
// are written atomically (temp file + rename).

#include "CLI11.hpp"
#include "json.hpp"
#include "rtp/artifacts.hpp"
#include "rtp/corpus.hpp"
#include "rtp/metrics.hpp"
#include "rtp/model.hpp"
#include "rtp/objective.hpp"
#include "rtp/trainer.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rtp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  SynthConfig cfg;
  std::string out_dir = "synth_out";
};

int run_synth(const SynthArgs& a) {
  a.cfg.validate();
  fs::create_directories(a.out_dir);
  RunManifest manifest;
  manifest.command = "synth";
  manifest.seed = a.cfg.seed;
  manifest.config = {
      {"vocab_size", std::to_string(a.cfg.vocab_size)},
      {"num_classes", std::to_string(a.cfg.num_classes)},
      {"samples", std::to_string(a.cfg.samples)},
      {"seq_len_min", std::to_string(a.cfg.seq_len_range.first)},
      {"seq_len_max", std::to_string(a.cfg.seq_len_range.second)},
      {"span_len_min", std::to_string(a.cfg.span_len_range.first)},
      {"span_len_max", std::to_string(a.cfg.span_len_range.second)},
      {"spans_per_positive", std::to_string(a.cfg.spans_per_positive)},
      {"noise_rate", fmt(a.cfg.noise_rate)},
      {"triggers_per_class", std::to_string(a.cfg.triggers_per_class)},
  };
  for (const char* name : {"train.jsonl", "val.jsonl", "test.jsonl"})
    manifest.artifacts.push_back((fs::path(a.out_dir) / name).string());
  manifest.write((fs::path(a.out_dir) / "manifest.json").string());

  const std::vector<Sample> corpus = generate_synthetic(a.cfg);
  const std::size_t n = corpus.size();
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_val = n / 10;
  auto write_slice = [&](const char* name, std::size_t lo, std::size_t hi) {
    const std::vector<Sample> slice(corpus.begin() + static_cast<long>(lo),
                                    corpus.begin() + static_cast<long>(hi));
    const std::string path = (fs::path(a.out_dir) / name).string();
    save_corpus(slice, path + ".tmp");
    fs::rename(path + ".tmp", path);
  };
  write_slice("train.jsonl", 0, n_train);
  write_slice("val.jsonl", n_train, n_train + n_val);
  write_slice("test.jsonl", n_train + n_val, n);
  std::printf("wrote %zu samples (%zu/%zu/%zu) under %s\n", n, n_train, n_val,
              n - n_train - n_val, a.out_dir.c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string train_path;
  std::string val_path;
  std::string out_dir = "runs/default";
  ModelConfig model;
  HyperParams hp;
  TrainConfig tc;
  std::string label_mode = "multilabel";
  std::string selection = "mean5_plus_clf";
  bool no_warmup = false;
  int vocab_size = 0;  // 0: infer from the corpora
};

int run_train(TrainArgs& a) {
  a.model.label_mode = label_mode_from_string(a.label_mode);
  a.tc.selection_metric = selection_metric_from_string(a.selection);
  a.tc.warmup_rationale = !a.no_warmup;
  a.tc.run_dir = a.out_dir;
  a.model.seed = a.tc.seed;

  const std::vector<Sample> train_set = load_corpus(a.train_path);
  std::vector<Sample> val_set;
  if (!a.val_path.empty()) val_set = load_corpus(a.val_path);
  if (train_set.empty()) throw ValidationError("training corpus is empty");
  a.model.num_classes = train_set.front().num_classes();
  a.model.vocab_size = a.vocab_size;
  for (const Sample& s : train_set)
    for (int t : s.tokens) a.model.vocab_size = std::max(a.model.vocab_size, t + 1);
  for (const Sample& s : val_set)
    for (int t : s.tokens) a.model.vocab_size = std::max(a.model.vocab_size, t + 1);

  fs::create_directories(a.out_dir);
  RunManifest manifest;
  manifest.command = "train";
  manifest.seed = a.tc.seed;
  manifest.inputs = {a.train_path};
  if (!a.val_path.empty()) manifest.inputs.push_back(a.val_path);
  manifest.config = {
      {"dim", std::to_string(a.model.dim)},
      {"layers", std::to_string(a.model.layers)},
      {"attention_heads", std::to_string(a.model.attention_heads)},
      {"feedforward_dim", std::to_string(a.model.feedforward_dim)},
      {"max_positions", std::to_string(a.model.max_positions)},
      {"vocab_size", std::to_string(a.model.vocab_size)},
      {"num_classes", std::to_string(a.model.num_classes)},
      {"label_mode", a.label_mode},
      {"epochs", std::to_string(a.tc.epochs)},
      {"batch_size", std::to_string(a.tc.batch_size)},
      {"learning_rate", fmt(a.tc.learning_rate)},
      {"weight_decay", fmt(a.tc.weight_decay)},
      {"grad_clip_norm", fmt(a.tc.grad_clip_norm)},
      {"eval_every", std::to_string(a.tc.eval_every)},
      {"selection_metric", a.selection},
      {"warmup_rationale", a.no_warmup ? "false" : "true"},
      {"max_segment_len", std::to_string(a.tc.max_segment_len)},
      {"overlap_len", std::to_string(a.tc.overlap_len)},
      {"alpha_margin", fmt(a.hp.alpha_margin)},
      {"alpha1", fmt(a.hp.a1)},
      {"alpha2", fmt(a.hp.a2)},
      {"alpha3", fmt(a.hp.a3)},
      {"alpha4", fmt(a.hp.a4)},
      {"beta1", fmt(a.hp.b1)},
      {"beta2", fmt(a.hp.b2)},
      {"gamma1", fmt(a.hp.g1)},
      {"gamma2", fmt(a.hp.g2)},
      {"gamma3", fmt(a.hp.g3)},
      {"gamma4", fmt(a.hp.g4)},
      {"gamma5", fmt(a.hp.g5)},
  };
  manifest.artifacts = {(fs::path(a.out_dir) / "log.jsonl").string(),
                        (fs::path(a.out_dir) / "ckpt_best.bin").string(),
                        (fs::path(a.out_dir) / "ckpt_last.bin").string()};
  manifest.write((fs::path(a.out_dir) / "manifest.json").string());

  Model model(a.model);
  const TrainState state = train(model, train_set, val_set, a.hp, a.tc);
  std::printf("trained %d epochs; best val score %.6f (epoch %d)\n",
              state.epochs_run, state.best_score, state.best_epoch);
  if (!state.best_checkpoint.empty())
    std::printf("best checkpoint: %s\n", state.best_checkpoint.c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string corpus_path;
  std::string scores_in;
  std::string out_dir = "eval_out";
  EvalOptions opts;
  bool no_faithfulness = false;
  std::uint64_t seed = 0;
};

int run_eval(EvalArgs& a) {
  a.opts.faithfulness = !a.no_faithfulness;
  fs::create_directories(a.out_dir);
  RunManifest manifest;
  manifest.command = "eval";
  manifest.seed = a.seed;
  manifest.inputs = {a.checkpoint, a.corpus_path};
  if (!a.scores_in.empty()) manifest.inputs.push_back(a.scores_in);
  manifest.config = {
      {"max_segment_len", std::to_string(a.opts.max_segment_len)},
      {"overlap_len", std::to_string(a.opts.overlap_len)},
      {"faithfulness", a.opts.faithfulness ? "true" : "false"},
      {"jobs", std::to_string(a.opts.jobs)},
  };
  {
    std::string punct;
    for (int p : a.opts.punctuation_ids)
      punct += (punct.empty() ? "" : ",") + std::to_string(p);
    manifest.config["punctuation_ids"] = punct;
  }
  const std::string report_path = (fs::path(a.out_dir) / "report.json").string();
  manifest.artifacts = {report_path};
  manifest.write((fs::path(a.out_dir) / "manifest.json").string());

  const Model model = Model::load_checkpoint(a.checkpoint);
  const std::vector<Sample> corpus = load_corpus(a.corpus_path);
  ExternalScores external;
  const bool use_external = !a.scores_in.empty();
  if (use_external) external = load_scores_file(a.scores_in);

  const MetricsReport report =
      evaluate(model, corpus, a.opts, use_external ? &external : nullptr);
  atomic_write_file(report_path, report.to_json() + "\n");

  std::printf("%-18s %10s\n", "metric", "value");
  const std::pair<const char*, Scalar> rows[] = {
      {"clf_f1", report.clf_f1},
      {"auc_pr", report.auc_pr},
      {"token_f1", report.token_f1},
      {"d_token_f1", report.d_token_f1},
      {"iou_f1", report.iou_f1},
      {"d_iou_f1", report.d_iou_f1},
      {"sufficiency", report.sufficiency},
      {"comprehensiveness", report.comprehensiveness},
      {"perf", report.perf},
  };
  for (const auto& [name, value] : rows) std::printf("%-18s %10.4f\n", name, value);
  std::printf("report: %s\n", report_path.c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// explain
// ---------------------------------------------------------------------------

struct ExplainArgs {
  std::string checkpoint;
  std::string corpus_path;
  std::string tokens_file;
  int index = 0;
  int target_class = -1;  // default: argmax prediction
  std::string out_dir = "explain_out";
  std::string vocab_path;
};

std::string html_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

int run_explain(ExplainArgs& a) {
  fs::create_directories(a.out_dir);

  Sample sample;
  if (!a.tokens_file.empty()) {
    std::ifstream in(a.tokens_file);
    if (!in) throw ValidationError("cannot open tokens file: " + a.tokens_file);
    sample.id = fs::path(a.tokens_file).stem().string();
    int t = 0;
    while (in >> t) sample.tokens.push_back(t);
    if (sample.tokens.empty())
      throw ValidationError("tokens file holds no token ids");
  } else {
    if (a.corpus_path.empty())
      throw ValidationError("explain needs --corpus with --index, or --tokens-file");
    const std::vector<Sample> corpus = load_corpus(a.corpus_path);
    if (a.index < 0 || static_cast<std::size_t>(a.index) >= corpus.size())
      throw ValidationError("--index " + std::to_string(a.index) +
                            " outside corpus of " +
                            std::to_string(corpus.size()) + " samples");
    sample = corpus[static_cast<std::size_t>(a.index)];
  }

  RunManifest manifest;
  manifest.command = "explain";
  manifest.inputs = {a.checkpoint};
  if (!a.corpus_path.empty()) manifest.inputs.push_back(a.corpus_path);
  if (!a.tokens_file.empty()) manifest.inputs.push_back(a.tokens_file);
  manifest.config = {{"index", std::to_string(a.index)},
                     {"class", std::to_string(a.target_class)},
                     {"sample_id", sample.id}};
  manifest.write((fs::path(a.out_dir) / "manifest.json").string());

  const Model model = Model::load_checkpoint(a.checkpoint);
  const int nc = model.config().num_classes;
  if (a.target_class >= nc)
    throw ValidationError("--class " + std::to_string(a.target_class) +
                          " out of range for " + std::to_string(nc) + " classes");

  std::vector<std::string> vocab;
  if (!a.vocab_path.empty()) {
    std::ifstream in(a.vocab_path);
    if (!in) throw ValidationError("cannot open vocab file: " + a.vocab_path);
    std::string line;
    while (std::getline(in, line)) vocab.push_back(line);
  }

  const ModelOutput out = model.forward_full(sample.tokens);
  int cls = a.target_class;
  if (cls < 0) {
    Eigen::Index best = 0;
    out.class_probs.maxCoeff(&best);
    cls = static_cast<int>(best);
  }

  // raw scores in the exchange format, one line per class
  ExternalScores scores;
  for (int c = 0; c < nc; ++c)
    scores[{sample.id, c}] = out.mask.m.row(c).transpose();
  const std::string scores_path =
      (fs::path(a.out_dir) / ("scores_" + sample.id + ".jsonl")).string();
  atomic_write_file(scores_path, scores_to_jsonl(scores));

  std::ostringstream html;
  html << "<!doctype html>\n<html><head><meta charset=\"utf-8\">\n"
       << "<title>rationale " << html_escape(sample.id) << " class " << cls
       << "</title>\n<style>\n"
       << "body { font-family: sans-serif; margin: 2em; max-width: 60em; }\n"
       << ".tok { padding: 1px 3px; border-radius: 3px; line-height: 1.7; }\n"
       << "table { border-collapse: collapse; }\n"
       << "td, th { border: 1px solid #ccc; padding: 2px 8px; }\n"
       << "</style></head><body>\n"
       << "<h2>sample " << html_escape(sample.id)
       << " &mdash; rationale for class " << cls
       << "</h2>\n<table><tr><th>class</th><th>probability</th></tr>\n";
  for (int c = 0; c < nc; ++c)
    html << "<tr><td>" << c << (c == cls ? " (shown)" : "") << "</td><td>"
         << fmt(out.class_probs[c]) << "</td></tr>\n";
  html << "</table>\n<p>\n";
  for (std::size_t t = 0; t < sample.tokens.size(); ++t) {
    const Scalar m = out.mask.m(cls, static_cast<Eigen::Index>(t));
    const int id = sample.tokens[t];
    const std::string text = static_cast<std::size_t>(id) < vocab.size()
                                 ? vocab[static_cast<std::size_t>(id)]
                                 : std::to_string(id);
    html << "<span class=\"tok\" style=\"background-color: rgba(255,153,0,"
         << fmt(m) << ")\" title=\"m=" << fmt(m) << "\">" << html_escape(text)
         << "</span> ";
  }
  html << "\n</p></body></html>\n";

  const std::string html_path =
      (fs::path(a.out_dir) /
       ("explain_" + sample.id + "_c" + std::to_string(cls) + ".html"))
          .string();
  atomic_write_file(html_path, html.str());

  std::printf("class probabilities:");
  for (int c = 0; c < nc; ++c) std::printf(" %d:%.4f", c, out.class_probs[c]);
  std::printf("\nrendered: %s\nscores:   %s\n", html_path.c_str(),
              scores_path.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rationalized transformer predictor laboratory"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.set_config("--config", "", "flat key=value config file; flags override");
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* cmd_synth = app.add_subcommand("synth", "generate a planted-span corpus");
  cmd_synth->add_option("--out", synth.out_dir, "output directory");
  cmd_synth->add_option("--seed", synth.cfg.seed, "generator seed");
  cmd_synth->add_option("--samples", synth.cfg.samples, "total samples");
  cmd_synth->add_option("--classes", synth.cfg.num_classes, "number of classes");
  cmd_synth->add_option("--vocab-size", synth.cfg.vocab_size, "vocabulary size");
  cmd_synth->add_option("--seq-len-min", synth.cfg.seq_len_range.first, "");
  cmd_synth->add_option("--seq-len-max", synth.cfg.seq_len_range.second, "");
  cmd_synth->add_option("--span-len-min", synth.cfg.span_len_range.first, "");
  cmd_synth->add_option("--span-len-max", synth.cfg.span_len_range.second, "");
  cmd_synth->add_option("--spans-per-positive", synth.cfg.spans_per_positive, "");
  cmd_synth->add_option("--noise-rate", synth.cfg.noise_rate, "");
  cmd_synth->add_option("--triggers-per-class", synth.cfg.triggers_per_class, "");

  TrainArgs train_args;
  CLI::App* cmd_train = app.add_subcommand("train", "train a model");
  cmd_train->add_option("--train", train_args.train_path, "training corpus")
      ->required();
  cmd_train->add_option("--val", train_args.val_path, "validation corpus");
  cmd_train->add_option("--out", train_args.out_dir, "run directory");
  cmd_train->add_option("--seed", train_args.tc.seed, "training seed");
  cmd_train->add_option("--epochs", train_args.tc.epochs, "");
  cmd_train->add_option("--batch-size", train_args.tc.batch_size, "");
  cmd_train->add_option("--learning-rate", train_args.tc.learning_rate, "");
  cmd_train->add_option("--weight-decay", train_args.tc.weight_decay, "");
  cmd_train->add_option("--grad-clip-norm", train_args.tc.grad_clip_norm, "");
  cmd_train->add_option("--eval-every", train_args.tc.eval_every, "");
  cmd_train->add_option("--jobs", train_args.tc.eval_jobs,
                        "worker threads for per-epoch validation");
  cmd_train->add_option("--selection-metric", train_args.selection,
                        "mean5_plus_clf | aucpr_plus_clf");
  cmd_train->add_flag("--no-warmup", train_args.no_warmup,
                      "disable the first-epoch rationale ramp");
  cmd_train->add_option("--max-segment-len", train_args.tc.max_segment_len, "");
  cmd_train->add_option("--overlap-len", train_args.tc.overlap_len, "");
  cmd_train->add_option("--dim", train_args.model.dim, "");
  cmd_train->add_option("--layers", train_args.model.layers, "");
  cmd_train->add_option("--heads", train_args.model.attention_heads, "");
  cmd_train->add_option("--ffn-dim", train_args.model.feedforward_dim, "");
  cmd_train->add_option("--max-positions", train_args.model.max_positions, "");
  cmd_train->add_option("--vocab-size", train_args.vocab_size,
                        "vocabulary size (default: inferred from the corpora)");
  cmd_train->add_option("--label-mode", train_args.label_mode,
                        "exclusive | multilabel");
  cmd_train->add_option("--alpha-margin", train_args.hp.alpha_margin, "");
  cmd_train->add_option("--alpha1", train_args.hp.a1, "");
  cmd_train->add_option("--alpha2", train_args.hp.a2, "");
  cmd_train->add_option("--alpha3", train_args.hp.a3, "");
  cmd_train->add_option("--alpha4", train_args.hp.a4, "");
  cmd_train->add_option("--beta1", train_args.hp.b1, "");
  cmd_train->add_option("--beta2", train_args.hp.b2, "");
  cmd_train->add_option("--gamma1", train_args.hp.g1, "");
  cmd_train->add_option("--gamma2", train_args.hp.g2, "");
  cmd_train->add_option("--gamma3", train_args.hp.g3, "");
  cmd_train->add_option("--gamma4", train_args.hp.g4, "");
  cmd_train->add_option("--gamma5", train_args.hp.g5, "");

  EvalArgs eval_args;
  CLI::App* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  cmd_eval->add_option("--checkpoint", eval_args.checkpoint, "")->required();
  cmd_eval->add_option("--corpus", eval_args.corpus_path, "")->required();
  cmd_eval->add_option("--scores-in", eval_args.scores_in,
                       "external rationale scores (jsonl) instead of the model's");
  cmd_eval->add_option("--out", eval_args.out_dir, "");
  cmd_eval->add_option("--seed", eval_args.seed, "");
  cmd_eval->add_option("--jobs", eval_args.opts.jobs, "");
  cmd_eval->add_option("--max-segment-len", eval_args.opts.max_segment_len, "");
  cmd_eval->add_option("--overlap-len", eval_args.opts.overlap_len, "");
  cmd_eval->add_flag("--no-faithfulness", eval_args.no_faithfulness, "");
  cmd_eval->add_option("--punctuation-ids", eval_args.opts.punctuation_ids,
                       "sentence-final token ids whose scores are zeroed");

  ExplainArgs explain_args;
  CLI::App* cmd_explain =
      app.add_subcommand("explain", "render a rationale for one sample");
  cmd_explain->add_option("--checkpoint", explain_args.checkpoint, "")->required();
  cmd_explain->add_option("--corpus", explain_args.corpus_path, "");
  cmd_explain->add_option("--tokens-file", explain_args.tokens_file,
                          "whitespace-separated token ids");
  cmd_explain->add_option("--index", explain_args.index, "sample index in --corpus");
  cmd_explain->add_option("--class", explain_args.target_class,
                          "target class (default: argmax)");
  cmd_explain->add_option("--out", explain_args.out_dir, "");
  cmd_explain->add_option("--vocab", explain_args.vocab_path,
                          "optional token-text file, one token per line");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (cmd_synth->parsed()) return run_synth(synth);
    if (cmd_train->parsed()) return run_train(train_args);
    if (cmd_eval->parsed()) return run_eval(eval_args);
    if (cmd_explain->parsed()) return run_explain(explain_args);
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
