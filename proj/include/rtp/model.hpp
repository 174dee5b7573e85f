#pragma once

#include "rtp/autodiff.hpp"
#include "rtp/common.hpp"
#include "rtp/mask.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace rtp {

enum class LabelMode { exclusive, multilabel };

std::string to_string(LabelMode mode);
LabelMode label_mode_from_string(const std::string& name);

struct ModelConfig {
  int vocab_size = 0;
  int dim = 64;
  int layers = 2;
  int attention_heads = 4;
  int feedforward_dim = 128;
  int num_classes = 0;
  int max_positions = 512;
  LabelMode label_mode = LabelMode::exclusive;
  std::uint64_t seed = 0;
  // Target initial sigma emitted by the zero-initialized rationale head, so
  // training starts from the uninformative m = 0.5 mask.
  Scalar sigma_init = 3.0;

  void validate() const;
};

struct MaskHeadOutput {
  Matrix w;      // num_classes x content_len
  Matrix sigma;  // num_classes x content_len
};

struct RationaleMask {
  Matrix m;  // num_classes x content_len, entries strictly in (0, 1)
};

struct ModelOutput {
  Vector class_scores;  // pre-activation logits
  Vector class_probs;
  MaskHeadOutput mask_head;
  RationaleMask mask;
};

// Transformer encoder with a classification head on the aggregation token
// and a per-class rationale head emitting (raw_w, raw_sigma) per token.
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  int pad_id() const { return cfg_.vocab_size; }
  int cls_id() const { return cfg_.vocab_size + 1; }
  int sep_id() const { return cfg_.vocab_size + 2; }

  // --- plain inference -----------------------------------------------------
  Matrix embed(const std::vector<int>& tokens,
               std::vector<bool>* keep_flags = nullptr) const;
  ModelOutput forward_full(const std::vector<int>& tokens) const;
  Vector forward_classify(const std::vector<int>& tokens) const;  // probabilities
  Vector forward_classify_embedded(const Matrix& x_embed) const;

  // --- graph construction --------------------------------------------------
  struct TapeParams {
    std::vector<ad::Var> vars;  // aligned with parameters()
  };
  struct RationaleGraph {
    std::vector<ad::Var> w;      // per class, content_len x 1
    std::vector<ad::Var> sigma;  // per class, content_len x 1
    std::vector<ad::Var> mask;   // per class, content_len x 1
  };

  // frozen = true inserts the current parameter values as constants, so the
  // resulting pass contributes no parameter gradients (stop-gradient pass).
  TapeParams tape_params(ad::Tape& tape, bool frozen) const;
  ad::Var embed_graph(const TapeParams& p, const std::vector<int>& tokens,
                      std::vector<bool>* keep_flags) const;
  ad::Var encode_graph(const TapeParams& p, ad::Var x_embed) const;
  ad::Var logits_graph(const TapeParams& p, ad::Var hidden) const;
  ad::Var probs_graph(ad::Var logits) const;
  RationaleGraph rationale_graph(const TapeParams& p, ad::Var hidden) const;

  // --- parameters ----------------------------------------------------------
  const std::vector<Matrix>& parameters() const { return params_; }
  std::vector<Matrix>& parameters() { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }
  std::vector<Matrix> zeros_like_params() const;
  // Whether a parameter receives weight decay (true for weight matrices,
  // false for biases, gains and the embedding-free vectors).
  bool decays(std::size_t param_index) const;
  RowVector background_embedding() const;  // current PAD-token embedding
  RowVector background_from(const std::vector<Matrix>& params) const;
  Scalar sigma_offset() const { return sigma_offset_; }

  void save_checkpoint(const std::string& path) const;
  static Model load_checkpoint(const std::string& path);

  // Test-only switch: drop position information from the embedding.
  void set_use_positions(bool on) { use_positions_ = on; }

 private:
  struct LayerIdx {
    int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    int ln2_g, ln2_b, w1, b1, w2, b2;
  };

  int add_param(const std::string& name, int rows, int cols);
  std::vector<int> token_ids_with_specials(const std::vector<int>& tokens) const;

  ModelConfig cfg_;
  std::vector<Matrix> params_;
  std::vector<std::string> names_;
  Scalar sigma_offset_ = 0.0;
  bool use_positions_ = true;

  int tok_emb_, pos_emb_, lnf_g_, lnf_b_, w_cls_, b_cls_, w_rat_, b_rat_;
  std::vector<LayerIdx> layer_idx_;
};

}  // namespace rtp
