#include "rtp/model.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace rtp {

using nlohmann::json;

namespace {
constexpr char kMagic[] = "RTP-CKPT-1\n";
}

std::string to_string(LabelMode mode) {
  return mode == LabelMode::exclusive ? "exclusive" : "multilabel";
}

LabelMode label_mode_from_string(const std::string& name) {
  if (name == "exclusive") return LabelMode::exclusive;
  if (name == "multilabel") return LabelMode::multilabel;
  throw ValidationError("unknown label_mode: " + name);
}

void ModelConfig::validate() const {
  if (vocab_size < 1) throw ValidationError("model: vocab_size must be >= 1");
  if (num_classes < 1) throw ValidationError("model: num_classes must be >= 1");
  if (dim < 1 || layers < 1 || attention_heads < 1 || feedforward_dim < 1)
    throw ValidationError("model: dimensions must be positive");
  if (dim % attention_heads != 0)
    throw ValidationError("model: dim must be divisible by attention_heads");
  if (max_positions < 3)
    throw ValidationError("model: max_positions too small for special tokens");
  if (sigma_init <= kSigmaMin || sigma_init >= kSigmaMax)
    throw ValidationError("model: sigma_init must lie inside (sigma_min, sigma_max)");
}

int Model::add_param(const std::string& name, int rows, int cols) {
  names_.push_back(name);
  params_.emplace_back(Matrix::Zero(rows, cols));
  return static_cast<int>(params_.size()) - 1;
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.dim;
  const int ff = cfg_.feedforward_dim;
  const int nc = cfg_.num_classes;

  tok_emb_ = add_param("tok_emb", cfg_.vocab_size + 3, d);
  pos_emb_ = add_param("pos_emb", cfg_.max_positions, d);
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerIdx idx{};
    idx.ln1_g = add_param(p + "ln1_g", 1, d);
    idx.ln1_b = add_param(p + "ln1_b", 1, d);
    idx.wq = add_param(p + "wq", d, d);
    idx.bq = add_param(p + "bq", 1, d);
    idx.wk = add_param(p + "wk", d, d);
    idx.bk = add_param(p + "bk", 1, d);
    idx.wv = add_param(p + "wv", d, d);
    idx.bv = add_param(p + "bv", 1, d);
    idx.wo = add_param(p + "wo", d, d);
    idx.bo = add_param(p + "bo", 1, d);
    idx.ln2_g = add_param(p + "ln2_g", 1, d);
    idx.ln2_b = add_param(p + "ln2_b", 1, d);
    idx.w1 = add_param(p + "ff_w1", d, ff);
    idx.b1 = add_param(p + "ff_b1", 1, ff);
    idx.w2 = add_param(p + "ff_w2", ff, d);
    idx.b2 = add_param(p + "ff_b2", 1, d);
    layer_idx_.push_back(idx);
  }
  lnf_g_ = add_param("lnf_g", 1, d);
  lnf_b_ = add_param("lnf_b", 1, d);
  w_cls_ = add_param("w_cls", d, nc);
  b_cls_ = add_param("b_cls", 1, nc);
  // Zero-initialized so training starts from the uninformative mask.
  w_rat_ = add_param("w_rat", d, 2 * nc);
  b_rat_ = add_param("b_rat", 1, 2 * nc);

  sigma_offset_ = inverse_softplus<Scalar>(cfg_.sigma_init - kSigmaMin);

  Rng rng(cfg_.seed);
  const Scalar std_dev = 0.02;
  auto init_normal = [&](int idx) {
    for (Eigen::Index i = 0; i < params_[static_cast<std::size_t>(idx)].size(); ++i)
      params_[static_cast<std::size_t>(idx)].data()[i] = std_dev * rng.gaussian();
  };
  init_normal(tok_emb_);
  init_normal(pos_emb_);
  for (const LayerIdx& idx : layer_idx_) {
    init_normal(idx.wq);
    init_normal(idx.wk);
    init_normal(idx.wv);
    init_normal(idx.wo);
    init_normal(idx.w1);
    init_normal(idx.w2);
    params_[static_cast<std::size_t>(idx.ln1_g)].setOnes();
    params_[static_cast<std::size_t>(idx.ln2_g)].setOnes();
  }
  params_[static_cast<std::size_t>(lnf_g_)].setOnes();
  init_normal(w_cls_);
}

std::vector<Matrix> Model::zeros_like_params() const {
  std::vector<Matrix> out;
  out.reserve(params_.size());
  for (const Matrix& p : params_) out.emplace_back(Matrix::Zero(p.rows(), p.cols()));
  return out;
}

bool Model::decays(std::size_t param_index) const {
  const Matrix& p = params_[param_index];
  return p.rows() > 1 && p.cols() > 1;
}

RowVector Model::background_embedding() const {
  return params_[static_cast<std::size_t>(tok_emb_)].row(pad_id());
}

RowVector Model::background_from(const std::vector<Matrix>& params) const {
  return params[static_cast<std::size_t>(tok_emb_)].row(pad_id());
}

std::vector<int> Model::token_ids_with_specials(const std::vector<int>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size() + 2);
  ids.push_back(cls_id());
  for (int t : tokens) {
    // The padding id is accepted so evaluation can substitute removed tokens.
    if (t < 0 || t > pad_id())
      throw ValidationError("token id " + std::to_string(t) +
                            " out of range [0, " +
                            std::to_string(cfg_.vocab_size) + ")");
    ids.push_back(t);
  }
  ids.push_back(sep_id());
  return ids;
}

Model::TapeParams Model::tape_params(ad::Tape& tape, bool frozen) const {
  TapeParams tp;
  tp.vars.reserve(params_.size());
  for (const Matrix& p : params_)
    tp.vars.push_back(frozen ? tape.constant(p) : tape.leaf(p));
  return tp;
}

ad::Var Model::embed_graph(const TapeParams& p, const std::vector<int>& tokens,
                           std::vector<bool>* keep_flags) const {
  const std::vector<int> ids = token_ids_with_specials(tokens);
  const int n = static_cast<int>(ids.size());
  if (n > cfg_.max_positions)
    throw ValidationError("sequence of " + std::to_string(n) +
                          " rows exceeds max_positions " +
                          std::to_string(cfg_.max_positions));
  if (keep_flags) {
    keep_flags->assign(static_cast<std::size_t>(n), false);
    keep_flags->front() = true;
    keep_flags->back() = true;
  }
  ad::Var x = ad::gather_rows(p.vars[static_cast<std::size_t>(tok_emb_)], ids);
  if (use_positions_) {
    std::vector<int> pos(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pos[static_cast<std::size_t>(i)] = i;
    ad::Var pe = ad::gather_rows(p.vars[static_cast<std::size_t>(pos_emb_)], pos);
    x = ad::add(x, pe);
  }
  return x;
}

ad::Var Model::encode_graph(const TapeParams& p, ad::Var x) const {
  const int heads = cfg_.attention_heads;
  const int dh = cfg_.dim / heads;
  const Scalar att_scale = 1.0 / std::sqrt(static_cast<Scalar>(dh));
  auto P = [&](int i) { return p.vars[static_cast<std::size_t>(i)]; };

  for (const LayerIdx& l : layer_idx_) {
    ad::Var h = ad::layer_norm(x, P(l.ln1_g), P(l.ln1_b));
    ad::Var q = ad::add_row(ad::matmul(h, P(l.wq)), P(l.bq));
    ad::Var k = ad::add_row(ad::matmul(h, P(l.wk)), P(l.bk));
    ad::Var v = ad::add_row(ad::matmul(h, P(l.wv)), P(l.bv));
    std::vector<ad::Var> head_out;
    head_out.reserve(static_cast<std::size_t>(heads));
    for (int hd = 0; hd < heads; ++hd) {
      ad::Var qh = ad::cols(q, hd * dh, dh);
      ad::Var kh = ad::cols(k, hd * dh, dh);
      ad::Var vh = ad::cols(v, hd * dh, dh);
      ad::Var scores = ad::affine(ad::matmul_bt(qh, kh), att_scale, 0.0);
      ad::Var att = ad::row_softmax(scores);
      head_out.push_back(ad::matmul(att, vh));
    }
    ad::Var o = ad::hconcat(head_out);
    x = ad::add(x, ad::add_row(ad::matmul(o, P(l.wo)), P(l.bo)));
    ad::Var h2 = ad::layer_norm(x, P(l.ln2_g), P(l.ln2_b));
    ad::Var f = ad::gelu(ad::add_row(ad::matmul(h2, P(l.w1)), P(l.b1)));
    f = ad::add_row(ad::matmul(f, P(l.w2)), P(l.b2));
    x = ad::add(x, f);
  }
  return ad::layer_norm(x, P(lnf_g_), P(lnf_b_));
}

ad::Var Model::logits_graph(const TapeParams& p, ad::Var hidden) const {
  ad::Var cls = ad::row(hidden, 0);
  return ad::add_row(ad::matmul(cls, p.vars[static_cast<std::size_t>(w_cls_)]),
                     p.vars[static_cast<std::size_t>(b_cls_)]);
}

ad::Var Model::probs_graph(ad::Var logits) const {
  return cfg_.label_mode == LabelMode::exclusive ? ad::row_softmax(logits)
                                                 : ad::sigmoid(logits);
}

Model::RationaleGraph Model::rationale_graph(const TapeParams& p,
                                             ad::Var hidden) const {
  const int n = static_cast<int>(hidden.rows());
  const int content = n - 2;
  const int nc = cfg_.num_classes;
  RationaleGraph g;
  if (content <= 0) return g;
  ad::Var tok = ad::rows(hidden, 1, content);
  ad::Var head = ad::add_row(ad::matmul(tok, p.vars[static_cast<std::size_t>(w_rat_)]),
                             p.vars[static_cast<std::size_t>(b_rat_)]);
  const Vector positions = default_positions<Scalar>(content);
  for (int c = 0; c < nc; ++c) {
    ad::Var w = ad::cols(head, c, 1);
    ad::Var raw_sigma = ad::affine(ad::cols(head, nc + c, 1), 1.0, sigma_offset_);
    ad::Var sig = ad::sigma_transform_op(raw_sigma, kSigmaMin, kSigmaMax);
    g.w.push_back(w);
    g.sigma.push_back(sig);
    g.mask.push_back(ad::mask_from_wsigma(w, sig, positions));
  }
  return g;
}

Matrix Model::embed(const std::vector<int>& tokens,
                    std::vector<bool>* keep_flags) const {
  ad::Tape tape;
  TapeParams p = tape_params(tape, /*frozen=*/true);
  return embed_graph(p, tokens, keep_flags).value();
}

ModelOutput Model::forward_full(const std::vector<int>& tokens) const {
  ad::Tape tape;
  TapeParams p = tape_params(tape, /*frozen=*/true);
  ad::Var x = embed_graph(p, tokens, nullptr);
  ad::Var hidden = encode_graph(p, x);
  ad::Var logits = logits_graph(p, hidden);
  ad::Var probs = probs_graph(logits);
  RationaleGraph rg = rationale_graph(p, hidden);

  ModelOutput out;
  out.class_scores = logits.value().row(0).transpose();
  out.class_probs = probs.value().row(0).transpose();
  const int content = static_cast<int>(tokens.size());
  const int nc = cfg_.num_classes;
  out.mask_head.w.resize(nc, content);
  out.mask_head.sigma.resize(nc, content);
  out.mask.m.resize(nc, content);
  for (int c = 0; c < nc && content > 0; ++c) {
    out.mask_head.w.row(c) = rg.w[static_cast<std::size_t>(c)].value().transpose();
    out.mask_head.sigma.row(c) =
        rg.sigma[static_cast<std::size_t>(c)].value().transpose();
    out.mask.m.row(c) = rg.mask[static_cast<std::size_t>(c)].value().transpose();
  }
  return out;
}

Vector Model::forward_classify(const std::vector<int>& tokens) const {
  ad::Tape tape;
  TapeParams p = tape_params(tape, /*frozen=*/true);
  ad::Var x = embed_graph(p, tokens, nullptr);
  ad::Var hidden = encode_graph(p, x);
  ad::Var probs = probs_graph(logits_graph(p, hidden));
  return probs.value().row(0).transpose();
}

Vector Model::forward_classify_embedded(const Matrix& x_embed) const {
  if (x_embed.cols() != cfg_.dim)
    throw ValidationError("embedded input has wrong dimension");
  if (x_embed.rows() > cfg_.max_positions)
    throw ValidationError("embedded input exceeds max_positions");
  ad::Tape tape;
  TapeParams p = tape_params(tape, /*frozen=*/true);
  ad::Var x = tape.constant(x_embed);
  ad::Var hidden = encode_graph(p, x);
  ad::Var probs = probs_graph(logits_graph(p, hidden));
  return probs.value().row(0).transpose();
}

void Model::save_checkpoint(const std::string& path) const {
  json header;
  header["config"] = {{"vocab_size", cfg_.vocab_size},
                      {"dim", cfg_.dim},
                      {"layers", cfg_.layers},
                      {"attention_heads", cfg_.attention_heads},
                      {"feedforward_dim", cfg_.feedforward_dim},
                      {"num_classes", cfg_.num_classes},
                      {"max_positions", cfg_.max_positions},
                      {"label_mode", to_string(cfg_.label_mode)},
                      {"seed", cfg_.seed},
                      {"sigma_init", cfg_.sigma_init}};
  json arrays = json::array();
  for (std::size_t i = 0; i < params_.size(); ++i)
    arrays.push_back({{"name", names_[i]},
                      {"rows", params_[i].rows()},
                      {"cols", params_[i].cols()}});
  header["arrays"] = std::move(arrays);
  const std::string head = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint: " + path);
  out.write(kMagic, static_cast<std::streamsize>(std::strlen(kMagic)));
  const std::uint64_t head_len = head.size();
  out.write(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const Matrix& pmat : params_)
    out.write(reinterpret_cast<const char*>(pmat.data()),
              static_cast<std::streamsize>(sizeof(Scalar) *
                                           static_cast<std::size_t>(pmat.size())));
  if (!out) throw ValidationError("failed writing checkpoint: " + path);
}

Model Model::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  std::string magic(std::strlen(kMagic), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || magic != kMagic)
    throw ValidationError("not an RTP-CKPT-1 checkpoint: " + path);
  std::uint64_t head_len = 0;
  in.read(reinterpret_cast<char*>(&head_len), sizeof(head_len));
  std::string head(head_len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head_len));
  if (!in) throw ValidationError("truncated checkpoint header: " + path);
  json header = json::parse(head, nullptr, false);
  if (header.is_discarded())
    throw ValidationError("malformed checkpoint header: " + path);

  ModelConfig cfg;
  const json& jc = header.at("config");
  cfg.vocab_size = jc.at("vocab_size").get<int>();
  cfg.dim = jc.at("dim").get<int>();
  cfg.layers = jc.at("layers").get<int>();
  cfg.attention_heads = jc.at("attention_heads").get<int>();
  cfg.feedforward_dim = jc.at("feedforward_dim").get<int>();
  cfg.num_classes = jc.at("num_classes").get<int>();
  cfg.max_positions = jc.at("max_positions").get<int>();
  cfg.label_mode = label_mode_from_string(jc.at("label_mode").get<std::string>());
  cfg.seed = jc.at("seed").get<std::uint64_t>();
  cfg.sigma_init = jc.at("sigma_init").get<Scalar>();

  Model model(cfg);
  const json& arrays = header.at("arrays");
  if (arrays.size() != model.params_.size())
    throw ValidationError("checkpoint array count mismatch (config field?)");
  for (std::size_t i = 0; i < model.params_.size(); ++i) {
    const json& a = arrays[i];
    if (a.at("name").get<std::string>() != model.names_[i] ||
        a.at("rows").get<Eigen::Index>() != model.params_[i].rows() ||
        a.at("cols").get<Eigen::Index>() != model.params_[i].cols())
      throw ValidationError("checkpoint mismatch for array '" +
                            model.names_[i] +
                            "': shape disagrees with config field values");
    in.read(reinterpret_cast<char*>(model.params_[i].data()),
            static_cast<std::streamsize>(
                sizeof(Scalar) * static_cast<std::size_t>(model.params_[i].size())));
  }
  if (!in) throw ValidationError("truncated checkpoint payload: " + path);
  return model;
}

}  // namespace rtp
