#include "rtp/objective.hpp"

#include <cmath>

namespace rtp {

void HyperParams::validate() const {
  const Scalar vals[] = {a1, a2, a3, a4, b1, b2, g1, g2, g3, g4, g5};
  for (Scalar v : vals)
    if (v < 0.0) throw ValidationError("hyperparams must be non-negative");
  if (alpha_margin < 0.0 || alpha_margin >= 1.0)
    throw ValidationError("alpha_margin must lie in [0, 1)");
}

namespace {

int single_positive(const std::vector<int>& labels) {
  int cls = -1;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    if (!labels[c]) continue;
    if (cls >= 0)
      throw ValidationError("exclusive mode requires exactly one positive label");
    cls = static_cast<int>(c);
  }
  if (cls < 0)
    throw ValidationError("exclusive mode requires exactly one positive label");
  return cls;
}

}  // namespace

Scalar classification_loss(const Vector& class_probs,
                           const std::vector<int>& labels, LabelMode mode) {
  if (static_cast<std::size_t>(class_probs.size()) != labels.size())
    throw ValidationError("classification_loss: label/probability size mismatch");
  if (mode == LabelMode::exclusive)
    return -std::log(class_probs[single_positive(labels)]);
  Scalar loss = 0.0;
  for (Eigen::Index c = 0; c < class_probs.size(); ++c) {
    const Scalar p = class_probs[c];
    loss += labels[static_cast<std::size_t>(c)] ? -std::log(p) : -std::log1p(-p);
  }
  return loss;
}

Scalar rationale_pos_loss(const Vector& probs_on_keep,
                          const std::vector<int>& labels, int c, LabelMode mode) {
  if (c < 0 || static_cast<std::size_t>(c) >= labels.size() ||
      !labels[static_cast<std::size_t>(c)])
    throw ValidationError("rationale_pos_loss: class " + std::to_string(c) +
                          " is not a ground-truth class");
  if (mode == LabelMode::exclusive)
    return classification_loss(probs_on_keep, labels, mode);
  return -std::log(probs_on_keep[c]);
}

Scalar rationale_neg_loss(Scalar prob_c_on_drop, Scalar alpha_margin) {
  return std::max(0.0, prob_c_on_drop - alpha_margin);
}

Scalar sparsity_regularizer(const Matrix& masks, const std::vector<int>& labels,
                            const HyperParams& hp) {
  if (static_cast<std::size_t>(masks.rows()) != labels.size())
    throw ValidationError("sparsity_regularizer: one mask row per class required");
  if (masks.cols() == 0) return 0.0;
  Scalar total = 0.0;
  for (Eigen::Index c = 0; c < masks.rows(); ++c) {
    const Scalar m = masks.row(c).mean();
    if (labels[static_cast<std::size_t>(c)])
      total += hp.a1 * m * m + hp.a2 * m;
    else
      total += hp.a3 * m * m + hp.a4 * m;
  }
  return total;
}

Scalar smoothness_regularizer(const Matrix& sigmas, const HyperParams& hp) {
  if (sigmas.cols() == 0) return 0.0;
  Scalar total = 0.0;
  for (Eigen::Index c = 0; c < sigmas.rows(); ++c)
    total += (sigmas.row(c).array() - hp.b2).square().mean();
  return hp.b1 * total;
}

namespace {

// ce for a 1 x C logits row: logsumexp - logit[true] (exclusive) or the
// summed stable binary cross-entropy (multilabel).
ad::Var ce_node(ad::Tape& tape, ad::Var logits, const std::vector<int>& labels,
                LabelMode mode) {
  if (mode == LabelMode::exclusive) {
    const int cls = single_positive(labels);
    return ad::sub(ad::logsumexp_row(logits), ad::entry(logits, 0, cls));
  }
  // sum_c softplus(z_c) - z_c * t_c
  Matrix targets(1, static_cast<Eigen::Index>(labels.size()));
  for (std::size_t c = 0; c < labels.size(); ++c)
    targets(0, static_cast<Eigen::Index>(c)) = static_cast<Scalar>(labels[c]);
  ad::Var t = tape.constant(targets);
  return ad::sum(ad::sub(ad::softplus(logits), ad::cwise_mul(logits, t)));
}

ad::Var pos_node(ad::Tape& tape, ad::Var logits, const std::vector<int>& labels,
                 int c, LabelMode mode) {
  if (mode == LabelMode::exclusive) return ce_node(tape, logits, labels, mode);
  // -log sigmoid(z_c) = softplus(-z_c)
  return ad::softplus(ad::affine(ad::entry(logits, 0, c), -1.0, 0.0));
}

ad::Var prob_of_class(ad::Var logits, int c, LabelMode mode) {
  if (mode == LabelMode::exclusive)
    return ad::entry(ad::row_softmax(logits), 0, c);
  return ad::sigmoid(ad::entry(logits, 0, c));
}

}  // namespace

ObjectiveBreakdown total_objective(const Model& model, const Sample& sample,
                                   const HyperParams& hp,
                                   std::vector<Matrix>* grads,
                                   const ObjectiveOptions& opts) {
  hp.validate();
  if (sample.num_positive() < 1)
    throw ValidationError("sample '" + sample.id +
                          "' has no positive label; cannot train");
  const LabelMode mode = model.config().label_mode;
  const int nc = model.config().num_classes;
  if (sample.num_classes() != nc)
    throw ValidationError("sample '" + sample.id + "' has " +
                          std::to_string(sample.num_classes()) +
                          " labels, model expects " + std::to_string(nc));

  ad::Tape tape;
  const Model::TapeParams params = model.tape_params(tape, /*frozen=*/false);

  // First pass: the only pass that trains the parameters.
  std::vector<bool> keep_flags;
  ad::Var x = model.embed_graph(params, sample.tokens, &keep_flags);
  ad::Var hidden = model.encode_graph(params, x);
  ad::Var logits = model.logits_graph(params, hidden);
  ad::Var ce = ce_node(tape, logits, sample.labels, mode);

  const int content = static_cast<int>(sample.tokens.size());
  const bool rationale_on = content > 0 && (hp.g2 > 0.0 || hp.g3 > 0.0 ||
                                            hp.g4 > 0.0 || hp.g5 > 0.0);

  ObjectiveBreakdown bd;
  bd.ce_main = ce.value()(0, 0);

  ad::Var total = ad::affine(ce, hp.g1, 0.0);

  if (rationale_on) {
    Model::RationaleGraph rg = model.rationale_graph(params, hidden);
    // Second passes: parameters frozen, the mask is the only gradient path.
    const std::vector<Matrix>& frozen_src =
        opts.frozen_params ? *opts.frozen_params : model.parameters();
    Model::TapeParams frozen;
    frozen.vars.reserve(frozen_src.size());
    for (const Matrix& p : frozen_src) frozen.vars.push_back(tape.constant(p));
    // The clean input enters the blends as a constant too; evaluate it from
    // the frozen values (identical to x.value() when both sides share them).
    const Matrix x_clean =
        model.embed_graph(frozen, sample.tokens, nullptr).value();
    const RowVector background = model.background_from(frozen_src);

    for (int c = 0; c < nc; ++c) {
      if (!sample.labels[static_cast<std::size_t>(c)]) continue;
      ad::Var m = rg.mask[static_cast<std::size_t>(c)];
      if (opts.sever_mask) m = tape.constant(m.value());

      if (hp.g2 > 0.0) {
        ad::Var x_keep =
            ad::blend_rows(m, x_clean, background, keep_flags, ad::BlendMode::keep);
        ad::Var h_keep = model.encode_graph(frozen, x_keep);
        ad::Var l_keep = model.logits_graph(frozen, h_keep);
        ad::Var pos = pos_node(tape, l_keep, sample.labels, c, mode);
        bd.pos_loss[c] = pos.value()(0, 0);
        total = ad::add(total, ad::affine(pos, hp.g2, 0.0));
      }
      if (hp.g3 > 0.0) {
        ad::Var x_drop =
            ad::blend_rows(m, x_clean, background, keep_flags, ad::BlendMode::drop);
        ad::Var h_drop = model.encode_graph(frozen, x_drop);
        ad::Var l_drop = model.logits_graph(frozen, h_drop);
        ad::Var p_c = prob_of_class(l_drop, c, mode);
        ad::Var neg = ad::relu(ad::affine(p_c, 1.0, -hp.alpha_margin));
        bd.neg_loss[c] = neg.value()(0, 0);
        total = ad::add(total, ad::affine(neg, hp.g3, 0.0));
      }
    }

    if (hp.g4 > 0.0) {
      ad::Var sparsity;
      for (int c = 0; c < nc; ++c) {
        ad::Var m = rg.mask[static_cast<std::size_t>(c)];
        if (opts.sever_mask) m = tape.constant(m.value());
        ad::Var mu = ad::mean(m);
        const bool gt = sample.labels[static_cast<std::size_t>(c)] != 0;
        ad::Var term = ad::add(ad::affine(ad::cwise_mul(mu, mu), gt ? hp.a1 : hp.a3, 0.0),
                               ad::affine(mu, gt ? hp.a2 : hp.a4, 0.0));
        sparsity = sparsity ? ad::add(sparsity, term) : term;
      }
      bd.sparsity = sparsity.value()(0, 0);
      total = ad::add(total, ad::affine(sparsity, hp.g4, 0.0));
    }

    if (hp.g5 > 0.0) {
      ad::Var smooth;
      for (int c = 0; c < nc; ++c) {
        ad::Var centered =
            ad::affine(rg.sigma[static_cast<std::size_t>(c)], 1.0, -hp.b2);
        ad::Var term = ad::mean(ad::cwise_mul(centered, centered));
        smooth = smooth ? ad::add(smooth, term) : term;
      }
      smooth = ad::affine(smooth, hp.b1, 0.0);
      bd.smoothness = smooth.value()(0, 0);
      total = ad::add(total, ad::affine(smooth, hp.g5, 0.0));
    }
  }

  bd.total = total.value()(0, 0);

  if (!std::isfinite(bd.ce_main)) throw NumericalError(sample.id, "ce_main");
  for (const auto& [c, v] : bd.pos_loss)
    if (!std::isfinite(v))
      throw NumericalError(sample.id, "pos_loss[" + std::to_string(c) + "]");
  for (const auto& [c, v] : bd.neg_loss)
    if (!std::isfinite(v))
      throw NumericalError(sample.id, "neg_loss[" + std::to_string(c) + "]");
  if (!std::isfinite(bd.sparsity)) throw NumericalError(sample.id, "sparsity");
  if (!std::isfinite(bd.smoothness)) throw NumericalError(sample.id, "smoothness");
  if (!std::isfinite(bd.total)) throw NumericalError(sample.id, "total");

  if (grads) {
    if (grads->size() != params.vars.size())
      throw ValidationError("gradient accumulator shape mismatch");
    tape.backward(opts.backward_from_ce_only ? ce : total);
    for (std::size_t i = 0; i < params.vars.size(); ++i) {
      const ad::Var& leaf = params.vars[i];
      if (!tape.grad_touched(leaf.index())) continue;
      (*grads)[i] += leaf.grad();
    }
  }
  return bd;
}

}  // namespace rtp
