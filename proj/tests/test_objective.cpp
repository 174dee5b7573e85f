#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "rtp/objective.hpp"

using namespace rtp;

namespace {

ModelConfig tiny_config(LabelMode mode = LabelMode::multilabel) {
  ModelConfig cfg;
  cfg.vocab_size = 20;
  cfg.dim = 16;
  cfg.layers = 1;
  cfg.attention_heads = 2;
  cfg.feedforward_dim = 24;
  cfg.num_classes = 2;
  cfg.max_positions = 32;
  cfg.label_mode = mode;
  cfg.seed = 11;
  return cfg;
}

Sample tiny_sample() {
  Sample s;
  s.id = "t0";
  s.tokens = {2, 5, 9, 9, 1, 0};
  s.labels = {1, 0};
  return s;
}

Scalar breakdown_recombined(const ObjectiveBreakdown& bd, const HyperParams& hp) {
  Scalar total = hp.g1 * bd.ce_main;
  for (const auto& [c, v] : bd.pos_loss) total += hp.g2 * v;
  for (const auto& [c, v] : bd.neg_loss) total += hp.g3 * v;
  total += hp.g4 * bd.sparsity + hp.g5 * bd.smoothness;
  return total;
}

}  // namespace

TEST_CASE("default hyperparameters carry the published constants") {
  const HyperParams hp;
  CHECK(hp.a1 == 0.2);
  CHECK(hp.a2 == 0.001);
  CHECK(hp.a3 == 0.05);
  CHECK(hp.a4 == 0.001);
  CHECK(hp.b1 == 0.02);
  CHECK(hp.b2 == 3.0);
  CHECK(hp.g1 == 2.0);
  CHECK(hp.g2 == 5.0);
  CHECK(hp.g3 == 5.0);
  CHECK(hp.g4 == 3.0);
  CHECK(hp.g5 == 3.0);
  CHECK(hp.alpha_margin == 0.2);
  CHECK_NOTHROW(hp.validate());
  HyperParams bad;
  bad.alpha_margin = 1.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("classification_loss worked values") {
  SUBCASE("exclusive, one-hot at the truth: zero") {
    Vector p(2);
    p << 1.0, 0.0;
    CHECK(classification_loss(p, {1, 0}, LabelMode::exclusive) == 0.0);
  }
  SUBCASE("exclusive, uniform over two classes: ln 2") {
    Vector p(2);
    p << 0.5, 0.5;
    CHECK(classification_loss(p, {1, 0}, LabelMode::exclusive) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("multilabel, both probabilities at 0.5: 2 ln 2") {
    Vector p(2);
    p << 0.5, 0.5;
    CHECK(classification_loss(p, {1, 0}, LabelMode::multilabel) ==
          doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("exclusive with two positives rejected") {
    Vector p(2);
    p << 0.5, 0.5;
    CHECK_THROWS_AS(classification_loss(p, {1, 1}, LabelMode::exclusive),
                    ValidationError);
  }
}

TEST_CASE("rationale_pos_loss worked values") {
  Vector p(2);
  SUBCASE("perfect keep-input prediction: zero") {
    p << 1.0, 0.0;
    CHECK(rationale_pos_loss(p, {1, 0}, 0, LabelMode::exclusive) == 0.0);
  }
  SUBCASE("exclusive with true-class probability one half: ln 2") {
    p << 0.5, 0.5;
    CHECK(rationale_pos_loss(p, {1, 0}, 0, LabelMode::exclusive) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("multilabel with class probability one quarter") {
    p << 0.25, 0.9;
    CHECK(rationale_pos_loss(p, {1, 1}, 0, LabelMode::multilabel) ==
          doctest::Approx(-std::log(0.25)).epsilon(1e-12));
    CHECK(rationale_pos_loss(p, {1, 1}, 0, LabelMode::multilabel) ==
          doctest::Approx(1.38629).epsilon(1e-5));
  }
  SUBCASE("class outside the ground truth rejected") {
    p << 0.5, 0.5;
    CHECK_THROWS_AS(rationale_pos_loss(p, {1, 0}, 1, LabelMode::multilabel),
                    ValidationError);
  }
}

TEST_CASE("rationale_neg_loss is relu with margin") {
  CHECK(rationale_neg_loss(0.1, 0.2) == 0.0);
  CHECK(rationale_neg_loss(0.2, 0.2) == 0.0);
  CHECK(rationale_neg_loss(0.5, 0.2) == doctest::Approx(0.3).epsilon(1e-12));
  // non-negative everywhere, zero on [0, alpha]
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    const Scalar alpha = rng.uniform(0.0, 0.9);
    const Scalar p = rng.uniform();
    const Scalar loss = rationale_neg_loss(p, alpha);
    CHECK(loss >= 0.0);
    if (p <= alpha) CHECK(loss == 0.0);
    if (p > alpha) CHECK(loss == doctest::Approx(p - alpha).epsilon(1e-12));
  }
}

TEST_CASE("sparsity_regularizer worked values") {
  const HyperParams hp;
  SUBCASE("all-zero masks vanish") {
    CHECK(sparsity_regularizer(Matrix::Zero(2, 6), {1, 0}, hp) == 0.0);
  }
  SUBCASE("one ground-truth class at mean one half") {
    CHECK(sparsity_regularizer(Matrix::Constant(1, 4, 0.5), {1}, hp) ==
          doctest::Approx(0.0505).epsilon(1e-12));
  }
  SUBCASE("one non-ground-truth class at mean one half") {
    CHECK(sparsity_regularizer(Matrix::Constant(1, 4, 0.5), {0}, hp) ==
          doctest::Approx(0.013).epsilon(1e-12));
  }
  SUBCASE("monotone non-decreasing in every mask value") {
    Rng rng(3);
    Matrix m(2, 5);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform();
    const Scalar base = sparsity_regularizer(m, {1, 0}, hp);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      Matrix up = m;
      up.data()[i] += 1e-3;
      CHECK(sparsity_regularizer(up, {1, 0}, hp) >= base);
    }
  }
}

TEST_CASE("smoothness_regularizer worked values") {
  const HyperParams hp;
  SUBCASE("sigma at the target vanishes") {
    CHECK(smoothness_regularizer(Matrix::Constant(2, 6, 3.0), hp) == 0.0);
  }
  SUBCASE("one class at sigma 4") {
    CHECK(smoothness_regularizer(Matrix::Constant(1, 5, 4.0), hp) ==
          doctest::Approx(0.02).epsilon(1e-12));
  }
  SUBCASE("two classes at 3 and 5") {
    Matrix sig(2, 5);
    sig.row(0).setConstant(3.0);
    sig.row(1).setConstant(5.0);
    CHECK(smoothness_regularizer(sig, hp) == doctest::Approx(0.08).epsilon(1e-12));
  }
}

TEST_CASE("total_objective: degenerate weights reduce to the classifier") {
  const Model model(tiny_config());
  HyperParams hp;
  hp.g2 = hp.g3 = hp.g4 = hp.g5 = 0.0;
  const ObjectiveBreakdown bd = total_objective(model, tiny_sample(), hp);
  CHECK(bd.total == doctest::Approx(hp.g1 * bd.ce_main).epsilon(1e-12));
  CHECK(bd.pos_loss.empty());
  CHECK(bd.neg_loss.empty());
}

TEST_CASE("total_objective: breakdown recombines to the total") {
  for (LabelMode mode : {LabelMode::multilabel, LabelMode::exclusive}) {
    const Model model(tiny_config(mode));
    const HyperParams hp;
    Sample s = tiny_sample();
    const ObjectiveBreakdown bd = total_objective(model, s, hp);
    CHECK(std::abs(breakdown_recombined(bd, hp) - bd.total) <= 1e-9);
    CHECK(bd.pos_loss.count(0) == 1);
    CHECK(bd.neg_loss.count(0) == 1);
    CHECK(bd.pos_loss.count(1) == 0);
  }
}

TEST_CASE("total_objective: breakdown terms match the value-level ops") {
  const Model model(tiny_config());
  const HyperParams hp;
  const Sample s = tiny_sample();
  const ObjectiveBreakdown bd = total_objective(model, s, hp);

  const ModelOutput out = model.forward_full(s.tokens);
  CHECK(bd.ce_main ==
        doctest::Approx(classification_loss(out.class_probs, s.labels,
                                            LabelMode::multilabel))
            .epsilon(1e-9));
  CHECK(bd.sparsity ==
        doctest::Approx(sparsity_regularizer(out.mask.m, s.labels, hp))
            .epsilon(1e-9));
  CHECK(bd.smoothness ==
        doctest::Approx(smoothness_regularizer(out.mask_head.sigma, hp))
            .epsilon(1e-9));

  std::vector<bool> flags;
  const Matrix x = model.embed(s.tokens, &flags);
  const Vector m0 = out.mask.m.row(0).transpose();
  const BlendedPair blends =
      blend_inputs(x, m0, model.background_embedding(), flags);
  const Vector keep_probs = model.forward_classify_embedded(blends.x_keep);
  const Vector drop_probs = model.forward_classify_embedded(blends.x_drop);
  CHECK(bd.pos_loss.at(0) ==
        doctest::Approx(
            rationale_pos_loss(keep_probs, s.labels, 0, LabelMode::multilabel))
            .epsilon(1e-9));
  CHECK(bd.neg_loss.at(0) ==
        doctest::Approx(rationale_neg_loss(drop_probs[0], hp.alpha_margin))
            .epsilon(1e-9));
}

TEST_CASE("stop-gradient: severed mask kills every rationale gradient") {
  const Model model(tiny_config());
  HyperParams hp;
  hp.g1 = 0.0;  // keep only the pos/neg terms
  hp.g4 = 0.0;
  hp.g5 = 0.0;
  ObjectiveOptions opts;
  opts.sever_mask = true;
  std::vector<Matrix> grads = model.zeros_like_params();
  total_objective(model, tiny_sample(), hp, &grads, opts);
  for (const Matrix& g : grads) CHECK(g.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("faithfulness by construction: ce gradient is untouched by the "
          "rationale machinery") {
  const Model model(tiny_config());
  const Sample s = tiny_sample();

  // (a) full objective, severed mask, reverse sweep from ce only
  HyperParams hp;
  ObjectiveOptions opts;
  opts.sever_mask = true;
  opts.backward_from_ce_only = true;
  std::vector<Matrix> grads_full = model.zeros_like_params();
  const ObjectiveBreakdown bd_full =
      total_objective(model, s, hp, &grads_full, opts);

  // (b) plain classifier: rationale terms disabled outright
  HyperParams hp_plain;
  hp_plain.g2 = hp_plain.g3 = hp_plain.g4 = hp_plain.g5 = 0.0;
  ObjectiveOptions opts_plain;
  opts_plain.backward_from_ce_only = true;
  std::vector<Matrix> grads_plain = model.zeros_like_params();
  const ObjectiveBreakdown bd_plain =
      total_objective(model, s, hp_plain, &grads_plain, opts_plain);

  CHECK(bd_full.ce_main == bd_plain.ce_main);  // bit identical
  for (std::size_t i = 0; i < grads_full.size(); ++i)
    CHECK(grads_full[i] == grads_plain[i]);

  // (c) the intended asymmetry: with the mask attached, rationale terms do
  // reach shared weights through the first pass
  std::vector<Matrix> grads_live = model.zeros_like_params();
  total_objective(model, s, hp, &grads_live);
  Scalar diff = 0.0;
  for (std::size_t i = 0; i < grads_live.size(); ++i)
    diff += (grads_live[i] - 2.0 * grads_plain[i]).cwiseAbs().sum();
  CHECK(diff > 1e-6);
}

TEST_CASE("samples without a positive label are rejected") {
  const Model model(tiny_config());
  Sample s = tiny_sample();
  s.labels = {0, 0};
  CHECK_THROWS_AS(total_objective(model, s, HyperParams{}), ValidationError);
}

TEST_CASE("non-finite losses name the sample and the term") {
  Model model(tiny_config());
  model.parameters()[0](0, 0) = std::numeric_limits<Scalar>::quiet_NaN();
  Sample s = tiny_sample();
  s.tokens = {0, 0, 0};  // touch the poisoned embedding row
  try {
    total_objective(model, s, HyperParams{});
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(e.sample_id == "t0");
    CHECK(e.term == "ce_main");
  }
}

TEST_CASE("a sample with no content tokens degenerates to pure classification") {
  const Model model(tiny_config());
  Sample s;
  s.id = "empty";
  s.labels = {1, 0};
  const HyperParams hp;
  const ObjectiveBreakdown bd = total_objective(model, s, hp);
  CHECK(bd.total == doctest::Approx(hp.g1 * bd.ce_main).epsilon(1e-12));
  CHECK(bd.pos_loss.empty());
  CHECK(bd.sparsity == 0.0);
}

TEST_CASE("total_objective gradients match finite differences") {
  ModelConfig cfg;
  cfg.vocab_size = 12;
  cfg.dim = 16;
  cfg.layers = 1;
  cfg.attention_heads = 2;
  cfg.feedforward_dim = 20;
  cfg.num_classes = 2;
  cfg.max_positions = 16;
  cfg.label_mode = LabelMode::multilabel;
  cfg.seed = 3;
  Model model(cfg);

  Sample s;
  s.id = "fd";
  s.tokens = {1, 4, 7, 2, 10, 3};
  s.labels = {1, 1};

  const HyperParams hp;
  // The stop-gradient passes treat parameters as constants, so the finite
  // differences must hold those occurrences at the unperturbed snapshot.
  const std::vector<Matrix> snapshot = model.parameters();
  ObjectiveOptions opts;
  opts.frozen_params = &snapshot;

  std::vector<Matrix> grads = model.zeros_like_params();
  total_objective(model, s, hp, &grads, opts);

  const Scalar step = 1e-4;
  Rng rng(9);
  int checked = 0;
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    Matrix& p = model.parameters()[i];
    const int probes = std::min<int>(4, static_cast<int>(p.size()));
    for (int k = 0; k < probes; ++k) {
      const Eigen::Index at = rng.below(static_cast<int>(p.size()));
      const Scalar saved = p.data()[at];
      p.data()[at] = saved + step;
      const Scalar up = total_objective(model, s, hp, nullptr, opts).total;
      p.data()[at] = saved - step;
      const Scalar down = total_objective(model, s, hp, nullptr, opts).total;
      p.data()[at] = saved;
      const Scalar numeric = (up - down) / (2 * step);
      const Scalar analytic = grads[i].data()[at];
      const Scalar denom =
          std::max({std::abs(analytic), std::abs(numeric), Scalar(1e-6)});
      CHECK(std::abs(analytic - numeric) / denom <= 1e-2);
      ++checked;
    }
  }
  CHECK(checked > 40);
}
