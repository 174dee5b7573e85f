#pragma once

#include "rtp/common.hpp"

#include <cmath>
#include <functional>
#include <initializer_list>
#include <utility>
#include <vector>

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape owns a growing list of matrix-valued nodes; Var is a cheap handle.
// Nodes created via Tape::constant are excluded from gradient flow entirely:
// ops whose parents are all constants produce constants, which is how the
// stop-gradient passes of the training objective are expressed.
namespace rtp::ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int index) : tape_(tape), index_(index) {}

  const Matrix& value() const;
  // Accumulated gradient; zeros if nothing has flowed here yet.
  const Matrix& grad() const;

  Tape* tape() const { return tape_; }
  int index() const { return index_; }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  explicit operator bool() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int index_ = -1;
};

class Tape {
 public:
  using BackFn = std::function<void(Tape&, const Matrix& upstream)>;

  Var leaf(Matrix value) { return push(std::move(value), false, nullptr); }
  Var constant(Matrix value) { return push(std::move(value), true, nullptr); }

  Var make(Matrix value, std::initializer_list<Var> parents, BackFn back) {
    bool all_const = true;
    for (const Var& p : parents) all_const = all_const && !tracked(p.index());
    if (all_const) return push(std::move(value), true, nullptr);
    return push(std::move(value), false, std::move(back));
  }

  // For ops with dynamic parent lists that check constness themselves.
  Var make_tracked(Matrix value, BackFn back) {
    return push(std::move(value), false, std::move(back));
  }

  const Matrix& value(int i) const { return nodes_[static_cast<std::size_t>(i)].value; }
  bool tracked(int i) const { return !nodes_[static_cast<std::size_t>(i)].no_grad; }

  // Gradient buffer, allocated (zeroed) on first use.
  Matrix& grad(int i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool grad_touched(int i) const {
    return nodes_[static_cast<std::size_t>(i)].grad.size() != 0;
  }

  // Reverse sweep from `root`, seeded with ones (use the scalar overloads of
  // the ops so roots are 1x1 in practice).
  void backward(const Var& root) {
    grad(root.index()).setOnes();
    for (int i = root.index(); i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.back && n.grad.size() != 0) n.back(*this, n.grad);
    }
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool no_grad = false;
    BackFn back;
  };

  Var push(Matrix value, bool no_grad, BackFn back) {
    Node n;
    n.value = std::move(value);
    n.no_grad = no_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(index_); }
inline const Matrix& Var::grad() const { return tape_->grad(index_); }

// ---------------------------------------------------------------------------
// elementwise and linear ops
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  return t.make(a.value() + b.value(), {a, b},
                [ai = a.index(), bi = b.index()](Tape& t, const Matrix& g) {
                  if (t.tracked(ai)) t.grad(ai) += g;
                  if (t.tracked(bi)) t.grad(bi) += g;
                });
}

inline Var sub(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  return t.make(a.value() - b.value(), {a, b},
                [ai = a.index(), bi = b.index()](Tape& t, const Matrix& g) {
                  if (t.tracked(ai)) t.grad(ai) += g;
                  if (t.tracked(bi)) t.grad(bi) -= g;
                });
}

// k * a + c, elementwise
inline Var affine(const Var& a, Scalar k, Scalar c) {
  Tape& t = *a.tape();
  return t.make((k * a.value().array() + c).matrix(), {a},
                [ai = a.index(), k](Tape& t, const Matrix& g) {
                  if (t.tracked(ai)) t.grad(ai) += k * g;
                });
}

inline Var cwise_mul(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  return t.make(a.value().cwiseProduct(b.value()), {a, b},
                [ai = a.index(), bi = b.index()](Tape& t, const Matrix& g) {
                  if (t.tracked(ai)) t.grad(ai) += g.cwiseProduct(t.value(bi));
                  if (t.tracked(bi)) t.grad(bi) += g.cwiseProduct(t.value(ai));
                });
}

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  return t.make(a.value() * b.value(), {a, b},
                [ai = a.index(), bi = b.index()](Tape& t, const Matrix& g) {
                  if (t.tracked(ai)) t.grad(ai).noalias() += g * t.value(bi).transpose();
                  if (t.tracked(bi)) t.grad(bi).noalias() += t.value(ai).transpose() * g;
                });
}

// a * b^T
inline Var matmul_bt(const Var& a, const Var& b) {
  Tape& t = *a.tape();
  return t.make(a.value() * b.value().transpose(), {a, b},
                [ai = a.index(), bi = b.index()](Tape& t, const Matrix& g) {
                  if (t.tracked(ai)) t.grad(ai).noalias() += g * t.value(bi);
                  if (t.tracked(bi)) t.grad(bi).noalias() += g.transpose() * t.value(ai);
                });
}

// broadcast a 1 x n bias over every row
inline Var add_row(const Var& a, const Var& bias) {
  Tape& t = *a.tape();
  Matrix v = a.value();
  v.rowwise() += bias.value().row(0);
  return t.make(std::move(v), {a, bias},
                [ai = a.index(), bi = bias.index()](Tape& t, const Matrix& g) {
                  if (t.tracked(ai)) t.grad(ai) += g;
                  if (t.tracked(bi)) t.grad(bi) += g.colwise().sum();
                });
}

inline Var rows(const Var& a, int first, int n) {
  Tape& t = *a.tape();
  return t.make(a.value().middleRows(first, n), {a},
                [ai = a.index(), first, n](Tape& t, const Matrix& g) {
                  if (t.tracked(ai)) t.grad(ai).middleRows(first, n) += g;
                });
}

inline Var cols(const Var& a, int first, int n) {
  Tape& t = *a.tape();
  return t.make(a.value().middleCols(first, n), {a},
                [ai = a.index(), first, n](Tape& t, const Matrix& g) {
                  if (t.tracked(ai)) t.grad(ai).middleCols(first, n) += g;
                });
}

inline Var row(const Var& a, int i) { return rows(a, i, 1); }

inline Var entry(const Var& a, int i, int j) {
  Tape& t = *a.tape();
  Matrix v(1, 1);
  v(0, 0) = a.value()(i, j);
  return t.make(std::move(v), {a},
                [ai = a.index(), i, j](Tape& t, const Matrix& g) {
                  if (t.tracked(ai)) t.grad(ai)(i, j) += g(0, 0);
                });
}

inline Var hconcat(const std::vector<Var>& parts) {
  Tape& t = *parts.front().tape();
  Eigen::Index total = 0;
  for (const Var& p : parts) total += p.cols();
  Matrix v(parts.front().rows(), total);
  std::vector<int> indices;
  std::vector<int> offsets;
  bool all_const = true;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    indices.push_back(p.index());
    offsets.push_back(static_cast<int>(at));
    all_const = all_const && !t.tracked(p.index());
    at += p.cols();
  }
  if (all_const) return t.constant(std::move(v));
  return t.make_tracked(std::move(v),
                        [indices, offsets](Tape& t, const Matrix& g) {
                          for (std::size_t k = 0; k < indices.size(); ++k) {
                            if (!t.tracked(indices[k])) continue;
                            Matrix& dst = t.grad(indices[k]);
                            dst += g.middleCols(offsets[k], dst.cols());
                          }
                        });
}

inline Var gather_rows(const Var& table, std::vector<int> ids) {
  Tape& t = *table.tape();
  Matrix v(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) v.row(static_cast<Eigen::Index>(k)) = table.value().row(ids[k]);
  return t.make(std::move(v), {table},
                [ti = table.index(), ids = std::move(ids)](Tape& t, const Matrix& g) {
                  if (!t.tracked(ti)) return;
                  Matrix& dst = t.grad(ti);
                  for (std::size_t k = 0; k < ids.size(); ++k)
                    dst.row(ids[k]) += g.row(static_cast<Eigen::Index>(k));
                });
}

// ---------------------------------------------------------------------------
// nonlinearities
// ---------------------------------------------------------------------------

inline Var row_softmax(const Var& a) {
  Tape& t = *a.tape();
  Matrix v = a.value();
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    Eigen::Array<Scalar, 1, Eigen::Dynamic> r = v.row(i).array();
    r = (r - r.maxCoeff()).exp();
    v.row(i) = (r / r.sum()).matrix();
  }
  return t.make(std::move(v), {a},
                [ai = a.index(), self = static_cast<int>(t.size())](Tape& t, const Matrix& g) {
                  if (!t.tracked(ai)) return;
                  const Matrix& p = t.value(self);
                  Matrix& dst = t.grad(ai);
                  for (Eigen::Index i = 0; i < p.rows(); ++i) {
                    const Scalar dot = p.row(i).dot(g.row(i));
                    dst.row(i).array() +=
                        p.row(i).array() * (g.row(i).array() - dot);
                  }
                });
}

inline Var sigmoid(const Var& a) {
  Tape& t = *a.tape();
  Matrix v = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return t.make(std::move(v), {a},
                [ai = a.index(), self = static_cast<int>(t.size())](Tape& t, const Matrix& g) {
                  if (!t.tracked(ai)) return;
                  const auto& s = t.value(self).array();
                  t.grad(ai).array() += g.array() * s * (1.0 - s);
                });
}

inline Scalar stable_softplus(Scalar x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline Var softplus(const Var& a) {
  Tape& t = *a.tape();
  Matrix v = a.value().unaryExpr([](Scalar x) { return stable_softplus(x); });
  return t.make(std::move(v), {a},
                [ai = a.index()](Tape& t, const Matrix& g) {
                  if (!t.tracked(ai)) return;
                  const auto& x = t.value(ai).array();
                  t.grad(ai).array() += g.array() / (1.0 + (-x).exp());
                });
}

inline Var relu(const Var& a) {
  Tape& t = *a.tape();
  return t.make(a.value().cwiseMax(0.0), {a},
                [ai = a.index()](Tape& t, const Matrix& g) {
                  if (!t.tracked(ai)) return;
                  t.grad(ai).array() +=
                      g.array() * (t.value(ai).array() > 0.0).cast<Scalar>();
                });
}

inline Var gelu(const Var& a) {
  Tape& t = *a.tape();
  Matrix v = a.value().unaryExpr([](Scalar x) {
    return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
  });
  return t.make(std::move(v), {a},
                [ai = a.index()](Tape& t, const Matrix& g) {
                  if (!t.tracked(ai)) return;
                  const Matrix d = t.value(ai).unaryExpr([](Scalar x) {
                    const Scalar phi =
                        std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
                    const Scalar cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
                    return cdf + x * phi;
                  });
                  t.grad(ai) += g.cwiseProduct(d);
                });
}

inline Var layer_norm(const Var& x, const Var& gain, const Var& bias,
                      Scalar eps = 1e-5) {
  Tape& t = *x.tape();
  const Matrix& xv = x.value();
  Matrix v(xv.rows(), xv.cols());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const Scalar mu = xv.row(i).mean();
    const auto centered = xv.row(i).array() - mu;
    const Scalar var = centered.square().mean();
    const Scalar inv = 1.0 / std::sqrt(var + eps);
    v.row(i) = ((centered * inv) * gain.value().row(0).array() +
                bias.value().row(0).array())
                   .matrix();
  }
  return t.make(std::move(v), {x, gain, bias},
                [xi = x.index(), gi = gain.index(), bi = bias.index(),
                 eps](Tape& t, const Matrix& g) {
                  const Matrix& xv = t.value(xi);
                  const auto gamma = t.value(gi).row(0).array();
                  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
                    const Scalar mu = xv.row(i).mean();
                    const auto centered = xv.row(i).array() - mu;
                    const Scalar var = centered.square().mean();
                    const Scalar inv = 1.0 / std::sqrt(var + eps);
                    const auto xhat = centered * inv;
                    if (t.tracked(gi))
                      t.grad(gi).row(0).array() += g.row(i).array() * xhat;
                    if (t.tracked(bi)) t.grad(bi).row(0).array() += g.row(i).array();
                    if (t.tracked(xi)) {
                      const auto dxhat = g.row(i).array() * gamma;
                      const Scalar m1 = dxhat.mean();
                      const Scalar m2 = (dxhat * xhat).mean();
                      t.grad(xi).row(i).array() += inv * (dxhat - m1 - xhat * m2);
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// reductions and loss pieces
// ---------------------------------------------------------------------------

inline Var sum(const Var& a) {
  Tape& t = *a.tape();
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return t.make(std::move(v), {a},
                [ai = a.index()](Tape& t, const Matrix& g) {
                  if (t.tracked(ai)) t.grad(ai).array() += g(0, 0);
                });
}

inline Var mean(const Var& a) {
  Tape& t = *a.tape();
  Matrix v(1, 1);
  v(0, 0) = a.value().mean();
  return t.make(std::move(v), {a},
                [ai = a.index()](Tape& t, const Matrix& g) {
                  if (!t.tracked(ai)) return;
                  t.grad(ai).array() +=
                      g(0, 0) / static_cast<Scalar>(t.value(ai).size());
                });
}

// log(sum(exp(a))) over a 1 x n row
inline Var logsumexp_row(const Var& a) {
  Tape& t = *a.tape();
  const auto r = a.value().row(0).array();
  const Scalar m = r.maxCoeff();
  Matrix v(1, 1);
  v(0, 0) = m + std::log((r - m).exp().sum());
  return t.make(std::move(v), {a},
                [ai = a.index()](Tape& t, const Matrix& g) {
                  if (!t.tracked(ai)) return;
                  const auto r = t.value(ai).row(0).array();
                  const Scalar m = r.maxCoeff();
                  const auto e = (r - m).exp();
                  t.grad(ai).row(0).array() += g(0, 0) * e / e.sum();
                });
}

// ---------------------------------------------------------------------------
// rationale-specific ops
// ---------------------------------------------------------------------------

// sigma = min(sigma_min + softplus(raw), sigma_max), elementwise
inline Var sigma_transform_op(const Var& raw, Scalar sigma_min, Scalar sigma_max) {
  Tape& t = *raw.tape();
  Matrix v = raw.value().unaryExpr([&](Scalar x) {
    return std::min(sigma_min + stable_softplus(x), sigma_max);
  });
  return t.make(std::move(v), {raw},
                [ri = raw.index(), sigma_min, sigma_max](Tape& t, const Matrix& g) {
                  if (!t.tracked(ri)) return;
                  const auto& x = t.value(ri).array();
                  const auto unclipped = x.unaryExpr([&](Scalar r) {
                    return sigma_min + stable_softplus(r);
                  });
                  t.grad(ri).array() += g.array() * (1.0 / (1.0 + (-x).exp())) *
                                        (unclipped < sigma_max).cast<Scalar>();
                });
}

// m_j = sigmoid(sum_i w_i * exp(-d(i,j)^2 / sigma_i)); w, sigma are L x 1.
inline Var mask_from_wsigma(const Var& w, const Var& sigma, const Vector& positions) {
  Tape& t = *w.tape();
  const Eigen::Index n = w.rows();
  if (sigma.rows() != n || positions.size() != n)
    throw ValidationError("mask: w, sigma and positions must share length");
  if ((sigma.value().array() <= 0.0).any())
    throw ValidationError("mask: sigma must be strictly positive");
  Matrix d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const Scalar d = positions[i] - positions[j];
      d2(i, j) = d * d;
    }
  Matrix kernel =
      ((-d2.array()).colwise() * sigma.value().col(0).array().inverse())
          .exp()
          .matrix();
  Vector s = kernel.transpose() * w.value().col(0);
  Matrix m = (1.0 / (1.0 + (-s.array()).exp())).matrix();
  return t.make(std::move(m), {w, sigma},
                [wi = w.index(), si = sigma.index(), kernel = std::move(kernel),
                 d2 = std::move(d2),
                 self = static_cast<int>(t.size())](Tape& t, const Matrix& g) {
                  const auto mv = t.value(self).col(0).array();
                  const Vector gs = (g.col(0).array() * mv * (1.0 - mv)).matrix();
                  if (t.tracked(wi)) t.grad(wi).col(0).noalias() += kernel * gs;
                  if (t.tracked(si)) {
                    const Vector spread = kernel.cwiseProduct(d2) * gs;
                    t.grad(si).col(0).array() +=
                        spread.array() * t.value(wi).col(0).array() /
                        t.value(si).col(0).array().square();
                  }
                });
}

enum class BlendMode { keep, drop };

// Continuous blend of an embedding matrix toward a background row. Rows with
// keep_flags[r] set are copied through untouched; the remaining rows consume
// mask entries in order. Only the mask participates in gradient flow.
inline Var blend_rows(const Var& mask, const Matrix& x, const RowVector& background,
                      const std::vector<bool>& keep_flags, BlendMode mode) {
  Tape& t = *mask.tape();
  if (static_cast<Eigen::Index>(keep_flags.size()) != x.rows())
    throw ValidationError("blend_rows: keep flag per input row required");
  std::vector<int> content_rows;
  for (std::size_t r = 0; r < keep_flags.size(); ++r)
    if (!keep_flags[r]) content_rows.push_back(static_cast<int>(r));
  if (static_cast<Eigen::Index>(content_rows.size()) != mask.rows())
    throw ValidationError("blend_rows: one mask value per content row required");
  Matrix v = x;
  for (std::size_t k = 0; k < content_rows.size(); ++k) {
    const Scalar m = mask.value()(static_cast<Eigen::Index>(k), 0);
    const Scalar keep_w = mode == BlendMode::keep ? m : 1.0 - m;
    v.row(content_rows[k]) =
        keep_w * x.row(content_rows[k]) + (1.0 - keep_w) * background;
  }
  return t.make(std::move(v), {mask},
                [mi = mask.index(), x, background, content_rows,
                 mode](Tape& t, const Matrix& g) {
                  if (!t.tracked(mi)) return;
                  const Scalar sign = mode == BlendMode::keep ? 1.0 : -1.0;
                  Matrix& dst = t.grad(mi);
                  for (std::size_t k = 0; k < content_rows.size(); ++k) {
                    const RowVector diff =
                        x.row(content_rows[k]) - background;
                    dst(static_cast<Eigen::Index>(k), 0) +=
                        sign * g.row(content_rows[k]).dot(diff);
                  }
                });
}

}  // namespace rtp::ad
