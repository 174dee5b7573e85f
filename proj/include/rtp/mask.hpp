#pragma once

#include "rtp/common.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace rtp {

inline constexpr Scalar kSigmaMin = 0.1;
inline constexpr Scalar kSigmaMax = 100.0;

template <typename S>
S softplus(S x) {
  return x > S(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// y = softplus(x) solved for x; requires y > 0.
template <typename S>
S inverse_softplus(S y) {
  return std::log(std::expm1(y));
}

// Influence of token i on token j: w_i * exp(-d(i,j)^2 / sigma_i).
// The diagonal is exactly w (d(i,i) = 0).
template <typename S>
MatrixT<S> influence_kernel(const VectorT<S>& w, const VectorT<S>& sigma,
                            const VectorT<S>& positions) {
  const Eigen::Index n = w.size();
  if (sigma.size() != n || positions.size() != n)
    throw ValidationError("influence_kernel: length mismatch");
  if ((sigma.array() <= S(0)).any())
    throw ValidationError("influence_kernel: sigma must be strictly positive");
  MatrixT<S> out(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const S d = positions[i] - positions[j];
      out(i, j) = w[i] * std::exp(-(d * d) / sigma[i]);
    }
  return out;
}

template <typename S>
VectorT<S> default_positions(Eigen::Index n) {
  return VectorT<S>::LinSpaced(n, S(0), static_cast<S>(n - 1));
}

// m_j = sigmoid(sum_i w_i * exp(-d(i,j)^2 / sigma_i))
template <typename S>
VectorT<S> compute_mask(const VectorT<S>& w, const VectorT<S>& sigma,
                        const VectorT<S>& positions) {
  MatrixT<S> influence = influence_kernel<S>(w, sigma, positions);
  VectorT<S> summed = influence.colwise().sum().transpose();
  return (S(1) / (S(1) + (-summed.array()).exp())).matrix();
}

template <typename S>
VectorT<S> compute_mask(const VectorT<S>& w, const VectorT<S>& sigma) {
  return compute_mask<S>(w, sigma, default_positions<S>(w.size()));
}

// sigma = min(sigma_min + softplus(raw), sigma_max)
template <typename S>
VectorT<S> sigma_transform(const VectorT<S>& raw, S sigma_min = kSigmaMin,
                           S sigma_max = kSigmaMax) {
  return raw.unaryExpr([&](S x) {
    return std::min(sigma_min + softplus<S>(x), sigma_max);
  });
}

struct BlendedPair {
  Matrix x_keep;
  Matrix x_drop;
  RowVector background;
};

// x_keep row = m*x + (1-m)*b, x_drop row = (1-m)*x + m*b. Rows flagged as
// keep (special tokens) are copied into both outputs unblended; the mask
// supplies one value per unflagged row, in order.
inline BlendedPair blend_inputs(const Matrix& x, const Vector& m,
                                const RowVector& background,
                                const std::vector<bool>& keep_flags = {}) {
  std::vector<bool> flags = keep_flags;
  if (flags.empty()) flags.assign(static_cast<std::size_t>(x.rows()), false);
  if (static_cast<Eigen::Index>(flags.size()) != x.rows())
    throw ValidationError("blend_inputs: one keep flag per row required");
  if (background.size() != x.cols())
    throw ValidationError("blend_inputs: background dimension mismatch");
  Eigen::Index content = 0;
  for (bool f : flags) content += !f;
  if (m.size() != content)
    throw ValidationError("blend_inputs: one mask value per content row required");

  BlendedPair out{x, x, background};
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    if (flags[static_cast<std::size_t>(r)]) continue;
    const Scalar mv = m[k++];
    out.x_keep.row(r) = mv * x.row(r) + (1.0 - mv) * background;
    out.x_drop.row(r) = (1.0 - mv) * x.row(r) + mv * background;
  }
  return out;
}

}  // namespace rtp
