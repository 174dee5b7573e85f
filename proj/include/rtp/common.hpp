#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rtp {

using Scalar = double;

template <typename S>
using MatrixT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VectorT = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using RowVectorT = Eigen::Matrix<S, 1, Eigen::Dynamic>;

using Matrix = MatrixT<Scalar>;
using Vector = VectorT<Scalar>;
using RowVector = RowVectorT<Scalar>;

// Input, file or configuration violates a documented contract.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A loss or gradient became non-finite; names the sample and term.
struct NumericalError : std::runtime_error {
  NumericalError(std::string sample, std::string term_name)
      : std::runtime_error("non-finite value in term '" + term_name +
                           "' for sample '" + sample + "'"),
        sample_id(std::move(sample)),
        term(std::move(term_name)) {}
  std::string sample_id;
  std::string term;
};

// Deterministic random source. Bit-to-value conversions are spelled out so
// generated streams do not depend on the standard library's distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n), n >= 1
  int below(int n) {
    const auto un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t r = bits();
    while (r >= limit) r = bits();
    return static_cast<int>(r % un);
  }

  // uniform integer in [lo, hi] inclusive
  int int_range(int lo, int hi) { return lo + below(hi - lo + 1); }

  double gaussian() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    cached_ = r * std::sin(theta);
    have_cached_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(i)],
                v[static_cast<std::size_t>(below(i + 1))]);
    }
  }

  std::string serialize() const {
    std::ostringstream out;
    out << engine_;
    return out.str();
  }

 private:
  std::mt19937_64 engine_;  // output sequence is pinned by the standard
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace rtp
