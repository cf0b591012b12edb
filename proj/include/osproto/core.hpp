#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace osproto {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Raised for any violated shape or value precondition.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw Error(what);
}

/// Squared Euclidean distance ||v - w||^2.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar sq_euclidean(const Eigen::MatrixBase<DerivedA>& v,
                                       const Eigen::MatrixBase<DerivedB>& w) {
  require(v.size() == w.size(), "sq_euclidean: dimension mismatch (" + std::to_string(v.size()) +
                                    " vs " + std::to_string(w.size()) + ")");
  return (v - w).squaredNorm();
}

/// Squared distances between every column of `points` and `center`.
template <typename DerivedP, typename DerivedC>
Eigen::Matrix<typename DerivedP::Scalar, Eigen::Dynamic, 1> sq_distances(
    const Eigen::MatrixBase<DerivedP>& points, const Eigen::MatrixBase<DerivedC>& center) {
  require(points.rows() == center.size(), "sq_distances: dimension mismatch");
  return (points.colwise() - center).colwise().squaredNorm().transpose();
}

/// Max-shifted softmax of a logit vector.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  require(logits.size() > 0, "softmax: empty input");
  using Scalar = typename Derived::Scalar;
  const Scalar shift = logits.maxCoeff();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out = (logits.array() - shift).exp().matrix();
  out /= out.sum();
  return out;
}

/// Column-wise softmax: each column of `logits` is one logit vector.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> softmax_cols(
    const Eigen::MatrixBase<Derived>& logits) {
  require(logits.rows() > 0, "softmax: empty input");
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) out.col(j) = softmax(logits.col(j));
  return out;
}

/// Exact element-wise equality that also compares shapes.
template <typename DerivedA, typename DerivedB>
bool identical(const Eigen::MatrixBase<DerivedA>& x, const Eigen::MatrixBase<DerivedB>& y) {
  return x.rows() == y.rows() && x.cols() == y.cols() && (x.array() == y.array()).all();
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

/// 64-bit mixing hash (FNV-1a over bytes followed by a splitmix64 finalizer).
std::uint64_t hash64(std::string_view bytes, std::uint64_t seed = 0);

/// Deterministic random stream keyed by (master_seed, purpose_tag, index).
///
/// The generator is splitmix64 seeded with hash64 of the key triple. Uniform
/// integers use rejection sampling on the raw 64-bit output; normals use the
/// Box-Muller transform with the second value of each pair cached.
class RngStream {
 public:
  RngStream(std::uint64_t master_seed, std::string_view purpose_tag, std::uint64_t index);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  double normal();

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = uniform_index(i);
      std::iter_swap(first + (i - 1), first + j);
    }
  }

  std::uint64_t master_seed() const { return master_seed_; }
  const std::string& purpose_tag() const { return tag_; }
  std::uint64_t index() const { return index_; }

 private:
  std::uint64_t master_seed_;
  std::string tag_;
  std::uint64_t index_;
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline RngStream rng_stream(std::uint64_t master_seed, std::string_view purpose_tag,
                            std::uint64_t index) {
  return RngStream(master_seed, purpose_tag, index);
}

/// Matrix of iid N(0, stddev^2) draws, filled column-major.
Mat normal_matrix(RngStream& rng, Eigen::Index rows, Eigen::Index cols, double stddev);

/// Shortest decimal string that parses back to exactly `x`.
std::string format_double(double x);
double parse_double(std::string_view text);

}  // namespace osproto
