#pragma once

#include "elvis/core/types.hpp"

#include <cmath>
#include <random>

namespace elvis {

/// Affine map acting on row vectors: y = x * weight + bias.
template <typename Scalar>
struct Linear {
  Matrix<Scalar> weight;  // in x out
  RowVector<Scalar> bias;  // 1 x out

  Index in_dim() const { return weight.rows(); }
  Index out_dim() const { return weight.cols(); }

  template <typename Derived>
  Matrix<Scalar> operator()(const Eigen::MatrixBase<Derived>& x) const {
    require(x.cols() == in_dim(), "linear map: input dimension mismatch");
    Matrix<Scalar> y = x * weight;
    y.rowwise() += bias;
    return y;
  }

  static Linear zeros(Index in, Index out) {
    return {Matrix<Scalar>::Zero(in, out), RowVector<Scalar>::Zero(out)};
  }

  static Linear identity(Index dim) {
    return {Matrix<Scalar>::Identity(dim, dim), RowVector<Scalar>::Zero(dim)};
  }

  /// Fan-in scaled uniform init, U(-1/sqrt(in), 1/sqrt(in)) for weights and bias.
  template <typename Rng>
  static Linear fan_in_uniform(Index in, Index out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Linear l = zeros(in, out);
    for (Index i = 0; i < in; ++i)
      for (Index j = 0; j < out; ++j) l.weight(i, j) = Scalar(dist(rng));
    for (Index j = 0; j < out; ++j) l.bias(j) = Scalar(dist(rng));
    return l;
  }
};

template <typename Scalar, typename Rng>
Matrix<Scalar> fan_in_uniform_matrix(Index in, Index out, Rng& rng) {
  return Linear<Scalar>::fan_in_uniform(in, out, rng).weight;
}

}  // namespace elvis
