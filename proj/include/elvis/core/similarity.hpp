#pragma once

#include "elvis/core/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace elvis {

/// Added to every vector norm so that a zero vector has similarity 0 with anything.
inline constexpr double kNormEpsilon = 1e-8;

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_similarity(const Eigen::MatrixBase<DerivedA>& a,
                                            const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  require(a.size() == b.size(), "cosine_similarity: dimension mismatch");
  const Scalar eps = Scalar(kNormEpsilon);
  const Scalar dot = (a.array() * b.array()).sum();
  const Scalar value = dot / ((a.norm() + eps) * (b.norm() + eps));
  return std::clamp(value, Scalar(-1), Scalar(1));
}

/// Row-wise cosine similarity matrix: out(i, j) = cos(a.row(i), b.row(j)).
template <typename DerivedA, typename DerivedB>
Matrix<typename DerivedA::Scalar> pairwise_cosine(const Eigen::MatrixBase<DerivedA>& a,
                                                  const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  require(a.cols() == b.cols(), "pairwise_similarity: embedding dimension mismatch");
  const Scalar eps = Scalar(kNormEpsilon);
  const Vector<Scalar> inv_a = (a.rowwise().norm().array() + eps).inverse();
  const Vector<Scalar> inv_b = (b.rowwise().norm().array() + eps).inverse();
  Matrix<Scalar> out = inv_a.asDiagonal() * (a * b.transpose()) * inv_b.asDiagonal();
  return out.cwiseMax(Scalar(-1)).cwiseMin(Scalar(1));
}

template <typename Scalar>
SimilarityMatrix<Scalar> pairwise_similarity(const LocalEmbeddings<Scalar>& a,
                                             const LocalEmbeddings<Scalar>& b) {
  SimilarityMatrix<Scalar> out;
  out.values = pairwise_cosine(a.vectors, b.vectors);
  out.row_mask = a.mask;
  out.col_mask = b.mask;
  for (Index i = 0; i < out.values.rows(); ++i)
    for (Index j = 0; j < out.values.cols(); ++j)
      if (!a.mask(i) || !b.mask(j)) out.values(i, j) = Scalar(0);
  return out;
}

template <typename Derived>
SimilarityMatrix<typename Derived::Scalar> pairwise_similarity(
    const Eigen::MatrixBase<Derived>& a, const Eigen::MatrixBase<Derived>& b) {
  SimilarityMatrix<typename Derived::Scalar> out;
  out.values = pairwise_cosine(a, b);
  out.row_mask = Mask::Constant(a.rows(), true);
  out.col_mask = Mask::Constant(b.rows(), true);
  return out;
}

/// Numerically stable softmax of `logits` over the valid entries of one row.
/// Invalid entries come out exactly 0.
template <typename Scalar>
void masked_softmax_inplace(Eigen::Ref<RowVector<Scalar>> logits, const Mask& valid) {
  Scalar max = -std::numeric_limits<Scalar>::infinity();
  for (Index j = 0; j < logits.size(); ++j)
    if (valid(j)) max = std::max(max, logits(j));
  Scalar total = 0;
  for (Index j = 0; j < logits.size(); ++j) {
    logits(j) = valid(j) ? std::exp(logits(j) - max) : Scalar(0);
    total += logits(j);
  }
  logits /= total;
}

/// Temperature softmax of a similarity matrix over rows (each row sums to 1) or
/// columns (each column sums to 1). Masked rows/columns are zero. When
/// `mask_diagonal` is set, self-pairs (i, i) are excluded from every softmax.
template <typename Scalar>
ProbabilityMap<Scalar> softmax_map(const SimilarityMatrix<Scalar>& s, Axis axis, Scalar temperature,
                                   bool mask_diagonal = false) {
  require(temperature > Scalar(0), "softmax temperature must be positive");
  const bool row_axis = axis == Axis::Row;
  const Matrix<Scalar> oriented = row_axis ? s.values : Matrix<Scalar>(s.values.transpose());
  const Mask& outer = row_axis ? s.row_mask : s.col_mask;
  const Mask& inner = row_axis ? s.col_mask : s.row_mask;

  Matrix<Scalar> out = Matrix<Scalar>::Zero(oriented.rows(), oriented.cols());
  for (Index i = 0; i < oriented.rows(); ++i) {
    if (!outer(i)) continue;
    Mask valid = inner;
    if (mask_diagonal && i < valid.size()) valid(i) = false;
    if (!valid.any()) continue;
    RowVector<Scalar> row = oriented.row(i) / temperature;
    masked_softmax_inplace<Scalar>(row, valid);
    out.row(i) = row;
  }

  ProbabilityMap<Scalar> map;
  map.values = row_axis ? out : Matrix<Scalar>(out.transpose());
  map.axis = axis;
  map.temperature = temperature;
  return map;
}

/// Upper-triangle Pearson correlation of two square similarity matrices.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar upper_triangle_pearson(const Eigen::MatrixBase<DerivedA>& a,
                                                 const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  require(a.rows() == a.cols() && b.rows() == b.cols() && a.rows() == b.rows(),
          "pearson: matrices must be square and equal-sized");
  const Index n = a.rows();
  require(n >= 3, "pearson: need at least three positions");
  const Index m = n * (n - 1) / 2;
  Vector<Scalar> x(m), y(m);
  Index k = 0;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) {
      x(k) = a(i, j);
      y(k) = b(i, j);
      ++k;
    }
  x.array() -= x.mean();
  y.array() -= y.mean();
  const Scalar denom = std::sqrt(x.squaredNorm() * y.squaredNorm());
  return denom > Scalar(0) ? x.dot(y) / denom : Scalar(0);
}

}  // namespace elvis
