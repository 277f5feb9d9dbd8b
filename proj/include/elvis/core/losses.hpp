#pragma once

#include "elvis/core/similarity.hpp"

#include <cmath>
#include <utility>

namespace elvis {

/// Guard inside every logarithm of a probability.
inline constexpr double kLogEpsilon = 1e-12;

enum class Reduction { Sum, Mean };

/// Mean over rows of -log softmax(logits.row(i))(i), computed with max subtraction.
template <typename Derived>
typename Derived::Scalar infonce_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const Index b = logits.rows();
  Scalar total = 0;
  for (Index i = 0; i < b; ++i) {
    const Scalar m = logits.row(i).maxCoeff();
    const Scalar lse = m + std::log((logits.row(i).array() - m).exp().sum());
    total += lse - logits(i, i);
  }
  return total / Scalar(b);
}

/// Global image/text contrastive losses over a batch whose i-th rows are paired.
/// Returns (image-given-text, text-given-image); the first normalizes each row of
/// the similarity matrix, the second each column.
template <typename DerivedA, typename DerivedB>
std::pair<typename DerivedA::Scalar, typename DerivedA::Scalar> global_contrastive_loss(
    const Eigen::MatrixBase<DerivedA>& image_globals, const Eigen::MatrixBase<DerivedB>& text_globals,
    typename DerivedA::Scalar temperature) {
  using Scalar = typename DerivedA::Scalar;
  require(image_globals.rows() >= 1, "global_contrastive_loss: empty batch");
  require(image_globals.rows() == text_globals.rows(), "global_contrastive_loss: batch size mismatch");
  require(temperature > Scalar(0), "global_contrastive_loss: temperature must be positive");
  const Matrix<Scalar> s = pairwise_cosine(image_globals, text_globals);
  require(s.allFinite(), "global_contrastive_loss: non-finite similarity");
  const Matrix<Scalar> logits = s / temperature;
  return {infonce_rows(logits), infonce_rows(logits.transpose())};
}

/// Intra-modal similarity targets: row- and column-softmax of cos(y_i, y_j) / tau.
template <typename Scalar>
std::pair<ProbabilityMap<Scalar>, ProbabilityMap<Scalar>> intra_modal_target(
    const LocalEmbeddings<Scalar>& y, Scalar temperature, bool mask_diagonal = false) {
  y.validate();
  const SimilarityMatrix<Scalar> s = pairwise_similarity(y, y);
  return {softmax_map(s, Axis::Row, temperature, mask_diagonal),
          softmax_map(s, Axis::Col, temperature, mask_diagonal)};
}

/// -sum_ij p_ij log(q_ij + eps) over entries where p is defined.
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar cross_entropy_sum(const Eigen::MatrixBase<DerivedP>& p,
                                            const Eigen::MatrixBase<DerivedQ>& q) {
  using Scalar = typename DerivedP::Scalar;
  return -(p.array() * (q.array() + Scalar(kLogEpsilon)).log()).sum();
}

/// Local contrastive loss of one sample: the cross entropy between the intra-modal
/// targets and the softmax of cos(z_i, z_cross_j) / tau, over rows and over columns.
template <typename Scalar>
Scalar local_contrastive_loss(const LocalEmbeddings<Scalar>& z_local,
                              const LocalEmbeddings<Scalar>& z_cross,
                              const ProbabilityMap<Scalar>& p_row, const ProbabilityMap<Scalar>& p_col,
                              Scalar tau_src, Reduction reduction = Reduction::Sum,
                              bool mask_diagonal = false) {
  require(z_local.size() == z_cross.size(), "local_contrastive_loss: z and cross-attended sizes differ");
  const Index n = z_local.size();
  require(p_row.values.rows() == n && p_row.values.cols() == n && p_col.values.rows() == n &&
              p_col.values.cols() == n,
          "local_contrastive_loss: target shape mismatch");
  const SimilarityMatrix<Scalar> s = pairwise_similarity(z_local, z_cross);
  const auto q_row = softmax_map(s, Axis::Row, tau_src, mask_diagonal);
  const auto q_col = softmax_map(s, Axis::Col, tau_src, mask_diagonal);
  Scalar loss = cross_entropy_sum(p_row.values, q_row.values) + cross_entropy_sum(p_col.values, q_col.values);
  if (reduction == Reduction::Mean) loss /= Scalar(z_local.valid_count());
  return loss;
}

/// Shannon entropy summed over every row (or column) distribution in `p`.
template <typename Derived>
typename Derived::Scalar entropy_sum(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  Scalar h = 0;
  for (Index i = 0; i < p.rows(); ++i)
    for (Index j = 0; j < p.cols(); ++j)
      if (p(i, j) > Scalar(0)) h -= p(i, j) * std::log(p(i, j));
  return h;
}

}  // namespace elvis
