#pragma once

#include "elvis/core/linear.hpp"
#include "elvis/core/similarity.hpp"

namespace elvis {

/// Per-modality maps into the shared space: one affine head for locals, one for
/// the pooled global, and the value transform applied when this modality is the
/// counterpart in cross-attention.
template <typename Scalar>
struct ProjectionHead {
  Linear<Scalar> local;   // D_M -> D
  Linear<Scalar> global;  // D_M -> D
  Matrix<Scalar> value;   // D x D, applied as z * value

  Index input_dim() const { return local.in_dim(); }
  Index joint_dim() const { return local.out_dim(); }

  template <typename Rng>
  static ProjectionHead init(Index input_dim, Index joint_dim, Rng& rng) {
    ProjectionHead h;
    h.local = Linear<Scalar>::fan_in_uniform(input_dim, joint_dim, rng);
    h.global = Linear<Scalar>::fan_in_uniform(input_dim, joint_dim, rng);
    h.value = fan_in_uniform_matrix<Scalar>(joint_dim, joint_dim, rng);
    return h;
  }
};

template <typename Scalar>
LocalEmbeddings<Scalar> project_local(const LocalEmbeddings<Scalar>& y,
                                      const ProjectionHead<Scalar>& head) {
  require(y.dim() == head.local.in_dim(), "project_local: input dimension mismatch");
  LocalEmbeddings<Scalar> z = y;
  z.vectors = head.local(y.vectors);
  for (Index i = 0; i < z.size(); ++i)
    if (!z.mask(i)) z.vectors.row(i).setZero();
  return z;
}

template <typename Scalar>
GlobalEmbedding<Scalar> project_global(const GlobalEmbedding<Scalar>& y,
                                       const ProjectionHead<Scalar>& head) {
  require(y.dim() == head.global.in_dim(), "project_global: input dimension mismatch");
  return {y.modality, head.global(y.vector.transpose()).row(0).transpose()};
}

enum class CrossWeights {
  Cosine,         // raw cosine similarities as weights
  SoftmaxCosine,  // row softmax over the cosine similarities
};

/// Cross-attended embedding of `z` given its counterpart `other`:
/// row i = sum_j w(i, j) * (other_j * value), where w = cos(z_i, other_j).
/// Masked rows of `other` contribute nothing; masked rows of `z` come out zero.
template <typename Scalar, typename Derived>
LocalEmbeddings<Scalar> cross_attend(const LocalEmbeddings<Scalar>& z,
                                     const LocalEmbeddings<Scalar>& other,
                                     const Eigen::MatrixBase<Derived>& value,
                                     CrossWeights mode = CrossWeights::Cosine) {
  require(z.dim() == other.dim(), "cross_attend: joint dimension mismatch");
  require(value.rows() == other.dim() && value.cols() == other.dim(),
          "cross_attend: value transform must be D x D");
  require(other.valid_count() > 0, "cross_attend: empty counterpart");

  SimilarityMatrix<Scalar> s = pairwise_similarity(z, other);
  Matrix<Scalar> weights = s.values;
  if (mode == CrossWeights::SoftmaxCosine)
    weights = softmax_map(s, Axis::Row, Scalar(1)).values;

  Matrix<Scalar> values = other.vectors * value;
  for (Index j = 0; j < values.rows(); ++j)
    if (!other.mask(j)) values.row(j).setZero();

  LocalEmbeddings<Scalar> out = z;
  out.vectors = weights * values;
  return out;
}

}  // namespace elvis
