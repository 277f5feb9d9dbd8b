#pragma once

#include "elvis/core/linear.hpp"
#include "elvis/core/similarity.hpp"

#include <cmath>

namespace elvis {

/// Single-head attention pooling. The query is a linear transform of the masked
/// mean of the locals; keys and values are linear transforms of each local.
template <typename Scalar>
struct AttentionPoolParams {
  Linear<Scalar> query;   // D_M -> d_k
  Linear<Scalar> key;     // D_M -> d_k
  Linear<Scalar> value;   // D_M -> d_v
  Linear<Scalar> output;  // d_v -> D_M

  Index input_dim() const { return key.in_dim(); }
  Index key_dim() const { return key.out_dim(); }

  template <typename Rng>
  static AttentionPoolParams init(Index dim, Index key_dim, Rng& rng) {
    AttentionPoolParams p;
    p.query = Linear<Scalar>::fan_in_uniform(dim, key_dim, rng);
    p.key = Linear<Scalar>::fan_in_uniform(dim, key_dim, rng);
    p.value = Linear<Scalar>::fan_in_uniform(dim, dim, rng);
    p.output = Linear<Scalar>::fan_in_uniform(dim, dim, rng);
    return p;
  }
};

template <typename Scalar>
RowVector<Scalar> attention_weights(const LocalEmbeddings<Scalar>& locals,
                                    const AttentionPoolParams<Scalar>& params) {
  locals.validate();
  require(locals.dim() == params.input_dim(), "attention_pool: embedding dimension mismatch");
  const RowVector<Scalar> mean = locals.valid_rows().colwise().mean();
  const Matrix<Scalar> q = params.query(mean);
  const Matrix<Scalar> k = params.key(locals.vectors);
  RowVector<Scalar> logits = (q * k.transpose()) / std::sqrt(Scalar(params.key_dim()));
  masked_softmax_inplace<Scalar>(logits, locals.mask);
  return logits;
}

template <typename Scalar>
GlobalEmbedding<Scalar> attention_pool(const LocalEmbeddings<Scalar>& locals,
                                       const AttentionPoolParams<Scalar>& params) {
  const RowVector<Scalar> w = attention_weights(locals, params);
  Matrix<Scalar> v = params.value(locals.vectors);
  for (Index i = 0; i < v.rows(); ++i)
    if (!locals.mask(i)) v.row(i).setZero();
  const Matrix<Scalar> pooled = w * v;
  return {locals.modality, params.output(pooled).row(0).transpose()};
}

}  // namespace elvis
