#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "elvis/core/pooling.hpp"
#include "elvis/core/projection.hpp"

#include <cmath>
#include <numeric>
#include <random>

using namespace elvis;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd gaussian(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixXd m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

double loop_cosine(const VectorXd& a, const VectorXd& b) {
  double dot = 0, na = 0, nb = 0;
  for (Index k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  return dot / ((std::sqrt(na) + 1e-8) * (std::sqrt(nb) + 1e-8));
}

std::vector<Index> shuffled(Index n, std::mt19937_64& rng) {
  std::vector<Index> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

MatrixXd permute_rows(const MatrixXd& m, const std::vector<Index>& p) {
  MatrixXd out(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(p[i]);
  return out;
}

}  // namespace

TEST_CASE("cosine_similarity examples") {
  const VectorXd v = (VectorXd(3) << 0.3, -2.0, 1.5).finished();
  CHECK(std::abs(cosine_similarity(v, v) - 1.0) < 1e-6);
  CHECK(std::abs(cosine_similarity(v, VectorXd(-v)) + 1.0) < 1e-6);
  const VectorXd a = (VectorXd(2) << 1, 0).finished();
  const VectorXd b = (VectorXd(2) << 1, 1).finished();
  CHECK(cosine_similarity(a, b) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-8));
  CHECK(cosine_similarity(VectorXd::Zero(2), b) == 0.0);
  CHECK_THROWS_AS(cosine_similarity(a, VectorXd::Ones(3)), ContractError);
}

TEST_CASE("pairwise_similarity examples") {
  MatrixXd same(2, 2);
  same << 0.6, 0.8, 0.6, 0.8;
  CHECK(pairwise_similarity(same, same).values.isApprox(MatrixXd::Ones(2, 2), 1e-6));

  const MatrixXd e = MatrixXd::Identity(2, 2);
  const MatrixXd e1 = e.topRows(1);
  const auto s = pairwise_similarity(LocalEmbeddings<double>::text(e), LocalEmbeddings<double>::text(e1));
  CHECK(s.values.rows() == 2);
  CHECK(s.values(0, 0) == doctest::Approx(1.0));
  CHECK(s.values(1, 0) == 0.0);

  std::mt19937_64 rng(7);
  const MatrixXd a = gaussian(3, 4, rng), b = gaussian(5, 4, rng);
  const auto m = pairwise_similarity(a, b).values;
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 5; ++j) CHECK(std::abs(m(i, j) - loop_cosine(a.row(i), b.row(j))) < 1e-6);

  CHECK_THROWS_AS(pairwise_similarity(a, MatrixXd(gaussian(2, 3, rng))), ContractError);
}

TEST_CASE("pairwise_similarity fills masked positions with 0") {
  std::mt19937_64 rng(3);
  Mask m(3);
  m << true, false, true;
  const auto t = LocalEmbeddings<double>::text(gaussian(3, 4, rng), m);
  const auto s = pairwise_similarity(t, t);
  CHECK(s.values.row(1).isZero());
  CHECK(s.values.col(1).isZero());
}

TEST_CASE("attention_pool examples") {
  std::mt19937_64 rng(11);
  const auto params = AttentionPoolParams<double>::init(4, 3, rng);

  SUBCASE("equal locals give uniform weights and an N-independent output") {
    const VectorXd v = gaussian(4, 1, rng).col(0);
    const MatrixXd m5 = v.transpose().replicate(5, 1);
    const MatrixXd m2 = v.transpose().replicate(2, 1);
    const auto l5 = LocalEmbeddings<double>::text(m5);
    const auto w = attention_weights(l5, params);
    CHECK(w.isApprox(RowVector<double>::Constant(5, 0.2), 1e-12));
    const auto g5 = attention_pool(l5, params).vector;
    const auto g2 = attention_pool(LocalEmbeddings<double>::text(m2), params).vector;
    const MatrixXd single = params.output(params.value(v.transpose()));
    CHECK((g5 - g2).norm() < 1e-12);
    CHECK((g5 - single.row(0).transpose()).norm() < 1e-12);
  }

  SUBCASE("hand formula on four locals") {
    const MatrixXd x = gaussian(4, 4, rng);
    VectorXd mean = VectorXd::Zero(4);
    for (Index i = 0; i < 4; ++i) mean += x.row(i).transpose() / 4.0;
    VectorXd q = params.query.bias.transpose();
    for (Index a = 0; a < 3; ++a)
      for (Index k = 0; k < 4; ++k) q[a] += mean[k] * params.query.weight(k, a);
    std::vector<double> logit(4);
    for (Index i = 0; i < 4; ++i) {
      double dot = 0;
      for (Index a = 0; a < 3; ++a) {
        double key = params.key.bias[a];
        for (Index k = 0; k < 4; ++k) key += x(i, k) * params.key.weight(k, a);
        dot += q[a] * key;
      }
      logit[i] = dot / std::sqrt(3.0);
    }
    double z = 0;
    for (double l : logit) z += std::exp(l);
    VectorXd pooled = VectorXd::Zero(4);
    for (Index i = 0; i < 4; ++i) {
      for (Index a = 0; a < 4; ++a) {
        double val = params.value.bias[a];
        for (Index k = 0; k < 4; ++k) val += x(i, k) * params.value.weight(k, a);
        pooled[a] += std::exp(logit[i]) / z * val;
      }
    }
    VectorXd out = params.output.bias.transpose();
    for (Index a = 0; a < 4; ++a)
      for (Index k = 0; k < 4; ++k) out[a] += pooled[k] * params.output.weight(k, a);
    const auto got = attention_pool(LocalEmbeddings<double>::text(x), params).vector;
    CHECK((got - out).cwiseAbs().maxCoeff() < 1e-6);
  }

  SUBCASE("every position masked is rejected") {
    LocalEmbeddings<double> t;
    t.modality = Modality::Text;
    t.vectors = MatrixXd::Ones(2, 4);
    t.mask = Mask::Constant(2, false);
    CHECK_THROWS_AS(attention_pool(t, params), ContractError);
  }
}

TEST_CASE("projection examples") {
  std::mt19937_64 rng(5);
  const MatrixXd y = gaussian(6, 4, rng);
  const auto locals = LocalEmbeddings<double>::image(y, {2, 3});

  ProjectionHead<double> id;
  id.local = Linear<double>::identity(4);
  id.global = Linear<double>::identity(4);
  id.value = MatrixXd::Identity(4, 4);
  CHECK(project_local(locals, id).vectors == y);
  const GlobalEmbedding<double> g{Modality::Image, y.row(0).transpose()};
  CHECK(project_global(g, id).vector == g.vector);

  ProjectionHead<double> zero;
  zero.local = Linear<double>::zeros(4, 3);
  zero.global = Linear<double>::zeros(4, 3);
  CHECK(project_local(locals, zero).vectors.isZero());
  CHECK(project_global(g, zero).vector.isZero());

  const auto head = ProjectionHead<double>::init(4, 3, rng);
  MatrixXd expect(6, 3);
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 3; ++j) {
      double acc = head.local.bias[j];
      for (Index k = 0; k < 4; ++k) acc += y(i, k) * head.local.weight(k, j);
      expect(i, j) = acc;
    }
  CHECK((project_local(locals, head).vectors - expect).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(project_local(locals, head).grid == locals.grid);

  const auto narrow = ProjectionHead<double>::init(5, 3, rng);
  CHECK_THROWS_AS(project_local(locals, narrow), ContractError);
  CHECK_THROWS_AS(project_global(g, narrow), ContractError);
}

TEST_CASE("cross_attend examples") {
  const MatrixXd I2 = MatrixXd::Identity(2, 2);
  VectorXd v(2);
  v << 0.6, 0.8;
  const auto zv = LocalEmbeddings<double>::text(v.transpose());
  CHECK((cross_attend(zv, zv, I2).vectors - v.transpose()).norm() < 1e-7);

  const auto e1 = LocalEmbeddings<double>::text(I2.topRows(1));
  const auto basis = LocalEmbeddings<double>::text(I2);
  CHECK((cross_attend(e1, basis, I2).vectors - I2.topRows(1)).norm() < 1e-7);

  std::mt19937_64 rng(9);
  const auto z = LocalEmbeddings<double>::text(gaussian(3, 2, rng));
  auto scaled = z;
  scaled.vectors *= 3.7;
  CHECK((cross_attend(scaled, basis, I2).vectors - cross_attend(z, basis, I2).vectors).cwiseAbs().maxCoeff() < 1e-6);

  CHECK_THROWS_AS(cross_attend(z, LocalEmbeddings<double>::text(gaussian(2, 3, rng)), MatrixXd::Identity(3, 3)),
                  ContractError);
  LocalEmbeddings<double> empty = basis;
  empty.mask.setConstant(false);
  CHECK_THROWS_AS(cross_attend(z, empty, I2), ContractError);
}

TEST_CASE("cross_attend masked counterparts contribute nothing") {
  std::mt19937_64 rng(2);
  const MatrixXd other = gaussian(3, 4, rng);
  Mask m(3);
  m << true, false, true;
  const auto z = LocalEmbeddings<double>::text(gaussian(2, 4, rng));
  const MatrixXd W = gaussian(4, 4, rng);
  const auto masked = cross_attend(z, LocalEmbeddings<double>::text(other, m), W);
  MatrixXd two(2, 4);
  two << other.row(0), other.row(2);
  const auto dropped = cross_attend(z, LocalEmbeddings<double>::text(two), W);
  CHECK((masked.vectors - dropped.vectors).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("softmax cross-attention rows are convex weights") {
  std::mt19937_64 rng(4);
  const auto z = LocalEmbeddings<double>::text(gaussian(3, 4, rng));
  const MatrixXd same = gaussian(1, 4, rng).replicate(5, 1);
  const auto out = cross_attend(z, LocalEmbeddings<double>::text(same), MatrixXd::Identity(4, 4), CrossWeights::SoftmaxCosine);
  for (Index i = 0; i < 3; ++i) CHECK((out.vectors.row(i) - same.row(0)).norm() < 1e-12);
}

TEST_CASE("LocalEmbeddings contract") {
  CHECK_THROWS_AS(LocalEmbeddings<double>::image(MatrixXd::Ones(5, 2), {2, 3}), ContractError);
  CHECK_THROWS_AS(LocalEmbeddings<double>::text(MatrixXd::Ones(2, 2), Mask::Constant(2, false)), ContractError);
  MatrixXd bad = MatrixXd::Ones(2, 2);
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(LocalEmbeddings<double>::text(bad), ContractError);
  auto img = LocalEmbeddings<double>::image(MatrixXd::Ones(6, 2), {2, 3});
  img.mask(0) = false;
  CHECK_THROWS_AS(img.validate(), ContractError);
}

// Properties, 100 random trials each.

TEST_CASE("property: cosine symmetric and scale invariant") {
  std::mt19937_64 rng(100);
  std::uniform_real_distribution<double> s(0.1, 100.0);
  for (int t = 0; t < 100; ++t) {
    const Index d = 1 + t % 9;
    // Norms kept well above the 1e-8 guard, which otherwise shows at the 1e-6 level.
    VectorXd a = gaussian(d, 1, rng).col(0), b = gaussian(d, 1, rng).col(0);
    a *= s(rng) / a.norm();
    b *= s(rng) / b.norm();
    const double c = cosine_similarity(a, b);
    CHECK(std::abs(c - cosine_similarity(b, a)) < 1e-12);
    CHECK(std::abs(c - cosine_similarity(VectorXd(s(rng) * a), b)) < 1e-6);
    CHECK(std::abs(c - cosine_similarity(a, VectorXd(s(rng) * b))) < 1e-6);
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
  }
}

TEST_CASE("property: pairwise similarity transposes") {
  std::mt19937_64 rng(101);
  for (int t = 0; t < 100; ++t) {
    const Index d = 1 + t % 6;
    const MatrixXd a = gaussian(1 + t % 5, d, rng), b = gaussian(1 + t % 7, d, rng);
    const MatrixXd ab = pairwise_similarity(a, b).values, ba = pairwise_similarity(b, a).values;
    CHECK((ab - ba.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(ab.cwiseAbs().maxCoeff() <= 1.0 + 1e-6);
  }
}

TEST_CASE("property: cross_attend scale invariant and permutation equivariant") {
  std::mt19937_64 rng(102);
  std::uniform_real_distribution<double> s(0.05, 20.0);
  for (int t = 0; t < 100; ++t) {
    const Index n = 1 + t % 6, d = 2 + t % 4;
    const MatrixXd z = gaussian(n, d, rng);
    const auto other = LocalEmbeddings<double>::text(gaussian(1 + t % 5, d, rng));
    const MatrixXd W = gaussian(d, d, rng);
    const auto mode = t % 2 ? CrossWeights::SoftmaxCosine : CrossWeights::Cosine;
    const MatrixXd base = cross_attend(LocalEmbeddings<double>::text(z), other, W, mode).vectors;

    MatrixXd scaled = z;
    for (Index i = 0; i < n; ++i) scaled.row(i) *= s(rng);
    CHECK((cross_attend(LocalEmbeddings<double>::text(scaled), other, W, mode).vectors - base).cwiseAbs().maxCoeff() <
          1e-6);

    const auto p = shuffled(n, rng);
    const MatrixXd permuted = cross_attend(LocalEmbeddings<double>::text(permute_rows(z, p)), other, W, mode).vectors;
    CHECK((permuted - permute_rows(base, p)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("property: attention_pool permutation invariant") {
  std::mt19937_64 rng(103);
  for (int t = 0; t < 100; ++t) {
    const Index n = 1 + t % 8, d = 2 + t % 5;
    const auto params = AttentionPoolParams<double>::init(d, 1 + t % 3, rng);
    const MatrixXd x = gaussian(n, d, rng);
    Mask m = Mask::Constant(n, true);
    if (n > 2) m(t % n) = false;
    const auto p = shuffled(n, rng);
    Mask mp(n);
    for (Index i = 0; i < n; ++i) mp(i) = m(p[i]);
    const auto a = attention_pool(LocalEmbeddings<double>::text(x, m), params).vector;
    const auto b = attention_pool(LocalEmbeddings<double>::text(permute_rows(x, p), mp), params).vector;
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("property: probability maps normalise over valid entries") {
  std::mt19937_64 rng(104);
  std::uniform_real_distribution<double> tau(0.05, 2.0);
  for (int t = 0; t < 100; ++t) {
    const Index n = 2 + t % 6;
    Mask m = Mask::Constant(n, true);
    m(t % n) = t % 3 != 0;
    const auto l = LocalEmbeddings<double>::text(gaussian(n, 3, rng), m);
    const auto s = pairwise_similarity(l, l);
    const bool diag = t % 4 == 0;
    const auto row = softmax_map(s, Axis::Row, tau(rng), diag);
    const auto col = softmax_map(s, Axis::Col, tau(rng), diag);
    CHECK(row.values.minCoeff() >= 0.0);
    CHECK(col.values.minCoeff() >= 0.0);
    for (Index i = 0; i < n; ++i) {
      if (!m(i)) {
        CHECK(row.values.row(i).isZero(0.0));
        CHECK(col.values.col(i).isZero(0.0));
        CHECK(row.values.col(i).isZero(0.0));
        continue;
      }
      if (diag && m.count() == 1) continue;
      CHECK(std::abs(row.values.row(i).sum() - 1.0) < 1e-6);
      CHECK(std::abs(col.values.col(i).sum() - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("property: finite inputs give finite outputs") {
  std::mt19937_64 rng(105);
  std::uniform_real_distribution<double> mag(-6.0, 6.0);
  for (int t = 0; t < 100; ++t) {
    const Index d = 1 + t % 5;
    MatrixXd x = gaussian(3, d, rng) * std::pow(10.0, mag(rng));
    if (t % 5 == 0) x.row(1).setZero();
    const auto l = LocalEmbeddings<double>::text(x);
    const auto params = AttentionPoolParams<double>::init(d, 2, rng);
    const auto head = ProjectionHead<double>::init(d, 2, rng);
    CHECK(pairwise_similarity(l, l).values.allFinite());
    CHECK(softmax_map(pairwise_similarity(l, l), Axis::Row, 0.1).values.allFinite());
    CHECK(attention_pool(l, params).vector.allFinite());
    const auto z = project_local(l, head);
    CHECK(z.vectors.allFinite());
    CHECK(cross_attend(z, z, head.value).vectors.allFinite());
    CHECK(cross_attend(z, z, head.value, CrossWeights::SoftmaxCosine).vectors.allFinite());
  }
}
