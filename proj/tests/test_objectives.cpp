#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "elvis/objectives.hpp"

#include <cmath>
#include <numeric>
#include <random>

using namespace elvis;
using Eigen::MatrixXd;

namespace {

MatrixXd gaussian(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixXd m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

MatrixXd permute_rows(const MatrixXd& m, const std::vector<Index>& p) {
  MatrixXd out(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(p[i]);
  return out;
}

std::vector<Index> shuffled(Index n, std::mt19937_64& rng) {
  std::vector<Index> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

// Scalar-loop reference of the local loss with SUM reduction and no masks.
double loop_local_loss(const MatrixXd& y, const MatrixXd& z, const MatrixXd& zc, double tau_t, double tau_s) {
  const Index n = y.rows();
  auto cosm = [](const MatrixXd& a, const MatrixXd& b) {
    MatrixXd s(a.rows(), b.rows());
    for (Index i = 0; i < a.rows(); ++i)
      for (Index j = 0; j < b.rows(); ++j) {
        double d = 0, na = 0, nb = 0;
        for (Index k = 0; k < a.cols(); ++k) {
          d += a(i, k) * b(j, k);
          na += a(i, k) * a(i, k);
          nb += b(j, k) * b(j, k);
        }
        s(i, j) = d / ((std::sqrt(na) + 1e-8) * (std::sqrt(nb) + 1e-8));
      }
    return s;
  };
  const MatrixXd st = cosm(y, y), ss = cosm(z, zc);
  double loss = 0;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      double pr = 0, pc = 0, qr = 0, qc = 0;
      for (Index k = 0; k < n; ++k) {
        pr += std::exp(st(i, k) / tau_t);
        pc += std::exp(st(k, j) / tau_t);
        qr += std::exp(ss(i, k) / tau_s);
        qc += std::exp(ss(k, j) / tau_s);
      }
      const double p_row = std::exp(st(i, j) / tau_t) / pr, p_col = std::exp(st(i, j) / tau_t) / pc;
      const double q_row = std::exp(ss(i, j) / tau_s) / qr, q_col = std::exp(ss(i, j) / tau_s) / qc;
      loss -= p_row * std::log(q_row + 1e-12) + p_col * std::log(q_col + 1e-12);
    }
  return loss;
}

}  // namespace

TEST_CASE("global loss examples") {
  const MatrixXd I = MatrixXd::Identity(2, 2);
  const auto [it, ti] = global_contrastive_loss(I, I, 1.0);
  CHECK(std::abs(it - std::log(1.0 + std::exp(-1.0))) < 1e-6);
  CHECK(std::abs(ti - std::log(1.0 + std::exp(-1.0))) < 1e-6);

  std::mt19937_64 rng(1);
  const MatrixXd a = gaussian(1, 5, rng), b = gaussian(1, 5, rng);
  const auto [one_it, one_ti] = global_contrastive_loss(a, b, 0.3);
  CHECK(one_it == 0.0);
  CHECK(one_ti == 0.0);

  for (Index batch : {2, 3, 7}) {
    const MatrixXd same = MatrixXd::Ones(batch, 4);
    const auto [u_it, u_ti] = global_contrastive_loss(same, same, 0.3);
    CHECK(u_it == doctest::Approx(std::log(double(batch))).epsilon(1e-12));
    CHECK(u_ti == doctest::Approx(std::log(double(batch))).epsilon(1e-12));
  }

  CHECK_THROWS_AS(global_contrastive_loss(MatrixXd(0, 3), MatrixXd(0, 3), 0.3), ContractError);
  CHECK_THROWS_AS(global_contrastive_loss(a, MatrixXd(gaussian(2, 5, rng)), 0.3), ContractError);
  MatrixXd nan = a;
  nan(0, 0) = std::nan("");
  CHECK_THROWS_AS(global_contrastive_loss(nan, b, 0.3), ContractError);
}

TEST_CASE("global loss normalises rows for image|text and columns for text|image") {
  MatrixXd img(2, 2), txt(2, 2);
  img << 1, 0, 1, 1;
  txt << 1, 0, 0, 1;
  const double r = 1 / std::sqrt(2.0);
  // s = [[1, 0], [r, r]] / tau
  const double tau = 0.5;
  const double row = 0.5 * ((std::log(std::exp(1 / tau) + 1) - 1 / tau) + std::log(2.0));
  const double col = 0.5 * ((std::log(std::exp(1 / tau) + std::exp(r / tau)) - 1 / tau) +
                            (std::log(1 + std::exp(r / tau)) - r / tau));
  const auto [it, ti] = global_contrastive_loss(img, txt, tau);
  CHECK(it == doctest::Approx(row).epsilon(1e-7));
  CHECK(ti == doctest::Approx(col).epsilon(1e-7));
}

TEST_CASE("intra-modal target examples") {
  const auto same = LocalEmbeddings<double>::text(MatrixXd::Ones(3, 4));
  const auto [u_row, u_col] = intra_modal_target(same, 0.1);
  CHECK(u_row.values.isApproxToConstant(1.0 / 3.0, 1e-12));
  CHECK(u_col.values.isApproxToConstant(1.0 / 3.0, 1e-12));

  const auto single = LocalEmbeddings<double>::text(MatrixXd::Constant(1, 4, 2.0));
  CHECK(intra_modal_target(single, 0.1).first.values(0, 0) == 1.0);

  const auto ortho = LocalEmbeddings<double>::text(MatrixXd::Identity(2, 2));
  const double expect = std::exp(10.0) / (std::exp(10.0) + 1.0);
  CHECK(std::abs(expect - 0.9999546) < 1e-7);
  const auto [o_row, o_col] = intra_modal_target(ortho, 0.1);
  CHECK(std::abs(o_row.values(0, 0) - expect) < 1e-6);
  CHECK(std::abs(o_col.values(1, 1) - expect) < 1e-6);
  CHECK(o_row.axis == Axis::Row);
  CHECK(o_col.axis == Axis::Col);
}

TEST_CASE("local loss examples") {
  LossConfig cfg;
  const auto flat = LocalEmbeddings<double>::text(MatrixXd::Ones(2, 3));
  CHECK(std::abs(local_loss(flat, flat, flat, cfg) - 4.0 * std::log(2.0)) < 1e-6);
  CHECK(std::abs(4.0 * std::log(2.0) - 2.77259) < 1e-5);

  std::mt19937_64 rng(3);
  const auto y = LocalEmbeddings<double>::text(gaussian(3, 4, rng));
  const auto z = LocalEmbeddings<double>::text(gaussian(3, 5, rng));
  const auto zc = LocalEmbeddings<double>::text(gaussian(3, 5, rng));
  CHECK(std::abs(local_loss(y, z, zc, cfg) - loop_local_loss(y.vectors, z.vectors, zc.vectors, 0.1, 0.3)) < 1e-8);

  // q = p: same embeddings on both sides and a shared temperature.
  LossConfig eq = cfg;
  eq.tau_l_src = eq.tau_l_tgt;
  const auto [p_row, p_col] = intra_modal_target(y, eq.tau_l_tgt);
  const double h = entropy_sum(p_row.values) + entropy_sum(p_col.values);
  CHECK(std::abs(local_loss(y, y, y, eq) - h) < 1e-9);

  LossConfig mean = cfg;
  mean.reduction = Reduction::Mean;
  CHECK(local_loss(y, z, zc, mean) == doctest::Approx(local_loss(y, z, zc, cfg) / 3.0).epsilon(1e-12));

  const auto short_cross = LocalEmbeddings<double>::text(gaussian(2, 5, rng));
  CHECK_THROWS_AS(local_loss(y, z, short_cross, cfg), ContractError);
}

TEST_CASE("local loss ignores padded positions") {
  std::mt19937_64 rng(8);
  LossConfig cfg;
  const MatrixXd y = gaussian(3, 4, rng), z = gaussian(3, 5, rng), zc = gaussian(3, 5, rng);
  Mask m(4);
  m << true, true, true, false;
  MatrixXd y4(4, 4), z4(4, 5), zc4(4, 5);
  y4 << y, gaussian(1, 4, rng);
  z4 << z, gaussian(1, 5, rng);
  zc4 << zc, gaussian(1, 5, rng);
  const double padded = local_loss(LocalEmbeddings<double>::text(y4, m), LocalEmbeddings<double>::text(z4, m),
                                   LocalEmbeddings<double>::text(zc4, m), cfg);
  const double plain = local_loss(LocalEmbeddings<double>::text(y), LocalEmbeddings<double>::text(z),
                                  LocalEmbeddings<double>::text(zc), cfg);
  CHECK(std::abs(padded - plain) < 1e-12);
}

TEST_CASE("total loss examples") {
  const std::array<double, 4> defaults{0.25, 0.75, 0.375, 0.375};
  CHECK(total_loss({0, 0, 0, 0}, defaults) == 0.0);
  CHECK(total_loss({1, 1, 1, 1}, defaults) == 1.75);
  CHECK(total_loss({1, 0, 0, 0}, {0.25, 9, 9, 9}) == 0.25);
  CHECK_THROWS_AS(total_loss({std::nan(""), 0, 0, 0}, defaults), ContractError);
  CHECK(LossConfig{}.lambdas == defaults);
}

TEST_CASE("loss config validation") {
  LossConfig c;
  c.tau_g = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = {};
  c.lambdas[2] = -1;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c = {};
  c.lambdas[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(c.validate(), ContractError);
  CHECK_NOTHROW(LossConfig{}.validate());
}

TEST_CASE("gradient check on a quadratic") {
  ag::Parameter w{"w", (MatrixXd(2, 3) << 0.5, -1.25, 2.0, 0.1, 3.0, -0.7).finished(), {}};
  const auto report = gradient_check([&](ag::Tape& t) {
    const ag::Var v = t.parameter(w);
    return ag::sum(ag::mul(v, v));
  }, {&w});
  CHECK(report.checked == 6);
  CHECK(report.max_rel_error < 1e-9);
  CHECK((w.grad - 2.0 * w.value).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("gradient check rejects a non-finite loss") {
  ag::Parameter w{"w", MatrixXd::Constant(1, 1, 1e-6), {}};
  CHECK_THROWS_AS(gradient_check([&](ag::Tape& t) {
    const ag::Var v = t.parameter(w);
    // log of a negative value once perturbed below zero
    return ag::log_eps(ag::scale(v, 1.0), -1e-6 + 1e-12);
  }, {&w}, 1e-5), RuntimeFailure);
}

namespace {

struct LocalProblem {
  ag::Parameter source{"source", {}, {}};  // feeds y only, so reaches the loss only through p
  ag::Parameter z{"z", {}, {}};
  ag::Parameter zc{"zc", {}, {}};

  explicit LocalProblem(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    source.value = gaussian(4, 3, rng);
    z.value = gaussian(4, 5, rng);
    zc.value = gaussian(4, 5, rng);
  }

  ag::Var build(ag::Tape& t, const LossConfig& cfg) {
    const ag::Var y = ag::tanh(t.parameter(source));
    const auto [p_row, p_col] = graph::intra_modal_target(y, cfg);
    return graph::local_loss(t.parameter(z), t.parameter(zc), p_row, p_col, cfg);
  }
};

}  // namespace

TEST_CASE("blocked target: no gradient reaches y through p") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    LocalProblem prob(seed);
    LossConfig cfg;
    cfg.mask_self_similarity_diagonal = seed % 2 == 1;
    for (auto* p : {&prob.source, &prob.z, &prob.zc}) p->zero_grad();
    ag::Tape t;
    t.backward(prob.build(t, cfg));
    CHECK(prob.source.grad.isZero(0.0));
    CHECK(!prob.z.grad.isZero(0.0));

    cfg.target_gradient_blocked = false;
    for (auto* p : {&prob.source, &prob.z, &prob.zc}) p->zero_grad();
    ag::Tape u;
    u.backward(prob.build(u, cfg));
    CHECK(!prob.source.grad.isZero(0.0));
  }
}

TEST_CASE("graph local loss matches finite differences when unblocked") {
  LocalProblem prob(42);
  LossConfig cfg;
  cfg.target_gradient_blocked = false;
  for (bool mask : {false, true}) {
    cfg.mask_self_similarity_diagonal = mask;
    for (Reduction r : {Reduction::Sum, Reduction::Mean}) {
      cfg.reduction = r;
      const auto rep = gradient_check([&](ag::Tape& t) { return prob.build(t, cfg); },
                                      {&prob.source, &prob.z, &prob.zc});
      CHECK(rep.max_rel_error < 1e-6);
    }
  }
}

TEST_CASE("graph losses match the pure functions") {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 100; ++t) {
    LossConfig cfg;
    cfg.mask_self_similarity_diagonal = t % 3 == 0;
    cfg.reduction = t % 2 ? Reduction::Mean : Reduction::Sum;
    cfg.target_gradient_blocked = t % 4 < 2;
    const Index n = 2 + t % 5;
    const MatrixXd y = gaussian(n, 3, rng), z = gaussian(n, 4, rng), zc = gaussian(n, 4, rng);
    ag::Tape tape;
    const auto [pr, pc] = graph::intra_modal_target(tape.constant(y), cfg);
    const double g = graph::local_loss(tape.constant(z), tape.constant(zc), pr, pc, cfg).scalar();
    const double pure = local_loss(LocalEmbeddings<double>::text(y), LocalEmbeddings<double>::text(z),
                                   LocalEmbeddings<double>::text(zc), cfg);
    CHECK(std::abs(g - pure) < 1e-9 * std::max(1.0, std::abs(pure)));

    const MatrixXd gi = gaussian(n, 4, rng), gt = gaussian(n, 4, rng);
    const auto [a, b] = graph::global_losses(tape.constant(gi), tape.constant(gt), cfg.tau_g);
    const auto [pa, pb] = global_contrastive_loss(gi, gt, cfg.tau_g);
    CHECK(std::abs(a.scalar() - pa) < 1e-12);
    CHECK(std::abs(b.scalar() - pb) < 1e-12);
  }
}

// Properties, 100 random trials each.

TEST_CASE("property: global losses non-negative, permutation and scale invariant") {
  std::mt19937_64 rng(200);
  std::uniform_real_distribution<double> scale(0.01, 50.0), tau(0.05, 2.0);
  for (int t = 0; t < 100; ++t) {
    const Index b = 1 + t % 8;
    const MatrixXd gi = gaussian(b, 4, rng), gt = gaussian(b, 4, rng);
    const double tg = tau(rng);
    const auto [it, ti] = global_contrastive_loss(gi, gt, tg);
    CHECK(it >= 0.0);
    CHECK(ti >= 0.0);
    const auto p = shuffled(b, rng);
    const auto [pit, pti] = global_contrastive_loss(permute_rows(gi, p), permute_rows(gt, p), tg);
    CHECK(std::abs(pit - it) < 1e-10);
    CHECK(std::abs(pti - ti) < 1e-10);
    MatrixXd si = gi, st = gt;
    for (Index i = 0; i < b; ++i) {
      si.row(i) *= scale(rng);
      st.row(i) *= scale(rng);
    }
    const auto [sit, sti] = global_contrastive_loss(si, st, tg);
    CHECK(std::abs(sit - it) < 1e-6);
    CHECK(std::abs(sti - ti) < 1e-6);
  }
}

TEST_CASE("property: local loss bounded below by the target entropy") {
  std::mt19937_64 rng(201);
  for (int t = 0; t < 100; ++t) {
    const Index n = 1 + t % 7;
    LossConfig cfg;
    const auto y = LocalEmbeddings<double>::text(gaussian(n, 3, rng));
    const auto z = LocalEmbeddings<double>::text(gaussian(n, 4, rng));
    const auto zc = LocalEmbeddings<double>::text(gaussian(n, 4, rng));
    const auto [p_row, p_col] = intra_modal_target(y, cfg.tau_l_tgt);
    const double h = entropy_sum(p_row.values) + entropy_sum(p_col.values);
    const double loss = local_loss(y, z, zc, cfg);
    CHECK(loss >= h - 1e-9);
    // Equality when q = p.
    LossConfig eq = cfg;
    eq.tau_l_src = eq.tau_l_tgt;
    CHECK(std::abs(local_loss(y, y, y, eq) - h) < 1e-8);
    if (n > 1) CHECK(loss > h);
  }
}

TEST_CASE("property: local loss invariant under a shared permutation of positions") {
  std::mt19937_64 rng(202);
  for (int t = 0; t < 100; ++t) {
    const Index n = 2 + t % 6;
    LossConfig cfg;
    cfg.mask_self_similarity_diagonal = t % 2 == 0;
    const MatrixXd y = gaussian(n, 3, rng), z = gaussian(n, 4, rng), zc = gaussian(n, 4, rng);
    const auto p = shuffled(n, rng);
    const double a = local_loss(LocalEmbeddings<double>::text(y), LocalEmbeddings<double>::text(z),
                                LocalEmbeddings<double>::text(zc), cfg);
    const double b = local_loss(LocalEmbeddings<double>::text(permute_rows(y, p)),
                                LocalEmbeddings<double>::text(permute_rows(z, p)),
                                LocalEmbeddings<double>::text(permute_rows(zc, p)), cfg);
    CHECK(std::abs(a - b) < 1e-9 * std::max(1.0, a));
  }
}

TEST_CASE("property: total equals lambda dot components") {
  std::mt19937_64 rng(203);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int t = 0; t < 100; ++t) {
    const std::array<double, 4> c{u(rng), u(rng), u(rng), u(rng)}, l{u(rng), u(rng), u(rng), u(rng)};
    const double dot = l[0] * c[0] + l[1] * c[1] + l[2] * c[2] + l[3] * c[3];
    CHECK(std::abs(total_loss(c, l) - dot) <= 1e-12 * std::max(1.0, dot));
  }
}
