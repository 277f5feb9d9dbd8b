#include "elvis/autograd.hpp"

#include "elvis/core/similarity.hpp"

#include <cmath>

namespace elvis::ag {

const Mat& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(Parameter& p) {
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Mat value, std::vector<int> parents, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (int p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  if (n.requires_grad) {
    n.parents = std::move(parents);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int id, const Mat& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::backward(const Var& root) {
  require(root.tape() == this, "backward: variable belongs to another tape");
  require(root.rows() == 1 && root.cols() == 1, "backward: root must be a scalar");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[root.id()].grad = Mat::Ones(1, 1);
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param) {
      if (n.param->grad.size() == 0) n.param->zero_grad();
      n.param->grad += n.grad;
    }
  }
}

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  require(a.tape() == b.tape(), "autograd: operands recorded on different tapes");
  return *a.tape();
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value(), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), {ia, ib}, [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

Var add_row(const Var& a, const Var& row) {
  Tape& t = same_tape(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: bias must be 1 x cols");
  const int ia = a.id(), ib = row.id();
  Mat v = a.value();
  v.rowwise() += row.value().row(0);
  return t.record(std::move(v), {ia, ib}, [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.grad(self));
    if (t.requires_grad(ib)) t.accumulate(ib, t.grad(self).colwise().sum());
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  const int ia = a.id(), ib = b.id();
  return t.record(a.value().cwiseProduct(b.value()), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.grad(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

Var scale(const Var& a, double s) {
  const int ia = a.id();
  return a.tape()->record(a.value() * s, {ia}, [ia, s](Tape& t, int self) { t.accumulate(ia, t.grad(self) * s); });
}

Var tanh(const Var& a) {
  const int ia = a.id();
  return a.tape()->record(a.value().array().tanh().matrix(), {ia}, [ia](Tape& t, int self) {
    const Mat& y = t.value(self);
    t.accumulate(ia, t.grad(self).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var transpose(const Var& a) {
  const int ia = a.id();
  return a.tape()->record(a.value().transpose(), {ia},
                          [ia](Tape& t, int self) { t.accumulate(ia, t.grad(self).transpose()); });
}

Var mean_rows(const Var& a) {
  const int ia = a.id();
  const Index n = a.rows();
  return a.tape()->record(a.value().colwise().mean(), {ia}, [ia, n](Tape& t, int self) {
    t.accumulate(ia, t.grad(self).replicate(n, 1) / static_cast<double>(n));
  });
}

Var sum(const Var& a) {
  const int ia = a.id();
  const Index r = a.rows(), c = a.cols();
  return a.tape()->record(Mat::Constant(1, 1, a.value().sum()), {ia}, [ia, r, c](Tape& t, int self) {
    t.accumulate(ia, Mat::Constant(r, c, t.grad(self)(0, 0)));
  });
}

Var row_softmax(const Var& a) {
  const int ia = a.id();
  Mat y = a.value();
  for (Index i = 0; i < y.rows(); ++i) {
    y.row(i).array() -= y.row(i).maxCoeff();
    y.row(i) = y.row(i).array().exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return a.tape()->record(std::move(y), {ia}, [ia](Tape& t, int self) {
    const Mat& y = t.value(self);
    const Mat& g = t.grad(self);
    const Eigen::VectorXd inner = g.cwiseProduct(y).rowwise().sum();
    Mat ga = g;
    ga.colwise() -= inner;
    t.accumulate(ia, ga.cwiseProduct(y));
  });
}

Var log_eps(const Var& a, double eps) {
  const int ia = a.id();
  return a.tape()->record((a.value().array() + eps).log().matrix(), {ia}, [ia, eps](Tape& t, int self) {
    t.accumulate(ia, (t.grad(self).array() / (t.value(ia).array() + eps)).matrix());
  });
}

Var slice_rows(const Var& a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: range out of bounds");
  const int ia = a.id();
  const Index r = a.rows();
  return a.tape()->record(a.value().middleRows(start, count), {ia}, [ia, r, start, count](Tape& t, int self) {
    Mat g = Mat::Zero(r, t.grad(self).cols());
    g.middleRows(start, count) = t.grad(self);
    t.accumulate(ia, g);
  });
}

Var vstack(const std::vector<Var>& parts) {
  require(!parts.empty(), "vstack: nothing to stack");
  Tape& t = *parts.front().tape();
  Index rows = 0;
  const Index cols = parts.front().cols();
  std::vector<int> ids;
  std::vector<Index> offsets;
  for (const Var& p : parts) {
    require(p.tape() == &t && p.cols() == cols, "vstack: parts must share tape and column count");
    offsets.push_back(rows);
    rows += p.rows();
    ids.push_back(p.id());
  }
  Mat v(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) v.middleRows(offsets[k], parts[k].rows()) = parts[k].value();
  return t.record(std::move(v), ids, [ids, offsets](Tape& t, int self) {
    const Mat& g = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k)
      if (t.requires_grad(ids[k])) t.accumulate(ids[k], g.middleRows(offsets[k], t.value(ids[k]).rows()));
  });
}

Var pairwise_cosine(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  require(a.cols() == b.cols(), "pairwise_cosine: dimension mismatch");
  const int ia = a.id(), ib = b.id();
  const Eigen::VectorXd na = a.value().rowwise().norm();
  const Eigen::VectorXd nb = b.value().rowwise().norm();
  const Eigen::VectorXd da = (na.array() + kNormEpsilon).inverse();
  const Eigen::VectorXd db = (nb.array() + kNormEpsilon).inverse();
  const Mat ahat = da.asDiagonal() * a.value();
  const Mat bhat = db.asDiagonal() * b.value();
  Mat s = ahat * bhat.transpose();

  // d(x / (|x| + eps)) applied to an upstream row gradient u: u/(n+eps) - x (x.u) / (n (n+eps)^2).
  auto normalize_backward = [](const Mat& x, const Eigen::VectorXd& n, const Eigen::VectorXd& d, const Mat& u) {
    Mat out = d.asDiagonal() * u;
    const Eigen::VectorXd xu = x.cwiseProduct(u).rowwise().sum();
    for (Index i = 0; i < x.rows(); ++i)
      if (n(i) > 0.0) out.row(i) -= x.row(i) * (xu(i) * d(i) * d(i) / n(i));
    return out;
  };

  return t.record(std::move(s), {ia, ib},
                  [ia, ib, na, nb, da, db, ahat, bhat, normalize_backward](Tape& t, int self) {
                    const Mat& g = t.grad(self);
                    if (t.requires_grad(ia)) t.accumulate(ia, normalize_backward(t.value(ia), na, da, g * bhat));
                    if (t.requires_grad(ib))
                      t.accumulate(ib, normalize_backward(t.value(ib), nb, db, g.transpose() * ahat));
                  });
}

Var infonce_rows(const Var& logits) {
  require(logits.rows() == logits.cols(), "infonce_rows: logits must be square");
  const int ia = logits.id();
  const Index b = logits.rows();
  Mat p = logits.value();
  double total = 0.0;
  for (Index i = 0; i < b; ++i) {
    const double m = p.row(i).maxCoeff();
    p.row(i).array() = (p.row(i).array() - m).exp();
    const double z = p.row(i).sum();
    p.row(i) /= z;
    total += m + std::log(z) - logits.value()(i, i);
  }
  return logits.tape()->record(Mat::Constant(1, 1, total / static_cast<double>(b)), {ia},
                               [ia, p, b](Tape& t, int self) {
                                 Mat g = p - Mat::Identity(b, b);
                                 t.accumulate(ia, g * (t.grad(self)(0, 0) / static_cast<double>(b)));
                               });
}

Var bce_with_logits(const Var& logits, const Mat& targets) {
  require(logits.rows() == targets.rows() && logits.cols() == targets.cols(), "bce_with_logits: shape mismatch");
  const int ia = logits.id();
  const Mat& x = logits.value();
  const double n = static_cast<double>(x.size());
  // max(x, 0) - x*t + log(1 + exp(-|x|))
  const double loss = (x.array().max(0.0) - x.array() * targets.array() + (-x.array().abs()).exp().log1p()).sum() / n;
  return logits.tape()->record(Mat::Constant(1, 1, loss), {ia}, [ia, targets, n](Tape& t, int self) {
    const Mat sig = (1.0 / (1.0 + (-t.value(ia).array()).exp())).matrix();
    t.accumulate(ia, (sig - targets) * (t.grad(self)(0, 0) / n));
  });
}

Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights) {
  require(!terms.empty() && terms.size() == weights.size(), "weighted_sum: terms and weights differ in length");
  Tape& t = *terms.front().tape();
  double v = 0.0;
  std::vector<int> ids;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    require(terms[k].rows() == 1 && terms[k].cols() == 1, "weighted_sum: terms must be scalars");
    v += weights[k] * terms[k].scalar();
    ids.push_back(terms[k].id());
  }
  return t.record(Mat::Constant(1, 1, v), ids, [ids, weights](Tape& t, int self) {
    for (std::size_t k = 0; k < ids.size(); ++k) t.accumulate(ids[k], Mat::Constant(1, 1, weights[k] * t.grad(self)(0, 0)));
  });
}

}  // namespace elvis::ag
