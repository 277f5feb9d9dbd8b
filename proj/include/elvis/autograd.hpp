#pragma once

// Reverse-mode differentiation over dense double matrices. A Tape records every
// operation of one forward pass; backward() walks it once in reverse order.

#include "elvis/core/types.hpp"

#include <deque>
#include <functional>
#include <string>
#include <vector>

namespace elvis::ag {

using Mat = Eigen::MatrixXd;

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;

  void zero_grad() { grad = Mat::Zero(value.rows(), value.cols()); }
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Mat& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  Var constant(Mat value);
  Var parameter(Parameter& p);
  Var record(Mat value, std::vector<int> parents, Backward backward);

  /// Seeds d(root)/d(root) = 1 and accumulates into every Parameter's grad.
  void backward(const Var& root);

  const Mat& value(int id) const { return nodes_[id].value; }
  const Mat& grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  void accumulate(int id, const Mat& g);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::vector<int> parents;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;
};

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var tanh(const Var& a);
Var transpose(const Var& a);
Var mean_rows(const Var& a);
Var sum(const Var& a);
Var row_softmax(const Var& a);
Var log_eps(const Var& a, double eps);
Var slice_rows(const Var& a, Index start, Index count);
Var vstack(const std::vector<Var>& parts);

/// Row-wise cosine similarity matrix with the norm epsilon of the core module.
Var pairwise_cosine(const Var& a, const Var& b);
/// Mean over rows of -log softmax(row)(diagonal); input must be square.
Var infonce_rows(const Var& logits);
/// Mean binary cross-entropy of sigmoid(logits) against constant 0/1 targets.
Var bce_with_logits(const Var& logits, const Mat& targets);
/// sum_k weights[k] * terms[k] over 1x1 terms.
Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights);

}  // namespace elvis::ag
