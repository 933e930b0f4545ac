#pragma once

#include <array>
#include <functional>
#include <vector>

#include "p2g/common.hpp"

namespace p2g {

class Tape;

// Handle to a tape node. Cheap to copy; invalidated by Tape::clear().
class Var {
 public:
  Var() = default;
  const Mat& value() const;
  const Mat& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode autodiff over dense double matrices. One tape per forward
// pass; backward() walks nodes in reverse creation order. Leaf gradients
// are accumulated into caller-owned sink matrices so several tapes can run
// in parallel against the same parameters.
class Tape {
 public:
  Var constant(Mat value);
  // grad_sink must outlive backward(); resized+zeroed lazily on first use.
  Var leaf(const Mat& value, Mat* grad_sink);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double s);
  Var cmul(Var a, Var b);
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  // x + replicated bias row; bias is 1 x cols.
  Var add_row_broadcast(Var x, Var bias);
  Var gather_rows(Var table, std::vector<int> idx);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_cols(Var a, int start, int n);
  // Rowwise softmax. key_bias (1 x cols), when present, is added to every
  // row before normalization; use large negatives to mask keys.
  Var softmax_rows(Var a, const RowVec* key_bias = nullptr);
  Var logsumexp_rows(Var a);  // L x 1
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  Var relu(Var a);
  Var gelu(Var a);  // exact erf form
  Var exp(Var a);
  Var log_floor(Var a, double floor);   // log(max(a, floor))
  Var sqrt_floor(Var a, double floor);  // sqrt(max(a, floor))
  Var sum(Var a);                       // 1 x 1
  Var average(const std::vector<Var>& parts);

  void backward(Var loss);  // loss must be 1 x 1
  void clear();
  size_t size() const { return nodes_.size(); }

  const Mat& value_of(int id) const { return nodes_[id].value; }
  const Mat& grad_of(int id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&)> back;  // empty for constants
    Mat* sink = nullptr;              // leaf gradient destination
  };

  Var push(Mat value, std::function<void(Tape&)> back = {});
  Mat& g(int id) { return nodes_[id].grad; }
  const Mat& v(int id) const { return nodes_[id].value; }

  std::vector<Node> nodes_;
};

}  // namespace p2g
