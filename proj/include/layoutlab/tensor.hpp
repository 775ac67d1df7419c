#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace layoutlab {

using Mat = Eigen::MatrixXd;

class GradStore;

// One node of the computation graph. Values are computed eagerly when an op
// is applied; backward closures pull the node's accumulated gradient and
// push contributions into the parents.
struct Node {
  Mat value;
  Mat grad;
  bool grad_ready = false;
  bool requires_grad = false;
  bool is_param = false;
  uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&, GradStore&)> backward_fn;
};

// Gradients of parameter leaves, keyed by node identity. Kept outside the
// nodes so parameters can be shared across many step graphs without stale
// gradient state.
class GradStore {
 public:
  void add(const Node* n, const Mat& g);
  const Mat* find(const Node* n) const;
  bool empty() const { return grads_.empty(); }
  void clear() { grads_.clear(); }
  size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const Node*, Mat> grads_;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  bool defined() const { return node_ != nullptr; }
  const Mat& value() const { return node_->value; }
  const Mat& grad() const { return node_->grad; }
  bool has_grad() const { return node_ && node_->grad_ready; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  const std::shared_ptr<Node>& node() const { return node_; }

  // mutation used by the optimizer; values never change mid-graph
  Mat& raw_value() { return node_->value; }

 private:
  std::shared_ptr<Node> node_;
};

// Leaf constructors.
Var make_constant(Mat v);
Var make_input(Mat v);  // non-parameter leaf that still receives gradients
Var make_param(Mat v);

// Elementwise and scalar ops.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var cmul(const Var& a, const Var& b);
Var cdiv(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var exp_op(const Var& a);
Var log_op(const Var& a);
Var sqrt_op(const Var& a);
Var abs_op(const Var& a);
Var square(const Var& a);
Var cwise_min(const Var& a, const Var& b);
Var cwise_max(const Var& a, const Var& b);
Var clamp_min(const Var& a, double c);

// Linear algebra.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

// Reductions.
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var row_sum(const Var& a);  // n x m -> n x 1
Var col_sum(const Var& a);  // n x m -> 1 x m

// Broadcasts.
Var add_rowvec(const Var& a, const Var& v);  // v: 1 x m
Var add_colvec(const Var& a, const Var& v);  // v: n x 1
Var mul_colvec(const Var& a, const Var& v);
Var div_colvec(const Var& a, const Var& v);

// Row-wise softmax family (numerically stabilized).
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var logsumexp_rows(const Var& a);  // n x m -> n x 1

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Structure ops.
Var gather_rows(const Var& a, std::vector<int> idx);
Var slice_rows(const Var& a, int start, int n);
Var slice_cols(const Var& a, int start, int n);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var pick_elements(const Var& a, std::vector<int> rows, std::vector<int> cols);  // k x 1
Var stack_scalars(const std::vector<Var>& cells, int rows, int cols);  // row-major 1x1 cells

// Runs reverse mode from the given seed gradients. Parameter gradients are
// accumulated into the store; non-parameter leaves created with make_input
// keep their gradient on the node. Each graph should be swept once.
void backward(const std::vector<std::pair<Var, Mat>>& seeds, GradStore& store);
void backward(const Var& scalar_loss, GradStore& store);

}  // namespace layoutlab
