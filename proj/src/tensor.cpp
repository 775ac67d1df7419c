#include "layoutlab/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

#include "layoutlab/check.hpp"

namespace layoutlab {

namespace {

std::atomic<uint64_t> g_node_counter{1};

std::shared_ptr<Node> new_node(Mat value, std::vector<std::shared_ptr<Node>> parents) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->id = g_node_counter.fetch_add(1, std::memory_order_relaxed);
  for (const auto& p : n->parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  return n;
}

void accum(Node& parent, const Mat& g, GradStore& gs) {
  if (!parent.requires_grad) return;
  if (parent.is_param) {
    gs.add(&parent, g);
    return;
  }
  if (!parent.grad_ready) {
    parent.grad = Mat::Zero(parent.value.rows(), parent.value.cols());
    parent.grad_ready = true;
  }
  parent.grad += g;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  check_arg(a.rows() == b.rows() && a.cols() == b.cols(),
            std::string(op) + ": shape mismatch");
}

Mat stable_softmax_rows(const Mat& x) {
  Mat y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp();
    y.row(i) /= y.row(i).sum();
  }
  return y;
}

Mat stable_lse_rows(const Mat& x) {
  Mat y(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double m = x.row(i).maxCoeff();
    y(i, 0) = m + std::log((x.row(i).array() - m).exp().sum());
  }
  return y;
}

}  // namespace

void GradStore::add(const Node* n, const Mat& g) {
  auto it = grads_.find(n);
  if (it == grads_.end()) {
    grads_.emplace(n, g);
  } else {
    it->second += g;
  }
}

const Mat* GradStore::find(const Node* n) const {
  auto it = grads_.find(n);
  return it == grads_.end() ? nullptr : &it->second;
}

Var make_constant(Mat v) { return Var(new_node(std::move(v), {})); }

Var make_input(Mat v) {
  auto n = new_node(std::move(v), {});
  n->requires_grad = true;
  return Var(n);
}

Var make_param(Mat v) {
  auto n = new_node(std::move(v), {});
  n->requires_grad = true;
  n->is_param = true;
  return Var(n);
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  auto n = new_node(a.value() + b.value(), {a.node(), b.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    n->backward_fn = [pa, pb](Node& self, GradStore& gs) {
      accum(*pa, self.grad, gs);
      accum(*pb, self.grad, gs);
    };
  }
  return Var(n);
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  auto n = new_node(a.value() - b.value(), {a.node(), b.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    n->backward_fn = [pa, pb](Node& self, GradStore& gs) {
      accum(*pa, self.grad, gs);
      accum(*pb, Mat(-self.grad), gs);
    };
  }
  return Var(n);
}

Var cmul(const Var& a, const Var& b) {
  check_same_shape(a, b, "cmul");
  auto n = new_node(a.value().cwiseProduct(b.value()), {a.node(), b.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    n->backward_fn = [pa, pb](Node& self, GradStore& gs) {
      accum(*pa, self.grad.cwiseProduct(pb->value), gs);
      accum(*pb, self.grad.cwiseProduct(pa->value), gs);
    };
  }
  return Var(n);
}

Var cdiv(const Var& a, const Var& b) {
  check_same_shape(a, b, "cdiv");
  auto n = new_node(a.value().cwiseQuotient(b.value()), {a.node(), b.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    n->backward_fn = [pa, pb](Node& self, GradStore& gs) {
      accum(*pa, self.grad.cwiseQuotient(pb->value), gs);
      Mat gb = -(self.grad.array() * self.value.array() / pb->value.array()).matrix();
      accum(*pb, gb, gs);
    };
  }
  return Var(n);
}

Var scale(const Var& a, double c) {
  auto n = new_node(a.value() * c, {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa, c](Node& self, GradStore& gs) {
      accum(*pa, Mat(self.grad * c), gs);
    };
  }
  return Var(n);
}

Var add_scalar(const Var& a, double c) {
  auto n = new_node(Mat(a.value().array() + c), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa](Node& self, GradStore& gs) { accum(*pa, self.grad, gs); };
  }
  return Var(n);
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var relu(const Var& a) {
  auto n = new_node(a.value().cwiseMax(0.0), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa](Node& self, GradStore& gs) {
      Mat mask = (pa->value.array() > 0.0).cast<double>();
      accum(*pa, self.grad.cwiseProduct(mask), gs);
    };
  }
  return Var(n);
}

Var sigmoid(const Var& a) {
  Mat y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  auto n = new_node(std::move(y), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa](Node& self, GradStore& gs) {
      Mat g = (self.grad.array() * self.value.array() * (1.0 - self.value.array())).matrix();
      accum(*pa, g, gs);
    };
  }
  return Var(n);
}

Var exp_op(const Var& a) {
  auto n = new_node(Mat(a.value().array().exp()), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa](Node& self, GradStore& gs) {
      accum(*pa, self.grad.cwiseProduct(self.value), gs);
    };
  }
  return Var(n);
}

Var log_op(const Var& a) {
  auto n = new_node(Mat(a.value().array().log()), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa](Node& self, GradStore& gs) {
      accum(*pa, self.grad.cwiseQuotient(pa->value), gs);
    };
  }
  return Var(n);
}

Var sqrt_op(const Var& a) {
  auto n = new_node(Mat(a.value().array().sqrt()), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa](Node& self, GradStore& gs) {
      Mat g = (self.grad.array() * 0.5 / self.value.array()).matrix();
      accum(*pa, g, gs);
    };
  }
  return Var(n);
}

Var abs_op(const Var& a) {
  auto n = new_node(a.value().cwiseAbs(), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa](Node& self, GradStore& gs) {
      Mat sign = pa->value.array().sign().matrix();
      accum(*pa, self.grad.cwiseProduct(sign), gs);
    };
  }
  return Var(n);
}

Var square(const Var& a) {
  auto n = new_node(a.value().cwiseProduct(a.value()), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa](Node& self, GradStore& gs) {
      accum(*pa, Mat(2.0 * self.grad.cwiseProduct(pa->value)), gs);
    };
  }
  return Var(n);
}

// Ties route the gradient to the second argument, deterministically.
Var cwise_min(const Var& a, const Var& b) {
  check_same_shape(a, b, "cwise_min");
  auto n = new_node(a.value().cwiseMin(b.value()), {a.node(), b.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    n->backward_fn = [pa, pb](Node& self, GradStore& gs) {
      Mat mask = (pa->value.array() < pb->value.array()).cast<double>();
      accum(*pa, self.grad.cwiseProduct(mask), gs);
      accum(*pb, Mat(self.grad.array() * (1.0 - mask.array())), gs);
    };
  }
  return Var(n);
}

Var cwise_max(const Var& a, const Var& b) {
  check_same_shape(a, b, "cwise_max");
  auto n = new_node(a.value().cwiseMax(b.value()), {a.node(), b.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    n->backward_fn = [pa, pb](Node& self, GradStore& gs) {
      Mat mask = (pa->value.array() > pb->value.array()).cast<double>();
      accum(*pa, self.grad.cwiseProduct(mask), gs);
      accum(*pb, Mat(self.grad.array() * (1.0 - mask.array())), gs);
    };
  }
  return Var(n);
}

Var clamp_min(const Var& a, double c) {
  auto n = new_node(a.value().cwiseMax(c), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa, c](Node& self, GradStore& gs) {
      Mat mask = (pa->value.array() > c).cast<double>();
      accum(*pa, self.grad.cwiseProduct(mask), gs);
    };
  }
  return Var(n);
}

Var matmul(const Var& a, const Var& b) {
  check_arg(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  auto n = new_node(a.value() * b.value(), {a.node(), b.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    n->backward_fn = [pa, pb](Node& self, GradStore& gs) {
      accum(*pa, Mat(self.grad * pb->value.transpose()), gs);
      accum(*pb, Mat(pa->value.transpose() * self.grad), gs);
    };
  }
  return Var(n);
}

Var transpose(const Var& a) {
  auto n = new_node(a.value().transpose(), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa](Node& self, GradStore& gs) {
      accum(*pa, Mat(self.grad.transpose()), gs);
    };
  }
  return Var(n);
}

Var sum_all(const Var& a) {
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  auto n = new_node(std::move(v), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa](Node& self, GradStore& gs) {
      accum(*pa, Mat(Mat::Constant(pa->value.rows(), pa->value.cols(), self.grad(0, 0))), gs);
    };
  }
  return Var(n);
}

Var mean_all(const Var& a) {
  double count = static_cast<double>(a.rows() * a.cols());
  Mat v(1, 1);
  v(0, 0) = a.value().sum() / count;
  auto n = new_node(std::move(v), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa, count](Node& self, GradStore& gs) {
      accum(*pa,
            Mat(Mat::Constant(pa->value.rows(), pa->value.cols(), self.grad(0, 0) / count)),
            gs);
    };
  }
  return Var(n);
}

Var row_sum(const Var& a) {
  auto n = new_node(Mat(a.value().rowwise().sum()), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa](Node& self, GradStore& gs) {
      accum(*pa, Mat(self.grad.replicate(1, pa->value.cols())), gs);
    };
  }
  return Var(n);
}

Var col_sum(const Var& a) {
  auto n = new_node(Mat(a.value().colwise().sum()), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa](Node& self, GradStore& gs) {
      accum(*pa, Mat(self.grad.replicate(pa->value.rows(), 1)), gs);
    };
  }
  return Var(n);
}

Var add_rowvec(const Var& a, const Var& v) {
  check_arg(v.rows() == 1 && v.cols() == a.cols(), "add_rowvec: expected 1 x cols(a)");
  Mat out = a.value().rowwise() + v.value().row(0);
  auto n = new_node(std::move(out), {a.node(), v.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    Node* pv = v.node().get();
    n->backward_fn = [pa, pv](Node& self, GradStore& gs) {
      accum(*pa, self.grad, gs);
      accum(*pv, Mat(self.grad.colwise().sum()), gs);
    };
  }
  return Var(n);
}

Var add_colvec(const Var& a, const Var& v) {
  check_arg(v.cols() == 1 && v.rows() == a.rows(), "add_colvec: expected rows(a) x 1");
  Mat out = a.value().colwise() + v.value().col(0);
  auto n = new_node(std::move(out), {a.node(), v.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    Node* pv = v.node().get();
    n->backward_fn = [pa, pv](Node& self, GradStore& gs) {
      accum(*pa, self.grad, gs);
      accum(*pv, Mat(self.grad.rowwise().sum()), gs);
    };
  }
  return Var(n);
}

Var mul_colvec(const Var& a, const Var& v) {
  check_arg(v.cols() == 1 && v.rows() == a.rows(), "mul_colvec: expected rows(a) x 1");
  Mat out = (a.value().array().colwise() * v.value().col(0).array()).matrix();
  auto n = new_node(std::move(out), {a.node(), v.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    Node* pv = v.node().get();
    n->backward_fn = [pa, pv](Node& self, GradStore& gs) {
      Mat ga = (self.grad.array().colwise() * pv->value.col(0).array()).matrix();
      accum(*pa, ga, gs);
      Mat gv = self.grad.cwiseProduct(pa->value).rowwise().sum();
      accum(*pv, gv, gs);
    };
  }
  return Var(n);
}

Var div_colvec(const Var& a, const Var& v) {
  check_arg(v.cols() == 1 && v.rows() == a.rows(), "div_colvec: expected rows(a) x 1");
  Mat out = (a.value().array().colwise() / v.value().col(0).array()).matrix();
  auto n = new_node(std::move(out), {a.node(), v.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    Node* pv = v.node().get();
    n->backward_fn = [pa, pv](Node& self, GradStore& gs) {
      Mat ga = (self.grad.array().colwise() / pv->value.col(0).array()).matrix();
      accum(*pa, ga, gs);
      Eigen::ArrayXd vsq = pv->value.col(0).array().square();
      Mat gv = (-(self.grad.cwiseProduct(pa->value).rowwise().sum().array()) / vsq).matrix();
      accum(*pv, gv, gs);
    };
  }
  return Var(n);
}

Var softmax_rows(const Var& a) {
  auto n = new_node(stable_softmax_rows(a.value()), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa](Node& self, GradStore& gs) {
      Eigen::VectorXd s = self.grad.cwiseProduct(self.value).rowwise().sum();
      Mat g = ((self.grad.colwise() - s).array() * self.value.array()).matrix();
      accum(*pa, g, gs);
    };
  }
  return Var(n);
}

Var log_softmax_rows(const Var& a) {
  Mat lse = stable_lse_rows(a.value());
  Mat y = a.value().colwise() - lse.col(0);
  auto n = new_node(std::move(y), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa](Node& self, GradStore& gs) {
      Eigen::VectorXd s = self.grad.rowwise().sum();
      Mat soft = self.value.array().exp().matrix();
      Mat g = self.grad - (soft.array().colwise() * s.array()).matrix();
      accum(*pa, g, gs);
    };
  }
  return Var(n);
}

Var logsumexp_rows(const Var& a) {
  auto n = new_node(stable_lse_rows(a.value()), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa](Node& self, GradStore& gs) {
      Mat soft = (pa->value.colwise() - self.value.col(0)).array().exp().matrix();
      Mat g = (soft.array().colwise() * self.grad.col(0).array()).matrix();
      accum(*pa, g, gs);
    };
  }
  return Var(n);
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  check_arg(gamma.rows() == 1 && gamma.cols() == x.cols(), "layer_norm: gamma shape");
  check_arg(beta.rows() == 1 && beta.cols() == x.cols(), "layer_norm: beta shape");
  const Mat& xv = x.value();
  Eigen::Index rows = xv.rows(), cols = xv.cols();
  Mat xhat(rows, cols);
  Eigen::VectorXd inv(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    double mu = xv.row(i).mean();
    double var = (xv.row(i).array() - mu).square().mean();
    inv(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * inv(i);
  }
  Mat y = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
          beta.value().row(0).array();
  auto n = new_node(std::move(y), {x.node(), gamma.node(), beta.node()});
  if (n->requires_grad) {
    Node* px = x.node().get();
    Node* pg = gamma.node().get();
    Node* pb = beta.node().get();
    n->backward_fn = [px, pg, pb, xhat, inv](Node& self, GradStore& gs) {
      const Mat& g = self.grad;
      accum(*pg, Mat(g.cwiseProduct(xhat).colwise().sum()), gs);
      accum(*pb, Mat(g.colwise().sum()), gs);
      Mat dxhat = (g.array().rowwise() * pg->value.row(0).array()).matrix();
      Eigen::VectorXd m1 = dxhat.rowwise().mean();
      Eigen::VectorXd m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
      Mat dx = ((dxhat.colwise() - m1) - (xhat.array().colwise() * m2.array()).matrix());
      dx = (dx.array().colwise() * inv.array()).matrix();
      accum(*px, dx, gs);
    };
  }
  return Var(n);
}

Var gather_rows(const Var& a, std::vector<int> idx) {
  Mat out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (size_t k = 0; k < idx.size(); ++k) {
    check_arg(idx[k] >= 0 && idx[k] < a.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(k)) = a.value().row(idx[k]);
  }
  auto n = new_node(std::move(out), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa, idx = std::move(idx)](Node& self, GradStore& gs) {
      Mat g = Mat::Zero(pa->value.rows(), pa->value.cols());
      for (size_t k = 0; k < idx.size(); ++k) {
        g.row(idx[k]) += self.grad.row(static_cast<Eigen::Index>(k));
      }
      accum(*pa, g, gs);
    };
  }
  return Var(n);
}

Var slice_rows(const Var& a, int start, int len) {
  check_arg(start >= 0 && len >= 0 && start + len <= a.rows(), "slice_rows: range");
  auto n = new_node(Mat(a.value().middleRows(start, len)), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa, start, len](Node& self, GradStore& gs) {
      Mat g = Mat::Zero(pa->value.rows(), pa->value.cols());
      g.middleRows(start, len) = self.grad;
      accum(*pa, g, gs);
    };
  }
  return Var(n);
}

Var slice_cols(const Var& a, int start, int len) {
  check_arg(start >= 0 && len >= 0 && start + len <= a.cols(), "slice_cols: range");
  auto n = new_node(Mat(a.value().middleCols(start, len)), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa, start, len](Node& self, GradStore& gs) {
      Mat g = Mat::Zero(pa->value.rows(), pa->value.cols());
      g.middleCols(start, len) = self.grad;
      accum(*pa, g, gs);
    };
  }
  return Var(n);
}

Var concat_rows(const std::vector<Var>& parts) {
  check_arg(!parts.empty(), "concat_rows: empty");
  Eigen::Index rows = 0, cols = parts[0].cols();
  for (const Var& p : parts) {
    check_arg(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat out(rows, cols);
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<std::pair<int, int>> segments;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    segments.emplace_back(static_cast<int>(at), static_cast<int>(p.rows()));
    at += p.rows();
    parents.push_back(p.node());
  }
  auto n = new_node(std::move(out), std::move(parents));
  if (n->requires_grad) {
    n->backward_fn = [segments](Node& self, GradStore& gs) {
      for (size_t k = 0; k < segments.size(); ++k) {
        accum(*self.parents[k], Mat(self.grad.middleRows(segments[k].first, segments[k].second)),
              gs);
      }
    };
  }
  return Var(n);
}

Var concat_cols(const std::vector<Var>& parts) {
  check_arg(!parts.empty(), "concat_cols: empty");
  Eigen::Index cols = 0, rows = parts[0].rows();
  for (const Var& p : parts) {
    check_arg(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat out(rows, cols);
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<std::pair<int, int>> segments;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    segments.emplace_back(static_cast<int>(at), static_cast<int>(p.cols()));
    at += p.cols();
    parents.push_back(p.node());
  }
  auto n = new_node(std::move(out), std::move(parents));
  if (n->requires_grad) {
    n->backward_fn = [segments](Node& self, GradStore& gs) {
      for (size_t k = 0; k < segments.size(); ++k) {
        accum(*self.parents[k], Mat(self.grad.middleCols(segments[k].first, segments[k].second)),
              gs);
      }
    };
  }
  return Var(n);
}

Var pick_elements(const Var& a, std::vector<int> rows, std::vector<int> cols) {
  check_arg(rows.size() == cols.size(), "pick_elements: index length mismatch");
  Mat out(static_cast<Eigen::Index>(rows.size()), 1);
  for (size_t k = 0; k < rows.size(); ++k) {
    check_arg(rows[k] >= 0 && rows[k] < a.rows() && cols[k] >= 0 && cols[k] < a.cols(),
              "pick_elements: index out of range");
    out(static_cast<Eigen::Index>(k), 0) = a.value()(rows[k], cols[k]);
  }
  auto n = new_node(std::move(out), {a.node()});
  if (n->requires_grad) {
    Node* pa = a.node().get();
    n->backward_fn = [pa, rows = std::move(rows), cols = std::move(cols)](Node& self,
                                                                          GradStore& gs) {
      Mat g = Mat::Zero(pa->value.rows(), pa->value.cols());
      for (size_t k = 0; k < rows.size(); ++k) {
        g(rows[k], cols[k]) += self.grad(static_cast<Eigen::Index>(k), 0);
      }
      accum(*pa, g, gs);
    };
  }
  return Var(n);
}

Var stack_scalars(const std::vector<Var>& cells, int rows, int cols) {
  check_arg(static_cast<int>(cells.size()) == rows * cols, "stack_scalars: cell count");
  Mat out(rows, cols);
  std::vector<std::shared_ptr<Node>> parents;
  parents.reserve(cells.size());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const Var& cell = cells[static_cast<size_t>(r) * cols + c];
      check_arg(cell.rows() == 1 && cell.cols() == 1, "stack_scalars: cell must be 1x1");
      out(r, c) = cell.value()(0, 0);
      parents.push_back(cell.node());
    }
  }
  auto n = new_node(std::move(out), std::move(parents));
  if (n->requires_grad) {
    n->backward_fn = [rows, cols](Node& self, GradStore& gs) {
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          Mat g(1, 1);
          g(0, 0) = self.grad(r, c);
          accum(*self.parents[static_cast<size_t>(r) * cols + c], g, gs);
        }
      }
    };
  }
  return Var(n);
}

void backward(const std::vector<std::pair<Var, Mat>>& seeds, GradStore& store) {
  std::vector<Node*> stack;
  std::unordered_set<Node*> seen;

  for (const auto& [v, g] : seeds) {
    check_arg(v.defined(), "backward: undefined seed");
    Node* n = v.node().get();
    if (!n->requires_grad) continue;
    check_arg(g.rows() == n->value.rows() && g.cols() == n->value.cols(),
              "backward: seed gradient shape mismatch");
    if (n->is_param) {
      store.add(n, g);
      continue;
    }
    if (!n->grad_ready) {
      n->grad = Mat::Zero(n->value.rows(), n->value.cols());
      n->grad_ready = true;
    }
    n->grad += g;
    if (seen.insert(n).second) stack.push_back(n);
  }

  std::vector<Node*> order;
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && !p->is_param && seen.insert(p.get()).second) {
        stack.push_back(p.get());
      }
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->id > b->id; });

  for (Node* n : order) {
    if (n->grad_ready && n->backward_fn) n->backward_fn(*n, store);
  }
}

void backward(const Var& scalar_loss, GradStore& store) {
  check_arg(scalar_loss.rows() == 1 && scalar_loss.cols() == 1,
            "backward: loss must be a 1x1 scalar");
  Mat one(1, 1);
  one(0, 0) = 1.0;
  backward({{scalar_loss, one}}, store);
}

}  // namespace layoutlab
