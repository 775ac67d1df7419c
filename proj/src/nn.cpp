#include "layoutlab/nn.hpp"

#include <cmath>

#include "layoutlab/check.hpp"

namespace layoutlab {

Var ParamSet::add(const std::string& name, Mat init) {
  check_arg(index_.count(name) == 0, "ParamSet: duplicate name " + name);
  Var p = make_param(std::move(init));
  index_[name] = entries_.size();
  entries_.emplace_back(name, p);
  return p;
}

Var ParamSet::get(const std::string& name) const {
  auto it = index_.find(name);
  check_arg(it != index_.end(), "ParamSet: unknown name " + name);
  return entries_[it->second].second;
}

size_t ParamSet::scalar_count() const {
  size_t n = 0;
  for (const auto& [name, p] : entries_) n += static_cast<size_t>(p.value().size());
  return n;
}

Mat xavier_uniform(Rng& rng, int rows, int cols) {
  double bound = std::sqrt(6.0 / (rows + cols));
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
  return m;
}

Mat normal_init(Rng& rng, int rows, int cols, double stddev) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal() * stddev;
  return m;
}

Linear::Linear(ParamSet& ps, const std::string& name, int d_in, int d_out, Rng& rng) {
  w = ps.add(name + ".w", xavier_uniform(rng, d_in, d_out));
  b = ps.add(name + ".b", Mat::Zero(1, d_out));
}

Var Linear::operator()(const Var& x) const { return add_rowvec(matmul(x, w), b); }

LayerNorm::LayerNorm(ParamSet& ps, const std::string& name, int d) {
  gamma = ps.add(name + ".gamma", Mat::Ones(1, d));
  beta = ps.add(name + ".beta", Mat::Zero(1, d));
}

Var LayerNorm::operator()(const Var& x) const { return layer_norm_rows(x, gamma, beta); }

Embedding::Embedding(ParamSet& ps, const std::string& name, int vocab, int d, Rng& rng) {
  table = ps.add(name + ".table", normal_init(rng, vocab, d, 0.02));
}

Var Embedding::operator()(const std::vector<int>& ids) const {
  return gather_rows(table, ids);
}

Mat causal_mask(int n) {
  Mat m = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) m(i, j) = -1e9;
  return m;
}

MultiheadAttention::MultiheadAttention(ParamSet& ps, const std::string& name, int d_model,
                                       int n_heads_, Rng& rng) {
  check_arg(d_model % n_heads_ == 0, "attention: d_model must divide by heads");
  n_heads = n_heads_;
  d_head = d_model / n_heads_;
  wq = Linear(ps, name + ".wq", d_model, d_model, rng);
  wk = Linear(ps, name + ".wk", d_model, d_model, rng);
  wv = Linear(ps, name + ".wv", d_model, d_model, rng);
  wo = Linear(ps, name + ".wo", d_model, d_model, rng);
}

Var MultiheadAttention::operator()(const Var& q_in, const Var& kv_in,
                                   const Mat* mask) const {
  Var q = wq(q_in);
  Var k = wk(kv_in);
  Var v = wv(kv_in);
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
  std::vector<Var> heads;
  heads.reserve(static_cast<size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Var qh = slice_cols(q, h * d_head, d_head);
    Var kh = slice_cols(k, h * d_head, d_head);
    Var vh = slice_cols(v, h * d_head, d_head);
    Var scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (mask != nullptr) {
      check_arg(mask->rows() == scores.rows() && mask->cols() == scores.cols(),
                "attention: mask shape mismatch");
      scores = add(scores, make_constant(*mask));
    }
    heads.push_back(matmul(softmax_rows(scores), vh));
  }
  return wo(concat_cols(heads));
}

FeedForward::FeedForward(ParamSet& ps, const std::string& name, int d_model, int d_ff,
                         Rng& rng) {
  fc1 = Linear(ps, name + ".fc1", d_model, d_ff, rng);
  fc2 = Linear(ps, name + ".fc2", d_ff, d_model, rng);
}

Var FeedForward::operator()(const Var& x) const { return fc2(relu(fc1(x))); }

EncoderLayer::EncoderLayer(ParamSet& ps, const std::string& name, int d_model, int n_heads,
                           int d_ff, Rng& rng)
    : ln1(ps, name + ".ln1", d_model),
      ln2(ps, name + ".ln2", d_model),
      attn(ps, name + ".attn", d_model, n_heads, rng),
      ffn(ps, name + ".ffn", d_model, d_ff, rng) {}

Var EncoderLayer::operator()(const Var& x, const Mat* mask) const {
  Var h = ln1(x);
  Var y = add(x, attn(h, h, mask));
  return add(y, ffn(ln2(y)));
}

DecoderLayer::DecoderLayer(ParamSet& ps, const std::string& name, int d_model, int n_heads,
                           int d_ff, Rng& rng)
    : ln1(ps, name + ".ln1", d_model),
      ln2(ps, name + ".ln2", d_model),
      ln3(ps, name + ".ln3", d_model),
      self_attn(ps, name + ".self_attn", d_model, n_heads, rng),
      cross_attn(ps, name + ".cross_attn", d_model, n_heads, rng),
      ffn(ps, name + ".ffn", d_model, d_ff, rng) {}

Var DecoderLayer::operator()(const Var& x, const Var& memory, const Mat* self_mask) const {
  Var h = ln1(x);
  Var y = add(x, self_attn(h, h, self_mask));
  y = add(y, cross_attn(ln2(y), memory));
  return add(y, ffn(ln3(y)));
}

MLP::MLP(ParamSet& ps, const std::string& name, const std::vector<int>& dims, Rng& rng) {
  check_arg(dims.size() >= 2, "MLP: need at least input and output dims");
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    layers.emplace_back(ps, name + ".fc" + std::to_string(i), dims[i], dims[i + 1], rng);
  }
}

Var MLP::operator()(const Var& x) const {
  Var h = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = relu(h);
  }
  return h;
}

Adam::Adam(double lr_, double beta1, double beta2, double eps)
    : lr(lr_), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::ensure_state(const ParamSet& params) {
  while (m_.size() < params.tensor_count()) {
    const auto& p = params.entries()[m_.size()].second;
    m_.push_back(Mat::Zero(p.rows(), p.cols()));
    v_.push_back(Mat::Zero(p.rows(), p.cols()));
  }
}

void Adam::step(ParamSet& params, const GradStore& grads, double max_grad_norm) {
  ensure_state(params);
  ++t_;

  double scale = 1.0;
  if (max_grad_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [name, p] : params.entries()) {
      const Mat* g = grads.find(p.node().get());
      if (g != nullptr) sq += g->squaredNorm();
    }
    double norm = std::sqrt(sq);
    if (norm > max_grad_norm) scale = max_grad_norm / norm;
  }

  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.entries().size(); ++i) {
    Var p = params.entries()[i].second;
    const Mat* gp = grads.find(p.node().get());
    Mat g = gp != nullptr ? Mat(*gp * scale) : Mat(Mat::Zero(p.rows(), p.cols()));
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    Mat mhat = m_[i] / bc1;
    Mat vhat = v_[i] / bc2;
    p.raw_value() -= lr * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
  }
}

}  // namespace layoutlab
