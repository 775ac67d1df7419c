#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "layoutlab/rng.hpp"
#include "layoutlab/tensor.hpp"

namespace layoutlab {

// Named parameter registry. Iteration order is insertion order, which makes
// optimizer state and checkpoints stable across runs of the same build.
class ParamSet {
 public:
  Var add(const std::string& name, Mat init);
  Var get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  size_t tensor_count() const { return entries_.size(); }
  size_t scalar_count() const;

 private:
  std::vector<std::pair<std::string, Var>> entries_;
  std::unordered_map<std::string, size_t> index_;
};

Mat xavier_uniform(Rng& rng, int rows, int cols);
Mat normal_init(Rng& rng, int rows, int cols, double stddev);

struct Linear {
  Var w;  // d_in x d_out
  Var b;  // 1 x d_out
  Linear() = default;
  Linear(ParamSet& ps, const std::string& name, int d_in, int d_out, Rng& rng);
  Var operator()(const Var& x) const;  // x: n x d_in
};

struct LayerNorm {
  Var gamma, beta;  // 1 x d
  LayerNorm() = default;
  LayerNorm(ParamSet& ps, const std::string& name, int d);
  Var operator()(const Var& x) const;
};

struct Embedding {
  Var table;  // vocab x d
  Embedding() = default;
  Embedding(ParamSet& ps, const std::string& name, int vocab, int d, Rng& rng);
  Var operator()(const std::vector<int>& ids) const;
};

// Additive attention mask: 0 where attending is allowed, large negative
// where blocked. Entry (i, j) gates query i attending to key j.
Mat causal_mask(int n);

struct MultiheadAttention {
  int n_heads = 0;
  int d_head = 0;
  Linear wq, wk, wv, wo;
  MultiheadAttention() = default;
  MultiheadAttention(ParamSet& ps, const std::string& name, int d_model, int n_heads,
                     Rng& rng);
  Var operator()(const Var& q_in, const Var& kv_in, const Mat* mask = nullptr) const;
};

struct FeedForward {
  Linear fc1, fc2;
  FeedForward() = default;
  FeedForward(ParamSet& ps, const std::string& name, int d_model, int d_ff, Rng& rng);
  Var operator()(const Var& x) const;
};

// Pre-norm residual blocks.
struct EncoderLayer {
  LayerNorm ln1, ln2;
  MultiheadAttention attn;
  FeedForward ffn;
  EncoderLayer() = default;
  EncoderLayer(ParamSet& ps, const std::string& name, int d_model, int n_heads, int d_ff,
               Rng& rng);
  Var operator()(const Var& x, const Mat* mask = nullptr) const;
};

struct DecoderLayer {
  LayerNorm ln1, ln2, ln3;
  MultiheadAttention self_attn, cross_attn;
  FeedForward ffn;
  DecoderLayer() = default;
  DecoderLayer(ParamSet& ps, const std::string& name, int d_model, int n_heads, int d_ff,
               Rng& rng);
  Var operator()(const Var& x, const Var& memory, const Mat* self_mask = nullptr) const;
};

// dims = {d_in, hidden..., d_out}; ReLU between layers, linear head.
struct MLP {
  std::vector<Linear> layers;
  MLP() = default;
  MLP(ParamSet& ps, const std::string& name, const std::vector<int>& dims, Rng& rng);
  Var operator()(const Var& x) const;
};

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // One update from the accumulated gradients. Parameters without a gradient
  // this step still decay their moments. max_grad_norm > 0 rescales the full
  // gradient (global norm) before the moment update.
  void step(ParamSet& params, const GradStore& grads, double max_grad_norm = 0.0);

  double lr;
  int64_t t() const { return t_; }

  // checkpoint access
  std::vector<Mat>& m_state() { return m_; }
  std::vector<Mat>& v_state() { return v_; }
  const std::vector<Mat>& m_state() const { return m_; }
  const std::vector<Mat>& v_state() const { return v_; }
  void set_t(int64_t t) { t_ = t; }

 private:
  void ensure_state(const ParamSet& params);
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Mat> m_, v_;
};

}  // namespace layoutlab
