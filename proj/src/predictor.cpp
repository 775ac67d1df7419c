#include "layoutlab/predictor.hpp"

#include <algorithm>
#include <numeric>

#include "layoutlab/check.hpp"

namespace layoutlab {

std::string predictor_variant_name(PredictorVariant v) {
  return v == PredictorVariant::PAR ? "PAR" : "SEQ";
}

PredictorVariant predictor_variant_from_name(const std::string& s) {
  if (s == "PAR") return PredictorVariant::PAR;
  if (s == "SEQ") return PredictorVariant::SEQ;
  throw std::invalid_argument("unknown predictor variant: " + s);
}

namespace {

int argmax_row(const Mat& m, Eigen::Index row) {
  Eigen::Index best = 0;
  m.row(row).maxCoeff(&best);
  return static_cast<int>(best);
}

Mat softmax_rows_value(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double mx = logits.row(i).maxCoeff();
    Eigen::ArrayXd e = (logits.row(i).array() - mx).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  return out;
}

}  // namespace

LayoutPredictor::LayoutPredictor(const PredictorConfig& cfg, uint64_t seed) : cfg_(cfg) {
  check_arg(cfg.d_model > 0 && cfg.d_ffn > 0, "predictor: bad dimensions");
  check_arg(cfg.enc_layers > 0 && cfg.dec_layers > 0, "predictor: need layers");
  check_arg(cfg.n_max > 0, "predictor: n_max must be positive");
  check_arg(cfg.n_categories > 0, "predictor: category count unset");
  check_arg(cfg.d_enc > 0, "predictor: text embedding width unset");

  Rng rng(seed);
  text_proj_ = Linear(params_, "text_proj", cfg.d_enc, cfg.d_model, rng);
  text_pos_ = Embedding(params_, "text_pos", cfg.max_text_len, cfg.d_model, rng);
  for (int l = 0; l < cfg.enc_layers; ++l)
    enc_.emplace_back(params_, "enc" + std::to_string(l), cfg.d_model, cfg.n_heads,
                      cfg.d_ffn, rng);
  if (cfg.variant == PredictorVariant::PAR) {
    query_emb_ = params_.add("query_emb", normal_init(rng, cfg.n_max, cfg.d_model, 0.02));
    count_head_ = MLP(params_, "count_head", {cfg.d_model, cfg.d_model, cfg.n_max + 1}, rng);
  } else {
    start_emb_ = params_.add("start_emb", normal_init(rng, 1, cfg.d_model, 0.02));
    obj_label_emb_ = Embedding(params_, "obj_label_emb", cfg.n_categories, cfg.d_model, rng);
    obj_box_proj_ = Linear(params_, "obj_box_proj", 4, cfg.d_model, rng);
    dec_pos_ = Embedding(params_, "dec_pos", cfg.n_max + 1, cfg.d_model, rng);
  }
  for (int l = 0; l < cfg.dec_layers; ++l)
    dec_.emplace_back(params_, "dec" + std::to_string(l), cfg.d_model, cfg.n_heads,
                      cfg.d_ffn, rng);
  label_head_ =
      MLP(params_, "label_head", {cfg.d_model, cfg.d_model, cfg.n_categories + 1}, rng);
  box_head_ = MLP(params_, "box_head", {cfg.d_model, cfg.d_model, 4}, rng);
}

Var LayoutPredictor::encode_text(const Mat& text_emb, Var* projected,
                                 std::vector<Var>* outs) const {
  check_arg(text_emb.rows() > 0, "predictor: empty text embedding");
  check_arg(text_emb.cols() == cfg_.d_enc,
            "predictor: text width " + std::to_string(text_emb.cols()) +
                " does not match configured d_enc " + std::to_string(cfg_.d_enc));
  check_arg(text_emb.rows() <= cfg_.max_text_len, "predictor: text longer than max_text_len");
  Var proj = text_proj_(make_input(text_emb));
  if (projected != nullptr) *projected = proj;
  std::vector<int> pos(text_emb.rows());
  std::iota(pos.begin(), pos.end(), 0);
  Var x = add(proj, text_pos_(pos));
  for (const auto& layer : enc_) {
    x = layer(x);
    if (outs != nullptr) outs->push_back(x);
  }
  return x;
}

PredictorForward LayoutPredictor::finish_heads(Var v, Var projected,
                                               std::vector<Var> enc_outs) const {
  PredictorForward f;
  f.object_embs = v;
  f.label_logits = label_head_(v);
  f.boxes = sigmoid(box_head_(v));
  f.projected_text = std::move(projected);
  f.encoder_outs = std::move(enc_outs);
  return f;
}

LayoutPredictor::EncoderActivations LayoutPredictor::encode_activations(
    const Mat& text_emb) const {
  EncoderActivations acts;
  encode_text(text_emb, &acts.projected, &acts.layer_outs);
  return acts;
}

PredictorForward LayoutPredictor::forward_par(const Mat& text_emb) const {
  check_arg(cfg_.variant == PredictorVariant::PAR, "forward_par on a SEQ model");
  Var projected;
  std::vector<Var> enc_outs;
  Var mem = encode_text(text_emb, &projected, &enc_outs);
  Var x = query_emb_;
  for (const auto& layer : dec_) x = layer(x, mem);
  ++decoder_calls_;
  PredictorForward f = finish_heads(x, projected, std::move(enc_outs));
  Var pooled = scale(col_sum(mem), 1.0 / static_cast<double>(mem.rows()));
  f.count_logits = count_head_(pooled);
  return f;
}

PredictorForward LayoutPredictor::seq_stack(const Mat& text_emb,
                                            const std::vector<LayoutObject>& prev) const {
  Var projected;
  std::vector<Var> enc_outs;
  Var mem = encode_text(text_emb, &projected, &enc_outs);

  int n = static_cast<int>(prev.size());
  Var x = start_emb_;
  if (n > 0) {
    std::vector<int> labels(n);
    Mat boxes(n, 4);
    for (int i = 0; i < n; ++i) {
      check_arg(prev[i].category >= 0 && prev[i].category < cfg_.n_categories,
                "seq input object has category outside the vocabulary");
      labels[i] = prev[i].category;
      boxes.row(i) << prev[i].box.x, prev[i].box.y, prev[i].box.w, prev[i].box.h;
    }
    Var obj = add(obj_label_emb_(labels), obj_box_proj_(make_input(boxes)));
    x = concat_rows({x, obj});
  }
  std::vector<int> pos(n + 1);
  std::iota(pos.begin(), pos.end(), 0);
  x = add(x, dec_pos_(pos));
  Mat mask = causal_mask(n + 1);
  for (const auto& layer : dec_) x = layer(x, mem, &mask);
  ++decoder_calls_;
  return finish_heads(x, projected, std::move(enc_outs));
}

PredictorForward LayoutPredictor::forward_seq(const Mat& text_emb, const Layout& gt) const {
  check_arg(cfg_.variant == PredictorVariant::SEQ, "forward_seq on a PAR model");
  check_arg(gt.size() <= cfg_.n_max,
            "ground truth has more objects than n_max=" + std::to_string(cfg_.n_max));
  for (int i = 1; i < gt.size(); ++i)
    check_arg(gt.objects[i].box.area() <= gt.objects[i - 1].box.area() + 1e-12,
              "seq teacher forcing expects areas in descending order");
  return seq_stack(text_emb, gt.objects);
}

PredictionOutput LayoutPredictor::predict(const Mat& text_emb) const {
  PredictionOutput out;
  if (cfg_.variant == PredictorVariant::PAR) {
    PredictorForward f = forward_par(text_emb);
    out.label_probs = softmax_rows_value(f.label_logits.value());
    out.boxes = f.boxes.value();
    out.count_probs = softmax_rows_value(f.count_logits.value());
    out.emit_count = argmax_row(out.count_probs, 0);
    return out;
  }
  std::vector<LayoutObject> objs;
  std::vector<Mat> prob_rows, box_rows;
  while (true) {
    PredictorForward f = seq_stack(text_emb, objs);
    Eigen::Index last = f.label_logits.rows() - 1;
    Mat probs = softmax_rows_value(f.label_logits.value().row(last));
    Mat box = f.boxes.value().row(last);
    prob_rows.push_back(probs);
    box_rows.push_back(box);
    int label = argmax_row(probs, 0);
    if (label == null_class()) break;
    LayoutObject o;
    o.category = label;
    o.box = {box(0, 0), box(0, 1), box(0, 2), box(0, 3)};
    objs.push_back(o);
    if (static_cast<int>(objs.size()) == cfg_.n_max) break;
  }
  out.label_probs = Mat(prob_rows.size(), cfg_.n_categories + 1);
  out.boxes = Mat(box_rows.size(), 4);
  for (size_t i = 0; i < prob_rows.size(); ++i) {
    out.label_probs.row(i) = prob_rows[i].row(0);
    out.boxes.row(i) = box_rows[i].row(0);
  }
  out.emit_count = static_cast<int>(objs.size());
  return out;
}

Layout read_layout(const PredictionOutput& p) {
  Layout out;
  if (p.label_probs.size() == 0) return out;
  int rows = static_cast<int>(p.label_probs.rows());
  int limit = p.emit_count >= 0 ? std::min(p.emit_count, rows) : rows;
  int null_id = static_cast<int>(p.label_probs.cols()) - 1;
  for (int k = 0; k < limit; ++k) {
    int label = argmax_row(p.label_probs, k);
    if (label == null_id) continue;
    LayoutObject o;
    o.category = label;
    o.box = {p.boxes(k, 0), p.boxes(k, 1), p.boxes(k, 2), p.boxes(k, 3)};
    out.objects.push_back(o);
  }
  return out;
}

}  // namespace layoutlab
