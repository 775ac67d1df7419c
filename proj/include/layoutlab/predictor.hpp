#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "layoutlab/layout.hpp"
#include "layoutlab/nn.hpp"
#include "layoutlab/tensor.hpp"

namespace layoutlab {

enum class PredictorVariant { PAR, SEQ };

std::string predictor_variant_name(PredictorVariant v);
PredictorVariant predictor_variant_from_name(const std::string& s);

struct PredictorConfig {
  PredictorVariant variant = PredictorVariant::PAR;
  int d_model = 256;
  int d_ffn = 1024;
  int enc_layers = 4;
  int dec_layers = 6;
  int n_heads = 8;
  int n_max = 16;        // query count (PAR) / generation cap (SEQ)
  int n_categories = 0;  // label classes; the extra class n_categories is "no object"/end
  int d_enc = 0;         // width of the frozen text embeddings
  int max_text_len = 96;
};

// Training-side forward pass. K = n_max for PAR; K = n_gt + 1 for SEQ
// (teacher forcing, one extra position that must predict the end class).
struct PredictorForward {
  Var label_logits;  // K x (n_categories + 1)
  Var boxes;         // K x 4, already squashed into (0,1)
  Var count_logits;  // PAR only: 1 x (n_max + 1)
  Var object_embs;   // K x d_model, the embeddings the heads read from
  Var projected_text;          // text after the input projection (probe layer 1)
  std::vector<Var> encoder_outs;  // one entry per predictor encoder layer
};

// Inference-side output with plain values.
struct PredictionOutput {
  Mat label_probs;      // K x (n_categories + 1), rows sum to 1
  Mat boxes;            // K x 4 in (0,1)
  Mat count_probs;      // PAR: 1 x (n_max + 1); empty for SEQ
  int emit_count = -1;  // PAR: argmax of the count head; SEQ: objects generated
};

// Transformer encoder over projected text embeddings plus a decoder that
// either attends from n_max learned queries in one pass (PAR) or generates
// objects autoregressively until the end class (SEQ). Copies share weights.
class LayoutPredictor {
 public:
  LayoutPredictor() = default;
  LayoutPredictor(const PredictorConfig& cfg, uint64_t seed);

  // All n_max queries decoded jointly; count head over mean-pooled memory.
  PredictorForward forward_par(const Mat& text_emb) const;

  // Teacher forcing. gt must be ordered by descending box area (see
  // order_by_area_desc) and fit within n_max objects.
  PredictorForward forward_seq(const Mat& text_emb, const Layout& gt) const;

  // Greedy inference for either variant.
  PredictionOutput predict(const Mat& text_emb) const;

  // Encoder-side activations only (no decoder weights touched): the text
  // after the input projection and the output of every encoder layer.
  struct EncoderActivations {
    Var projected;
    std::vector<Var> layer_outs;
  };
  EncoderActivations encode_activations(const Mat& text_emb) const;

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const PredictorConfig& config() const { return cfg_; }
  int null_class() const { return cfg_.n_categories; }
  // decoder-stack invocations so far; PAR inference costs exactly one
  long decoder_calls() const { return decoder_calls_; }

 private:
  Var encode_text(const Mat& text_emb, Var* projected, std::vector<Var>* outs) const;
  PredictorForward finish_heads(Var v, Var projected, std::vector<Var> enc_outs) const;
  PredictorForward seq_stack(const Mat& text_emb,
                             const std::vector<LayoutObject>& prev) const;

  PredictorConfig cfg_;
  ParamSet params_;
  Linear text_proj_;
  Embedding text_pos_;
  std::vector<EncoderLayer> enc_;
  std::vector<DecoderLayer> dec_;
  MLP label_head_, box_head_;
  // PAR
  Var query_emb_;  // n_max x d_model
  MLP count_head_;
  // SEQ
  Var start_emb_;  // 1 x d_model
  Embedding obj_label_emb_, dec_pos_;
  Linear obj_box_proj_;
  mutable long decoder_calls_ = 0;
};

// Argmax labels, boxes as-is; rows past emit_count and rows whose argmax is
// the no-object/end class are dropped.
Layout read_layout(const PredictionOutput& p);

}  // namespace layoutlab
