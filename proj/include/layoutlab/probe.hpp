#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "layoutlab/dataio.hpp"
#include "layoutlab/encoders.hpp"
#include "layoutlab/nn.hpp"
#include "layoutlab/predictor.hpp"
#include "layoutlab/syntax.hpp"

namespace layoutlab {

// Activation stack a probe can attach to: layer 0 is the frozen text
// encoder's output, layer 1 the projected text the predictor encoder
// consumes, layer k >= 2 the output of predictor encoder layer k-1.
int probe_layer_count(const PredictorConfig& cfg);  // enc_layers + 2

// Per-token activations of one caption at one layer. Values only; nothing
// in the model is touched.
Mat extract_layer(const LayoutPredictor& model, const TextEncoderProvider& enc,
                  const CaptionRecord& caption, int layer);

struct SpanDataset {
  Mat features;             // one row per span: mean of its word vectors
  std::vector<int> labels;  // 1 = constituent
};

// Span examples for one caption: spans come from its constituency tree,
// features from the caption's activations at the given layer.
SpanDataset span_examples(const LayoutPredictor& model, const TextEncoderProvider& enc,
                          const CaptionRecord& caption, int layer, Rng& rng);

void append_dataset(SpanDataset& into, const SpanDataset& from);

struct ProbeConfig {
  bool mlp = false;  // default linear; one hidden ReLU layer when set
  int hidden = 32;
  int epochs = 300;
  double lr = 0.05;
  double l2 = 1e-3;
};

// Binary span classifier (logistic head, full-batch Adam).
class SpanProbe {
 public:
  SpanProbe() = default;
  SpanProbe(int d_in, const ProbeConfig& cfg, uint64_t seed);

  double fit(const Mat& x, const std::vector<int>& labels);  // final loss
  std::vector<double> predict_proba(const Mat& x) const;
  std::vector<int> predict(const Mat& x) const;

  const ParamSet& params() const { return params_; }

 private:
  Var forward(const Mat& x) const;
  ProbeConfig cfg_;
  ParamSet params_;
  MLP net_;
  Mat mean_, scale_;  // feature standardization from fit()
};

SpanProbe train_probe(const Mat& x, const std::vector<int>& labels,
                      const ProbeConfig& cfg, uint64_t seed);

// F1 of the positive class; both sides empty counts as perfect.
double binary_f1(const std::vector<int>& pred, const std::vector<int>& gold);

struct ProbeCurvePoint {
  int layer = 0;
  double f1 = 0.0;
  int n_train = 0;
  int n_test = 0;
};

struct ProbeCurve {
  std::vector<ProbeCurvePoint> points;
};

// Trains one probe per layer on spans from the captions (split by caption,
// 80/20) and scores F1 on the held-out spans. Deterministic given the seed;
// the probed model is read, never written.
ProbeCurve probe_curve(const LayoutPredictor& model, const TextEncoderProvider& enc,
                       const std::vector<CaptionRecord>& captions,
                       const ProbeConfig& cfg, uint64_t seed);

std::string probe_curve_json(const ProbeCurve& curve);
std::string probe_curve_svg(const ProbeCurve& curve);

}  // namespace layoutlab
