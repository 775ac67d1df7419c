#include "layoutlab/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "layoutlab/check.hpp"

namespace layoutlab {

int probe_layer_count(const PredictorConfig& cfg) { return cfg.enc_layers + 2; }

Mat extract_layer(const LayoutPredictor& model, const TextEncoderProvider& enc,
                  const CaptionRecord& caption, int layer) {
  const int n_layers = probe_layer_count(model.config());
  check_arg(layer >= 0 && layer < n_layers,
            "extract_layer: layer " + std::to_string(layer) + " outside [0, " +
                std::to_string(n_layers) + ")");
  Mat text = enc.encode(caption);
  if (layer == 0) return text;
  const auto acts = model.encode_activations(text);
  if (layer == 1) return acts.projected.value();
  return acts.layer_outs[static_cast<size_t>(layer - 2)].value();
}

namespace {

Mat mean_rows(const Mat& m, const std::vector<int>& rows, int start, int end) {
  Mat out = Mat::Zero(1, m.cols());
  for (int i = start; i < end; ++i) out += m.row(rows[static_cast<size_t>(i)]);
  return out / static_cast<double>(end - start);
}

}  // namespace

SpanDataset span_examples(const LayoutPredictor& model, const TextEncoderProvider& enc,
                          const CaptionRecord& caption, int layer, Rng& rng) {
  check_arg(!caption.tree.empty(), "span_examples: caption has no tree");
  const Tree tree = parse_bracketed(caption.tree);
  const std::vector<ProbeSpan> spans = sample_probe_spans(tree, rng);
  const Mat acts = extract_layer(model, enc, caption, layer);
  const std::vector<int> rows = enc.word_rows(caption);

  SpanDataset out;
  out.features = Mat(static_cast<int>(spans.size()), acts.cols());
  for (size_t i = 0; i < spans.size(); ++i) {
    check_arg(spans[i].end <= static_cast<int>(rows.size()),
              "span_examples: span outside the caption");
    out.features.row(static_cast<int>(i)) =
        mean_rows(acts, rows, spans[i].start, spans[i].end);
    out.labels.push_back(spans[i].constituent ? 1 : 0);
  }
  return out;
}

void append_dataset(SpanDataset& into, const SpanDataset& from) {
  if (from.labels.empty()) return;
  if (into.labels.empty()) {
    into = from;
    return;
  }
  check_arg(into.features.cols() == from.features.cols(),
            "append_dataset: feature width mismatch");
  Mat merged(into.features.rows() + from.features.rows(), into.features.cols());
  merged.topRows(into.features.rows()) = into.features;
  merged.bottomRows(from.features.rows()) = from.features;
  into.features = std::move(merged);
  into.labels.insert(into.labels.end(), from.labels.begin(), from.labels.end());
}

SpanProbe::SpanProbe(int d_in, const ProbeConfig& cfg, uint64_t seed) : cfg_(cfg) {
  check_arg(d_in > 0, "SpanProbe: d_in must be positive");
  check_arg(cfg.epochs > 0 && cfg.lr > 0.0 && cfg.l2 >= 0.0, "SpanProbe: bad config");
  Rng rng(seed);
  std::vector<int> dims = cfg.mlp ? std::vector<int>{d_in, cfg.hidden, 1}
                                  : std::vector<int>{d_in, 1};
  net_ = MLP(params_, "probe", dims, rng);
}

Var SpanProbe::forward(const Mat& x) const {
  check_arg(mean_.size() > 0, "SpanProbe: fit() before predict");
  check_arg(x.cols() == mean_.cols(), "SpanProbe: feature width mismatch");
  Mat std_x = x;
  std_x.rowwise() -= mean_.row(0);
  std_x.array().rowwise() /= scale_.row(0).array();
  return net_(make_input(std_x));
}

namespace {

// log(1 + exp(t)) without overflow
Var stable_softplus(const Var& t) {
  return add(relu(t), log_op(add_scalar(exp_op(neg(abs_op(t))), 1.0)));
}

}  // namespace

double SpanProbe::fit(const Mat& x, const std::vector<int>& labels) {
  check_arg(x.rows() == static_cast<Eigen::Index>(labels.size()),
            "SpanProbe::fit: rows/labels mismatch");
  check_arg(labels.size() >= 2, "SpanProbe::fit: need at least two examples");
  const int pos = static_cast<int>(std::count(labels.begin(), labels.end(), 1));
  check_arg(pos > 0 && pos < static_cast<int>(labels.size()),
            "SpanProbe::fit: training labels are single-class");

  mean_ = x.colwise().mean();
  Mat centered = x.rowwise() - mean_.row(0);
  scale_ = (centered.array().square().colwise().mean().sqrt() + 1e-8).matrix();

  // margin sign: positive labels want a positive logit
  Mat flip(x.rows(), 1);
  for (size_t i = 0; i < labels.size(); ++i)
    flip(static_cast<Eigen::Index>(i), 0) = labels[i] == 1 ? -1.0 : 1.0;

  Adam opt(cfg_.lr);
  double last = 0.0;
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    Var z = forward(x);
    Var loss = mean_all(stable_softplus(cmul(make_constant(flip), z)));
    for (const auto& entry : params_.entries())
      loss = add(loss, scale(sum_all(square(entry.second)), cfg_.l2));
    GradStore grads;
    backward(loss, grads);
    opt.step(params_, grads);
    last = loss.value()(0, 0);
  }
  return last;
}

std::vector<double> SpanProbe::predict_proba(const Mat& x) const {
  const Mat z = forward(x).value();
  std::vector<double> p(static_cast<size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    p[static_cast<size_t>(i)] = 1.0 / (1.0 + std::exp(-z(i, 0)));
  return p;
}

std::vector<int> SpanProbe::predict(const Mat& x) const {
  std::vector<int> out;
  for (double p : predict_proba(x)) out.push_back(p > 0.5 ? 1 : 0);
  return out;
}

SpanProbe train_probe(const Mat& x, const std::vector<int>& labels,
                      const ProbeConfig& cfg, uint64_t seed) {
  SpanProbe probe(static_cast<int>(x.cols()), cfg, seed);
  probe.fit(x, labels);
  return probe;
}

double binary_f1(const std::vector<int>& pred, const std::vector<int>& gold) {
  check_arg(pred.size() == gold.size(), "binary_f1: size mismatch");
  int tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == 1 && gold[i] == 1) ++tp;
    if (pred[i] == 1 && gold[i] == 0) ++fp;
    if (pred[i] == 0 && gold[i] == 1) ++fn;
  }
  if (2 * tp + fp + fn == 0) return 1.0;
  return 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
}

ProbeCurve probe_curve(const LayoutPredictor& model, const TextEncoderProvider& enc,
                       const std::vector<CaptionRecord>& captions,
                       const ProbeConfig& cfg, uint64_t seed) {
  std::vector<const CaptionRecord*> usable;
  for (const CaptionRecord& c : captions)
    if (!c.tree.empty()) usable.push_back(&c);
  check_arg(usable.size() >= 2, "probe_curve: need at least two captions with trees");

  Rng rng(seed);
  std::vector<int> order(usable.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng split_rng = rng.derive("split");
  split_rng.shuffle(order);
  const size_t n_test = std::max<size_t>(1, usable.size() / 5);

  const int n_layers = probe_layer_count(model.config());
  std::vector<SpanDataset> train(n_layers), test(n_layers);
  for (size_t k = 0; k < order.size(); ++k) {
    const CaptionRecord& c = *usable[static_cast<size_t>(order[k])];
    const bool is_test = k < n_test;
    for (int layer = 0; layer < n_layers; ++layer) {
      // same spans at every layer: the sampler stream restarts per caption
      Rng span_rng = rng.derive(c.id);
      SpanDataset d = span_examples(model, enc, c, layer, span_rng);
      append_dataset(is_test ? test[layer] : train[layer], d);
    }
  }

  ProbeCurve curve;
  for (int layer = 0; layer < n_layers; ++layer) {
    SpanProbe probe = train_probe(train[layer].features, train[layer].labels, cfg,
                                  rng.derive(static_cast<uint64_t>(layer)).state());
    ProbeCurvePoint p;
    p.layer = layer;
    p.f1 = binary_f1(probe.predict(test[layer].features), test[layer].labels);
    p.n_train = static_cast<int>(train[layer].labels.size());
    p.n_test = static_cast<int>(test[layer].labels.size());
    curve.points.push_back(p);
  }
  return curve;
}

std::string probe_curve_json(const ProbeCurve& curve) {
  nlohmann::ordered_json j;
  for (const ProbeCurvePoint& p : curve.points)
    j[std::to_string(p.layer)] = p.f1;
  return j.dump(2);
}

std::string probe_curve_svg(const ProbeCurve& curve) {
  const int width = 480, height = 320;
  const double left = 56.0, right = 24.0, top = 24.0, bottom = 48.0;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  const int n = static_cast<int>(curve.points.size());

  auto px = [&](int i) {
    return n > 1 ? left + plot_w * i / (n - 1) : left + plot_w / 2.0;
  };
  auto py = [&](double f1) { return top + plot_h * (1.0 - f1); };
  char buf[160];

  std::string s;
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
                "viewBox=\"0 0 %d %d\">\n",
                width, height, width, height);
  s += buf;
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (int k = 0; k <= 4; ++k) {
    const double f1 = k / 4.0;
    const double y = py(f1);
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                  "stroke=\"#ddd\"/>\n",
                  left, y, left + plot_w, y);
    s += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"end\" "
                  "fill=\"#444\">%.2f</text>\n",
                  left - 6.0, y + 4.0, f1);
    s += buf;
  }

  std::string pts;
  for (int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", px(i), py(curve.points[i].f1));
    pts += buf;
  }
  s += "<polyline fill=\"none\" stroke=\"#1f6feb\" stroke-width=\"2\" points=\"" + pts +
       "\"/>\n";
  for (int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf),
                  "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"3\" fill=\"#1f6feb\"/>\n", px(i),
                  py(curve.points[i].f1));
    s += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" text-anchor=\"middle\" "
                  "fill=\"#444\">%d</text>\n",
                  px(i), top + plot_h + 18.0, curve.points[i].layer);
    s += buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" text-anchor=\"middle\" "
                "fill=\"#222\">probe layer</text>\n",
                left + plot_w / 2.0, top + plot_h + 38.0);
  s += buf;
  s += "<text x=\"14\" y=\"" + std::to_string(static_cast<int>(top + plot_h / 2.0)) +
       "\" font-size=\"12\" fill=\"#222\" transform=\"rotate(-90 14 " +
       std::to_string(static_cast<int>(top + plot_h / 2.0)) + ")\">span F1</text>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace layoutlab
