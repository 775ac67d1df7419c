#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "grad_check.hpp"
#include "layoutlab/predictor.hpp"
#include "layoutlab/rng.hpp"

using namespace layoutlab;
using gradtest::rand_mat;

namespace {

PredictorConfig small_cfg(PredictorVariant v) {
  PredictorConfig cfg;
  cfg.variant = v;
  cfg.d_model = 32;
  cfg.d_ffn = 64;
  cfg.enc_layers = 2;
  cfg.dec_layers = 2;
  cfg.n_heads = 4;
  cfg.n_max = 5;
  cfg.n_categories = 6;
  cfg.d_enc = 16;
  cfg.max_text_len = 32;
  return cfg;
}

bool bitwise_equal(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      if (a(i, j) != b(i, j)) return false;
  return true;
}

LayoutObject obj(int cat, double x, double y, double w, double h) {
  LayoutObject o;
  o.category = cat;
  o.box = {x, y, w, h};
  return o;
}

Var training_loss(const PredictorForward& f) {
  Var loss = add(mean_all(square(f.label_logits)), mean_all(square(f.boxes)));
  if (f.count_logits.defined()) loss = add(loss, mean_all(square(f.count_logits)));
  return loss;
}

}  // namespace

TEST_SUITE_BEGIN("predictor");

TEST_CASE("parallel forward produces query, box, and count tensors of the right shape") {
  LayoutPredictor m(small_cfg(PredictorVariant::PAR), 3);
  Rng rng(7);
  Mat text = rand_mat(rng, 9, 16);
  PredictorForward f = m.forward_par(text);

  CHECK(f.label_logits.rows() == 5);
  CHECK(f.label_logits.cols() == 7);  // 6 categories + no-object
  CHECK(f.boxes.rows() == 5);
  CHECK(f.boxes.cols() == 4);
  CHECK(f.count_logits.rows() == 1);
  CHECK(f.count_logits.cols() == 6);  // counts 0..5
  CHECK(f.object_embs.rows() == 5);
  CHECK(f.object_embs.cols() == 32);
  CHECK(f.projected_text.rows() == 9);
  CHECK(f.projected_text.cols() == 32);
  CHECK(f.encoder_outs.size() == 2);
  CHECK(f.encoder_outs[1].rows() == 9);

  CHECK(f.label_logits.value().allFinite());
  CHECK(f.object_embs.value().allFinite());
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) {
      CHECK(f.boxes.value()(i, j) > 0.0);
      CHECK(f.boxes.value()(i, j) < 1.0);
    }
}

TEST_CASE("text projection is the plain affine map and is exposed for probing") {
  PredictorConfig cfg = small_cfg(PredictorVariant::PAR);
  LayoutPredictor m(cfg, 3);
  Rng rng(7);
  Mat text = rand_mat(rng, 6, 16);
  PredictorForward f = m.forward_par(text);

  Mat w = m.params().get("text_proj.w").value();
  Mat b = m.params().get("text_proj.b").value();
  Mat manual = (text * w).rowwise() + b.row(0);
  CHECK(bitwise_equal(f.projected_text.value(), manual));

  // zero input with a zeroed bias projects to zero
  Var bias = m.params().get("text_proj.b");
  bias.raw_value().setZero();
  PredictorForward z = m.forward_par(Mat::Zero(4, 16));
  CHECK(z.projected_text.value().isZero(0.0));
  CHECK(z.projected_text.rows() == 4);
}

TEST_CASE("decoding is equivariant under permutation of the learned queries") {
  LayoutPredictor m(small_cfg(PredictorVariant::PAR), 11);
  Rng rng(5);
  Mat text = rand_mat(rng, 7, 16);
  PredictorForward base = m.forward_par(text);

  std::vector<int> perm = {3, 0, 4, 1, 2};
  Var q = m.params().get("query_emb");
  Mat orig = q.value();
  Mat permuted(orig.rows(), orig.cols());
  for (int i = 0; i < 5; ++i) permuted.row(i) = orig.row(perm[i]);
  q.raw_value() = permuted;
  PredictorForward moved = m.forward_par(text);

  for (int i = 0; i < 5; ++i) {
    CHECK((moved.label_logits.value().row(i) - base.label_logits.value().row(perm[i]))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
    CHECK((moved.boxes.value().row(i) - base.boxes.value().row(perm[i]))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  }
  // the count head reads pooled text only, so it is unaffected
  CHECK((moved.count_logits.value() - base.count_logits.value()).cwiseAbs().maxCoeff() <
        1e-12);
}

TEST_CASE("parallel inference emits the count-head argmax in one decoder pass") {
  LayoutPredictor m(small_cfg(PredictorVariant::PAR), 3);
  Rng rng(9);
  Mat text = rand_mat(rng, 8, 16);

  long before = m.decoder_calls();
  PredictionOutput out = m.predict(text);
  CHECK(m.decoder_calls() == before + 1);

  REQUIRE(out.label_probs.rows() == 5);
  for (Eigen::Index i = 0; i < out.label_probs.rows(); ++i)
    CHECK(out.label_probs.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out.count_probs.row(0).sum() == doctest::Approx(1.0).epsilon(1e-12));

  Eigen::Index best = 0;
  out.count_probs.row(0).maxCoeff(&best);
  CHECK(out.emit_count == static_cast<int>(best));

  Layout l = read_layout(out);
  CHECK(l.size() <= out.emit_count);
  for (const auto& o : l.objects) {
    CHECK(o.category >= 0);
    CHECK(o.category < 6);
    CHECK(o.box.x > 0.0);
    CHECK(o.box.x < 1.0);
  }
}

TEST_CASE("read_layout drops no-object rows and respects the emitted count") {
  PredictionOutput p;
  p.label_probs = Mat::Zero(4, 3);  // 2 categories + null class 2
  p.label_probs << 0.7, 0.2, 0.1,   // cat 0
      0.1, 0.1, 0.8,                // null -> dropped
      0.2, 0.6, 0.2,                // cat 1
      0.9, 0.05, 0.05;              // past emit_count -> ignored
  p.boxes = Mat::Zero(4, 4);
  p.boxes << 0.5, 0.5, 0.2, 0.2, 0.4, 0.4, 0.1, 0.1, 0.6, 0.6, 0.3, 0.3, 0.5, 0.5, 0.5, 0.5;
  p.emit_count = 3;

  Layout l = read_layout(p);
  REQUIRE(l.size() == 2);
  CHECK(l.objects[0].category == 0);
  CHECK(l.objects[0].box.w == doctest::Approx(0.2));
  CHECK(l.objects[1].category == 1);
  CHECK(l.objects[1].box.x == doctest::Approx(0.6));

  // an emitted count of 3 with three real objects keeps all three
  p.emit_count = 4;
  p.label_probs.row(1) << 0.9, 0.05, 0.05;
  CHECK(read_layout(p).size() == 4);

  // every row null -> empty layout
  for (int i = 0; i < 4; ++i) p.label_probs.row(i) << 0.0, 0.0, 1.0;
  CHECK(read_layout(p).empty());
}

TEST_CASE("sequential teacher forcing validates order and emits one extra position") {
  LayoutPredictor m(small_cfg(PredictorVariant::SEQ), 3);
  Rng rng(13);
  Mat text = rand_mat(rng, 6, 16);

  Layout gt;
  gt.objects = {obj(2, 0.5, 0.5, 0.6, 0.6), obj(0, 0.3, 0.3, 0.4, 0.4),
                obj(4, 0.7, 0.7, 0.2, 0.2)};
  PredictorForward f = m.forward_seq(text, gt);
  CHECK(f.label_logits.rows() == 4);  // 3 objects + the end position
  CHECK(f.boxes.rows() == 4);
  CHECK(f.count_logits.defined() == false);

  Layout unsorted;
  unsorted.objects = {obj(0, 0.3, 0.3, 0.4, 0.4), obj(2, 0.5, 0.5, 0.6, 0.6)};
  CHECK_THROWS_AS(m.forward_seq(text, unsorted), std::invalid_argument);

  Layout too_many;
  for (int i = 0; i < 6; ++i) too_many.objects.push_back(obj(1, 0.5, 0.5, 0.5, 0.5));
  CHECK_THROWS_AS(m.forward_seq(text, too_many), std::invalid_argument);

  Layout bad_cat;
  bad_cat.objects = {obj(6, 0.5, 0.5, 0.5, 0.5)};
  CHECK_THROWS_AS(m.forward_seq(text, bad_cat), std::invalid_argument);
}

TEST_CASE("sequential predictions are causal in the object history") {
  LayoutPredictor m(small_cfg(PredictorVariant::SEQ), 3);
  Rng rng(13);
  Mat text = rand_mat(rng, 6, 16);

  Layout gt;
  gt.objects = {obj(2, 0.5, 0.5, 0.6, 0.6), obj(0, 0.3, 0.3, 0.4, 0.4),
                obj(4, 0.7, 0.7, 0.2, 0.2)};
  Layout altered = gt;
  altered.objects[2] = obj(1, 0.2, 0.8, 0.2, 0.2);  // same area, different content

  Mat a = m.forward_seq(text, gt).label_logits.value();
  Mat b = m.forward_seq(text, altered).label_logits.value();
  // positions 0..2 are computed before the changed object is visible
  CHECK(bitwise_equal(a.topRows(3), b.topRows(3)));
  CHECK((a.row(3) - b.row(3)).cwiseAbs().maxCoeff() > 0.0);

  // the first position conditions on text alone (tolerance: Eigen picks a
  // different product kernel for single-row inputs)
  Layout empty;
  Mat first = m.forward_seq(text, empty).label_logits.value();
  CHECK((first.row(0) - a.row(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sequential inference stops at the end class or the object cap") {
  LayoutPredictor m(small_cfg(PredictorVariant::SEQ), 3);
  Rng rng(21);
  Mat text = rand_mat(rng, 5, 16);

  long before = m.decoder_calls();
  PredictionOutput out = m.predict(text);
  long calls = m.decoder_calls() - before;

  CHECK(out.emit_count <= 5);
  CHECK(out.emit_count >= 0);
  if (out.emit_count == 5)
    CHECK(calls == 5);  // cap reached, no end step
  else
    CHECK(calls == out.emit_count + 1);  // one extra call produced the end class

  Layout l = read_layout(out);
  CHECK(l.size() == out.emit_count);
  for (const auto& o : l.objects) {
    CHECK(o.box.w > 0.0);
    CHECK(o.box.w < 1.0);
  }
}

TEST_CASE("gradients reach every trainable tensor of the active variant") {
  for (PredictorVariant v : {PredictorVariant::PAR, PredictorVariant::SEQ}) {
    LayoutPredictor m(small_cfg(v), 17);
    Rng rng(3);
    Mat text = rand_mat(rng, 7, 16);

    PredictorForward f;
    if (v == PredictorVariant::PAR) {
      f = m.forward_par(text);
    } else {
      Layout gt;
      gt.objects = {obj(1, 0.5, 0.5, 0.5, 0.5), obj(2, 0.4, 0.4, 0.3, 0.3)};
      f = m.forward_seq(text, gt);
    }
    GradStore grads;
    backward(training_loss(f), grads);
    for (const auto& [name, p] : m.params().entries()) {
      const Mat* g = grads.find(p.node().get());
      REQUIRE_MESSAGE(g != nullptr, name);
      CHECK_MESSAGE(g->allFinite(), name);
    }
  }
}

TEST_CASE("same seed and data reproduce construction and training bitwise") {
  for (PredictorVariant v : {PredictorVariant::PAR, PredictorVariant::SEQ}) {
    Rng rng(31);
    Mat text = rand_mat(rng, 8, 16);
    Layout gt;
    gt.objects = {obj(3, 0.5, 0.5, 0.6, 0.5), obj(1, 0.4, 0.6, 0.3, 0.3)};

    auto run = [&](uint64_t seed) {
      LayoutPredictor m(small_cfg(v), seed);
      Adam opt(1e-3);
      double last = 0.0;
      for (int step = 0; step < 4; ++step) {
        PredictorForward f = v == PredictorVariant::PAR ? m.forward_par(text)
                                                        : m.forward_seq(text, gt);
        Var loss = training_loss(f);
        GradStore grads;
        backward(loss, grads);
        opt.step(m.params(), grads, 1.0);
        last = loss.value()(0, 0);
      }
      return std::make_pair(last, m.params().get("label_head.fc0.w").value());
    };

    auto [la, wa] = run(5);
    auto [lb, wb] = run(5);
    CHECK(la == lb);
    CHECK(bitwise_equal(wa, wb));
    auto [lc, wc] = run(6);
    CHECK(lc != la);
  }
}

TEST_CASE("area ordering is descending and deterministic under ties") {
  Layout l;
  l.objects = {obj(2, 0.2, 0.2, 0.3, 0.3), obj(0, 0.8, 0.8, 0.6, 0.6),
               obj(1, 0.5, 0.5, 0.3, 0.3), obj(3, 0.4, 0.4, 0.9, 0.4)};
  std::vector<int> order = order_by_area_desc(l);
  Layout sorted = reorder(l, order);
  for (int i = 1; i < sorted.size(); ++i)
    CHECK(sorted.objects[i].box.area() <= sorted.objects[i - 1].box.area() + 1e-15);
  // the two 0.09-area boxes tie; category ascending breaks it
  CHECK(sorted.objects[2].category == 1);
  CHECK(sorted.objects[3].category == 2);
}

TEST_CASE("text embeddings of the wrong width or length are rejected") {
  LayoutPredictor m(small_cfg(PredictorVariant::PAR), 3);
  Rng rng(3);
  CHECK_THROWS_AS(m.forward_par(rand_mat(rng, 4, 8)), std::invalid_argument);
  CHECK_THROWS_AS(m.forward_par(rand_mat(rng, 33, 16)), std::invalid_argument);
  CHECK_THROWS_AS(m.forward_par(Mat(0, 16)), std::invalid_argument);

  LayoutPredictor s(small_cfg(PredictorVariant::SEQ), 3);
  CHECK_THROWS_AS(s.forward_par(rand_mat(rng, 4, 16)), std::invalid_argument);
  Layout gt;
  CHECK_THROWS_AS(m.forward_seq(rand_mat(rng, 4, 16), gt), std::invalid_argument);
}

TEST_SUITE_END();
