#include "layoutlab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "layoutlab/check.hpp"
#include "layoutlab/geometry.hpp"

namespace layoutlab {

namespace {

constexpr double kCosEps = 1e-8;
// Keeps the distance gradient finite when two centers coincide; mirrored on
// the GT side so identical layouts score exactly 0.
constexpr double kDistEps2 = 1e-24;

Var zero_scalar() { return make_constant(Mat::Zero(1, 1)); }

Mat gt_box_rows(const MatchingSet& pairs, const Layout& gt) {
  Mat g(static_cast<int>(pairs.size()), 4);
  for (size_t k = 0; k < pairs.size(); ++k) {
    const BoundingBox& b = gt.objects[pairs[k].gt].box;
    g(static_cast<int>(k), 0) = b.x;
    g(static_cast<int>(k), 1) = b.y;
    g(static_cast<int>(k), 2) = b.w;
    g(static_cast<int>(k), 3) = b.h;
  }
  return g;
}

std::vector<int> pred_rows_of(const MatchingSet& pairs) {
  std::vector<int> rows;
  rows.reserve(pairs.size());
  for (const MatchPair& p : pairs) rows.push_back(p.pred);
  return rows;
}

}  // namespace

void validate(const LossWeights& w) {
  for (double v : {w.lambda_struct, w.lambda_len, w.lambda_label, w.lambda_l1,
                   w.lambda_giou, w.lambda_prop, w.lambda_rel}) {
    check_arg(v >= 0.0 && std::isfinite(v), "loss weights must be finite and >= 0");
  }
}

void validate(const StructLossParams& p) {
  check_arg(p.gamma1 > 0.0 && p.gamma2 > 0.0 && p.gamma3 > 0.0,
            "struct loss temperatures must be > 0");
  check_arg(p.d_model > 0, "struct loss d_model must be > 0");
  check_arg(p.max_depth > 0 && p.max_children > 0, "tree bounds must be > 0");
}

TreePositionTable::TreePositionTable(ParamSet& ps, const std::string& name,
                                     const StructLossParams& p, Rng& rng, int code_dim)
    : max_depth_(p.max_depth),
      max_children_(p.max_children),
      code_dim_(code_dim),
      d_model_(p.d_model) {
  validate(p);
  check_arg(code_dim > 0, "tree code_dim must be > 0");
  codes_ = ps.add(name + ".codes",
                  normal_init(rng, p.max_depth * p.max_children, code_dim, 0.5));
  proj_ = Linear(ps, name + ".proj", p.max_depth * code_dim, p.d_model, rng);
}

Var TreePositionTable::operator()(const Tree& t) const {
  check_arg(codes_.defined(), "tree position table is uninitialized");
  const auto paths = node_paths(t, max_depth_, max_children_);
  const int n = static_cast<int>(paths.size());
  std::vector<Var> parts;
  parts.reserve(max_depth_);
  for (int d = 0; d < max_depth_; ++d) {
    std::vector<int> idx(n, 0);
    Mat mask = Mat::Zero(n, 1);
    for (int i = 0; i < n; ++i) {
      if (d < static_cast<int>(paths[i].size())) {
        idx[i] = d * max_children_ + paths[i][d];
        mask(i, 0) = 1.0;
      }
    }
    parts.push_back(mul_colvec(gather_rows(codes_, std::move(idx)), make_constant(mask)));
  }
  return proj_(concat_cols(parts));
}

Mat TreePositionTable::path_codes(const Tree& t) const {
  check_arg(codes_.defined(), "tree position table is uninitialized");
  const auto paths = node_paths(t, max_depth_, max_children_);
  const int n = static_cast<int>(paths.size());
  const Mat& table = codes_.value();
  Mat out = Mat::Zero(n, max_depth_ * code_dim_);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < static_cast<int>(paths[i].size()); ++d) {
      out.block(i, d * code_dim_, 1, code_dim_) =
          table.row(d * max_children_ + paths[i][d]);
    }
  }
  return out;
}

void check_matching(const MatchingSet& pairs, int n_pred, int n_gt) {
  std::vector<char> pred_seen(n_pred, 0), gt_seen(n_gt, 0);
  for (const MatchPair& p : pairs) {
    check_arg(p.pred >= 0 && p.pred < n_pred, "matching: pred index out of range");
    check_arg(p.gt >= 0 && p.gt < n_gt, "matching: gt index out of range");
    check_arg(!pred_seen[p.pred] && !gt_seen[p.gt], "matching: duplicate index");
    pred_seen[p.pred] = 1;
    gt_seen[p.gt] = 1;
  }
}

std::vector<int> solve_assignment(const Mat& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  check_arg(n > 0 && m > 0, "assignment: empty cost matrix");
  check_arg(n <= m, "assignment: more rows than columns");
  check_arg(cost.allFinite(), "assignment: non-finite cost");

  // Shortest augmenting path with potentials; ties resolve to the lowest
  // column index.
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  }
  return row_to_col;
}

MatchingSet hungarian_match(const Mat& label_probs, const Mat& boxes, const Layout& gt,
                            const LossWeights& w) {
  validate(w);
  const int n_gt = static_cast<int>(gt.size());
  if (n_gt == 0) return {};
  check_arg(label_probs.rows() == boxes.rows(), "matching: row count mismatch");
  check_arg(boxes.cols() == 4, "matching: boxes must have 4 columns");
  check_arg(label_probs.rows() >= n_gt, "matching: fewer predictions than GT objects");
  for (const LayoutObject& o : gt.objects) {
    check_arg(o.category >= 0 && o.category < label_probs.cols() - 1,
              "matching: gt category out of range");
  }

  Mat cost(n_gt, n_gt);
  for (int i = 0; i < n_gt; ++i) {
    const BoundingBox bp{boxes(i, 0), boxes(i, 1), boxes(i, 2), boxes(i, 3)};
    for (int j = 0; j < n_gt; ++j) {
      const LayoutObject& o = gt.objects[j];
      const double l1 = std::abs(bp.x - o.box.x) + std::abs(bp.y - o.box.y) +
                        std::abs(bp.w - o.box.w) + std::abs(bp.h - o.box.h);
      cost(i, j) = w.lambda_label * (1.0 - label_probs(i, o.category)) +
                   w.lambda_l1 * l1 + w.lambda_giou * (1.0 - giou(bp, o.box));
    }
  }
  const std::vector<int> assign = solve_assignment(cost);
  MatchingSet pairs(n_gt);
  for (int i = 0; i < n_gt; ++i) pairs[i] = {i, assign[i]};
  check_matching(pairs, static_cast<int>(label_probs.rows()), n_gt);
  return pairs;
}

MatchingSet match_by_area(int n_pred, const Layout& gt) {
  check_arg(n_pred >= 0, "matching: negative prediction count");
  const std::vector<int> order = order_by_area_desc(gt);
  const int k = std::min<int>(n_pred, static_cast<int>(order.size()));
  MatchingSet pairs(k);
  for (int i = 0; i < k; ++i) pairs[i] = {i, order[i]};
  return pairs;
}

std::vector<int> unmatched_rows(int n_pred, const MatchingSet& pairs) {
  std::vector<char> seen(n_pred, 0);
  for (const MatchPair& p : pairs) {
    check_arg(p.pred >= 0 && p.pred < n_pred, "matching: pred index out of range");
    seen[p.pred] = 1;
  }
  std::vector<int> rows;
  for (int i = 0; i < n_pred; ++i) {
    if (!seen[i]) rows.push_back(i);
  }
  return rows;
}

Var loss_label(const Var& label_logits, const MatchingSet& pairs, const Layout& gt) {
  check_matching(pairs, static_cast<int>(label_logits.rows()),
                 static_cast<int>(gt.size()));
  if (pairs.empty()) return zero_scalar();
  std::vector<int> rows, cats;
  rows.reserve(pairs.size());
  cats.reserve(pairs.size());
  for (const MatchPair& p : pairs) {
    const int cat = gt.objects[p.gt].category;
    check_arg(cat >= 0 && cat < label_logits.cols(), "loss_label: category out of range");
    rows.push_back(p.pred);
    cats.push_back(cat);
  }
  return neg(sum_all(pick_elements(log_softmax_rows(label_logits), rows, cats)));
}

Var loss_null(const Var& label_logits, const std::vector<int>& rows, int null_class) {
  check_arg(null_class >= 0 && null_class < label_logits.cols(),
            "loss_null: class out of range");
  if (rows.empty()) return zero_scalar();
  for (int r : rows) {
    check_arg(r >= 0 && r < label_logits.rows(), "loss_null: row out of range");
  }
  const std::vector<int> cols(rows.size(), null_class);
  return neg(sum_all(pick_elements(log_softmax_rows(label_logits), rows, cols)));
}

Var loss_l1(const Var& boxes, const MatchingSet& pairs, const Layout& gt) {
  check_matching(pairs, static_cast<int>(boxes.rows()), static_cast<int>(gt.size()));
  if (pairs.empty()) return zero_scalar();
  const Var p = gather_rows(boxes, pred_rows_of(pairs));
  return sum_all(abs_op(sub(p, make_constant(gt_box_rows(pairs, gt)))));
}

Var loss_giou(const Var& boxes, const MatchingSet& pairs, const Layout& gt) {
  check_matching(pairs, static_cast<int>(boxes.rows()), static_cast<int>(gt.size()));
  if (pairs.empty()) return zero_scalar();
  const int k = static_cast<int>(pairs.size());
  const Var p = gather_rows(boxes, pred_rows_of(pairs));
  const Var px = slice_cols(p, 0, 1), py = slice_cols(p, 1, 1);
  const Var pw = slice_cols(p, 2, 1), ph = slice_cols(p, 3, 1);
  const Var px0 = sub(px, scale(pw, 0.5)), px1 = add(px, scale(pw, 0.5));
  const Var py0 = sub(py, scale(ph, 0.5)), py1 = add(py, scale(ph, 0.5));

  Mat gx0(k, 1), gx1(k, 1), gy0(k, 1), gy1(k, 1), garea(k, 1);
  for (int i = 0; i < k; ++i) {
    const BoundingBox& b = gt.objects[pairs[i].gt].box;
    check_arg(b.w > 0.0 && b.h > 0.0, "loss_giou: degenerate gt box");
    gx0(i, 0) = b.x0();
    gx1(i, 0) = b.x1();
    gy0(i, 0) = b.y0();
    gy1(i, 0) = b.y1();
    garea(i, 0) = b.area();
  }
  const Var cgx0 = make_constant(gx0), cgx1 = make_constant(gx1);
  const Var cgy0 = make_constant(gy0), cgy1 = make_constant(gy1);

  const Var iw = clamp_min(sub(cwise_min(px1, cgx1), cwise_max(px0, cgx0)), 0.0);
  const Var ih = clamp_min(sub(cwise_min(py1, cgy1), cwise_max(py0, cgy0)), 0.0);
  const Var inter = cmul(iw, ih);
  const Var uni = sub(add(cmul(pw, ph), make_constant(garea)), inter);
  const Var hull = cmul(sub(cwise_max(px1, cgx1), cwise_min(px0, cgx0)),
                        sub(cwise_max(py1, cgy1), cwise_min(py0, cgy0)));
  const Var g = sub(cdiv(inter, uni), cdiv(sub(hull, uni), hull));
  return sum_all(add_scalar(neg(g), 1.0));
}

Var loss_prop(const Var& boxes, const MatchingSet& pairs, const Layout& gt) {
  check_matching(pairs, static_cast<int>(boxes.rows()), static_cast<int>(gt.size()));
  if (pairs.empty()) return zero_scalar();
  const int k = static_cast<int>(pairs.size());
  const Var p = gather_rows(boxes, pred_rows_of(pairs));
  const Var pw = slice_cols(p, 2, 1), ph = slice_cols(p, 3, 1);
  const Var asp = cdiv(sub(pw, ph), add(pw, ph));
  Mat gasp(k, 1);
  for (int i = 0; i < k; ++i) {
    const BoundingBox& b = gt.objects[pairs[i].gt].box;
    check_arg(b.w + b.h > 0.0, "loss_prop: degenerate gt box");
    gasp(i, 0) = (b.w - b.h) / (b.w + b.h);
  }
  return sum_all(abs_op(sub(asp, make_constant(gasp))));
}

Var loss_rel(const Var& boxes, const MatchingSet& pairs, const Layout& gt) {
  check_matching(pairs, static_cast<int>(boxes.rows()), static_cast<int>(gt.size()));
  const int k = static_cast<int>(pairs.size());
  if (k < 2) return zero_scalar();
  const Var p = gather_rows(boxes, pred_rows_of(pairs));
  const Var px = slice_cols(p, 0, 1), py = slice_cols(p, 1, 1);
  const Var pw = slice_cols(p, 2, 1), ph = slice_cols(p, 3, 1);
  const Var diag = sqrt_op(add(square(pw), square(ph)));

  std::vector<int> ia, ib;
  for (int a = 0; a < k; ++a) {
    for (int b = a + 1; b < k; ++b) {
      ia.push_back(a);
      ib.push_back(b);
    }
  }
  const Var dx = sub(gather_rows(px, ia), gather_rows(px, ib));
  const Var dy = sub(gather_rows(py, ia), gather_rows(py, ib));
  const Var dist = sqrt_op(clamp_min(add(square(dx), square(dy)), kDistEps2));
  const Var mean_diag = scale(add(gather_rows(diag, ia), gather_rows(diag, ib)), 0.5);
  const Var d_pred = cdiv(dist, mean_diag);

  // Mirrors the graph arithmetic step for step (sqrt instead of hypot, same
  // clamp) so that identical layouts cancel exactly.
  Mat d_gt(static_cast<int>(ia.size()), 1);
  for (size_t t = 0; t < ia.size(); ++t) {
    const BoundingBox& a = gt.objects[pairs[ia[t]].gt].box;
    const BoundingBox& b = gt.objects[pairs[ib[t]].gt].box;
    const double q = std::max((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y),
                              kDistEps2);
    const double da = std::sqrt(a.w * a.w + a.h * a.h);
    const double db = std::sqrt(b.w * b.w + b.h * b.h);
    d_gt(static_cast<int>(t), 0) = std::sqrt(q) / (0.5 * (da + db));
  }
  // Each unordered pair of matched pairs contributes twice (ordered sum).
  return scale(sum_all(abs_op(sub(d_pred, make_constant(d_gt)))), 2.0);
}

Var loss_len(const Var& count_logits, int gt_count) {
  check_arg(count_logits.defined() && count_logits.rows() == 1,
            "loss_len: count logits must be a single row");
  check_arg(gt_count >= 0 && gt_count < count_logits.cols(),
            "loss_len: gt count out of range");
  return neg(pick_elements(log_softmax_rows(count_logits), {0}, {gt_count}));
}

Var cosine_matrix(const Var& a, const Var& b) {
  check_arg(a.cols() == b.cols(), "cosine: width mismatch");
  const Var dots = matmul(a, transpose(b));
  const Var na = sqrt_op(clamp_min(row_sum(square(a)), kCosEps * kCosEps));
  const Var nb = sqrt_op(clamp_min(row_sum(square(b)), kCosEps * kCosEps));
  return cdiv(dots, clamp_min(matmul(na, transpose(nb)), kCosEps));
}

Var loss_struct_embeddings(const std::vector<Var>& visual,
                           const std::vector<Var>& tree_emb,
                           const StructLossParams& p) {
  check_arg(p.gamma1 > 0.0 && p.gamma2 > 0.0 && p.gamma3 > 0.0,
            "struct loss temperatures must be > 0");
  const int m_count = static_cast<int>(visual.size());
  check_arg(m_count >= 1, "struct loss: empty batch");
  check_arg(tree_emb.size() == visual.size(), "struct loss: batch size mismatch");
  const Eigen::Index d = visual[0].cols();
  for (const Var& v : visual) {
    check_arg(v.defined() && v.rows() >= 1 && v.cols() == d,
              "struct loss: bad visual embeddings");
  }
  for (const Var& e : tree_emb) {
    check_arg(e.defined() && e.rows() >= 1 && e.cols() == d,
              "struct loss: bad tree embeddings");
  }

  std::vector<Var> cells(static_cast<size_t>(m_count) * m_count);
  for (int n = 0; n < m_count; ++n) {
    for (int m = 0; m < m_count; ++m) {
      const Var& v = visual[m];
      const Var& e = tree_emb[n];
      const Var sim = cosine_matrix(v, e);  // objects x nodes
      // Attention over tree nodes: r normalizes over objects per node,
      // alpha over nodes per object.
      const Var r = transpose(softmax_rows(transpose(sim)));
      const Var alpha = softmax_rows(scale(r, p.gamma3));
      const Var ctx = matmul(alpha, e);

      const Var dots = row_sum(cmul(v, ctx));
      const Var nv = sqrt_op(clamp_min(row_sum(square(v)), kCosEps * kCosEps));
      const Var nc = sqrt_op(clamp_min(row_sum(square(ctx)), kCosEps * kCosEps));
      const Var s = cdiv(dots, clamp_min(cmul(nv, nc), kCosEps));
      const Var lse = logsumexp_rows(transpose(scale(s, p.gamma2)));
      cells[static_cast<size_t>(n) * m_count + m] = scale(lse, p.gamma1 / p.gamma2);
    }
  }
  const Var a = stack_scalars(cells, m_count, m_count);
  std::vector<int> diag(m_count);
  std::iota(diag.begin(), diag.end(), 0);
  const Var row_lp = pick_elements(log_softmax_rows(a), diag, diag);
  const Var col_lp = pick_elements(log_softmax_rows(transpose(a)), diag, diag);
  return neg(mean_all(add(row_lp, col_lp)));
}

Var loss_struct(const std::vector<Var>& visual, const std::vector<Tree>& trees,
                const TreePositionTable& table, const StructLossParams& p) {
  check_arg(trees.size() == visual.size(), "struct loss: batch size mismatch");
  std::vector<Var> emb;
  emb.reserve(trees.size());
  for (const Tree& t : trees) emb.push_back(table(t));
  return loss_struct_embeddings(visual, emb, p);
}

Var total_loss(const Var& label_logits, const Var& boxes, const Var& count_logits,
               const MatchingSet& pairs, const std::vector<int>& null_rows,
               const Layout& gt, int gt_count, int null_class, const Var& struct_term,
               const LossWeights& w) {
  validate(w);
  check_arg(label_logits.defined() && boxes.defined(), "total_loss: missing tensors");
  Var matched_ce = loss_label(label_logits, pairs, gt);
  Var null_ce = loss_null(label_logits, null_rows, null_class);
  Var total = add(scale(add(matched_ce, null_ce), w.lambda_label),
                  add(scale(loss_l1(boxes, pairs, gt), w.lambda_l1),
                      add(scale(loss_giou(boxes, pairs, gt), w.lambda_giou),
                          add(scale(loss_prop(boxes, pairs, gt), w.lambda_prop),
                              scale(loss_rel(boxes, pairs, gt), w.lambda_rel)))));
  if (count_logits.defined()) {
    total = add(total, scale(loss_len(count_logits, gt_count), w.lambda_len));
  }
  if (struct_term.defined()) {
    check_arg(struct_term.rows() == 1 && struct_term.cols() == 1,
              "total_loss: struct term must be a scalar");
    total = add(total, scale(struct_term, w.lambda_struct));
  }
  return total;
}

}  // namespace layoutlab
