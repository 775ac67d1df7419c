#pragma once

#include <string>
#include <vector>

#include "layoutlab/layout.hpp"
#include "layoutlab/nn.hpp"
#include "layoutlab/rng.hpp"
#include "layoutlab/syntax.hpp"
#include "layoutlab/tensor.hpp"

namespace layoutlab {

// Weights of the training loss terms: structural alignment, predicted
// length, label cross-entropy, box L1, generalized IoU, width/height
// proportion, and pairwise relative distance. The matching cost reuses the
// label/L1/gIoU weights. All must be >= 0; the structural term is off by
// default and enabled per run.
struct LossWeights {
  double lambda_struct = 0.0;
  double lambda_len = 0.1;
  double lambda_label = 0.5;
  double lambda_l1 = 5.0;
  double lambda_giou = 2.0;
  double lambda_prop = 0.5;
  double lambda_rel = 0.5;
};

void validate(const LossWeights& w);

// Temperatures and table bounds of the structural loss. d_model must match
// the width of the visual object embeddings fed into it.
struct StructLossParams {
  double gamma1 = 10.0;
  double gamma2 = 5.0;
  double gamma3 = 1.0;
  int d_model = 0;
  int max_depth = 16;
  int max_children = 8;
};

void validate(const StructLossParams& p);

// Learnable positional embeddings for tree nodes. Every (depth, child-index)
// slot owns a code vector; a node's code is the depth-wise concatenation of
// the codes along its root path (zero past the path end), affinely projected
// to d_model. Distinct paths give distinct pre-projection codes as long as no
// per-slot code is zero or duplicated, which holds at random init.
class TreePositionTable {
 public:
  TreePositionTable() = default;
  TreePositionTable(ParamSet& ps, const std::string& name, const StructLossParams& p,
                    Rng& rng, int code_dim = 16);

  // One row per node of the tree, in preorder. Differentiable into the
  // codes and the projection.
  Var operator()(const Tree& t) const;

  // Pre-projection path codes, one row per node (value only).
  Mat path_codes(const Tree& t) const;

  int d_model() const { return d_model_; }
  int code_dim() const { return code_dim_; }

 private:
  Var codes_;  // (max_depth * max_children) x code_dim
  Linear proj_;
  int max_depth_ = 0;
  int max_children_ = 0;
  int code_dim_ = 0;
  int d_model_ = 0;
};

struct MatchPair {
  int pred = 0;
  int gt = 0;
};

// Injective both ways; validated by the loss terms.
using MatchingSet = std::vector<MatchPair>;

void check_matching(const MatchingSet& pairs, int n_pred, int n_gt);

// Minimum-cost assignment of rows to columns (requires rows <= cols).
// Returns the chosen column per row. Deterministic under cost ties.
std::vector<int> solve_assignment(const Mat& cost);

// Bipartite matching of the first |gt| prediction slots against the GT
// objects, with cost lambda_label*(1 - p_i(o_j)) + lambda_l1*L1 +
// lambda_giou*(1 - giou). Predictions beyond |gt| stay unmatched and are
// supervised toward the null class by loss_null.
MatchingSet hungarian_match(const Mat& label_probs, const Mat& boxes, const Layout& gt,
                            const LossWeights& w);

// Positional pairing for the sequential variant: slot k pairs with the k-th
// largest GT object (area-descending order); surplus on either side stays
// unmatched.
MatchingSet match_by_area(int n_pred, const Layout& gt);

// Prediction rows that appear in no pair, ascending.
std::vector<int> unmatched_rows(int n_pred, const MatchingSet& pairs);

// Per-pair terms, summed over the matched pairs. label_logits: n_pred x
// (C+1) raw scores; boxes: n_pred x 4 rows (x, y, w, h), w and h positive.
Var loss_label(const Var& label_logits, const MatchingSet& pairs, const Layout& gt);
Var loss_null(const Var& label_logits, const std::vector<int>& rows, int null_class);
Var loss_l1(const Var& boxes, const MatchingSet& pairs, const Layout& gt);
Var loss_giou(const Var& boxes, const MatchingSet& pairs, const Layout& gt);
Var loss_prop(const Var& boxes, const MatchingSet& pairs, const Layout& gt);

// Pairwise relative-distance term: for every ordered pair of distinct
// matched pairs, |D_gt - D_pred| where D(a, b) is the center distance
// divided by the mean of the two diagonals. Fewer than two pairs -> 0.
Var loss_rel(const Var& boxes, const MatchingSet& pairs, const Layout& gt);

// Cross-entropy of the predicted object count. count_logits: 1 x (n_max+1).
Var loss_len(const Var& count_logits, int gt_count);

// Cosine similarity of every row of a against every row of b, denominator
// clamped at 1e-8.
Var cosine_matrix(const Var& a, const Var& b);

// Structural alignment loss over a batch: visual[m] holds the object
// embeddings of sample m (K_m x d), tree_emb[n] the node embeddings of its
// tree (J_n x d). Contrastive over the batch in both directions; a batch of
// one is exactly 0.
Var loss_struct_embeddings(const std::vector<Var>& visual,
                           const std::vector<Var>& tree_emb,
                           const StructLossParams& p);

Var loss_struct(const std::vector<Var>& visual, const std::vector<Tree>& trees,
                const TreePositionTable& table, const StructLossParams& p);

// Weighted sum of all terms. count_logits and struct_term may be undefined
// (sequential variant / structural loss disabled); their terms are skipped.
// null_rows are supervised toward null_class at the label weight.
Var total_loss(const Var& label_logits, const Var& boxes, const Var& count_logits,
               const MatchingSet& pairs, const std::vector<int>& null_rows,
               const Layout& gt, int gt_count, int null_class, const Var& struct_term,
               const LossWeights& w);

}  // namespace layoutlab
