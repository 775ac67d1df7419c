#pragma once

#include <string>
#include <utility>
#include <vector>

#include "layoutlab/rng.hpp"

namespace layoutlab {

struct TreeNode {
  std::string label;  // constituent tag, or the token text for leaves
  bool leaf = false;
  std::vector<TreeNode> children;
};

// Constituency tree. When the source string has several top-level
// constituents they are wrapped under an artificial root that linearize()
// does not re-emit.
struct Tree {
  TreeNode root;
  bool synthetic_root = false;
};

// Parses a bracketed constituency string, e.g. "(NP a dog) (VP barks)".
// Tokens are whitespace separated; "(TAG" opens a constituent, ")" closes
// one, anything else is a leaf token. Throws std::invalid_argument on
// malformed input (unbalanced brackets, empty tag, empty constituent).
Tree parse_bracketed(const std::string& s);

// Token sequence of the tree: words interleaved with "(TAG" / ")" markers.
std::vector<std::string> linearize(const Tree& t);

std::vector<std::string> leaves(const Tree& t);

bool is_structural_token(const std::string& tok);

// Degenerate variant that keeps opening brackets in place and moves every
// closing bracket to the end of the sequence.
Tree right_branching(const Tree& t);

struct TreeNodeInfo {
  std::vector<int> path;  // child indices from the root; empty for the root
  bool leaf = false;
  int start = 0;  // leaf span [start, end)
  int end = 0;
  std::string label;
};

// Preorder enumeration of every node with its root path and leaf span.
std::vector<TreeNodeInfo> enumerate_nodes(const Tree& t);

// Root paths of all nodes in preorder. Throws if the tree exceeds the depth
// or branching bounds; paths are injective per node by construction.
std::vector<std::vector<int>> node_paths(const Tree& t, int max_depth = 16,
                                         int max_children = 8);

// Spans of internal nodes. Spans covering the whole sentence are excluded
// unless include_full is set (two trees over the same sentence would always
// share that span, which would mask genuinely disjoint bracketings).
std::vector<std::pair<int, int>> constituent_spans(const Tree& t, bool include_full);

// Multiset F1 over internal-node spans (tags ignored, full-sentence spans
// excluded). Both span sets empty counts as perfect agreement.
double constituency_overlap_f1(const Tree& a, const Tree& b);

struct ProbeSpan {
  int start = 0;
  int end = 0;
  bool constituent = false;
};

// Positive spans are the distinct internal-node spans (the full-sentence
// span counts as a constituent here); negatives are sampled uniformly
// without replacement from all other [start, end) token spans, at most one
// per positive.
std::vector<ProbeSpan> sample_probe_spans(const Tree& t, Rng& rng);

}  // namespace layoutlab
