#include "layoutlab/syntax.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace layoutlab {

namespace {

// Whitespace split with trailing close brackets peeled off ("dog))" becomes
// "dog", ")", ")"), so both "(NP a dog)" and "(NP a dog )" parse the same.
std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream iss(s);
  std::string tok;
  while (iss >> tok) {
    size_t end = tok.size();
    while (end > 1 && tok[end - 1] == ')') --end;
    out.push_back(tok.substr(0, end));
    for (size_t i = end; i < tok.size(); ++i) out.emplace_back(")");
  }
  return out;
}

Tree parse_tokens(const std::vector<std::string>& toks) {
  if (toks.empty()) throw std::invalid_argument("empty tree string");
  std::vector<TreeNode> stack;
  std::vector<TreeNode> top_level;

  auto attach = [&](TreeNode&& n) {
    if (stack.empty()) {
      top_level.push_back(std::move(n));
    } else {
      stack.back().children.push_back(std::move(n));
    }
  };

  for (const std::string& tok : toks) {
    if (tok.size() > 1 && tok[0] == '(') {
      TreeNode n;
      n.label = tok.substr(1);
      stack.push_back(std::move(n));
    } else if (tok == "(") {
      throw std::invalid_argument("opening bracket without a tag");
    } else if (tok == ")") {
      if (stack.empty()) throw std::invalid_argument("unbalanced closing bracket");
      TreeNode done = std::move(stack.back());
      stack.pop_back();
      if (done.children.empty()) {
        throw std::invalid_argument("empty constituent (" + done.label + ")");
      }
      attach(std::move(done));
    } else {
      TreeNode leaf;
      leaf.label = tok;
      leaf.leaf = true;
      attach(std::move(leaf));
    }
  }
  if (!stack.empty()) throw std::invalid_argument("unclosed constituent");
  if (top_level.empty()) throw std::invalid_argument("empty tree string");

  Tree t;
  if (top_level.size() == 1 && !top_level[0].leaf) {
    t.root = std::move(top_level[0]);
  } else {
    t.root.label = "ROOT";
    t.root.children = std::move(top_level);
    t.synthetic_root = true;
  }
  return t;
}

void linearize_node(const TreeNode& n, std::vector<std::string>& out) {
  if (n.leaf) {
    out.push_back(n.label);
    return;
  }
  out.push_back("(" + n.label);
  for (const TreeNode& c : n.children) linearize_node(c, out);
  out.push_back(")");
}

void collect_leaves(const TreeNode& n, std::vector<std::string>& out) {
  if (n.leaf) {
    out.push_back(n.label);
    return;
  }
  for (const TreeNode& c : n.children) collect_leaves(c, out);
}

// Returns the end of the node's leaf span given its start.
int enumerate_rec(const TreeNode& n, std::vector<int>& path, int start,
                  std::vector<TreeNodeInfo>& out) {
  TreeNodeInfo info;
  info.path = path;
  info.leaf = n.leaf;
  info.start = start;
  info.label = n.label;
  size_t slot = out.size();
  out.push_back(std::move(info));

  int pos = start;
  if (n.leaf) {
    pos = start + 1;
  } else {
    for (size_t i = 0; i < n.children.size(); ++i) {
      path.push_back(static_cast<int>(i));
      pos = enumerate_rec(n.children[i], path, pos, out);
      path.pop_back();
    }
  }
  out[slot].end = pos;
  return pos;
}

}  // namespace

Tree parse_bracketed(const std::string& s) { return parse_tokens(split_ws(s)); }

std::vector<std::string> linearize(const Tree& t) {
  std::vector<std::string> out;
  if (t.synthetic_root) {
    for (const TreeNode& c : t.root.children) linearize_node(c, out);
  } else {
    linearize_node(t.root, out);
  }
  return out;
}

std::vector<std::string> leaves(const Tree& t) {
  std::vector<std::string> out;
  collect_leaves(t.root, out);
  return out;
}

bool is_structural_token(const std::string& tok) {
  return tok == ")" || (tok.size() > 1 && tok[0] == '(');
}

Tree right_branching(const Tree& t) {
  std::vector<std::string> toks = linearize(t);
  std::vector<std::string> reordered;
  reordered.reserve(toks.size());
  size_t closes = 0;
  for (const std::string& tok : toks) {
    if (tok == ")") {
      ++closes;
    } else {
      reordered.push_back(tok);
    }
  }
  for (size_t i = 0; i < closes; ++i) reordered.emplace_back(")");
  return parse_tokens(reordered);
}

std::vector<TreeNodeInfo> enumerate_nodes(const Tree& t) {
  std::vector<TreeNodeInfo> out;
  std::vector<int> path;
  enumerate_rec(t.root, path, 0, out);
  return out;
}

std::vector<std::vector<int>> node_paths(const Tree& t, int max_depth, int max_children) {
  std::vector<TreeNodeInfo> nodes = enumerate_nodes(t);
  std::vector<std::vector<int>> paths;
  paths.reserve(nodes.size());
  for (TreeNodeInfo& n : nodes) {
    if (static_cast<int>(n.path.size()) > max_depth) {
      throw std::invalid_argument("tree deeper than the path embedding bound");
    }
    for (int c : n.path) {
      if (c >= max_children) {
        throw std::invalid_argument("tree wider than the path embedding bound");
      }
    }
    paths.push_back(std::move(n.path));
  }
  return paths;
}

std::vector<std::pair<int, int>> constituent_spans(const Tree& t, bool include_full) {
  std::vector<TreeNodeInfo> nodes = enumerate_nodes(t);
  int n_tokens = nodes.empty() ? 0 : nodes[0].end;
  std::vector<std::pair<int, int>> spans;
  for (const TreeNodeInfo& n : nodes) {
    if (n.leaf) continue;
    if (!include_full && n.start == 0 && n.end == n_tokens) continue;
    spans.emplace_back(n.start, n.end);
  }
  return spans;
}

double constituency_overlap_f1(const Tree& a, const Tree& b) {
  std::vector<std::pair<int, int>> sa = constituent_spans(a, false);
  std::vector<std::pair<int, int>> sb = constituent_spans(b, false);
  if (sa.empty() && sb.empty()) return 1.0;
  if (sa.empty() || sb.empty()) return 0.0;
  std::map<std::pair<int, int>, int> count;
  for (const auto& s : sa) count[s]++;
  int inter = 0;
  for (const auto& s : sb) {
    auto it = count.find(s);
    if (it != count.end() && it->second > 0) {
      --it->second;
      ++inter;
    }
  }
  return 2.0 * inter / static_cast<double>(sa.size() + sb.size());
}

std::vector<ProbeSpan> sample_probe_spans(const Tree& t, Rng& rng) {
  std::vector<TreeNodeInfo> nodes = enumerate_nodes(t);
  int n_tokens = nodes.empty() ? 0 : nodes[0].end;
  std::set<std::pair<int, int>> pos;
  for (const TreeNodeInfo& n : nodes) {
    if (!n.leaf) pos.emplace(n.start, n.end);
  }

  std::vector<ProbeSpan> out;
  for (const auto& s : pos) out.push_back({s.first, s.second, true});

  std::vector<std::pair<int, int>> neg_pool;
  for (int i = 0; i < n_tokens; ++i) {
    for (int j = i + 1; j <= n_tokens; ++j) {
      if (!pos.count({i, j})) neg_pool.emplace_back(i, j);
    }
  }
  rng.shuffle(neg_pool);
  size_t n_neg = std::min(pos.size(), neg_pool.size());
  for (size_t i = 0; i < n_neg; ++i) {
    out.push_back({neg_pool[i].first, neg_pool[i].second, false});
  }
  return out;
}

}  // namespace layoutlab
