#include "layoutlab/uscoco.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "json.hpp"
#include "layoutlab/check.hpp"
#include "layoutlab/geometry.hpp"
#include "layoutlab/syntax.hpp"

namespace layoutlab {

namespace {

bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

const std::unordered_map<std::string, std::string>& irregular_plurals() {
  static const std::unordered_map<std::string, std::string> table = {
      {"sheep", "sheep"}, {"person", "people"}, {"mouse", "mice"},
      {"skis", "skis"},   {"scissors", "scissors"},
  };
  return table;
}

}  // namespace

std::string pluralize(const std::string& noun) {
  // multi-word names inflect their head (last) word
  size_t sp = noun.rfind(' ');
  if (sp != std::string::npos)
    return noun.substr(0, sp + 1) + pluralize(noun.substr(sp + 1));

  auto it = irregular_plurals().find(noun);
  if (it != irregular_plurals().end()) return it->second;
  if (noun.empty()) return noun;

  auto ends_with = [&](const char* suffix) {
    size_t n = std::char_traits<char>::length(suffix);
    return noun.size() >= n && noun.compare(noun.size() - n, n, suffix) == 0;
  };
  if (ends_with("s") || ends_with("x") || ends_with("z") || ends_with("ch") ||
      ends_with("sh"))
    return noun + "es";
  if (noun.size() >= 2 && noun.back() == 'y' && !is_vowel(noun[noun.size() - 2]))
    return noun.substr(0, noun.size() - 1) + "ies";
  return noun + "s";
}

std::string indefinite_article(const std::string& noun) {
  return !noun.empty() && is_vowel(noun[0]) ? "an" : "a";
}

bool ExclusionTable::blocks(const std::string& from_super,
                            const std::string& to_super) const {
  auto it = excluded.find(from_super);
  return it != excluded.end() && it->second.count(to_super) > 0;
}

ExclusionTable default_exclusion_table() {
  ExclusionTable t;
  t.excluded["vehicle"] = {"outdoor"};
  t.excluded["outdoor"] = {"vehicle"};
  t.excluded["kitchen"] = {"food", "indoor"};
  t.excluded["food"] = {"kitchen", "indoor"};
  t.excluded["indoor"] = {"kitchen", "food"};
  t.excluded["furniture"] = {"appliance"};
  t.excluded["appliance"] = {"furniture"};
  return t;
}

double CategorySize::diagonal() const { return std::hypot(avg_w, avg_h); }

const CategorySize& ClassSizeStats::get(int category) const {
  auto it = by_category.find(category);
  check_arg(it != by_category.end(),
            "ClassSizeStats: no entry for category " + std::to_string(category));
  return it->second;
}

ClassSizeStats compute_class_size_stats(const std::vector<DatasetSample>& train) {
  check_arg(!train.empty(), "compute_class_size_stats: empty train set");

  // one layout per image; per category keep the biggest instance per image
  std::map<std::string, const Layout*> per_image;
  for (const auto& s : train) per_image.emplace(s.image_id, &s.layout);

  struct Acc {
    double w_sum = 0.0, h_sum = 0.0;
    int n = 0;
  };
  std::map<int, Acc> acc;
  for (const auto& [image_id, layout] : per_image) {
    std::map<int, const BoundingBox*> biggest;
    for (const auto& o : layout->objects) {
      if (o.box.w <= 0.0 || o.box.h <= 0.0) continue;
      auto [it, inserted] = biggest.emplace(o.category, &o.box);
      if (!inserted && o.box.diagonal() > it->second->diagonal()) it->second = &o.box;
    }
    for (const auto& [category, box] : biggest) {
      Acc& a = acc[category];
      a.w_sum += box->w;
      a.h_sum += box->h;
      a.n += 1;
    }
  }

  ClassSizeStats stats;
  for (const auto& [category, a] : acc)
    stats.by_category[category] = CategorySize{a.w_sum / a.n, a.h_sum / a.n, a.n};
  return stats;
}

int sample_replacement_category(int orig, const CategoryVocab& vocab,
                                const ExclusionTable& excl, Rng& rng) {
  check_arg(orig >= 0 && orig < vocab.size(), "sample_replacement_category: bad category");
  const std::string& from = vocab.supercategory(orig);
  std::vector<int> eligible;
  for (int c = 0; c < vocab.size(); ++c) {
    const std::string& to = vocab.supercategory(c);
    if (to == from || excl.blocks(from, to)) continue;
    eligible.push_back(c);
  }
  check_arg(!eligible.empty(), "sample_replacement_category: no eligible category for " +
                                   vocab.name(orig));
  return eligible[rng.uniform_int(static_cast<int>(eligible.size()))];
}

namespace {

const std::set<std::string>& plural_count_words() {
  static const std::set<std::string> words = {"two",  "three", "four", "five",  "six",
                                              "seven", "eight", "nine", "ten",   "many",
                                              "several", "some", "few"};
  return words;
}

// Determiners and prepositions that survive the replacement; the sentence
// part after them is what names the object.
const std::set<std::string>& function_words() {
  static const std::set<std::string> words = {
      "a",    "an",    "the",  "one",  "two",    "three", "four",  "five",
      "six",  "seven", "eight", "nine", "ten",    "many",  "several", "some",
      "few",  "on",    "in",   "at",   "near",   "under", "over",  "beside",
      "behind", "with", "of",  "above", "below", "next",  "to",    "by"};
  return words;
}

// Singular nouns whose surface form ends in 's'.
const std::set<std::string>& singular_s_nouns() {
  static const std::set<std::string> words = {"bus",   "glass", "grass", "dress",
                                              "class", "boss",  "kiss",  "lens",
                                              "bass",  "gas",   "chess"};
  return words;
}

bool span_is_plural(const std::vector<std::string>& span_tokens, size_t prefix_len) {
  for (size_t i = 0; i < prefix_len; ++i) {
    const std::string& w = span_tokens[i];
    if (w == "a" || w == "an" || w == "one") return false;
    if (plural_count_words().count(w) > 0) return true;
  }
  const std::string& head = span_tokens.back();
  if (head == "people" || head == "mice" || head == "scissors" || head == "skis")
    return true;
  return head.size() > 1 && head.back() == 's' && singular_s_nouns().count(head) == 0;
}

std::vector<std::string> split_words(const std::string& name) {
  std::vector<std::string> out;
  size_t pos = 0;
  while (pos < name.size()) {
    size_t sp = name.find(' ', pos);
    if (sp == std::string::npos) sp = name.size();
    if (sp > pos) out.push_back(name.substr(pos, sp - pos));
    pos = sp + 1;
  }
  return out;
}

std::string to_bracketed(const TreeNode& n) {
  if (n.leaf) return n.label;
  std::string s = "(" + n.label;
  for (const TreeNode& c : n.children) s += " " + to_bracketed(c);
  return s + ")";
}

// Replaces leaves [start, end) with `words` (all inserted at the first leaf
// of the range); constituents whose leaves all vanish are dropped.
void splice_leaves(TreeNode& node, int& next_leaf, int start, int end,
                   const std::vector<std::string>& words) {
  for (size_t i = 0; i < node.children.size();) {
    TreeNode& child = node.children[i];
    if (child.leaf) {
      const int idx = next_leaf++;
      if (idx < start || idx >= end) {
        ++i;
        continue;
      }
      node.children.erase(node.children.begin() + static_cast<long>(i));
      if (idx == start) {
        std::vector<TreeNode> fresh;
        for (const std::string& w : words) fresh.push_back(TreeNode{w, true, {}});
        node.children.insert(node.children.begin() + static_cast<long>(i), fresh.begin(),
                             fresh.end());
        i += fresh.size();
      }
    } else {
      splice_leaves(child, next_leaf, start, end, words);
      if (child.children.empty())
        node.children.erase(node.children.begin() + static_cast<long>(i));
      else
        ++i;
    }
  }
}

// Rewrites the span's leaves inside the bracketed tree; gives up (returns
// empty) when the tree's leaves disagree with the token stream.
std::string patch_tree(const std::string& tree, const std::vector<std::string>& old_tokens,
                       TokenSpan span, const std::vector<std::string>& new_span) {
  if (tree.empty()) return tree;
  Tree t;
  try {
    t = parse_bracketed(tree);
  } catch (const std::invalid_argument&) {
    return std::string();
  }
  if (leaves(t) != old_tokens) return std::string();
  int next_leaf = 0;
  splice_leaves(t.root, next_leaf, span.start, span.end, new_span);
  if (t.root.children.empty()) return std::string();
  if (!t.synthetic_root) return to_bracketed(t.root);
  std::string out;
  for (size_t i = 0; i < t.root.children.size(); ++i) {
    if (i > 0) out += " ";
    out += to_bracketed(t.root.children[i]);
  }
  return out;
}

}  // namespace

CaptionRecord replace_caption_span(const CaptionRecord& c, TokenSpan span,
                                   const std::string& new_name) {
  check_arg(span.start >= 0 && span.start < span.end &&
                span.end <= static_cast<int>(c.tokens.size()),
            "replace_caption_span: span out of range");
  check_arg(!new_name.empty(), "replace_caption_span: empty category name");

  std::vector<std::string> old_span(c.tokens.begin() + span.start,
                                    c.tokens.begin() + span.end);

  // keep leading determiners/prepositions, replace the named part wholesale
  size_t prefix_len = 0;
  while (prefix_len + 1 < old_span.size() &&
         function_words().count(old_span[prefix_len]) > 0)
    ++prefix_len;
  const bool plural = span_is_plural(old_span, prefix_len);

  std::vector<std::string> parts = split_words(new_name);
  if (plural) parts.back() = pluralize(parts.back());

  std::vector<std::string> new_span(old_span.begin(),
                                    old_span.begin() + static_cast<long>(prefix_len));
  new_span.insert(new_span.end(), parts.begin(), parts.end());
  for (size_t i = 0; i + 1 < new_span.size(); ++i)
    if (new_span[i] == "a" || new_span[i] == "an")
      new_span[i] = indefinite_article(new_span[i + 1]);

  CaptionRecord out;
  out.id = c.id;
  out.tokens.assign(c.tokens.begin(), c.tokens.begin() + span.start);
  out.tokens.insert(out.tokens.end(), new_span.begin(), new_span.end());
  out.tokens.insert(out.tokens.end(), c.tokens.begin() + span.end, c.tokens.end());

  for (size_t i = 0; i < out.tokens.size(); ++i) {
    if (i > 0) out.text += " ";
    out.text += out.tokens[i];
  }

  const int delta = static_cast<int>(new_span.size()) - (span.end - span.start);
  for (const CorefLink& l : c.links) {
    CorefLink shifted = l;
    if (l.span.start == span.start && l.span.end == span.end) {
      shifted.span.end = span.start + static_cast<int>(new_span.size());
    } else if (l.span.start >= span.end) {
      shifted.span.start += delta;
      shifted.span.end += delta;
    } else {
      check_arg(l.span.end <= span.start,
                "replace_caption_span: link overlaps the replaced span");
    }
    out.links.push_back(shifted);
  }

  out.tree = patch_tree(c.tree, c.tokens, span, new_span);
  return out;
}

namespace {

int nearest_other(const Layout& l, int target) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int j = 0; j < l.size(); ++j) {
    if (j == target) continue;
    const double d = center_distance(l.objects[target].box, l.objects[j].box);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

// Pulls the box back inside the unit frame; reports whether it already fit.
bool clamp_to_frame(BoundingBox& b) {
  bool fit = true;
  if (b.w > 1.0) {
    b.w = 1.0;
    fit = false;
  }
  if (b.h > 1.0) {
    b.h = 1.0;
    fit = false;
  }
  if (b.x0() < 0.0) {
    b.x = 0.5 * b.w;
    fit = false;
  } else if (b.x1() > 1.0) {
    b.x = 1.0 - 0.5 * b.w;
    fit = false;
  }
  if (b.y0() < 0.0) {
    b.y = 0.5 * b.h;
    fit = false;
  } else if (b.y1() > 1.0) {
    b.y = 1.0 - 0.5 * b.h;
    fit = false;
  }
  return fit;
}

}  // namespace

BoxReplacement replace_box(const Layout& l, int target, int new_category, int strategy,
                           const ClassSizeStats& stats) {
  check_arg(target >= 0 && target < l.size(), "replace_box: target out of range");
  check_arg(strategy >= 1 && strategy <= 4, "replace_box: strategy must be 1..4");

  BoxReplacement out;
  out.layout = l;
  LayoutObject& obj = out.layout.objects[target];
  obj.category = new_category;
  obj.replaced = true;
  if (strategy == 1) return out;

  check_arg(l.size() >= 2,
            "replace_box: strategies 2-4 need another object; use strategy 1");
  const int anchor = nearest_other(l, target);
  const BoundingBox& near_box = l.objects[anchor].box;
  const CategorySize& new_size = stats.get(new_category);
  const CategorySize& near_size = stats.get(l.objects[anchor].category);
  const double scale = near_box.diagonal() / near_size.diagonal();

  BoundingBox b;
  b.w = new_size.avg_w * scale;
  b.h = new_size.avg_h * scale;
  const BoundingBox& old_box = l.objects[target].box;
  if (strategy == 2) {
    b.x = old_box.x;
    b.y = old_box.y;
  } else if (strategy == 3) {
    // keep the horizontal offset to the anchor, sit at its height
    b.x = old_box.x;
    b.y = near_box.y;
  } else {
    b.x = near_box.x;
    b.y = old_box.y;
  }
  out.valid = clamp_to_frame(b);
  obj.box = b;
  return out;
}

std::vector<CandidateRecord> generate_candidates(const std::vector<DatasetSample>& data,
                                                 const CategoryVocab& vocab,
                                                 const ExclusionTable& excl,
                                                 const ClassSizeStats& stats, Rng& rng) {
  std::vector<CandidateRecord> records;
  for (const DatasetSample& s : data) {
    Rng sample_rng = rng.derive(s.caption.id);

    // spans shared by several links name groups, not single objects
    std::map<std::pair<int, int>, int> span_count;
    for (const CorefLink& l : s.caption.links)
      span_count[{l.span.start, l.span.end}] += 1;

    for (size_t li = 0; li < s.caption.links.size(); ++li) {
      const CorefLink& link = s.caption.links[li];
      if (span_count[{link.span.start, link.span.end}] != 1) continue;
      if (link.object_index < 0 || link.object_index >= s.layout.size()) continue;

      Rng link_rng = sample_rng.derive(static_cast<uint64_t>(li));
      const int orig = s.layout.objects[link.object_index].category;
      int new_cat = -1;
      try {
        new_cat = sample_replacement_category(orig, vocab, excl, link_rng);
      } catch (const std::invalid_argument&) {
        continue;
      }

      CandidateRecord rec;
      rec.source_id = s.caption.id;
      rec.image_id = s.image_id;
      rec.caption = replace_caption_span(s.caption, link.span, vocab.name(new_cat));
      rec.caption.id = s.caption.id + "-u" + std::to_string(li);
      rec.replaced_index = link.object_index;
      rec.new_category = new_cat;
      for (int strategy = 1; strategy <= 4; ++strategy) {
        try {
          BoxReplacement r = replace_box(s.layout, link.object_index, new_cat, strategy,
                                         stats);
          rec.strategies.push_back(strategy);
          rec.layouts.push_back(std::move(r.layout));
          rec.valid.push_back(r.valid);
        } catch (const std::invalid_argument&) {
          // single-object layouts and categories without stats keep strategy 1 only
        }
      }
      if (!rec.strategies.empty()) records.push_back(std::move(rec));
    }
  }
  return records;
}

void write_candidates_jsonl(const std::string& path,
                            const std::vector<CandidateRecord>& records,
                            const CategoryVocab& vocab) {
  std::ofstream out(path);
  check_arg(out.good(), "write_candidates_jsonl: cannot open " + path);
  for (const CandidateRecord& rec : records) {
    for (size_t k = 0; k < rec.strategies.size(); ++k) {
      nlohmann::json j;
      j["id"] = rec.caption.id + "-s" + std::to_string(rec.strategies[k]);
      j["image_id"] = rec.image_id;
      j["source_id"] = rec.source_id;
      j["text"] = rec.caption.text;
      j["tokens"] = rec.caption.tokens;
      j["tree"] = rec.caption.tree;
      nlohmann::json links = nlohmann::json::array();
      for (const CorefLink& l : rec.caption.links)
        links.push_back({l.span.start, l.span.end, l.object_index});
      j["links"] = links;
      nlohmann::json objects = nlohmann::json::array();
      for (const LayoutObject& o : rec.layouts[k].objects) {
        nlohmann::json jo;
        jo["category"] = vocab.name(o.category);
        jo["x"] = o.box.x;
        jo["y"] = o.box.y;
        jo["w"] = o.box.w;
        jo["h"] = o.box.h;
        if (o.replaced) jo["replaced"] = true;
        objects.push_back(jo);
      }
      j["objects"] = objects;
      j["strategy"] = rec.strategies[k];
      j["replaced_index"] = rec.replaced_index;
      j["new_category"] = vocab.name(rec.new_category);
      j["valid"] = static_cast<bool>(rec.valid[k]);
      out << j.dump() << "\n";
    }
  }
  check_arg(out.good(), "write_candidates_jsonl: write failed for " + path);
}

}  // namespace layoutlab
