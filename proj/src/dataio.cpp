#include "layoutlab/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "layoutlab/check.hpp"
#include "layoutlab/rng.hpp"
#include "layoutlab/uscoco.hpp"

namespace layoutlab {

namespace {

struct CatSpec {
  const char* name;
  const char* super;
  int group;
  double w, h;
};

// Three scene groups; sizes are canvas fractions typical for the category.
constexpr CatSpec kCats[] = {
    {"dog", "animal", 0, 0.16, 0.12},
    {"cat", "animal", 0, 0.12, 0.10},
    {"horse", "animal", 0, 0.24, 0.20},
    {"sheep", "animal", 0, 0.16, 0.13},
    {"elephant", "animal", 0, 0.30, 0.24},
    {"car", "vehicle", 0, 0.26, 0.12},
    {"bus", "vehicle", 0, 0.34, 0.18},
    {"boat", "vehicle", 0, 0.24, 0.12},
    {"bench", "outdoor", 0, 0.22, 0.10},
    {"chair", "furniture", 1, 0.12, 0.16},
    {"couch", "furniture", 1, 0.30, 0.14},
    {"bed", "furniture", 1, 0.34, 0.18},
    {"tv", "electronic", 1, 0.16, 0.10},
    {"laptop", "electronic", 1, 0.12, 0.08},
    {"clock", "indoor", 1, 0.07, 0.07},
    {"vase", "indoor", 1, 0.06, 0.10},
    {"cup", "kitchen", 2, 0.05, 0.06},
    {"bowl", "kitchen", 2, 0.08, 0.05},
    {"pizza", "food", 2, 0.12, 0.10},
    {"banana", "food", 2, 0.08, 0.04},
    {"microwave", "appliance", 2, 0.14, 0.09},
    {"refrigerator", "appliance", 2, 0.16, 0.28},
    {"oven", "appliance", 2, 0.16, 0.18},
};
constexpr int kNumCats = static_cast<int>(sizeof(kCats) / sizeof(kCats[0]));

int group_of(int cat) { return kCats[cat].group; }

std::vector<int> group_members(int g) {
  std::vector<int> out;
  for (int i = 0; i < kNumCats; ++i)
    if (kCats[i].group == g) out.push_back(i);
  return out;
}

enum class Rel { LeftOf, RightOf, Above, Below, On, Under, Beside, Near, FarFrom };

struct RelSpec {
  Rel kind;
  std::vector<std::string> words;
  bool verb_ok;  // usable after an intransitive verb
};

const std::vector<RelSpec>& relations() {
  static const std::vector<RelSpec> rels = {
      {Rel::LeftOf, {"left", "of"}, false}, {Rel::RightOf, {"right", "of"}, false},
      {Rel::Above, {"above"}, true},        {Rel::Below, {"below"}, false},
      {Rel::On, {"on"}, true},              {Rel::Under, {"under"}, true},
      {Rel::Beside, {"beside"}, true},      {Rel::Near, {"near"}, true},
      {Rel::FarFrom, {"far", "from"}, false},
  };
  return rels;
}

const std::vector<std::pair<std::string, std::string>>& verbs() {
  static const std::vector<std::pair<std::string, std::string>> v = {
      {"sits", "sit"}, {"stands", "stand"}, {"rests", "rest"}, {"floats", "float"}};
  return v;
}

struct NP {
  int cat = 0;
  int count = 1;
  int size = 0;  // 0 plain, 1 big, 2 small
  std::vector<std::string> tokens;
};

NP make_np(Rng& rng, int cat) {
  NP np;
  np.cat = cat;
  double cu = rng.uniform();
  np.count = cu < 0.6 ? 1 : (cu < 0.85 ? 2 : 3);
  double su = rng.uniform();
  np.size = su < 0.5 ? 0 : (su < 0.75 ? 1 : 2);
  std::string noun = kCats[cat].name;
  std::string head = np.size == 1 ? "big" : (np.size == 2 ? "small" : noun);
  if (np.count == 1)
    np.tokens.push_back(indefinite_article(head));
  else
    np.tokens.push_back(np.count == 2 ? "two" : "three");
  if (np.size == 1) np.tokens.push_back("big");
  if (np.size == 2) np.tokens.push_back("small");
  np.tokens.push_back(np.count == 1 ? noun : pluralize(noun));
  return np;
}

std::string np_tree(const NP& np) {
  std::string t = "(NP";
  for (const auto& w : np.tokens) t += " " + w;
  return t + ")";
}

struct PlacedNP {
  std::vector<LayoutObject> objs;  // centers relative to the NP anchor
  double hw = 0.0, hh = 0.0;       // half extents of the cluster
};

PlacedNP place_np(Rng& rng, const NP& np) {
  PlacedNP p;
  double mul = np.size == 1 ? 1.4 : (np.size == 2 ? 0.65 : 1.0);
  double w = kCats[np.cat].w * mul * rng.uniform(0.92, 1.08);
  double h = kCats[np.cat].h * mul * rng.uniform(0.92, 1.08);
  double spacing = w * 1.15;
  for (int i = 0; i < np.count; ++i) {
    double off = (i - 0.5 * (np.count - 1)) * spacing;
    LayoutObject o;
    o.category = np.cat;
    o.box = BoundingBox{off, rng.uniform(-0.008, 0.008), w, h};
    p.objs.push_back(o);
  }
  for (const auto& o : p.objs) {
    p.hw = std::max(p.hw, std::abs(o.box.x) + o.box.w / 2);
    p.hh = std::max(p.hh, std::abs(o.box.y) + o.box.h / 2);
  }
  return p;
}

void emit_at(Layout& l, const PlacedNP& p, double ax, double ay, bool replaced) {
  for (auto o : p.objs) {
    o.box.x += ax;
    o.box.y += ay;
    o.replaced = replaced;
    l.objects.push_back(o);
  }
}

// anchors for "NP1 rel NP2" around base (bx, by)
void rel_anchors(Rng& rng, Rel kind, const PlacedNP& p1, const PlacedNP& p2, double bx,
                 double by, double& a1x, double& a1y, double& a2x, double& a2y) {
  a1x = a2x = bx;
  a1y = a2y = by;
  switch (kind) {
    case Rel::LeftOf:
      a1x = bx - (p1.hw + rng.uniform(0.01, 0.04));
      a2x = bx + (p2.hw + rng.uniform(0.01, 0.04));
      a1y = by + rng.uniform(-0.04, 0.04);
      a2y = by + rng.uniform(-0.04, 0.04);
      break;
    case Rel::RightOf:
      rel_anchors(rng, Rel::LeftOf, p2, p1, bx, by, a2x, a2y, a1x, a1y);
      break;
    case Rel::Above:
      a1y = by - (p1.hh + p2.hh + rng.uniform(0.02, 0.06));
      a1x = bx + rng.uniform(-0.05, 0.05);
      a2x = bx + rng.uniform(-0.05, 0.05);
      break;
    case Rel::Below:
      rel_anchors(rng, Rel::Above, p2, p1, bx, by, a2x, a2y, a1x, a1y);
      break;
    case Rel::On:
      a1y = by - (p1.hh + p2.hh);
      a1x = bx + rng.uniform(-0.02, 0.02);
      break;
    case Rel::Under:
      a1y = by + (p1.hh + p2.hh) + rng.uniform(0.0, 0.02);
      a1x = bx + rng.uniform(-0.02, 0.02);
      break;
    case Rel::Beside: {
      double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
      a1x = bx + side * (p1.hw + p2.hw + rng.uniform(0.005, 0.03));
      a1y = by + rng.uniform(-0.02, 0.02);
      break;
    }
    case Rel::Near: {
      double ang = rng.uniform(0.0, 2.0 * M_PI);
      double dist = p1.hw + p2.hw + rng.uniform(0.01, 0.06);
      a1x = bx + dist * std::cos(ang);
      a1y = by + dist * std::sin(ang);
      break;
    }
    case Rel::FarFrom: {
      int corner = static_cast<int>(rng.uniform_int(4));
      double c1x = (corner & 1) ? 0.78 : 0.22, c1y = (corner & 2) ? 0.78 : 0.22;
      a1x = c1x + rng.uniform(-0.03, 0.03);
      a1y = c1y + rng.uniform(-0.03, 0.03);
      a2x = (1.0 - c1x) + rng.uniform(-0.03, 0.03);
      a2y = (1.0 - c1y) + rng.uniform(-0.03, 0.03);
      break;
    }
  }
}

void fit_to_canvas(Layout& l) {
  double x0 = 1e9, x1 = -1e9, y0 = 1e9, y1 = -1e9;
  for (const auto& o : l.objects) {
    x0 = std::min(x0, o.box.x0());
    x1 = std::max(x1, o.box.x1());
    y0 = std::min(y0, o.box.y0());
    y1 = std::max(y1, o.box.y1());
  }
  double s = std::min(1.0, 0.90 / std::max(x1 - x0, y1 - y0));
  double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
  for (auto& o : l.objects) {
    o.box.x = 0.5 + (o.box.x - cx) * s;
    o.box.y = 0.5 + (o.box.y - cy) * s;
    o.box.w *= s;
    o.box.h *= s;
  }
}

struct Clause {
  NP np1, np2;
  const RelSpec* rel;
  const std::pair<std::string, std::string>* verb = nullptr;  // null for bare relation
};

// appends clause tokens/links/objects; returns the clause tree string
std::string emit_clause(Rng& rng, const Clause& cl, double bx, double by,
                        CaptionRecord& cap, Layout& layout, bool np2_replaced) {
  PlacedNP p1 = place_np(rng, cl.np1);
  PlacedNP p2 = place_np(rng, cl.np2);
  double a1x, a1y, a2x, a2y;
  rel_anchors(rng, cl.rel->kind, p1, p2, bx, by, a1x, a1y, a2x, a2y);

  int span1_start = static_cast<int>(cap.tokens.size());
  for (const auto& t : cl.np1.tokens) cap.tokens.push_back(t);
  int span1_end = static_cast<int>(cap.tokens.size());
  if (cl.verb != nullptr)
    cap.tokens.push_back(cl.np1.count == 1 ? cl.verb->first : cl.verb->second);
  for (const auto& t : cl.rel->words) cap.tokens.push_back(t);
  int span2_start = static_cast<int>(cap.tokens.size());
  for (const auto& t : cl.np2.tokens) cap.tokens.push_back(t);
  int span2_end = static_cast<int>(cap.tokens.size());

  int base1 = layout.size();
  emit_at(layout, p1, a1x, a1y, false);
  int base2 = layout.size();
  emit_at(layout, p2, a2x, a2y, np2_replaced);
  for (int i = 0; i < cl.np1.count; ++i)
    cap.links.push_back({TokenSpan{span1_start, span1_end}, base1 + i});
  for (int i = 0; i < cl.np2.count; ++i)
    cap.links.push_back({TokenSpan{span2_start, span2_end}, base2 + i});

  std::string rel_words;
  for (const auto& w : cl.rel->words) rel_words += " " + w;
  std::string pp = "(PP" + rel_words + " " + np_tree(cl.np2) + ")";
  if (cl.verb != nullptr) {
    std::string v = cl.np1.count == 1 ? cl.verb->first : cl.verb->second;
    return "(S " + np_tree(cl.np1) + " (VP " + v + " " + pp + "))";
  }
  return "(S " + np_tree(cl.np1) + " " + pp + ")";
}

const RelSpec& pick_rel(Rng& rng, bool verb_only, bool allow_far) {
  const auto& rels = relations();
  for (;;) {
    const RelSpec& r = rels[rng.uniform_int(rels.size())];
    if (verb_only && !r.verb_ok) continue;
    if (!allow_far && r.kind == Rel::FarFrom) continue;
    return r;
  }
}

using HeldoutSet = std::set<std::pair<int, int>>;

std::pair<int, int> ordered_pair(int a, int b) { return {std::min(a, b), std::max(a, b)}; }

DatasetSample make_sample(Rng rng, const std::string& id, const HeldoutSet& heldout,
                          double p_cross, const std::pair<int, int>* forced_pair) {
  DatasetSample s;
  s.caption.id = id;
  s.image_id = id;

  double tu = rng.uniform();
  int tmpl = forced_pair != nullptr ? (rng.uniform() < 0.6 ? 0 : 1)
                                    : (tu < 0.35 ? 0 : (tu < 0.55 ? 1 : (tu < 0.75 ? 2 : 3)));

  std::string tree;
  if (tmpl == 0 || tmpl == 1) {
    int c1, c2;
    if (forced_pair != nullptr) {
      c1 = forced_pair->first;
      c2 = forced_pair->second;
      if (rng.uniform() < 0.5) std::swap(c1, c2);
    } else {
      int g = static_cast<int>(rng.uniform_int(3));
      auto mem = group_members(g);
      c1 = mem[rng.uniform_int(mem.size())];
      c2 = mem[rng.uniform_int(mem.size())];
      if (rng.uniform() < p_cross) {
        for (int attempt = 0; attempt < 50; ++attempt) {
          int g2 = static_cast<int>(rng.uniform_int(3));
          if (g2 == g) continue;
          auto mem2 = group_members(g2);
          int cand = mem2[rng.uniform_int(mem2.size())];
          if (heldout.count(ordered_pair(c1, cand)) == 0) {
            c2 = cand;
            break;
          }
        }
      }
    }
    Clause cl;
    cl.np1 = make_np(rng, c1);
    cl.np2 = make_np(rng, c2);
    cl.verb = tmpl == 1 ? &verbs()[rng.uniform_int(verbs().size())] : nullptr;
    cl.rel = &pick_rel(rng, tmpl == 1, tmpl == 0);
    tree = emit_clause(rng, cl, 0.5 + rng.uniform(-0.06, 0.06),
                       0.5 + rng.uniform(-0.06, 0.06), s.caption, s.layout,
                       forced_pair != nullptr);
  } else if (tmpl == 2) {
    int g = static_cast<int>(rng.uniform_int(3));
    auto mem = group_members(g);
    NP np1 = make_np(rng, mem[rng.uniform_int(mem.size())]);
    NP np2 = make_np(rng, mem[rng.uniform_int(mem.size())]);
    PlacedNP p1 = place_np(rng, np1);
    PlacedNP p2 = place_np(rng, np2);
    double a1x, a1y, a2x, a2y;
    Rel kind = rng.uniform() < 0.5 ? Rel::Beside : Rel::Near;
    rel_anchors(rng, kind, p1, p2, 0.5 + rng.uniform(-0.06, 0.06),
                0.5 + rng.uniform(-0.06, 0.06), a1x, a1y, a2x, a2y);
    int s1 = static_cast<int>(s.caption.tokens.size());
    for (const auto& t : np1.tokens) s.caption.tokens.push_back(t);
    int e1 = static_cast<int>(s.caption.tokens.size());
    s.caption.tokens.push_back("and");
    int s2 = static_cast<int>(s.caption.tokens.size());
    for (const auto& t : np2.tokens) s.caption.tokens.push_back(t);
    int e2 = static_cast<int>(s.caption.tokens.size());
    int base1 = s.layout.size();
    emit_at(s.layout, p1, a1x, a1y, false);
    int base2 = s.layout.size();
    emit_at(s.layout, p2, a2x, a2y, false);
    for (int i = 0; i < np1.count; ++i)
      s.caption.links.push_back({TokenSpan{s1, e1}, base1 + i});
    for (int i = 0; i < np2.count; ++i)
      s.caption.links.push_back({TokenSpan{s2, e2}, base2 + i});
    tree = "(NP " + np_tree(np1) + " (CC and) " + np_tree(np2) + ")";
  } else {
    // two relation clauses joined by "and", all nouns from one group
    int g = static_cast<int>(rng.uniform_int(3));
    auto mem = group_members(g);
    std::string trees[2];
    for (int k = 0; k < 2; ++k) {
      Clause cl;
      cl.np1 = make_np(rng, mem[rng.uniform_int(mem.size())]);
      cl.np2 = make_np(rng, mem[rng.uniform_int(mem.size())]);
      cl.verb = rng.uniform() < 0.4 ? &verbs()[rng.uniform_int(verbs().size())] : nullptr;
      cl.rel = &pick_rel(rng, cl.verb != nullptr, false);
      double bx = k == 0 ? 0.28 : 0.72;
      if (k == 1) s.caption.tokens.push_back("and");
      trees[k] = emit_clause(rng, cl, bx + rng.uniform(-0.03, 0.03),
                             0.5 + rng.uniform(-0.08, 0.08), s.caption, s.layout, false);
    }
    tree = "(S " + trees[0] + " (CC and) " + trees[1] + ")";
  }

  fit_to_canvas(s.layout);
  s.caption.tree = tree;
  std::string text;
  for (size_t i = 0; i < s.caption.tokens.size(); ++i) {
    if (i > 0) text += " ";
    text += s.caption.tokens[i];
  }
  s.caption.text = text;
  return s;
}

std::string zero_pad(int v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s = "0" + s;
  return s;
}

std::vector<std::pair<int, int>> all_cross_pairs() {
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < kNumCats; ++i)
    for (int j = i + 1; j < kNumCats; ++j)
      if (group_of(i) != group_of(j)) pairs.emplace_back(i, j);
  return pairs;
}

}  // namespace

CategoryVocab synthetic_vocab() {
  std::vector<CategoryInfo> cats;
  for (const auto& c : kCats) cats.push_back({c.name, c.super});
  return CategoryVocab(std::move(cats));
}

SynthSplits generate_synthetic(const SynthGrammarConfig& cfg) {
  CategoryVocab vocab = synthetic_vocab();
  auto cross = all_cross_pairs();

  HeldoutSet heldout;
  if (!cfg.heldout_pairs.empty()) {
    for (const auto& [a, b] : cfg.heldout_pairs) {
      int ia = vocab.id(a), ib = vocab.id(b);
      check_arg(ia >= 0 && ib >= 0, "generate_synthetic: unknown held-out category");
      check_arg(group_of(ia) != group_of(ib),
                "generate_synthetic: held-out pair within one scene group");
      heldout.insert(ordered_pair(ia, ib));
    }
  } else {
    check_arg(cfg.n_heldout_pairs >= 0, "generate_synthetic: negative held-out count");
    Rng hr(cfg.heldout_seed);
    std::vector<int> perm = hr.permutation(cross.size());
    int take = std::min<int>(cfg.n_heldout_pairs, static_cast<int>(cross.size()));
    for (int i = 0; i < take; ++i) heldout.insert(cross[perm[i]]);
  }
  check_arg(heldout.size() < cross.size(),
            "generate_synthetic: held-out list covers every cross-group pair");
  check_arg(cfg.n_unexpected_test == 0 || !heldout.empty(),
            "generate_synthetic: unexpected split requested without held-out pairs");

  std::vector<std::pair<int, int>> heldout_list(heldout.begin(), heldout.end());

  SynthSplits out;
  Rng base(cfg.seed);
  for (int i = 0; i < cfg.n_train; ++i)
    out.train.push_back(make_sample(base.derive("train:" + std::to_string(i)),
                                    "syn-train-" + zero_pad(i, 6), heldout,
                                    cfg.p_cross_group, nullptr));
  for (int i = 0; i < cfg.n_indom_test; ++i)
    out.indom_test.push_back(make_sample(base.derive("indom:" + std::to_string(i)),
                                         "syn-indom-" + zero_pad(i, 6), heldout,
                                         cfg.p_cross_group, nullptr));
  for (int i = 0; i < cfg.n_unexpected_test; ++i) {
    Rng r = base.derive("unexp:" + std::to_string(i));
    const auto& pair = heldout_list[r.uniform_int(heldout_list.size())];
    out.unexpected_test.push_back(make_sample(std::move(r),
                                              "syn-unexp-" + zero_pad(i, 6), heldout,
                                              0.0, &pair));
  }
  return out;
}

std::pair<std::vector<DatasetSample>, std::vector<DatasetSample>> split_train_val(
    const std::vector<DatasetSample>& samples, int n_val_images, uint64_t seed) {
  std::vector<std::string> images;
  std::set<std::string> seen;
  for (const auto& s : samples)
    if (seen.insert(s.image_id).second) images.push_back(s.image_id);
  check_arg(n_val_images >= 0, "split_train_val: negative validation size");
  check_arg(n_val_images < static_cast<int>(images.size()),
            "split_train_val: validation would swallow every image");

  Rng rng(seed);
  rng.shuffle(images);
  std::set<std::string> val_images(images.begin(), images.begin() + n_val_images);

  std::pair<std::vector<DatasetSample>, std::vector<DatasetSample>> out;
  for (const auto& s : samples) {
    if (val_images.count(s.image_id))
      out.second.push_back(s);
    else
      out.first.push_back(s);
  }
  return out;
}

namespace {

std::vector<std::string> tokenize_caption(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream iss(text);
  std::string w;
  while (iss >> w) {
    std::string t;
    for (char c : w) {
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '\'')
        t += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    if (!t.empty()) tokens.push_back(t);
  }
  return tokens;
}

nlohmann::json parse_file(const std::string& path) {
  std::ifstream f(path);
  check_arg(f.good(), "cannot open: " + path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

}  // namespace

CocoLoadResult load_coco(const std::string& captions_file,
                         const std::string& instances_file, const CategoryVocab& vocab) {
  nlohmann::json captions = parse_file(captions_file);
  nlohmann::json instances = parse_file(instances_file);
  CocoLoadResult out;

  std::map<int64_t, std::string> cat_names;  // COCO category id -> name
  for (const auto& c : instances.value("categories", nlohmann::json::array())) {
    try {
      cat_names[c.at("id").get<int64_t>()] = c.at("name").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(instances_file + ": bad category record: " + e.what());
    }
  }

  std::map<int64_t, Layout> layouts;
  for (const auto& a : instances.value("annotations", nlohmann::json::array())) {
    int64_t ann_id = a.value("id", int64_t{-1});
    try {
      int64_t image_id = a.at("image_id").get<int64_t>();
      int64_t cat_id = a.at("category_id").get<int64_t>();
      auto bbox = a.at("bbox");
      check_arg(bbox.size() == 4, "bbox must have 4 entries");
      auto name_it = cat_names.find(cat_id);
      int dense = name_it == cat_names.end() ? -1 : vocab.id(name_it->second);
      if (dense < 0) {
        ++out.skipped_unknown_categories;
        continue;
      }
      double x = bbox[0].get<double>(), y = bbox[1].get<double>();
      double w = bbox[2].get<double>(), h = bbox[3].get<double>();
      LayoutObject o;
      o.category = dense;
      o.box = BoundingBox{x + w / 2, y + h / 2, w, h};
      layouts[image_id].objects.push_back(o);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(instances_file + ": bad instance record id=" +
                                  std::to_string(ann_id) + ": " + e.what());
    }
  }

  struct Cap {
    int64_t id;
    int64_t image_id;
    std::string text;
  };
  std::vector<Cap> caps;
  for (const auto& a : captions.value("annotations", nlohmann::json::array())) {
    int64_t ann_id = a.value("id", int64_t{-1});
    try {
      caps.push_back({a.at("id").get<int64_t>(), a.at("image_id").get<int64_t>(),
                      a.at("caption").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(captions_file + ": bad caption record id=" +
                                  std::to_string(ann_id) + ": " + e.what());
    }
  }
  std::sort(caps.begin(), caps.end(), [](const Cap& a, const Cap& b) {
    return std::tie(a.image_id, a.id) < std::tie(b.image_id, b.id);
  });

  for (const auto& c : caps) {
    DatasetSample s;
    s.caption.id = "coco-" + std::to_string(c.id);
    s.caption.text = c.text;
    s.caption.tokens = tokenize_caption(c.text);
    s.image_id = "coco-img-" + std::to_string(c.image_id);
    auto it = layouts.find(c.image_id);
    if (it != layouts.end()) s.layout = it->second;
    out.samples.push_back(std::move(s));
  }
  return out;
}

void write_jsonl(const std::string& path, const std::vector<DatasetSample>& samples,
                 const CategoryVocab& vocab) {
  std::ofstream f(path, std::ios::trunc);
  check_arg(f.good(), "cannot open for write: " + path);
  for (const auto& s : samples) {
    nlohmann::json j;
    j["id"] = s.caption.id;
    j["text"] = s.caption.text;
    j["tokens"] = s.caption.tokens;
    j["tree"] = s.caption.tree;
    nlohmann::json links = nlohmann::json::array();
    for (const auto& l : s.caption.links)
      links.push_back({l.span.start, l.span.end, l.object_index});
    j["links"] = links;
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& o : s.layout.objects) {
      nlohmann::json jo;
      jo["category"] = vocab.name(o.category);
      jo["x"] = o.box.x;
      jo["y"] = o.box.y;
      jo["w"] = o.box.w;
      jo["h"] = o.box.h;
      if (o.replaced) jo["replaced"] = true;
      objs.push_back(jo);
    }
    j["objects"] = objs;
    if (s.image_id != s.caption.id) j["image_id"] = s.image_id;
    f << j.dump() << "\n";
  }
  check_arg(f.good(), "write failed: " + path);
}

std::vector<DatasetSample> read_jsonl(const std::string& path,
                                      const CategoryVocab& vocab) {
  std::ifstream f(path);
  check_arg(f.good(), "cannot open: " + path);
  std::vector<DatasetSample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      DatasetSample s;
      s.caption.id = j.at("id").get<std::string>();
      s.caption.text = j.at("text").get<std::string>();
      s.caption.tokens = j.at("tokens").get<std::vector<std::string>>();
      s.caption.tree = j.at("tree").get<std::string>();
      for (const auto& l : j.at("links")) {
        check_arg(l.size() == 3, "link must be [start, end, object]");
        s.caption.links.push_back(
            {TokenSpan{l[0].get<int>(), l[1].get<int>()}, l[2].get<int>()});
      }
      for (const auto& jo : j.at("objects")) {
        LayoutObject o;
        std::string name = jo.at("category").get<std::string>();
        o.category = vocab.id(name);
        check_arg(o.category >= 0, "unknown category: " + name);
        o.box = BoundingBox{jo.at("x").get<double>(), jo.at("y").get<double>(),
                            jo.at("w").get<double>(), jo.at("h").get<double>()};
        o.replaced = jo.value("replaced", false);
        s.layout.objects.push_back(o);
      }
      s.image_id = j.value("image_id", s.caption.id);
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace layoutlab
