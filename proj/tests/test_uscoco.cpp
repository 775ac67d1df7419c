#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "layoutlab/dataio.hpp"
#include "layoutlab/geometry.hpp"
#include "layoutlab/metrics.hpp"
#include "layoutlab/rng.hpp"
#include "layoutlab/uscoco.hpp"

using namespace layoutlab;

namespace {

CategoryVocab test_vocab() {
  return CategoryVocab({{"dog", "animal"},
                        {"cat", "animal"},
                        {"elephant", "animal"},
                        {"car", "vehicle"},
                        {"boat", "vehicle"},
                        {"bench", "outdoor"},
                        {"bowl", "kitchen"},
                        {"apple", "food"},
                        {"book", "indoor"},
                        {"chair", "furniture"},
                        {"oven", "appliance"},
                        {"frisbee", "sports"}});
}

Layout make_layout(const std::vector<std::array<double, 5>>& rows) {
  Layout l;
  for (const auto& r : rows) {
    LayoutObject o;
    o.category = static_cast<int>(r[0]);
    o.box = {r[1], r[2], r[3], r[4]};
    l.objects.push_back(o);
  }
  return l;
}

CaptionRecord make_caption(const std::string& id, const std::vector<std::string>& tokens,
                           const std::string& tree,
                           const std::vector<std::array<int, 3>>& links) {
  CaptionRecord c;
  c.id = id;
  c.tokens = tokens;
  c.tree = tree;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) c.text += " ";
    c.text += tokens[i];
  }
  for (const auto& l : links) c.links.push_back({TokenSpan{l[0], l[1]}, l[2]});
  return c;
}

// 99th-percentile chi-square quantile (Wilson-Hilferty approximation).
double chi2_crit_p01(int df) {
  const double z = 2.3263478740408408;
  const double a = 2.0 / (9.0 * df);
  const double c = 1.0 - a + z * std::sqrt(a);
  return df * c * c * c;
}

}  // namespace

TEST_SUITE_BEGIN("uscoco");

TEST_CASE("exclusion table holds exactly the documented pairs") {
  const ExclusionTable t = default_exclusion_table();
  CHECK(t.blocks("vehicle", "outdoor"));
  CHECK(t.blocks("outdoor", "vehicle"));
  CHECK(t.blocks("kitchen", "food"));
  CHECK(t.blocks("kitchen", "indoor"));
  CHECK(t.blocks("food", "kitchen"));
  CHECK(t.blocks("food", "indoor"));
  CHECK(t.blocks("indoor", "kitchen"));
  CHECK(t.blocks("indoor", "food"));
  CHECK(t.blocks("furniture", "appliance"));
  CHECK(t.blocks("appliance", "furniture"));

  CHECK(!t.blocks("vehicle", "food"));
  CHECK(!t.blocks("animal", "vehicle"));
  CHECK(!t.blocks("furniture", "indoor"));

  int pairs = 0;
  for (const auto& [from, tos] : t.excluded) pairs += static_cast<int>(tos.size());
  CHECK(pairs == 10);
}

TEST_CASE("class size stats average the biggest instance per image") {
  std::vector<DatasetSample> train;
  DatasetSample a;
  a.image_id = "img0";
  a.caption.id = "c0";
  a.layout = make_layout({{0, 0.5, 0.5, 0.4, 0.2}, {0, 0.2, 0.2, 0.1, 0.1}});
  train.push_back(a);
  // same image seen through a second caption must not double-count
  DatasetSample a2 = a;
  a2.caption.id = "c1";
  train.push_back(a2);
  DatasetSample b;
  b.image_id = "img1";
  b.caption.id = "c2";
  b.layout = make_layout({{0, 0.5, 0.5, 0.2, 0.4}, {1, 0.5, 0.5, 0.3, 0.3}});
  train.push_back(b);

  const ClassSizeStats stats = compute_class_size_stats(train);
  CHECK(stats.get(0).avg_w == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(stats.get(0).avg_h == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(stats.get(0).count == 2);
  CHECK(stats.get(1).avg_w == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(stats.get(1).count == 1);
  CHECK(!stats.has(7));
  CHECK_THROWS_AS(stats.get(7), std::invalid_argument);
  CHECK_THROWS_AS(compute_class_size_stats({}), std::invalid_argument);

  // degenerate boxes do not poison the averages
  DatasetSample z;
  z.image_id = "img2";
  z.caption.id = "c3";
  z.layout = make_layout({{2, 0.5, 0.5, 0.0, 0.3}});
  train.push_back(z);
  CHECK(!compute_class_size_stats(train).has(2));
}

TEST_CASE("replacement sampling respects supercategories and the table") {
  const CategoryVocab vocab = test_vocab();
  const ExclusionTable excl = default_exclusion_table();
  Rng rng(2024);

  // car (vehicle): boat shares the supercategory, bench is excluded
  std::map<int, int> counts;
  const int n_draws = 10000;
  for (int i = 0; i < n_draws; ++i) {
    const int c = sample_replacement_category(vocab.id("car"), vocab, excl, rng);
    counts[c] += 1;
    CHECK(vocab.supercategory(c) != "vehicle");
    CHECK(!excl.blocks("vehicle", vocab.supercategory(c)));
  }
  CHECK(counts.count(vocab.id("boat")) == 0);
  CHECK(counts.count(vocab.id("bench")) == 0);
  CHECK(counts.size() == 9);

  // empirical uniformity over the eligible set
  const double expected = n_draws / 9.0;
  double chi2 = 0.0;
  for (const auto& [cat, n] : counts) {
    const double d = n - expected;
    chi2 += d * d / expected;
  }
  CHECK(chi2 < chi2_crit_p01(8));

  // kitchen blocks food and indoor on top of itself
  for (int i = 0; i < 2000; ++i) {
    const int c = sample_replacement_category(vocab.id("bowl"), vocab, excl, rng);
    const std::string& s = vocab.supercategory(c);
    CHECK(s != "kitchen");
    CHECK(s != "food");
    CHECK(s != "indoor");
  }

  const CategoryVocab animals_only = CategoryVocab({{"dog", "animal"}, {"cat", "animal"}});
  CHECK_THROWS_AS(sample_replacement_category(0, animals_only, excl, rng),
                  std::invalid_argument);
}

TEST_CASE("caption span replacement fixes article and number") {
  const CaptionRecord base =
      make_caption("c", {"a", "frisbee", "near", "two", "dogs"},
                   "(S (NP a frisbee) (VP near (NP two dogs)))",
                   {{0, 2, 0}, {3, 5, 1}, {3, 5, 2}});

  const CaptionRecord swapped = replace_caption_span(base, {0, 2}, "apple");
  CHECK(swapped.tokens == std::vector<std::string>{"an", "apple", "near", "two", "dogs"});
  CHECK(swapped.text == "an apple near two dogs");
  CHECK(swapped.tree == "(S (NP an apple) (VP near (NP two dogs)))");
  REQUIRE(swapped.links.size() == 3);
  CHECK(swapped.links[0].span.start == 0);
  CHECK(swapped.links[0].span.end == 2);
  CHECK(swapped.links[1].span.start == 3);
  CHECK(swapped.links[1].span.end == 5);

  // vowel to consonant start flips the article back
  const CaptionRecord an = make_caption("c", {"an", "elephant"}, "(NP an elephant)", {{0, 2, 0}});
  CHECK(replace_caption_span(an, {0, 2}, "dog").tokens ==
        std::vector<std::string>{"a", "dog"});
  CHECK(replace_caption_span(an, {0, 2}, "elephant").tokens ==
        std::vector<std::string>{"an", "elephant"});

  // plural head takes a plural replacement
  const CaptionRecord plural = replace_caption_span(base, {3, 5}, "elephant");
  CHECK(plural.tokens ==
        std::vector<std::string>{"a", "frisbee", "near", "two", "elephants"});
  CHECK(plural.tree == "(S (NP a frisbee) (VP near (NP two elephants)))");

  // modifiers are part of the replaced mention; determiners survive
  const CaptionRecord adj =
      make_caption("c", {"a", "big", "frisbee"}, "(NP a big frisbee)", {{0, 3, 0}});
  const CaptionRecord adj_out = replace_caption_span(adj, {0, 3}, "apple");
  CHECK(adj_out.tokens == std::vector<std::string>{"an", "apple"});
  CHECK(adj_out.tree == "(NP an apple)");
  CHECK(adj_out.links[0].span.end == 2);
}

TEST_CASE("caption span replacement with multi-word names shifts later spans") {
  const CaptionRecord base =
      make_caption("c", {"a", "frisbee", "near", "two", "dogs"},
                   "(S (NP a frisbee) (VP near (NP two dogs)))",
                   {{0, 2, 0}, {3, 5, 1}, {3, 5, 2}});

  const CaptionRecord wide = replace_caption_span(base, {0, 2}, "sports ball");
  CHECK(wide.tokens ==
        std::vector<std::string>{"a", "sports", "ball", "near", "two", "dogs"});
  CHECK(wide.links[0].span.end == 3);
  CHECK(wide.links[1].span.start == 4);
  CHECK(wide.links[1].span.end == 6);
  CHECK(wide.links[2].span.start == 4);
  CHECK(wide.tree == "(S (NP a sports ball) (VP near (NP two dogs)))");

  const CaptionRecord narrower = replace_caption_span(wide, {0, 3}, "cat");
  CHECK(narrower.tokens == std::vector<std::string>{"a", "cat", "near", "two", "dogs"});
  CHECK(narrower.links[1].span.start == 3);
  CHECK(narrower.links[1].span.end == 5);

  // plural multi-word head
  const CaptionRecord pl = replace_caption_span(base, {3, 5}, "sports ball");
  CHECK(pl.tokens ==
        std::vector<std::string>{"a", "frisbee", "near", "two", "sports", "balls"});
}

TEST_CASE("caption span replacement oddities") {
  // irregular plural head detected as plural
  const CaptionRecord mice = make_caption("c", {"two", "mice"}, "", {{0, 2, 0}});
  CHECK(replace_caption_span(mice, {0, 2}, "dog").tokens ==
        std::vector<std::string>{"two", "dogs"});

  // singular nouns ending in s stay singular
  const CaptionRecord bus = make_caption("c", {"the", "bus"}, "", {{0, 2, 0}});
  CHECK(replace_caption_span(bus, {0, 2}, "dog").tokens ==
        std::vector<std::string>{"the", "dog"});

  // a tree that disagrees with the tokens is dropped rather than garbled
  const CaptionRecord stale =
      make_caption("c", {"a", "frisbee"}, "(NP a dog)", {{0, 2, 0}});
  CHECK(replace_caption_span(stale, {0, 2}, "apple").tree.empty());

  const CaptionRecord base = make_caption("c", {"a", "dog", "runs"}, "", {{0, 2, 0}});
  CHECK_THROWS_AS(replace_caption_span(base, {0, 0}, "cat"), std::invalid_argument);
  CHECK_THROWS_AS(replace_caption_span(base, {1, 4}, "cat"), std::invalid_argument);
  // a link straddling the replaced span has no consistent rewrite
  const CaptionRecord tangled =
      make_caption("c", {"a", "dog", "runs"}, "", {{1, 3, 0}});
  CHECK_THROWS_AS(replace_caption_span(tangled, {0, 2}, "cat"), std::invalid_argument);
}

TEST_CASE("box replacement strategies") {
  // categories: 0 dog, 3 car, 7 apple (vocab only matters for names)
  Layout l = make_layout({{0, 0.3, 0.3, 0.2, 0.2}, {3, 0.7, 0.3, 0.1, 0.1},
                          {7, 0.9, 0.9, 0.05, 0.05}});
  ClassSizeStats stats;
  stats.by_category[0] = {0.2, 0.2, 5};
  stats.by_category[3] = {0.2, 0.1, 5};
  stats.by_category[7] = {0.12, 0.24, 5};

  SUBCASE("label swap keeps every coordinate") {
    const BoxReplacement r = replace_box(l, 0, 7, 1, stats);
    CHECK(r.valid);
    REQUIRE(r.layout.size() == 3);
    CHECK(r.layout.objects[0].category == 7);
    CHECK(r.layout.objects[0].replaced);
    CHECK(!r.layout.objects[1].replaced);
    for (int i = 0; i < 3; ++i) {
      CHECK(r.layout.objects[i].box.x == l.objects[i].box.x);
      CHECK(r.layout.objects[i].box.y == l.objects[i].box.y);
      CHECK(r.layout.objects[i].box.w == l.objects[i].box.w);
      CHECK(r.layout.objects[i].box.h == l.objects[i].box.h);
    }
    CHECK(r.layout.objects[1].category == 3);
  }

  // nearest other object to index 0 is the car at (0.7, 0.3)
  const double scale = std::hypot(0.1, 0.1) / std::hypot(0.2, 0.1);

  SUBCASE("size comes from the new class scaled by the nearest object") {
    const BoxReplacement r = replace_box(l, 0, 7, 2, stats);
    const BoundingBox& b = r.layout.objects[0].box;
    CHECK(b.x == 0.3);
    CHECK(b.y == 0.3);
    CHECK(b.w == doctest::Approx(0.12 * scale).epsilon(1e-12));
    CHECK(b.h == doctest::Approx(0.24 * scale).epsilon(1e-12));
    CHECK(b.w / b.h == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.valid);
  }

  SUBCASE("horizontal offset strategy") {
    const BoxReplacement r = replace_box(l, 0, 7, 3, stats);
    const BoundingBox& b = r.layout.objects[0].box;
    CHECK(std::abs(b.x - 0.7) == doctest::Approx(std::abs(0.3 - 0.7)).epsilon(1e-9));
    CHECK(b.y == 0.3);  // anchor height
    CHECK(b.w == doctest::Approx(0.12 * scale).epsilon(1e-12));
  }

  SUBCASE("vertical offset strategy") {
    Layout tall = make_layout({{0, 0.3, 0.2, 0.2, 0.2}, {3, 0.3, 0.7, 0.1, 0.1}});
    const BoxReplacement r = replace_box(tall, 0, 7, 4, stats);
    const BoundingBox& b = r.layout.objects[0].box;
    CHECK(std::abs(b.y - 0.7) == doctest::Approx(std::abs(0.2 - 0.7)).epsilon(1e-9));
    CHECK(b.x == 0.3);  // anchor x
  }

  SUBCASE("oversized boxes are clamped and flagged") {
    ClassSizeStats big = stats;
    big.by_category[7] = {0.9, 1.8, 5};
    const BoxReplacement r = replace_box(l, 0, 7, 2, big);
    CHECK(!r.valid);
    const BoundingBox& b = r.layout.objects[0].box;
    CHECK(b.x - 0.5 * b.w >= -1e-12);
    CHECK(b.x + 0.5 * b.w <= 1.0 + 1e-12);
    CHECK(b.y - 0.5 * b.h >= -1e-12);
    CHECK(b.y + 0.5 * b.h <= 1.0 + 1e-12);
  }

  SUBCASE("errors") {
    const Layout solo = make_layout({{0, 0.5, 0.5, 0.2, 0.2}});
    CHECK_NOTHROW(replace_box(solo, 0, 7, 1, stats));
    CHECK_THROWS_AS(replace_box(solo, 0, 7, 2, stats), std::invalid_argument);
    CHECK_THROWS_AS(replace_box(l, 5, 7, 1, stats), std::invalid_argument);
    CHECK_THROWS_AS(replace_box(l, 0, 7, 0, stats), std::invalid_argument);
    CHECK_THROWS_AS(replace_box(l, 0, 7, 5, stats), std::invalid_argument);
    // stats without the anchor's category cannot scale
    ClassSizeStats sparse;
    sparse.by_category[7] = {0.12, 0.24, 5};
    CHECK_THROWS_AS(replace_box(l, 0, 7, 2, sparse), std::invalid_argument);
  }
}

TEST_CASE("candidate generation walks eligible links") {
  const CategoryVocab vocab = test_vocab();
  const ExclusionTable excl = default_exclusion_table();
  ClassSizeStats stats;
  for (int c = 0; c < vocab.size(); ++c) stats.by_category[c] = {0.2, 0.15, 3};

  std::vector<DatasetSample> data;
  DatasetSample s1;
  s1.image_id = "img0";
  s1.caption = make_caption("cap0", {"a", "frisbee", "near", "two", "dogs"},
                            "(S (NP a frisbee) (VP near (NP two dogs)))",
                            {{0, 2, 0}, {3, 5, 1}, {3, 5, 2}});
  s1.layout = make_layout({{11, 0.3, 0.3, 0.2, 0.2}, {0, 0.6, 0.6, 0.2, 0.2},
                           {0, 0.8, 0.6, 0.2, 0.2}});
  data.push_back(s1);

  DatasetSample s2;
  s2.image_id = "img1";
  s2.caption = make_caption("cap1", {"an", "elephant"}, "(NP an elephant)", {{0, 2, 0}});
  s2.layout = make_layout({{2, 0.5, 0.5, 0.4, 0.4}});
  data.push_back(s2);

  Rng rng(5);
  const auto records = generate_candidates(data, vocab, excl, stats, rng);

  // the shared "two dogs" span is skipped: one record per sample remains
  REQUIRE(records.size() == 2);
  const CandidateRecord& r0 = records[0];
  CHECK(r0.source_id == "cap0");
  CHECK(r0.replaced_index == 0);
  CHECK(r0.strategies == std::vector<int>{1, 2, 3, 4});
  REQUIRE(r0.layouts.size() == 4);
  for (const Layout& cand : r0.layouts) {
    REQUIRE(cand.size() == 3);
    CHECK(cand.objects[0].category == r0.new_category);
    CHECK(cand.objects[0].replaced);
    CHECK(!cand.objects[1].replaced);
    // the flag is what recall_replaced keys on
    Layout pred = make_layout({{static_cast<double>(r0.new_category), 0.1, 0.1, 0.1, 0.1}});
    CHECK(recall_replaced(pred, cand).value == 1.0);
  }
  CHECK(vocab.supercategory(r0.new_category) != "sports");

  // single-object layout: only the label swap survives
  const CandidateRecord& r1 = records[1];
  CHECK(r1.source_id == "cap1");
  CHECK(r1.strategies == std::vector<int>{1});
  CHECK(r1.caption.tokens.size() >= 2);
  CHECK(r1.caption.tokens[0] == indefinite_article(r1.caption.tokens[1]));

  // deterministic in the rng seed
  Rng rng_a(5);
  const auto again = generate_candidates(data, vocab, excl, stats, rng_a);
  REQUIRE(again.size() == records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    CHECK(again[i].new_category == records[i].new_category);
    CHECK(again[i].caption.text == records[i].caption.text);
    for (size_t k = 0; k < records[i].layouts.size(); ++k)
      CHECK(again[i].layouts[k].objects[records[i].replaced_index].box.w ==
            records[i].layouts[k].objects[records[i].replaced_index].box.w);
  }

  // missing stats for the anchor category degrade to strategy 1
  ClassSizeStats sparse;
  sparse.by_category[vocab.id("dog")] = {0.2, 0.15, 3};
  Rng rng_b(5);
  const auto degraded = generate_candidates(data, vocab, excl, sparse, rng_b);
  REQUIRE(degraded.size() == 2);
  CHECK(degraded[0].strategies.front() == 1);
  CHECK(degraded[0].strategies.size() <= 4);
}

TEST_CASE("candidate jsonl round trip") {
  const CategoryVocab vocab = test_vocab();
  const ExclusionTable excl = default_exclusion_table();
  ClassSizeStats stats;
  for (int c = 0; c < vocab.size(); ++c) stats.by_category[c] = {0.2, 0.15, 3};

  DatasetSample s;
  s.image_id = "img0";
  s.caption = make_caption("cap0", {"a", "frisbee", "and", "a", "dog"},
                           "(S (NP a frisbee) (CC and) (NP a dog))",
                           {{0, 2, 0}, {3, 5, 1}});
  s.layout = make_layout({{11, 0.3, 0.3, 0.2, 0.2}, {0, 0.7, 0.7, 0.2, 0.2}});

  Rng rng(9);
  const auto records = generate_candidates({s}, vocab, excl, stats, rng);
  REQUIRE(records.size() == 2);

  const std::string path = "uscoco_test_candidates.jsonl";
  write_candidates_jsonl(path, records, vocab);

  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  int n_lines = 0;
  while (std::getline(in, line)) {
    const nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j.contains("strategy"));
    CHECK(j.contains("replaced_index"));
    CHECK(j.contains("valid"));
    CHECK(j.contains("tree"));
    const int idx = j["replaced_index"].get<int>();
    CHECK(j["objects"][idx]["replaced"].get<bool>());
    CHECK(j["objects"][idx]["category"].get<std::string>() ==
          j["new_category"].get<std::string>());
    CHECK(j["tokens"].size() >= 5);
    n_lines += 1;
  }
  int expected = 0;
  for (const auto& r : records) expected += static_cast<int>(r.strategies.size());
  CHECK(n_lines == expected);
  std::remove(path.c_str());
}

TEST_SUITE_END();
