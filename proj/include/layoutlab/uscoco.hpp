#pragma once

#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "layoutlab/dataio.hpp"
#include "layoutlab/layout.hpp"
#include "layoutlab/rng.hpp"

namespace layoutlab {

// Supercategory pairs barred from replacement sampling (besides the implicit
// "same supercategory" bar): vehicle<->outdoor, furniture<->appliance, and
// the kitchen/food/indoor triangle.
struct ExclusionTable {
  std::unordered_map<std::string, std::set<std::string>> excluded;
  bool blocks(const std::string& from_super, const std::string& to_super) const;
};

ExclusionTable default_exclusion_table();

struct CategorySize {
  double avg_w = 0.0;
  double avg_h = 0.0;
  int count = 0;
  double diagonal() const;
};

// Average box dimensions per category, biggest instance per image (the same
// convention as the small-object filter statistics).
struct ClassSizeStats {
  std::unordered_map<int, CategorySize> by_category;
  bool has(int category) const { return by_category.count(category) > 0; }
  const CategorySize& get(int category) const;
};

ClassSizeStats compute_class_size_stats(const std::vector<DatasetSample>& train);

// Text helpers shared with the synthetic corpus generator.
std::string pluralize(const std::string& noun);
std::string indefinite_article(const std::string& noun);  // "a" / "an"

int sample_replacement_category(int orig, const CategoryVocab& vocab,
                                const ExclusionTable& excl, Rng& rng);

// Rewrites one coref-linked span to mention the new category, fixing the
// indefinite article and plural form; every link's span is shifted to match
// the edited token stream.
CaptionRecord replace_caption_span(const CaptionRecord& c, TokenSpan span,
                                   const std::string& new_name);

struct BoxReplacement {
  Layout layout;
  bool valid = true;  // false when the box had to be clamped back into [0,1]
};

BoxReplacement replace_box(const Layout& l, int target, int new_category, int strategy,
                           const ClassSizeStats& stats);

struct CandidateRecord {
  std::string source_id;
  std::string image_id;
  CaptionRecord caption;  // span already replaced
  int replaced_index = -1;
  int new_category = -1;
  std::vector<int> strategies;
  std::vector<Layout> layouts;  // parallel to strategies
  std::vector<bool> valid;
};

// One record per eligible link (span mentioning exactly one object).
std::vector<CandidateRecord> generate_candidates(const std::vector<DatasetSample>& data,
                                                 const CategoryVocab& vocab,
                                                 const ExclusionTable& excl,
                                                 const ClassSizeStats& stats, Rng& rng);

void write_candidates_jsonl(const std::string& path,
                            const std::vector<CandidateRecord>& records,
                            const CategoryVocab& vocab);

}  // namespace layoutlab
