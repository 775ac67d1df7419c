#pragma once

#include <string>
#include <vector>

#include "layoutlab/layout.hpp"

namespace layoutlab {

// Half-open token span [start, end) over a caption's word tokens.
struct TokenSpan {
  int start = 0;
  int end = 0;
};

// Links a caption span to the layout object it mentions.
struct CorefLink {
  TokenSpan span;
  int object_index = 0;
};

struct CaptionRecord {
  std::string id;
  std::string text;
  std::vector<std::string> tokens;
  std::string tree;  // bracketed constituency string; empty when unavailable
  std::vector<CorefLink> links;
};

struct DatasetSample {
  CaptionRecord caption;
  Layout layout;
  std::string image_id;
};

struct SynthGrammarConfig {
  uint64_t seed = 1;
  uint64_t heldout_seed = 7;
  int n_train = 1600;
  int n_indom_test = 200;
  int n_unexpected_test = 200;
  double p_cross_group = 0.08;  // train share of non-held-out cross-group pairs
  int n_heldout_pairs = 35;     // sampled from cross-group pairs by heldout_seed
  // explicit held-out pairs (category names); overrides the sampled list
  std::vector<std::pair<std::string, std::string>> heldout_pairs;
};

struct SynthSplits {
  std::vector<DatasetSample> train;
  std::vector<DatasetSample> indom_test;
  std::vector<DatasetSample> unexpected_test;
};

struct CocoLoadResult {
  std::vector<DatasetSample> samples;
  int skipped_unknown_categories = 0;
};

// Category vocabulary used by the synthetic corpus (23 categories over three
// scene groups). COCO ingestion builds its vocabulary from the instances file.
CategoryVocab synthetic_vocab();

CocoLoadResult load_coco(const std::string& captions_file,
                         const std::string& instances_file, const CategoryVocab& vocab);

SynthSplits generate_synthetic(const SynthGrammarConfig& cfg);

std::pair<std::vector<DatasetSample>, std::vector<DatasetSample>> split_train_val(
    const std::vector<DatasetSample>& samples, int n_val_images, uint64_t seed);

// JSONL interchange: one object per line with fields
// {id, text, tokens, tree, links, objects:[{category,x,y,w,h[,replaced]}]};
// categories travel as names, image_id is written only when it differs
// from the sample id.
void write_jsonl(const std::string& path, const std::vector<DatasetSample>& samples,
                 const CategoryVocab& vocab);
std::vector<DatasetSample> read_jsonl(const std::string& path,
                                      const CategoryVocab& vocab);

}  // namespace layoutlab
