#pragma once

#include <memory>
#include <string>
#include <vector>

#include "layoutlab/dataio.hpp"
#include "layoutlab/encoders.hpp"
#include "layoutlab/losses.hpp"
#include "layoutlab/metrics.hpp"
#include "layoutlab/predictor.hpp"
#include "layoutlab/preprocess.hpp"
#include "layoutlab/rng.hpp"
#include "layoutlab/uscoco.hpp"

namespace layoutlab {

// Which decoder activations feed the structural alignment loss: only the
// slots matched to a GT object, or every slot.
enum class StructObjects { matched, all };

std::string struct_objects_name(StructObjects s);
StructObjects struct_objects_from_name(const std::string& s);

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" | "jsonl"
  SynthGrammarConfig synth;
  // jsonl mode: category names resolved against the synthetic vocabulary
  std::string train_path, indom_path, unexpected_path;
  int n_val_images = 24;
  bool sp_filter = true;
  // Train-time random horizontal flips. Off by default: the synthetic
  // captions contain left/right relations that flipping would falsify.
  bool hflip = false;
};

struct OptimConfig {
  double lr = 1e-4;
  int batch_size = 0;  // 0 = auto: 128, or 64 when the structural loss is on
  int epochs = 20;
  int patience = 5;  // epochs without validation improvement before stopping
  double grad_clip = 1.0;
};

struct RunConfig {
  std::string out_dir;
  uint64_t seed = 1;
  DataConfig data;
  EncoderConfig encoder;
  PredictorConfig predictor;
  LossWeights loss;
  StructObjects struct_objects = StructObjects::matched;
  int tree_code_dim = 16;
  OptimConfig optim;
};

// Strict parse: unknown keys, wrong types, and out-of-range values all
// throw. Absent keys keep their defaults.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_json(const RunConfig& cfg);

int resolved_batch_size(const RunConfig& cfg);

struct RunData {
  CategoryVocab vocab;
  std::vector<DatasetSample> train, val, indom, unexpected;
  ClassStats stats;          // small-object filter thresholds, from raw train
  ClassSizeStats size_stats; // replacement-box dimensions, from raw train
};

// Loads the configured corpus and preprocesses every split in place:
// class statistics from the raw training layouts, then the small-object
// filter (when enabled), then crop-pad-normalization. Downstream loss
// targets therefore see post-filter object counts.
RunData prepare_data(const RunConfig& cfg);

// Per-category statistics artifact shared by the small-object filter and
// the replacement-box generator.
void write_stats_json(const std::string& path, const ClassStats& stats,
                      const ClassSizeStats& sizes, const CategoryVocab& vocab);
void read_stats_json(const std::string& path, const CategoryVocab& vocab,
                     ClassStats* stats, ClassSizeStats* sizes);

struct TrainResult {
  int best_epoch = -1;
  double best_val = 0.0;
  int epochs_run = 0;
  bool early_stopped = false;
  std::string out_dir;
};

// One training run: frozen text encoder (pretrained up front unless
// precomputed), layout predictor trained with Adam, early stopping on the
// validation score. Artifacts land in cfg.out_dir: config.json, encoder.*,
// model.* (best), last.* (with optimizer state, resumable), log.jsonl,
// stats.json.
class TrainSession {
 public:
  explicit TrainSession(const RunConfig& cfg, bool resume = false);

  // Deterministic batch order for an epoch (pure function of seed + epoch).
  std::vector<std::vector<int>> epoch_batches(int epoch) const;

  // One optimizer update over the given train indices; returns the batch
  // loss. Non-finite loss saves a diagnostic snapshot and throws.
  double step(const std::vector<int>& batch);

  // Full pass over the train set; returns the mean batch loss.
  double run_epoch();

  MetricReport validate() const;
  // Early-stop criterion: pairwise-distance F1, falling back to the label
  // F1 while the former is undefined.
  static double val_score(const MetricReport& r);

  // Runs epochs until the limit or patience exhaustion; writes artifacts.
  TrainResult run();

  int epoch() const { return epoch_; }
  const RunConfig& config() const { return cfg_; }
  const RunData& data() const { return data_; }
  const LayoutPredictor& model() const { return *model_; }
  const TextEncoderProvider& encoder() const { return *provider_; }
  ParamSet& params() { return model_->params(); }

 private:
  Var sample_loss(int index, const Layout& gt, std::vector<Var>* struct_visual);
  void save_model(const std::string& prefix, bool with_optimizer) const;
  void append_log(const nlohmann::json& line);

  RunConfig cfg_;
  RunData data_;
  std::shared_ptr<const ToyEncoder> toy_;
  std::unique_ptr<TextEncoderProvider> provider_;
  std::unique_ptr<LayoutPredictor> model_;
  TreePositionTable table_;  // inside model params when the struct loss is on
  StructLossParams sparams_;
  std::vector<Mat> train_emb_;
  std::vector<Tree> train_trees_;
  Adam opt_;
  Rng root_;
  int epoch_ = 0;
  double best_val_ = -1.0;
  int best_epoch_ = -1;
  int since_best_ = 0;
};

TrainResult train_run(const RunConfig& cfg, bool resume = false);

// Prediction + metrics over a preprocessed split.
MetricReport evaluate_model(const LayoutPredictor& model,
                            const TextEncoderProvider& enc,
                            const std::vector<DatasetSample>& samples);

// Rebuilds a finished run from its directory: config, data, frozen encoder,
// and the best checkpoint.
struct LoadedRun {
  RunConfig cfg;
  RunData data;
  std::shared_ptr<const ToyEncoder> toy;
  std::unique_ptr<TextEncoderProvider> encoder;
  std::unique_ptr<LayoutPredictor> model;
};

LoadedRun load_run(const std::string& out_dir);

// Mean and sample standard deviation for seed-repeated results.
struct SeedSummary {
  double mean = 0.0;
  double stddev = 0.0;
  int n = 0;
};

SeedSummary summarize_seeds(const std::vector<double>& values);

}  // namespace layoutlab
