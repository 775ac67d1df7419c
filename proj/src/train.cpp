#include "layoutlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "layoutlab/check.hpp"
#include "layoutlab/serialize.hpp"
#include "layoutlab/syntax.hpp"

namespace layoutlab {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Strict reader over one JSON object: typed field access, unknown-key
// detection via finish().
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    check_arg(j_.is_object(), "run config: " + where_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T* out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      *out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw std::invalid_argument("run config: bad value for " + where_ + "." + key);
    }
  }

  bool has(const char* key) {
    if (!j_.contains(key)) return false;
    seen_.insert(key);
    return true;
  }

  const json& sub(const char* key) { return j_.at(key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      check_arg(seen_.count(it.key()) > 0,
                "run config: unknown key " + where_ + "." + it.key());
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void parse_data(const json& j, DataConfig* d) {
  Fields f(j, "data");
  f.get("source", &d->source);
  check_arg(d->source == "synthetic" || d->source == "jsonl",
            "run config: data.source must be \"synthetic\" or \"jsonl\"");
  if (f.has("synth")) {
    Fields s(f.sub("synth"), "data.synth");
    s.get("seed", &d->synth.seed);
    s.get("heldout_seed", &d->synth.heldout_seed);
    s.get("n_train", &d->synth.n_train);
    s.get("n_indom_test", &d->synth.n_indom_test);
    s.get("n_unexpected_test", &d->synth.n_unexpected_test);
    s.get("p_cross_group", &d->synth.p_cross_group);
    s.get("n_heldout_pairs", &d->synth.n_heldout_pairs);
    s.finish();
    check_arg(d->synth.n_train > 0, "run config: data.synth.n_train must be positive");
  }
  f.get("train_path", &d->train_path);
  f.get("indom_path", &d->indom_path);
  f.get("unexpected_path", &d->unexpected_path);
  f.get("n_val_images", &d->n_val_images);
  f.get("sp_filter", &d->sp_filter);
  f.get("hflip", &d->hflip);
  f.finish();
  check_arg(d->n_val_images >= 1, "run config: data.n_val_images must be >= 1");
  if (d->source == "jsonl")
    check_arg(!d->train_path.empty(), "run config: jsonl source needs data.train_path");
}

void parse_encoder(const json& j, EncoderConfig* e) {
  Fields f(j, "encoder");
  std::string mode = encoder_mode_name(e->mode);
  f.get("mode", &mode);
  e->mode = encoder_mode_from_name(mode);
  f.get("d_enc", &e->d_enc);
  f.get("n_layers", &e->n_layers);
  f.get("n_heads", &e->n_heads);
  f.get("max_len", &e->max_len);
  f.get("freeze", &e->freeze);
  f.get("pretrain_epochs", &e->pretrain_epochs);
  f.get("pretrain_lr", &e->pretrain_lr);
  f.get("grad_clip", &e->grad_clip);
  f.get("shuffle_seed", &e->shuffle_seed);
  f.finish();
  check_arg(e->d_enc > 0 && e->n_layers >= 1 && e->n_heads >= 1,
            "run config: encoder dimensions must be positive");
  check_arg(e->d_enc % e->n_heads == 0, "run config: encoder.d_enc % n_heads != 0");
  check_arg(e->max_len >= 4, "run config: encoder.max_len too small");
  check_arg(e->pretrain_epochs >= 0, "run config: encoder.pretrain_epochs < 0");
  check_arg(e->pretrain_lr > 0.0, "run config: encoder.pretrain_lr must be positive");
  check_arg(e->grad_clip >= 0.0, "run config: encoder.grad_clip < 0");
}

void parse_predictor(const json& j, PredictorConfig* p) {
  Fields f(j, "predictor");
  std::string variant = predictor_variant_name(p->variant);
  f.get("variant", &variant);
  p->variant = predictor_variant_from_name(variant);
  f.get("d_model", &p->d_model);
  f.get("d_ffn", &p->d_ffn);
  f.get("enc_layers", &p->enc_layers);
  f.get("dec_layers", &p->dec_layers);
  f.get("n_heads", &p->n_heads);
  f.get("n_max", &p->n_max);
  f.get("max_text_len", &p->max_text_len);
  f.finish();  // n_categories and d_enc are derived, not configurable
  check_arg(p->d_model > 0 && p->d_ffn > 0, "run config: predictor dimensions must be positive");
  check_arg(p->enc_layers >= 1 && p->dec_layers >= 1, "run config: predictor needs >=1 layer");
  check_arg(p->n_heads >= 1 && p->d_model % p->n_heads == 0,
            "run config: predictor.d_model % n_heads != 0");
  check_arg(p->n_max >= 1, "run config: predictor.n_max must be >= 1");
  check_arg(p->max_text_len >= 4, "run config: predictor.max_text_len too small");
}

void parse_loss(const json& j, LossWeights* w) {
  Fields f(j, "loss");
  f.get("lambda_struct", &w->lambda_struct);
  f.get("lambda_len", &w->lambda_len);
  f.get("lambda_label", &w->lambda_label);
  f.get("lambda_l1", &w->lambda_l1);
  f.get("lambda_giou", &w->lambda_giou);
  f.get("lambda_prop", &w->lambda_prop);
  f.get("lambda_rel", &w->lambda_rel);
  f.finish();
  validate(*w);
}

void parse_optim(const json& j, OptimConfig* o) {
  Fields f(j, "optim");
  f.get("lr", &o->lr);
  f.get("batch_size", &o->batch_size);
  f.get("epochs", &o->epochs);
  f.get("patience", &o->patience);
  f.get("grad_clip", &o->grad_clip);
  f.finish();
  check_arg(o->lr > 0.0, "run config: optim.lr must be positive");
  check_arg(o->batch_size >= 0, "run config: optim.batch_size < 0");
  check_arg(o->epochs >= 1, "run config: optim.epochs must be >= 1");
  check_arg(o->patience >= 1, "run config: optim.patience must be >= 1");
  check_arg(o->grad_clip >= 0.0, "run config: optim.grad_clip < 0");
}

Mat softmax_rows_mat(const Mat& m) {
  Mat out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    Eigen::ArrayXd row = out.row(i).array();
    row -= row.maxCoeff();
    row = row.exp();
    out.row(i) = row / row.sum();
  }
  return out;
}

Layout preprocess_layout(const Layout& raw, const ClassStats& stats, bool use_filter) {
  Layout l = raw;
  if (use_filter) {
    Layout filtered = sp_filter(l, stats);
    // a filter that empties the layout is treated as a mistake; keep the original
    if (!filtered.objects.empty()) l = filtered;
  }
  if (l.objects.empty()) return l;
  return cpn_normalize(l);
}

}  // namespace

std::string struct_objects_name(StructObjects s) {
  return s == StructObjects::matched ? "matched" : "all";
}

StructObjects struct_objects_from_name(const std::string& s) {
  if (s == "matched") return StructObjects::matched;
  if (s == "all") return StructObjects::all;
  throw std::invalid_argument("struct_objects_from_name: unknown name " + s);
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("run config: invalid JSON: ") + e.what());
  }
  RunConfig cfg;
  Fields f(j, "config");
  f.get("out_dir", &cfg.out_dir);
  f.get("seed", &cfg.seed);
  if (f.has("data")) parse_data(f.sub("data"), &cfg.data);
  if (f.has("encoder")) parse_encoder(f.sub("encoder"), &cfg.encoder);
  if (f.has("predictor")) parse_predictor(f.sub("predictor"), &cfg.predictor);
  if (f.has("loss")) parse_loss(f.sub("loss"), &cfg.loss);
  std::string so = struct_objects_name(cfg.struct_objects);
  f.get("struct_objects", &so);
  cfg.struct_objects = struct_objects_from_name(so);
  f.get("tree_code_dim", &cfg.tree_code_dim);
  if (f.has("optim")) parse_optim(f.sub("optim"), &cfg.optim);
  f.finish();
  check_arg(cfg.tree_code_dim >= 1, "run config: tree_code_dim must be >= 1");
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  check_arg(in.good(), "load_run_config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& cfg) {
  ordered_json j;
  j["out_dir"] = cfg.out_dir;
  j["seed"] = cfg.seed;
  ordered_json d;
  d["source"] = cfg.data.source;
  d["synth"] = {{"seed", cfg.data.synth.seed},
                {"heldout_seed", cfg.data.synth.heldout_seed},
                {"n_train", cfg.data.synth.n_train},
                {"n_indom_test", cfg.data.synth.n_indom_test},
                {"n_unexpected_test", cfg.data.synth.n_unexpected_test},
                {"p_cross_group", cfg.data.synth.p_cross_group},
                {"n_heldout_pairs", cfg.data.synth.n_heldout_pairs}};
  d["train_path"] = cfg.data.train_path;
  d["indom_path"] = cfg.data.indom_path;
  d["unexpected_path"] = cfg.data.unexpected_path;
  d["n_val_images"] = cfg.data.n_val_images;
  d["sp_filter"] = cfg.data.sp_filter;
  d["hflip"] = cfg.data.hflip;
  j["data"] = d;
  j["encoder"] = {{"mode", encoder_mode_name(cfg.encoder.mode)},
                  {"d_enc", cfg.encoder.d_enc},
                  {"n_layers", cfg.encoder.n_layers},
                  {"n_heads", cfg.encoder.n_heads},
                  {"max_len", cfg.encoder.max_len},
                  {"freeze", cfg.encoder.freeze},
                  {"pretrain_epochs", cfg.encoder.pretrain_epochs},
                  {"pretrain_lr", cfg.encoder.pretrain_lr},
                  {"grad_clip", cfg.encoder.grad_clip},
                  {"shuffle_seed", cfg.encoder.shuffle_seed}};
  j["predictor"] = {{"variant", predictor_variant_name(cfg.predictor.variant)},
                    {"d_model", cfg.predictor.d_model},
                    {"d_ffn", cfg.predictor.d_ffn},
                    {"enc_layers", cfg.predictor.enc_layers},
                    {"dec_layers", cfg.predictor.dec_layers},
                    {"n_heads", cfg.predictor.n_heads},
                    {"n_max", cfg.predictor.n_max},
                    {"max_text_len", cfg.predictor.max_text_len}};
  j["loss"] = {{"lambda_struct", cfg.loss.lambda_struct},
               {"lambda_len", cfg.loss.lambda_len},
               {"lambda_label", cfg.loss.lambda_label},
               {"lambda_l1", cfg.loss.lambda_l1},
               {"lambda_giou", cfg.loss.lambda_giou},
               {"lambda_prop", cfg.loss.lambda_prop},
               {"lambda_rel", cfg.loss.lambda_rel}};
  j["struct_objects"] = struct_objects_name(cfg.struct_objects);
  j["tree_code_dim"] = cfg.tree_code_dim;
  j["optim"] = {{"lr", cfg.optim.lr},
                {"batch_size", cfg.optim.batch_size},
                {"epochs", cfg.optim.epochs},
                {"patience", cfg.optim.patience},
                {"grad_clip", cfg.optim.grad_clip}};
  return j.dump(2) + "\n";
}

int resolved_batch_size(const RunConfig& cfg) {
  if (cfg.optim.batch_size > 0) return cfg.optim.batch_size;
  return cfg.loss.lambda_struct > 0.0 ? 64 : 128;
}

RunData prepare_data(const RunConfig& cfg) {
  RunData rd;
  rd.vocab = synthetic_vocab();
  if (cfg.data.source == "synthetic") {
    SynthSplits s = generate_synthetic(cfg.data.synth);
    uint64_t split_seed = Rng(cfg.data.synth.seed).derive("val-split").state();
    auto tv = split_train_val(s.train, cfg.data.n_val_images, split_seed);
    rd.train = std::move(tv.first);
    rd.val = std::move(tv.second);
    rd.indom = std::move(s.indom_test);
    rd.unexpected = std::move(s.unexpected_test);
  } else {
    auto all = read_jsonl(cfg.data.train_path, rd.vocab);
    uint64_t split_seed = Rng(cfg.seed).derive("val-split").state();
    auto tv = split_train_val(all, cfg.data.n_val_images, split_seed);
    rd.train = std::move(tv.first);
    rd.val = std::move(tv.second);
    if (!cfg.data.indom_path.empty()) rd.indom = read_jsonl(cfg.data.indom_path, rd.vocab);
    if (!cfg.data.unexpected_path.empty())
      rd.unexpected = read_jsonl(cfg.data.unexpected_path, rd.vocab);
  }
  check_arg(!rd.train.empty(), "prepare_data: empty training split");

  rd.stats = compute_class_stats(rd.train);
  rd.size_stats = compute_class_size_stats(rd.train);
  for (auto* split : {&rd.train, &rd.val, &rd.indom, &rd.unexpected})
    for (auto& s : *split) s.layout = preprocess_layout(s.layout, rd.stats, cfg.data.sp_filter);
  return rd;
}

void write_stats_json(const std::string& path, const ClassStats& stats,
                      const ClassSizeStats& sizes, const CategoryVocab& vocab) {
  ordered_json cats = ordered_json::object();
  std::vector<int> ids;
  for (const auto& kv : stats.by_category) ids.push_back(kv.first);
  std::sort(ids.begin(), ids.end());
  for (int id : ids) {
    const CategoryStats& cs = stats.get(id);
    ordered_json c = {{"avg_diag", cs.avg_diag},
                      {"avg_norm_diag", cs.avg_norm_diag},
                      {"count", cs.count}};
    if (sizes.has(id)) {
      const CategorySize& sz = sizes.get(id);
      c["avg_w"] = sz.avg_w;
      c["avg_h"] = sz.avg_h;
      c["size_count"] = sz.count;
    }
    cats[vocab.name(id)] = c;
  }
  ordered_json j;
  j["categories"] = cats;
  std::ofstream out(path);
  check_arg(out.good(), "write_stats_json: cannot open " + path);
  out << j.dump(2) << "\n";
}

void read_stats_json(const std::string& path, const CategoryVocab& vocab,
                     ClassStats* stats, ClassSizeStats* sizes) {
  std::ifstream in(path);
  check_arg(in.good(), "read_stats_json: cannot open " + path);
  json j = json::parse(in);
  check_arg(j.contains("categories"), "read_stats_json: missing categories");
  for (auto it = j["categories"].begin(); it != j["categories"].end(); ++it) {
    int id = vocab.id(it.key());
    check_arg(id >= 0, "read_stats_json: unknown category " + it.key());
    const json& c = it.value();
    if (stats) {
      CategoryStats cs;
      cs.avg_diag = c.at("avg_diag").get<double>();
      cs.avg_norm_diag = c.at("avg_norm_diag").get<double>();
      cs.count = c.at("count").get<int>();
      stats->by_category[id] = cs;
    }
    if (sizes && c.contains("avg_w")) {
      CategorySize sz;
      sz.avg_w = c.at("avg_w").get<double>();
      sz.avg_h = c.at("avg_h").get<double>();
      sz.count = c.at("size_count").get<int>();
      sizes->by_category[id] = sz;
    }
  }
}

TrainSession::TrainSession(const RunConfig& cfg, bool resume)
    : cfg_(cfg), data_(prepare_data(cfg)), opt_(cfg.optim.lr), root_(cfg.seed) {
  check_arg(!cfg_.out_dir.empty(), "TrainSession: out_dir is empty");
  check_arg(cfg_.encoder.mode != EncoderMode::precomputed,
            "TrainSession: precomputed encoder mode is evaluation-only");
  check_arg(!data_.val.empty(), "TrainSession: empty validation split");
  std::filesystem::create_directories(cfg_.out_dir);

  std::vector<CaptionRecord> corpus;
  corpus.reserve(data_.train.size());
  for (const auto& s : data_.train) corpus.push_back(s.caption);

  std::string enc_prefix = cfg_.out_dir + "/encoder";
  if (resume && std::filesystem::exists(enc_prefix + ".json")) {
    toy_ = std::make_shared<const ToyEncoder>(load_toy_encoder(enc_prefix));
  } else if (cfg_.encoder.pretrain_epochs > 0) {
    PretrainedEncoder pe =
        pretrain_toy_encoder(corpus, cfg_.encoder, root_.derive("encoder-pretrain").state());
    toy_ = std::make_shared<const ToyEncoder>(std::move(pe.encoder));
  } else {
    std::vector<std::vector<std::string>> streams;
    streams.reserve(corpus.size());
    for (const auto& c : corpus) streams.push_back(caption_stream(c, cfg_.encoder.mode));
    Tokenizer tok = Tokenizer::build(streams);
    toy_ = std::make_shared<const ToyEncoder>(
        ToyEncoder(tok, cfg_.encoder, root_.derive("encoder-init").state()));
  }
  provider_ = std::make_unique<TextEncoderProvider>(toy_, cfg_.encoder.mode,
                                                    cfg_.encoder.shuffle_seed);

  PredictorConfig pc = cfg_.predictor;
  pc.n_categories = data_.vocab.size();
  pc.d_enc = provider_->d_enc();
  model_ = std::make_unique<LayoutPredictor>(pc, root_.derive("model").state());

  if (cfg_.loss.lambda_struct > 0.0) {
    sparams_.d_model = pc.d_model;
    Rng table_rng = root_.derive("tree-table");
    table_ = TreePositionTable(model_->params(), "tree_pos", sparams_, table_rng,
                               cfg_.tree_code_dim);
  }

  train_emb_.reserve(data_.train.size());
  for (const auto& s : data_.train) train_emb_.push_back(provider_->encode(s.caption));
  if (cfg_.loss.lambda_struct > 0.0) {
    train_trees_.resize(data_.train.size());
    for (size_t i = 0; i < data_.train.size(); ++i)
      if (!data_.train[i].caption.tree.empty())
        train_trees_[i] = parse_bracketed(data_.train[i].caption.tree);
  }

  if (resume) {
    json meta = load_checkpoint(cfg_.out_dir + "/last", model_->params(), &opt_);
    epoch_ = meta.at("epochs_done").get<int>();
    best_val_ = meta.at("best_val").get<double>();
    best_epoch_ = meta.at("best_epoch").get<int>();
    since_best_ = meta.at("since_best").get<int>();
    opt_.lr = cfg_.optim.lr;
  }
}

std::vector<std::vector<int>> TrainSession::epoch_batches(int epoch) const {
  Rng r = root_.derive("batches").derive(static_cast<uint64_t>(epoch));
  std::vector<int> order = r.permutation(static_cast<int>(data_.train.size()));
  int bs = resolved_batch_size(cfg_);
  std::vector<std::vector<int>> batches;
  for (size_t i = 0; i < order.size(); i += static_cast<size_t>(bs)) {
    size_t end = std::min(order.size(), i + bs);
    batches.emplace_back(order.begin() + i, order.begin() + end);
  }
  return batches;
}

Var TrainSession::sample_loss(int index, const Layout& gt, std::vector<Var>* struct_visual) {
  const Mat& emb = train_emb_[index];
  if (cfg_.predictor.variant == PredictorVariant::PAR) {
    PredictorForward f = model_->forward_par(emb);
    Mat probs = softmax_rows_mat(f.label_logits.value());
    MatchingSet pairs = hungarian_match(probs, f.boxes.value(), gt, cfg_.loss);
    std::vector<int> nulls = unmatched_rows(cfg_.predictor.n_max, pairs);
    if (struct_visual) {
      if (cfg_.struct_objects == StructObjects::all || pairs.empty()) {
        struct_visual->push_back(f.object_embs);
      } else {
        std::vector<int> rows;
        for (const auto& p : pairs) rows.push_back(p.pred);
        std::sort(rows.begin(), rows.end());
        struct_visual->push_back(gather_rows(f.object_embs, rows));
      }
    }
    return total_loss(f.label_logits, f.boxes, f.count_logits, pairs, nulls, gt,
                      gt.size(), model_->null_class(), Var(), cfg_.loss);
  }
  Layout ordered = reorder(gt, order_by_area_desc(gt));
  PredictorForward f = model_->forward_seq(emb, ordered);
  int n_pred = static_cast<int>(f.label_logits.value().rows());
  MatchingSet pairs = match_by_area(n_pred, ordered);
  std::vector<int> nulls = unmatched_rows(n_pred, pairs);
  if (struct_visual) {
    if (cfg_.struct_objects == StructObjects::all || pairs.empty()) {
      struct_visual->push_back(f.object_embs);
    } else {
      struct_visual->push_back(slice_rows(f.object_embs, 0, static_cast<int>(pairs.size())));
    }
  }
  return total_loss(f.label_logits, f.boxes, Var(), pairs, nulls, ordered,
                    ordered.size(), model_->null_class(), Var(), cfg_.loss);
}

double TrainSession::step(const std::vector<int>& batch) {
  check_arg(!batch.empty(), "TrainSession::step: empty batch");
  std::vector<Var> sample_losses;
  std::vector<Var> struct_visual;
  std::vector<Tree> struct_trees;
  bool use_struct = cfg_.loss.lambda_struct > 0.0;
  for (int idx : batch) {
    check_arg(idx >= 0 && idx < static_cast<int>(data_.train.size()),
              "TrainSession::step: index out of range");
    const DatasetSample& s = data_.train[idx];
    Layout gt = s.layout;
    if (cfg_.data.hflip &&
        root_.derive("flip").derive(static_cast<uint64_t>(epoch_)).derive(
            static_cast<uint64_t>(idx)).uniform() < 0.5)
      gt = hflip(gt);
    bool with_tree = use_struct && !s.caption.tree.empty();
    Var loss = sample_loss(idx, gt, with_tree ? &struct_visual : nullptr);
    if (with_tree) struct_trees.push_back(train_trees_[idx]);
    sample_losses.push_back(loss);
  }
  Var batch_loss = mean_all(stack_scalars(sample_losses,
                                          static_cast<int>(sample_losses.size()), 1));
  if (use_struct && struct_visual.size() >= 2)
    batch_loss = add(batch_loss,
                     scale(loss_struct(struct_visual, struct_trees, table_, sparams_),
                           cfg_.loss.lambda_struct));

  double value = batch_loss.value()(0, 0);
  if (!std::isfinite(value)) {
    json meta = {{"epochs_done", epoch_}, {"best_val", best_val_},
                 {"best_epoch", best_epoch_}, {"since_best", since_best_},
                 {"seed", cfg_.seed}, {"reason", "non-finite loss"}};
    save_checkpoint(cfg_.out_dir + "/abort", model_->params(), &opt_, meta);
    throw std::runtime_error("training aborted: non-finite loss at epoch " +
                             std::to_string(epoch_) + " (snapshot in " + cfg_.out_dir +
                             "/abort.*)");
  }
  GradStore grads;
  backward(batch_loss, grads);
  opt_.step(model_->params(), grads, cfg_.optim.grad_clip);
  return value;
}

double TrainSession::run_epoch() {
  double sum = 0.0;
  auto batches = epoch_batches(epoch_);
  for (const auto& b : batches) sum += step(b);
  ++epoch_;
  return sum / static_cast<double>(batches.size());
}

MetricReport TrainSession::validate() const {
  return evaluate_model(*model_, *provider_, data_.val);
}

double TrainSession::val_score(const MetricReport& r) {
  if (r.f1_dpw.defined) return r.f1_dpw.value;
  return r.f1.defined ? r.f1.value : 0.0;
}

void TrainSession::save_model(const std::string& prefix, bool with_optimizer) const {
  json meta = {{"epochs_done", epoch_},   {"best_val", best_val_},
               {"best_epoch", best_epoch_}, {"since_best", since_best_},
               {"seed", cfg_.seed},       {"config", json::parse(run_config_json(cfg_))}};
  save_checkpoint(prefix, model_->params(), with_optimizer ? &opt_ : nullptr, meta);
}

void TrainSession::append_log(const json& line) {
  std::ofstream out(cfg_.out_dir + "/log.jsonl", std::ios::app);
  out << line.dump() << "\n";
}

TrainResult TrainSession::run() {
  {
    std::ofstream cfg_out(cfg_.out_dir + "/config.json");
    cfg_out << run_config_json(cfg_);
  }
  std::string enc_prefix = cfg_.out_dir + "/encoder";
  if (!std::filesystem::exists(enc_prefix + ".json")) save_toy_encoder(enc_prefix, *toy_);
  write_stats_json(cfg_.out_dir + "/stats.json", data_.stats, data_.size_stats, data_.vocab);

  TrainResult res;
  res.out_dir = cfg_.out_dir;
  while (epoch_ < cfg_.optim.epochs) {
    double train_loss = run_epoch();
    MetricReport vr = validate();
    double score = val_score(vr);
    bool improved = score > best_val_;
    if (improved) {
      best_val_ = score;
      best_epoch_ = epoch_ - 1;
      since_best_ = 0;
      save_model(cfg_.out_dir + "/model", false);
    } else {
      ++since_best_;
    }
    json line = {{"epoch", epoch_ - 1},
                 {"train_loss", train_loss},
                 {"val_score", score},
                 {"val_f1", vr.f1.defined ? json(vr.f1.value) : json()},
                 {"val_f105", vr.f105.defined ? json(vr.f105.value) : json()},
                 {"val_f1_dpw", vr.f1_dpw.defined ? json(vr.f1_dpw.value) : json()},
                 {"improved", improved}};
    append_log(line);
    save_model(cfg_.out_dir + "/last", true);
    if (since_best_ >= cfg_.optim.patience) {
      res.early_stopped = true;
      break;
    }
  }
  res.best_epoch = best_epoch_;
  res.best_val = best_val_;
  res.epochs_run = epoch_;
  return res;
}

TrainResult train_run(const RunConfig& cfg, bool resume) {
  TrainSession session(cfg, resume);
  return session.run();
}

MetricReport evaluate_model(const LayoutPredictor& model, const TextEncoderProvider& enc,
                            const std::vector<DatasetSample>& samples) {
  check_arg(!samples.empty(), "evaluate_model: empty split");
  std::vector<SampleMetrics> per_sample;
  per_sample.reserve(samples.size());
  for (const auto& s : samples) {
    Layout pred = read_layout(model.predict(enc.encode(s.caption)));
    per_sample.push_back(evaluate_sample(pred, s.layout));
  }
  return aggregate(per_sample);
}

LoadedRun load_run(const std::string& out_dir) {
  LoadedRun run;
  run.cfg = load_run_config(out_dir + "/config.json");
  run.cfg.out_dir = out_dir;
  run.data = prepare_data(run.cfg);

  Rng root(run.cfg.seed);
  if (run.cfg.encoder.mode != EncoderMode::precomputed) {
    run.toy = std::make_shared<const ToyEncoder>(load_toy_encoder(out_dir + "/encoder"));
    run.encoder = std::make_unique<TextEncoderProvider>(run.toy, run.cfg.encoder.mode,
                                                        run.cfg.encoder.shuffle_seed);
  } else {
    run.encoder = std::make_unique<TextEncoderProvider>(
        TextEncoderProvider::precomputed(out_dir + "/embeddings"));
  }

  PredictorConfig pc = run.cfg.predictor;
  pc.n_categories = run.data.vocab.size();
  pc.d_enc = run.encoder->d_enc();
  run.model = std::make_unique<LayoutPredictor>(pc, root.derive("model").state());
  if (run.cfg.loss.lambda_struct > 0.0) {
    StructLossParams sp;
    sp.d_model = pc.d_model;
    Rng table_rng = root.derive("tree-table");
    TreePositionTable(run.model->params(), "tree_pos", sp, table_rng,
                      run.cfg.tree_code_dim);
  }
  load_checkpoint(out_dir + "/model", run.model->params(), nullptr);
  return run;
}

SeedSummary summarize_seeds(const std::vector<double>& values) {
  check_arg(!values.empty(), "summarize_seeds: empty value list");
  SeedSummary s;
  s.n = static_cast<int>(values.size());
  for (double v : values) s.mean += v;
  s.mean /= s.n;
  if (s.n > 1) {
    double acc = 0.0;
    for (double v : values) acc += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(acc / (s.n - 1));
  }
  return s;
}

}  // namespace layoutlab
