#include "layoutlab/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "layoutlab/check.hpp"
#include "layoutlab/syntax.hpp"

namespace layoutlab {

std::string encoder_mode_name(EncoderMode m) {
  switch (m) {
    case EncoderMode::plain: return "plain";
    case EncoderMode::linearized: return "linearized";
    case EncoderMode::shuffled_plain: return "shuffled_plain";
    case EncoderMode::precomputed: return "precomputed";
  }
  throw std::logic_error("bad encoder mode");
}

EncoderMode encoder_mode_from_name(const std::string& s) {
  if (s == "plain") return EncoderMode::plain;
  if (s == "linearized") return EncoderMode::linearized;
  if (s == "shuffled_plain") return EncoderMode::shuffled_plain;
  if (s == "precomputed") return EncoderMode::precomputed;
  throw std::invalid_argument("unknown encoder mode: " + s);
}

Tokenizer Tokenizer::build(const std::vector<std::vector<std::string>>& sequences) {
  std::set<std::string> uniq;
  for (const auto& s : sequences) uniq.insert(s.begin(), s.end());
  return from_tokens(std::vector<std::string>(uniq.begin(), uniq.end()));
}

Tokenizer Tokenizer::from_tokens(std::vector<std::string> tokens) {
  std::sort(tokens.begin(), tokens.end());
  check_arg(std::adjacent_find(tokens.begin(), tokens.end()) == tokens.end(),
            "tokenizer: duplicate token");
  Tokenizer t;
  t.tokens_ = std::move(tokens);
  return t;
}

bool Tokenizer::has(const std::string& tok) const {
  return std::binary_search(tokens_.begin(), tokens_.end(), tok);
}

int Tokenizer::id(const std::string& tok) const {
  auto it = std::lower_bound(tokens_.begin(), tokens_.end(), tok);
  if (it == tokens_.end() || *it != tok) return kUnk;
  return 3 + static_cast<int>(it - tokens_.begin());
}

std::vector<int> Tokenizer::ids(const std::vector<std::string>& toks) const {
  std::vector<int> out;
  out.reserve(toks.size());
  for (const auto& t : toks) out.push_back(id(t));
  return out;
}

ToyEncoder::ToyEncoder(Tokenizer tok, const EncoderConfig& cfg, uint64_t init_seed)
    : tok_(std::move(tok)), d_enc_(cfg.d_enc), n_heads_(cfg.n_heads), max_len_(cfg.max_len) {
  check_arg(cfg.d_enc > 0 && cfg.n_layers > 0 && cfg.max_len > 1, "encoder: bad dimensions");
  Rng rng(init_seed);
  tok_emb_ = Embedding(params_, "tok_emb", tok_.size(), d_enc_, rng);
  pos_emb_ = Embedding(params_, "pos_emb", max_len_, d_enc_, rng);
  for (int l = 0; l < cfg.n_layers; ++l)
    layers_.emplace_back(params_, "layer" + std::to_string(l), d_enc_, n_heads_, 4 * d_enc_,
                         rng);
  final_ln_ = LayerNorm(params_, "final_ln", d_enc_);
  lm_head_ = Linear(params_, "lm_head", d_enc_, tok_.size(), rng);
}

Var ToyEncoder::hidden_graph(const std::vector<int>& ids) const {
  int n = static_cast<int>(ids.size()) + 1;
  check_arg(n <= max_len_, "encoder: sequence of " + std::to_string(n) +
                               " exceeds max_len " + std::to_string(max_len_));
  std::vector<int> in(1, Tokenizer::kBos);
  in.insert(in.end(), ids.begin(), ids.end());
  std::vector<int> pos(n);
  std::iota(pos.begin(), pos.end(), 0);
  Var x = add(tok_emb_(in), pos_emb_(pos));
  Mat mask = causal_mask(n);
  for (const auto& layer : layers_) x = layer(x, &mask);
  return final_ln_(x);
}

Var ToyEncoder::logits_graph(const std::vector<int>& ids) const {
  return lm_head_(hidden_graph(ids));
}

Var ToyEncoder::loss_graph(const std::vector<int>& ids) const {
  Var lp = log_softmax_rows(logits_graph(ids));
  int n = static_cast<int>(ids.size()) + 1;
  std::vector<int> rows(n), targets(ids);
  std::iota(rows.begin(), rows.end(), 0);
  targets.push_back(Tokenizer::kEos);
  return neg(mean_all(pick_elements(lp, rows, targets)));
}

Mat ToyEncoder::embed(const std::vector<int>& ids) const {
  Mat h = hidden_graph(ids).value();
  return h.bottomRows(h.rows() - 1);
}

void save_toy_encoder(const std::string& prefix, const ToyEncoder& enc) {
  nlohmann::json meta;
  meta["kind"] = "toy_encoder";
  meta["tokens"] = enc.tokenizer().tokens();
  meta["d_enc"] = enc.d_enc();
  meta["n_layers"] = enc.n_layers();
  meta["n_heads"] = enc.n_heads();
  meta["max_len"] = enc.max_len();
  save_checkpoint(prefix, enc.params(), nullptr, meta);
}

ToyEncoder load_toy_encoder(const std::string& prefix) {
  BlobContainer c = BlobContainer::load(prefix + ".bin", prefix + ".json");
  const nlohmann::json& meta = c.meta();
  check_arg(meta.value("kind", "") == "toy_encoder", "not a toy encoder checkpoint");
  EncoderConfig cfg;
  cfg.d_enc = meta.at("d_enc").get<int>();
  cfg.n_layers = meta.at("n_layers").get<int>();
  cfg.n_heads = meta.at("n_heads").get<int>();
  cfg.max_len = meta.at("max_len").get<int>();
  Tokenizer tok = Tokenizer::from_tokens(meta.at("tokens").get<std::vector<std::string>>());
  ToyEncoder enc(std::move(tok), cfg, 0);
  load_checkpoint(prefix, enc.params(), nullptr);
  return enc;
}

std::vector<int> shuffle_permutation(uint64_t seed, const std::string& caption_id, int n) {
  Rng rng = Rng(seed).derive(caption_id);
  return rng.permutation(n);
}

std::vector<std::string> caption_stream(const CaptionRecord& c, EncoderMode mode) {
  switch (mode) {
    case EncoderMode::plain:
    case EncoderMode::shuffled_plain:
      return c.tokens;
    case EncoderMode::linearized: {
      check_arg(!c.tree.empty(), "caption " + c.id + " has no tree (linearized mode)");
      Tree t = parse_bracketed(c.tree);
      check_arg(leaves(t) == c.tokens,
                "caption " + c.id + ": tree leaves disagree with tokens");
      return linearize(t);
    }
    case EncoderMode::precomputed:
      break;
  }
  throw std::invalid_argument("precomputed mode has no token stream");
}

namespace {

std::vector<std::vector<int>> to_id_seqs(const std::vector<CaptionRecord>& caps,
                                         EncoderMode mode, const Tokenizer& tok) {
  std::vector<std::vector<int>> out;
  out.reserve(caps.size());
  for (const auto& c : caps) out.push_back(tok.ids(caption_stream(c, mode)));
  return out;
}

}  // namespace

double corpus_nll(const ToyEncoder& enc, const std::vector<std::vector<int>>& id_seqs) {
  double sum = 0.0;
  long total = 0;
  for (const auto& ids : id_seqs) {
    int n = static_cast<int>(ids.size()) + 1;
    sum += enc.loss_graph(ids).value()(0, 0) * n;
    total += n;
  }
  check_arg(total > 0, "corpus_nll: no targets");
  return sum / static_cast<double>(total);
}

double unigram_nll(const Tokenizer& tok, const std::vector<std::vector<int>>& train,
                   const std::vector<std::vector<int>>& held) {
  std::vector<long> counts(tok.size(), 0);
  long total = 0;
  for (const auto& ids : train) {
    for (int id : ids) ++counts[id];
    ++counts[Tokenizer::kEos];
    total += static_cast<long>(ids.size()) + 1;
  }
  double nll = 0.0;
  long m = 0;
  for (const auto& ids : held) {
    std::vector<int> targets(ids);
    targets.push_back(Tokenizer::kEos);
    for (int id : targets) {
      double p = (counts[id] + 1.0) / (static_cast<double>(total) + tok.size());
      nll -= std::log(p);
      ++m;
    }
  }
  check_arg(m > 0, "unigram_nll: no held-out targets");
  return nll / static_cast<double>(m);
}

PretrainedEncoder pretrain_toy_encoder(const std::vector<CaptionRecord>& corpus,
                                       const EncoderConfig& cfg, uint64_t seed) {
  check_arg(!corpus.empty(), "pretrain: empty corpus");
  check_arg(cfg.mode != EncoderMode::precomputed, "pretrain: precomputed mode has no weights");

  size_t n_held = std::max<size_t>(1, corpus.size() / 10);
  size_t n_train = corpus.size() - n_held;
  std::vector<CaptionRecord> train(corpus.begin(), corpus.begin() + n_train);
  std::vector<CaptionRecord> held(corpus.begin() + n_train, corpus.end());
  if (train.empty()) train = corpus;  // single-caption corpus: nothing left to hold out

  std::vector<std::vector<std::string>> train_streams;
  train_streams.reserve(train.size());
  for (const auto& c : train) train_streams.push_back(caption_stream(c, cfg.mode));
  Tokenizer tok = Tokenizer::build(train_streams);

  PretrainedEncoder out;
  out.encoder = ToyEncoder(std::move(tok), cfg, Rng(seed).derive("init").state());
  ToyEncoder& enc = out.encoder;

  std::vector<std::vector<int>> train_ids = to_id_seqs(train, cfg.mode, enc.tokenizer());
  std::vector<std::vector<int>> held_ids = to_id_seqs(held, cfg.mode, enc.tokenizer());

  out.stats.n_train = static_cast<int>(train.size());
  out.stats.n_heldout = static_cast<int>(held.size());
  out.stats.initial_heldout_loss = corpus_nll(enc, held_ids);
  out.stats.unigram_perplexity =
      std::exp(unigram_nll(enc.tokenizer(), train_ids, held_ids));

  Adam opt(cfg.pretrain_lr);
  Rng order_rng = Rng(seed).derive("order");
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    std::vector<int> order(train_ids.size());
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(order);
    for (int i : order) {
      Var loss = enc.loss_graph(train_ids[i]);
      GradStore grads;
      backward(loss, grads);
      opt.step(enc.params(), grads, cfg.grad_clip);
      ++out.stats.steps;
    }
  }

  out.stats.final_heldout_loss = corpus_nll(enc, held_ids);
  out.stats.heldout_perplexity = std::exp(out.stats.final_heldout_loss);
  return out;
}

TextEncoderProvider::TextEncoderProvider(std::shared_ptr<const ToyEncoder> enc,
                                         EncoderMode mode, uint64_t shuffle_seed)
    : enc_(std::move(enc)), mode_(mode), shuffle_seed_(shuffle_seed) {
  check_arg(enc_ != nullptr, "provider: null encoder");
  check_arg(mode_ != EncoderMode::precomputed, "provider: use precomputed() for caches");
  d_enc_ = enc_->d_enc();
}

TextEncoderProvider TextEncoderProvider::precomputed(const std::string& prefix) {
  TextEncoderProvider p;
  p.mode_ = EncoderMode::precomputed;
  p.store_ = std::make_shared<BlobContainer>(
      BlobContainer::load(prefix + ".bin", prefix + ".json"));
  check_arg(p.store_->meta().contains("d_enc"), "embedding cache: index lacks d_enc");
  p.d_enc_ = p.store_->meta()["d_enc"].get<int>();
  return p;
}

Mat TextEncoderProvider::encode(const CaptionRecord& c) const {
  Mat out;
  if (mode_ == EncoderMode::precomputed) {
    out = store_->get(c.id);
    if (out.cols() != d_enc_)
      throw std::runtime_error("embedding cache: record " + c.id + " has " +
                               std::to_string(out.cols()) + " cols, index declares d_enc=" +
                               std::to_string(d_enc_));
  } else if (mode_ == EncoderMode::shuffled_plain) {
    std::vector<int> ids =
        enc_->tokenizer().ids(caption_stream(c, EncoderMode::plain));
    std::vector<int> perm =
        shuffle_permutation(shuffle_seed_, c.id, static_cast<int>(ids.size()));
    std::vector<int> shuffled(ids.size());
    for (size_t j = 0; j < perm.size(); ++j) shuffled[j] = ids[perm[j]];
    out = enc_->embed(shuffled);
  } else {
    out = enc_->embed(enc_->tokenizer().ids(caption_stream(c, mode_)));
  }
  if (!out.allFinite())
    throw std::runtime_error("encoder produced non-finite embedding for " + c.id);
  return out;
}

std::vector<int> TextEncoderProvider::word_rows(const CaptionRecord& c) const {
  int n_words = static_cast<int>(c.tokens.size());
  switch (mode_) {
    case EncoderMode::plain: {
      std::vector<int> rows(n_words);
      std::iota(rows.begin(), rows.end(), 0);
      return rows;
    }
    case EncoderMode::shuffled_plain: {
      std::vector<int> perm = shuffle_permutation(shuffle_seed_, c.id, n_words);
      std::vector<int> rows(n_words);
      for (int j = 0; j < n_words; ++j) rows[perm[j]] = j;  // word perm[j] sits at row j
      return rows;
    }
    case EncoderMode::linearized: {
      std::vector<std::string> stream = caption_stream(c, mode_);
      std::vector<int> rows;
      rows.reserve(n_words);
      for (size_t j = 0; j < stream.size(); ++j)
        if (!is_structural_token(stream[j])) rows.push_back(static_cast<int>(j));
      check_arg(static_cast<int>(rows.size()) == n_words,
                "caption " + c.id + ": word count mismatch in linearized stream");
      return rows;
    }
    case EncoderMode::precomputed: {
      Mat r = store_->get(c.id + "#rows");
      std::vector<int> rows(r.size());
      for (Eigen::Index j = 0; j < r.size(); ++j)
        rows[j] = static_cast<int>(std::llround(r(0, j)));
      return rows;
    }
  }
  throw std::logic_error("bad encoder mode");
}

void save_embedding_cache(const std::string& prefix, const std::vector<CaptionRecord>& caps,
                          const TextEncoderProvider& enc) {
  std::vector<std::pair<std::string, Mat>> records;
  records.reserve(caps.size() * 2);
  for (const auto& c : caps) {
    records.emplace_back(c.id, enc.encode(c));
    std::vector<int> rows = enc.word_rows(c);
    Mat r(1, rows.size());
    for (size_t j = 0; j < rows.size(); ++j) r(0, j) = rows[j];
    records.emplace_back(c.id + "#rows", r);
  }
  nlohmann::json meta;
  meta["d_enc"] = enc.d_enc();
  meta["mode"] = encoder_mode_name(enc.mode());
  write_blob_container(prefix + ".bin", prefix + ".json", records, BlobDtype::f32, meta);
}

Mat load_precomputed(const std::string& prefix, const std::string& caption_id) {
  BlobContainer c = BlobContainer::load(prefix + ".bin", prefix + ".json");
  return c.get(caption_id);
}

}  // namespace layoutlab
