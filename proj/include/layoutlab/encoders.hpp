#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "layoutlab/dataio.hpp"
#include "layoutlab/nn.hpp"
#include "layoutlab/serialize.hpp"
#include "layoutlab/tensor.hpp"

namespace layoutlab {

// How a caption is turned into the token stream the text encoder consumes.
//  plain          caption words as-is (implicit syntax)
//  linearized     bracketed constituency tree, "(TAG" / ")" are tokens too
//  shuffled_plain caption words in a seed-deterministic random order
//  precomputed    embeddings read back from a cache, no weights involved
enum class EncoderMode { plain, linearized, shuffled_plain, precomputed };

std::string encoder_mode_name(EncoderMode m);
EncoderMode encoder_mode_from_name(const std::string& s);

struct EncoderConfig {
  EncoderMode mode = EncoderMode::plain;
  int d_enc = 128;
  int n_layers = 2;
  int n_heads = 4;
  int max_len = 96;  // longest input incl. the BOS position
  bool freeze = true;
  int pretrain_epochs = 20;
  double pretrain_lr = 1e-3;
  double grad_clip = 1.0;
  uint64_t shuffle_seed = 0;  // shuffled_plain only
};

// Word-level vocabulary with reserved specials. Ids are stable for a given
// token set: specials first, then tokens in lexicographic order.
class Tokenizer {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;

  Tokenizer() = default;
  static Tokenizer build(const std::vector<std::vector<std::string>>& sequences);
  static Tokenizer from_tokens(std::vector<std::string> tokens);  // sorted unique

  int size() const { return 3 + static_cast<int>(tokens_.size()); }
  bool has(const std::string& tok) const;
  int id(const std::string& tok) const;  // kUnk when unknown
  std::vector<int> ids(const std::vector<std::string>& toks) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;  // sorted; id = 3 + index
};

// Small causal language model: learned token + position embeddings, pre-norm
// transformer layers under a causal mask, final layer norm, linear LM head.
// Copies share parameter storage.
class ToyEncoder {
 public:
  ToyEncoder() = default;
  ToyEncoder(Tokenizer tok, const EncoderConfig& cfg, uint64_t init_seed);

  // Hidden states for [BOS] + ids: (ids.size() + 1) x d_enc, after the final
  // layer norm. Throws when the padded length exceeds max_len.
  Var hidden_graph(const std::vector<int>& ids) const;
  // Next-token logits at every position of [BOS] + ids.
  Var logits_graph(const std::vector<int>& ids) const;
  // Mean cross-entropy of predicting ids + [EOS] from [BOS] + ids.
  Var loss_graph(const std::vector<int>& ids) const;

  // One embedding row per input token (the BOS row is dropped).
  Mat embed(const std::vector<int>& ids) const;

  const Tokenizer& tokenizer() const { return tok_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  int d_enc() const { return d_enc_; }
  int n_layers() const { return static_cast<int>(layers_.size()); }
  int n_heads() const { return n_heads_; }
  int max_len() const { return max_len_; }

 private:
  Tokenizer tok_;
  ParamSet params_;
  Embedding tok_emb_, pos_emb_;
  std::vector<EncoderLayer> layers_;
  LayerNorm final_ln_;
  Linear lm_head_;
  int d_enc_ = 0, n_heads_ = 0, max_len_ = 0;
};

void save_toy_encoder(const std::string& prefix, const ToyEncoder& enc);
ToyEncoder load_toy_encoder(const std::string& prefix);

// Seed-deterministic permutation used by the shuffled provider; depends on
// the caption id so the same caption shuffles identically across epochs.
std::vector<int> shuffle_permutation(uint64_t seed, const std::string& caption_id, int n);

// Token stream a caption contributes under a mode (words, or the linearized
// tree). Throws when linearized mode meets a record without a tree, or a tree
// whose leaves disagree with the stored words.
std::vector<std::string> caption_stream(const CaptionRecord& c, EncoderMode mode);

struct PretrainStats {
  double initial_heldout_loss = 0.0;
  double final_heldout_loss = 0.0;
  double heldout_perplexity = 0.0;
  double unigram_perplexity = 0.0;  // add-1 smoothed baseline, same held-out slice
  int steps = 0;
  int n_train = 0, n_heldout = 0;
};

struct PretrainedEncoder {
  ToyEncoder encoder;
  PretrainStats stats;
};

// Next-token pretraining over the caption corpus. The last max(1, n/10)
// captions form the held-out slice (never trained on); the vocabulary is
// built from the training slice only. Throws on an empty corpus and in
// precomputed mode.
PretrainedEncoder pretrain_toy_encoder(const std::vector<CaptionRecord>& corpus,
                                       const EncoderConfig& cfg, uint64_t seed);

// Mean next-token cross-entropy per target over the whole slice.
double corpus_nll(const ToyEncoder& enc, const std::vector<std::vector<int>>& id_seqs);

// Add-1 smoothed unigram baseline: counts over training targets (tokens plus
// one EOS per sequence), evaluated on the held-out targets.
double unigram_nll(const Tokenizer& tok, const std::vector<std::vector<int>>& train,
                   const std::vector<std::vector<int>>& held);

// Frozen caption -> embedding-matrix provider. Wraps either a trained toy
// encoder (plain / linearized / shuffled_plain) or an embedding cache.
// encode() never mutates weights; outputs are deterministic per input.
class TextEncoderProvider {
 public:
  TextEncoderProvider() = default;
  TextEncoderProvider(std::shared_ptr<const ToyEncoder> enc, EncoderMode mode,
                      uint64_t shuffle_seed = 0);
  static TextEncoderProvider precomputed(const std::string& prefix);

  // One row per consumed token (N_c words, or N_c + N_lin linearized tokens).
  Mat encode(const CaptionRecord& c) const;
  // Row index of each caption word inside encode(c)'s output.
  std::vector<int> word_rows(const CaptionRecord& c) const;

  int d_enc() const { return d_enc_; }
  EncoderMode mode() const { return mode_; }
  const ToyEncoder* toy() const { return enc_.get(); }

 private:
  std::shared_ptr<const ToyEncoder> enc_;
  std::shared_ptr<const BlobContainer> store_;  // precomputed only
  EncoderMode mode_ = EncoderMode::plain;
  uint64_t shuffle_seed_ = 0;
  int d_enc_ = 0;
};

// Embedding cache: float32 blob container at <prefix>.bin/.json with one
// record per caption id plus a "<id>#rows" record holding word_rows.
void save_embedding_cache(const std::string& prefix, const std::vector<CaptionRecord>& caps,
                          const TextEncoderProvider& enc);
Mat load_precomputed(const std::string& prefix, const std::string& caption_id);

}  // namespace layoutlab
