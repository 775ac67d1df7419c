#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "layoutlab/encoders.hpp"
#include "layoutlab/serialize.hpp"
#include "layoutlab/syntax.hpp"

using namespace layoutlab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("layoutlab_enc_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<std::string> words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (ch == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

CaptionRecord cap(const std::string& id, const std::string& text,
                  const std::string& tree = "") {
  CaptionRecord c;
  c.id = id;
  c.text = text;
  c.tokens = words(text);
  c.tree = tree;
  return c;
}

std::vector<CaptionRecord> corpus_from(const std::vector<std::string>& texts) {
  std::vector<CaptionRecord> out;
  for (size_t i = 0; i < texts.size(); ++i)
    out.push_back(cap("c" + std::to_string(i), texts[i]));
  return out;
}

EncoderConfig tiny_cfg() {
  EncoderConfig cfg;
  cfg.d_enc = 32;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.max_len = 32;
  return cfg;
}

bool bitwise_equal(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      if (a(i, j) != b(i, j)) return false;
  return true;
}

ToyEncoder fresh_encoder(const std::vector<std::string>& texts, uint64_t seed = 3) {
  std::vector<std::vector<std::string>> streams;
  for (const auto& t : texts) streams.push_back(words(t));
  return ToyEncoder(Tokenizer::build(streams), tiny_cfg(), seed);
}

}  // namespace

TEST_SUITE_BEGIN("encoders");

TEST_CASE("tokenizer assigns sorted stable ids after the specials") {
  Tokenizer t = Tokenizer::build({{"dog", "a"}, {"cat", "a"}});
  CHECK(t.size() == 6);
  CHECK(t.id("a") == 3);
  CHECK(t.id("cat") == 4);
  CHECK(t.id("dog") == 5);
  CHECK(t.id("zebra") == Tokenizer::kUnk);
  CHECK(t.has("cat"));
  CHECK(!t.has("zebra"));
  CHECK(t.ids({"dog", "a", "zebra"}) == std::vector<int>{5, 3, 2});
  CHECK_THROWS_AS(Tokenizer::from_tokens({"a", "a"}), std::invalid_argument);
}

TEST_CASE("plain encoding yields one finite row per word") {
  ToyEncoder enc = fresh_encoder({"a dog chases a white cat"});
  TextEncoderProvider p(std::make_shared<ToyEncoder>(enc), EncoderMode::plain);
  CaptionRecord c = cap("x", "a dog chases a white cat");
  Mat e = p.encode(c);
  CHECK(e.rows() == 6);
  CHECK(e.cols() == 32);
  CHECK(e.allFinite());
  std::vector<int> rows = p.word_rows(c);
  REQUIRE(rows.size() == 6);
  for (int i = 0; i < 6; ++i) CHECK(rows[i] == i);
}

TEST_CASE("linearized encoding embeds brackets and tags as extra rows") {
  CaptionRecord c =
      cap("x", "a dog catches a frisbee", "(NP a dog) (VP catches (NP a frisbee))");
  std::vector<std::string> stream = caption_stream(c, EncoderMode::linearized);
  std::vector<std::string> want = {"(NP", "a",  "dog",     ")", "(VP", "catches",
                                   "(NP", "a",  "frisbee", ")", ")"};
  CHECK(stream == want);  // 5 words + 6 structural tokens

  ToyEncoder enc = fresh_encoder({"(NP a dog ) (VP catches (NP a frisbee ) )"});
  TextEncoderProvider p(std::make_shared<ToyEncoder>(enc), EncoderMode::linearized);
  Mat e = p.encode(c);
  CHECK(e.rows() == 11);
  CHECK(p.word_rows(c) == std::vector<int>{1, 2, 5, 7, 8});
}

TEST_CASE("encoding the same caption twice is bitwise identical") {
  ToyEncoder enc = fresh_encoder({"a dog runs fast"});
  auto shared = std::make_shared<ToyEncoder>(enc);
  TextEncoderProvider p(shared, EncoderMode::plain);
  CaptionRecord c = cap("x", "a dog runs fast");
  CHECK(bitwise_equal(p.encode(c), p.encode(c)));

  TextEncoderProvider s(shared, EncoderMode::shuffled_plain, 17);
  CHECK(bitwise_equal(s.encode(c), s.encode(c)));
}

TEST_CASE("linearized mode rejects captions without a consistent tree") {
  ToyEncoder enc = fresh_encoder({"a dog"});
  TextEncoderProvider p(std::make_shared<ToyEncoder>(enc), EncoderMode::linearized);
  CHECK_THROWS_AS(p.encode(cap("x", "a dog")), std::invalid_argument);
  CHECK_THROWS_AS(p.encode(cap("x", "a dog", "(NP a cat)")), std::invalid_argument);
}

TEST_CASE("shuffled provider applies a stable per-caption permutation") {
  std::vector<int> perm = shuffle_permutation(9, "cap-123", 8);
  std::vector<int> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> iota(8);
  std::iota(iota.begin(), iota.end(), 0);
  CHECK(sorted == iota);
  CHECK(perm == shuffle_permutation(9, "cap-123", 8));
  CHECK(shuffle_permutation(9, "cap-123", 1) == std::vector<int>{0});

  // ids must matter: across many captions at least two orders differ
  std::set<std::vector<int>> distinct;
  for (int i = 0; i < 30; ++i)
    distinct.insert(shuffle_permutation(9, "cap-" + std::to_string(i), 6));
  CHECK(distinct.size() > 1);

  ToyEncoder enc = fresh_encoder({"a dog chases a white cat"});
  auto shared = std::make_shared<ToyEncoder>(enc);
  TextEncoderProvider shuf(shared, EncoderMode::shuffled_plain, 9);
  TextEncoderProvider plain(shared, EncoderMode::plain);

  CaptionRecord c = cap("cap-123", "a dog chases a white cat");
  std::vector<int> p = shuffle_permutation(9, c.id, 6);
  CaptionRecord permuted = c;  // same id, words pre-permuted by hand
  for (int j = 0; j < 6; ++j) permuted.tokens[j] = c.tokens[p[j]];
  CHECK(bitwise_equal(shuf.encode(c), plain.encode(permuted)));

  // word_rows inverts the permutation: row r holds word p[r]
  std::vector<int> rows = shuf.word_rows(c);
  for (int i = 0; i < 6; ++i) CHECK(p[rows[i]] == i);
}

TEST_CASE("fifty steps on a repeated sentence beat the unigram baseline") {
  std::vector<CaptionRecord> corpus = corpus_from({"a dog runs", "a dog runs"});
  EncoderConfig cfg = tiny_cfg();
  cfg.pretrain_epochs = 50;  // one training sentence -> one step per epoch
  cfg.pretrain_lr = 1e-2;
  PretrainedEncoder pe = pretrain_toy_encoder(corpus, cfg, 5);

  CHECK(pe.stats.n_train == 1);
  CHECK(pe.stats.n_heldout == 1);
  CHECK(pe.stats.steps == 50);
  // vocab {bos,eos,unk,a,dog,runs}; every held-out target has smoothed
  // probability (1+1)/(4+6), so the baseline is exactly 5
  CHECK(pe.stats.unigram_perplexity == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(pe.stats.heldout_perplexity < pe.stats.unigram_perplexity);
  CHECK(pe.stats.final_heldout_loss <= 0.8 * pe.stats.initial_heldout_loss);
  CHECK(pe.stats.heldout_perplexity ==
        doctest::Approx(std::exp(pe.stats.final_heldout_loss)).epsilon(1e-12));
}

TEST_CASE("unigram baseline matches the hand-computed fixture") {
  std::vector<std::string> texts = {
      "a dog chases a cat",    "the cat sleeps",          "a bird sings",
      "the dog sleeps",        "a cat chases the bird",   "the bird flies",
      "a dog barks",           "the cat chases a dog",    "a bird flies",
      "the dog chases the bird", "a cat sleeps",          "the dog barks"};
  std::vector<std::vector<std::string>> streams;
  for (const auto& t : texts) streams.push_back(words(t));
  std::vector<std::vector<std::string>> train_streams(streams.begin(), streams.end() - 1);
  Tokenizer tok = Tokenizer::build(train_streams);
  CHECK(tok.size() == 13);

  std::vector<std::vector<int>> train_ids, held_ids;
  for (size_t i = 0; i + 1 < streams.size(); ++i) train_ids.push_back(tok.ids(streams[i]));
  held_ids.push_back(tok.ids(streams.back()));
  CHECK(unigram_nll(tok, train_ids, held_ids) ==
        doctest::Approx(2.4120735595816778).epsilon(1e-12));

  EncoderConfig cfg = tiny_cfg();
  cfg.pretrain_epochs = 40;
  cfg.pretrain_lr = 1e-2;
  PretrainedEncoder pe = pretrain_toy_encoder(corpus_from(texts), cfg, 7);
  CHECK(pe.stats.unigram_perplexity == doctest::Approx(11.157072029496886).epsilon(1e-9));
  CHECK(pe.stats.heldout_perplexity < pe.stats.unigram_perplexity);
}

TEST_CASE("pretraining is reproducible per seed and sensitive to it") {
  std::vector<CaptionRecord> corpus =
      corpus_from({"a dog runs", "the cat sleeps", "a bird sings"});
  EncoderConfig cfg = tiny_cfg();
  cfg.pretrain_epochs = 5;
  PretrainedEncoder a = pretrain_toy_encoder(corpus, cfg, 11);
  PretrainedEncoder b = pretrain_toy_encoder(corpus, cfg, 11);
  CHECK(a.stats.initial_heldout_loss == b.stats.initial_heldout_loss);
  CHECK(a.stats.final_heldout_loss == b.stats.final_heldout_loss);
  for (size_t i = 0; i < a.encoder.params().entries().size(); ++i)
    CHECK(bitwise_equal(a.encoder.params().entries()[i].second.value(),
                        b.encoder.params().entries()[i].second.value()));

  PretrainedEncoder d = pretrain_toy_encoder(corpus, cfg, 12);
  CHECK(d.stats.final_heldout_loss != a.stats.final_heldout_loss);
}

TEST_CASE("pretraining rejects empty corpora and the precomputed mode") {
  EncoderConfig cfg = tiny_cfg();
  CHECK_THROWS_AS(pretrain_toy_encoder({}, cfg, 1), std::invalid_argument);
  cfg.mode = EncoderMode::precomputed;
  CHECK_THROWS_AS(pretrain_toy_encoder(corpus_from({"a dog"}), cfg, 1),
                  std::invalid_argument);
}

TEST_CASE("encoder weights stay frozen through encoding and downstream training") {
  ToyEncoder enc = fresh_encoder({"a dog runs", "the cat sleeps"});
  auto shared = std::make_shared<ToyEncoder>(enc);
  TextEncoderProvider p(shared, EncoderMode::plain);

  std::vector<Mat> before;
  for (const auto& [name, v] : shared->params().entries()) before.push_back(v.value());

  CaptionRecord c = cap("x", "a dog runs");
  Mat e = p.encode(c);

  // a downstream consumer trains its own layer on top of the embeddings
  ParamSet down;
  Rng rng(4);
  Linear head(down, "head", 32, 8, rng);
  Adam opt(1e-2);
  for (int step = 0; step < 3; ++step) {
    Var loss = mean_all(square(head(make_input(p.encode(c)))));
    GradStore grads;
    backward(loss, grads);
    opt.step(down, grads);
  }

  const auto& entries = shared->params().entries();
  REQUIRE(entries.size() == before.size());
  for (size_t i = 0; i < entries.size(); ++i)
    CHECK(bitwise_equal(entries[i].second.value(), before[i]));
  CHECK(bitwise_equal(p.encode(c), e));
}

TEST_CASE("embedding cache round trip is float32-exact") {
  TempDir td;
  ToyEncoder enc = fresh_encoder({"a dog runs", "the cat sleeps", "a bird sings"});
  auto shared = std::make_shared<ToyEncoder>(enc);
  TextEncoderProvider live(shared, EncoderMode::plain);

  std::vector<CaptionRecord> caps = {cap("r0", "a dog runs"), cap("r1", "the cat sleeps"),
                                     cap("r2", "a bird sings")};
  std::string prefix = td.file("cache");
  save_embedding_cache(prefix, caps, live);

  TextEncoderProvider stored = TextEncoderProvider::precomputed(prefix);
  CHECK(stored.mode() == EncoderMode::precomputed);
  CHECK(stored.d_enc() == 32);
  for (const auto& c : caps) {
    Mat want = live.encode(c);
    for (Eigen::Index i = 0; i < want.rows(); ++i)
      for (Eigen::Index j = 0; j < want.cols(); ++j)
        want(i, j) = static_cast<double>(static_cast<float>(want(i, j)));
    CHECK(bitwise_equal(stored.encode(c), want));
    CHECK(bitwise_equal(load_precomputed(prefix, c.id), want));
    CHECK(stored.word_rows(c) == live.word_rows(c));
  }
  CHECK(bitwise_equal(load_precomputed(prefix, "r0"), load_precomputed(prefix, "r0")));
  CHECK_THROWS_AS(load_precomputed(prefix, "nope"), std::invalid_argument);
  CHECK_THROWS_AS(stored.encode(cap("nope", "a dog runs")), std::invalid_argument);
}

TEST_CASE("corrupt cache records fail loudly instead of crashing") {
  TempDir td;
  ToyEncoder enc = fresh_encoder({"a dog runs"});
  TextEncoderProvider live(std::make_shared<ToyEncoder>(enc), EncoderMode::plain);
  std::string prefix = td.file("cache");
  save_embedding_cache(prefix, {cap("r0", "a dog runs")}, live);

  {  // truncate the blob so the declared record overruns the file
    std::string bytes;
    {
      std::ifstream f(prefix + ".bin", std::ios::binary);
      bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    }
    std::ofstream f(prefix + ".bin", std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), 10);
  }
  CHECK_THROWS_AS(load_precomputed(prefix, "r0"), std::invalid_argument);

  // a record whose width disagrees with the declared model dimension
  nlohmann::json meta;
  meta["d_enc"] = 8;
  meta["mode"] = "plain";
  write_blob_container(td.file("bad.bin"), td.file("bad.json"),
                       {{"x", Mat::Zero(2, 5)}, {"x#rows", Mat::Zero(1, 2)}},
                       BlobDtype::f32, meta);
  TextEncoderProvider bad = TextEncoderProvider::precomputed(td.file("bad"));
  CHECK_THROWS_AS(bad.encode(cap("x", "a b")), std::runtime_error);
}

TEST_CASE("linearized pretraining treats brackets and tags as vocabulary") {
  std::vector<CaptionRecord> corpus = {
      cap("t0", "a dog runs", "(S (NP a dog) (VP runs))"),
      cap("t1", "a cat sleeps", "(S (NP a cat) (VP sleeps))"),
      cap("t2", "a bird sings", "(S (NP a bird) (VP sings))"),
  };
  EncoderConfig cfg = tiny_cfg();
  cfg.mode = EncoderMode::linearized;
  cfg.pretrain_epochs = 2;
  PretrainedEncoder pe = pretrain_toy_encoder(corpus, cfg, 3);
  CHECK(pe.encoder.tokenizer().has("(S"));
  CHECK(pe.encoder.tokenizer().has("(NP"));
  CHECK(pe.encoder.tokenizer().has("(VP"));
  CHECK(pe.encoder.tokenizer().has(")"));

  TextEncoderProvider p(std::make_shared<ToyEncoder>(pe.encoder), EncoderMode::linearized);
  Mat e = p.encode(corpus[0]);
  CHECK(e.rows() == 9);  // 3 words + 3 opening tags + 3 closing brackets
}

TEST_CASE("saved encoders reload bit-exactly") {
  TempDir td;
  ToyEncoder enc = fresh_encoder({"a dog runs", "the cat sleeps"}, 21);
  save_toy_encoder(td.file("enc"), enc);
  ToyEncoder back = load_toy_encoder(td.file("enc"));
  CHECK(back.d_enc() == enc.d_enc());
  CHECK(back.tokenizer().tokens() == enc.tokenizer().tokens());
  CaptionRecord c = cap("x", "a dog runs");
  TextEncoderProvider pa(std::make_shared<ToyEncoder>(enc), EncoderMode::plain);
  TextEncoderProvider pb(std::make_shared<ToyEncoder>(back), EncoderMode::plain);
  CHECK(bitwise_equal(pa.encode(c), pb.encode(c)));
}

TEST_CASE("oversized inputs and bad head counts are rejected") {
  EncoderConfig cfg = tiny_cfg();
  cfg.max_len = 4;
  ToyEncoder enc(Tokenizer::build({{"a", "b", "c", "d", "e"}}), cfg, 1);
  CHECK_THROWS_AS(enc.embed({3, 4, 5, 6}), std::invalid_argument);  // 5 > max_len with BOS

  EncoderConfig odd = tiny_cfg();
  odd.n_heads = 5;  // 32 % 5 != 0
  CHECK_THROWS_AS(ToyEncoder(Tokenizer::build({{"a"}}), odd, 1), std::invalid_argument);
}

TEST_SUITE_END();
