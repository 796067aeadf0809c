#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "codecipher/code_lm.hpp"
#include "codecipher/corpus.hpp"
#include "codecipher/error.hpp"
#include "codecipher/tokenizer.hpp"
#include "support.hpp"

using namespace codecipher;

namespace {

/// exp(mean −log softmax(logits[t])[x_{t+1}]), computed from the raw logits.
double perplexity_from_logits(const LMParams& p, const TokenSeq& x) {
  const Tensor2D z = logits(p, x);
  double nll = 0.0;
  for (std::size_t t = 0; t + 1 < x.size(); ++t) {
    double m = z(t, 0);
    for (std::size_t c = 1; c < z.cols(); ++c) m = std::max(m, z(t, c));
    double s = 0.0;
    for (std::size_t c = 0; c < z.cols(); ++c) s += std::exp(z(t, c) - m);
    nll += m + std::log(s) - z(t, x[t + 1]);
  }
  return std::exp(nll / static_cast<double>(x.size() - 1));
}

struct SmallSetup {
  Vocabulary vocab;
  std::vector<TokenSeq> train, held_out;
};

const SmallSetup& small_setup() {
  static const SmallSetup s = [] {
    SmallSetup out;
    const auto samples = generate_toy_corpus(160, 12);
    std::vector<std::string> train_codes;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (i % 10 != 0) train_codes.push_back(samples[i].code);
    }
    out.vocab = train_vocab(train_codes, 400);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      TokenSeq ids = out.vocab.encode(samples[i].code);
      if (ids.size() > 64) ids.resize(64);
      (i % 10 == 0 ? out.held_out : out.train).push_back(ids);
    }
    return out;
  }();
  return s;
}

LMConfig small_config(std::size_t vocab_size) {
  LMConfig c = support::tiny_config(vocab_size, 64);
  c.d_model = 32;
  c.n_heads = 4;
  return c;
}

}  // namespace

TEST_CASE("config validation") {
  LMConfig c = support::tiny_config(300);
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = support::tiny_config(300);
  c.context_len = 1;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = support::tiny_config(0);
  CHECK_THROWS_AS(c.validate(), InputError);
}

TEST_CASE("an untrained model is close to uniform") {
  const std::size_t v = 300;
  const LMParams p = init_params(support::tiny_config(v), 1);
  support::Gen g(2);
  const TokenSeq x = g.ids(20, kFirstByteId, v);
  const double ppl = perplexity(p, x);
  CHECK(ppl > 0.8 * v);
  CHECK(ppl < 1.2 * v);
  CHECK(task_nll(p, TokenSeq(x.begin(), x.begin() + 10), TokenSeq(x.begin() + 10, x.end())) ==
        doctest::Approx(std::log(static_cast<double>(v))).epsilon(0.05));

  // Zero training steps leave the initial weights in place.
  const std::vector<TokenSeq> corpus{x};
  CHECK(train_lm(corpus, support::tiny_config(v), 0, 1) == p);
}

TEST_CASE("input-embedding gradients match finite differences") {
  const std::size_t v = 64;
  const LMParams p = support::noisy_lm(v, 3);
  support::Gen g(4);
  const TokenSeq x = g.ids(6, 0, v), y = g.ids(5, 0, v);
  Tensor2D e = embed(p, x);
  const LossAndGrad lg = task_loss_and_grad(p, e, y);
  CHECK(lg.loss == doctest::Approx(task_loss(p, e, y)).epsilon(1e-12));
  REQUIRE(lg.grad.rows() == e.rows());
  REQUIRE(lg.grad.cols() == e.cols());
  for (int k = 0; k < 20; ++k) {
    const std::size_t i = g.index(e.size());
    const double numeric =
        support::central_difference([&] { return task_loss(p, e, y); }, e.values()[i], 1e-5);
    INFO("coordinate " << i << " analytic " << lg.grad.values()[i] << " numeric " << numeric);
    CHECK(support::close(lg.grad.values()[i], numeric));
  }
}

TEST_CASE("token path and embedding path agree") {
  const std::size_t v = 50;
  const LMParams p = support::noisy_lm(v, 5);
  support::Gen g(6);
  for (int trial = 0; trial < 10; ++trial) {
    const TokenSeq x = g.ids(1 + g.index(10), 0, v), y = g.ids(1 + g.index(10), 0, v);
    CHECK(task_nll(p, x, y) == task_loss(p, embed(p, x), y));
  }
}

TEST_CASE("perplexity identities") {
  const std::size_t v = 50;
  const LMParams p = support::noisy_lm(v, 7);
  support::Gen g(8);
  for (int trial = 0; trial < 10; ++trial) {
    const TokenSeq x = g.ids(2 + g.index(20), 0, v);
    const double ppl = perplexity(p, x);
    CHECK(ppl == doctest::Approx(perplexity_from_logits(p, x)).epsilon(1e-9));
    const TokenSeq head{x.front()}, rest(x.begin() + 1, x.end());
    CHECK(ppl == doctest::Approx(std::exp(task_nll(p, head, rest))).epsilon(1e-9));
    CHECK(ppl >= 1.0);
  }
  CHECK_THROWS_AS(perplexity(p, TokenSeq{5}), InputError);
  CHECK_THROWS_AS(perplexity(p, TokenSeq(33, 5)), InputError);
  CHECK_THROWS_AS(perplexity(p, TokenSeq{5, 50}), IndexError);
}

TEST_CASE("embedding lookup") {
  const LMParams p = support::noisy_lm(40, 9);
  const Tensor2D none = embed(p, {});
  CHECK(none.rows() == 0);
  const Tensor2D one = embed(p, {7});
  REQUIRE(one.rows() == 1);
  for (std::size_t c = 0; c < one.cols(); ++c) CHECK(one(0, c) == p.embedding(7, c));
  CHECK_THROWS_AS(embed(p, {40}), IndexError);
}

TEST_CASE("predictions are causal") {
  const std::size_t v = 50;
  const LMParams p = support::noisy_lm(v, 10);
  support::Gen g(11);
  const TokenSeq x = g.ids(12, 0, v);
  TokenSeq changed = x;
  for (std::size_t i = 7; i < changed.size(); ++i) changed[i] = static_cast<TokenId>((x[i] + 1) % v);
  const Tensor2D a = logits(p, x), b = logits(p, changed);
  for (std::size_t t = 0; t < 7; ++t)
    for (std::size_t c = 0; c < v; ++c) CHECK(a(t, c) == b(t, c));
}

TEST_CASE("pair fitting") {
  const LMConfig c = support::tiny_config(50, 8);
  CHECK_NOTHROW(check_pair_fits({TokenSeq(4, 5), TokenSeq(4, 5)}, c));
  CHECK_THROWS_AS(check_pair_fits({TokenSeq(5, 5), TokenSeq(4, 5)}, c), InputError);
  CHECK_THROWS_AS(check_pair_fits({TokenSeq{}, TokenSeq(4, 5)}, c), InputError);
  CHECK_THROWS_AS(check_pair_fits({TokenSeq(4, 5), TokenSeq{}}, c), InputError);
}

TEST_CASE("training beats a unigram model on held-out code") {
  const SmallSetup& s = small_setup();
  const LMConfig c = small_config(s.vocab.size());
  const LMParams p = train_lm(s.train, c, 250, 3);
  const double trained = corpus_perplexity(p, s.held_out);
  const double unigram = unigram_perplexity(s.train, s.held_out, s.vocab.size());
  INFO("trained " << trained << " unigram " << unigram);
  CHECK(trained < unigram);
}

TEST_CASE("a tiny corpus can be memorised") {
  std::vector<std::string> lines;
  for (int i = 0; i < 10; ++i) lines.push_back("x" + std::to_string(i) + " = " + std::to_string(i * 7) + "\n");
  const Vocabulary vocab = train_vocab(lines, 300);
  std::vector<TokenSeq> corpus;
  TokenSeq all;
  for (const auto& l : lines) {
    const TokenSeq ids = vocab.encode(l);
    all.insert(all.end(), ids.begin(), ids.end());
  }
  corpus.push_back(all);
  LMConfig c = small_config(vocab.size());
  c.context_len = all.size();
  LMTrainOptions opts;
  opts.batch_size = 1;
  opts.learning_rate = 1e-2;
  const LMParams p = train_lm(corpus, c, 300, 4, opts);
  CHECK(perplexity(p, all) < 1.5);
}

TEST_CASE("training is deterministic and checkpoints round-trip") {
  const SmallSetup& s = small_setup();
  LMConfig c = support::tiny_config(s.vocab.size(), 64);
  const LMParams a = train_lm(s.train, c, 20, 8);
  const LMParams b = train_lm(s.train, c, 20, 8);
  CHECK(a == b);
  CHECK_FALSE(a == train_lm(s.train, c, 20, 9));

  std::stringstream buf;
  a.save(buf);
  const std::string bytes = buf.str();
  CHECK(bytes.substr(0, 4) == "CCLM");
  CHECK(LMParams::load(buf) == a);

  std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(LMParams::load(truncated), FormatError);
  std::string bad = bytes;
  bad[0] = 'X';
  std::istringstream bad_magic(bad);
  CHECK_THROWS_AS(LMParams::load(bad_magic), FormatError);

  CHECK_THROWS_AS(train_lm({}, c, 5, 1), InputError);
  CHECK_THROWS_AS(train_lm({TokenSeq{static_cast<TokenId>(s.vocab.size())}}, c, 5, 1), IndexError);
}
