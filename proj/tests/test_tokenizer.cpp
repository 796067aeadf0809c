#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "codecipher/corpus.hpp"
#include "codecipher/error.hpp"
#include "codecipher/tokenizer.hpp"
#include "support.hpp"

using namespace codecipher;

namespace {

/// Naive BPE over strings: recount every adjacent pair of every chunk
/// occurrence each round, take the most frequent (ties to the smaller id
/// pair), skip pairs whose concatenation is already a token, stop below 2.
std::vector<Vocabulary::Merge> naive_bpe(const std::vector<std::string>& corpus,
                                         std::size_t target) {
  std::vector<std::string> tokens = Vocabulary().tokens();
  std::map<std::string, TokenId> id;
  for (TokenId i = 0; i < tokens.size(); ++i) id[tokens[i]] = i;
  std::vector<std::vector<TokenId>> words;
  for (const auto& line : corpus) {
    for (auto chunk : merge_chunks(line)) {
      std::vector<TokenId> w;
      for (unsigned char c : chunk) w.push_back(kFirstByteId + c);
      words.push_back(w);
    }
  }
  std::vector<Vocabulary::Merge> merges;
  while (tokens.size() < target) {
    std::map<std::pair<TokenId, TokenId>, long> counts;
    for (const auto& w : words)
      for (std::size_t i = 0; i + 1 < w.size(); ++i) ++counts[{w[i], w[i + 1]}];
    std::pair<TokenId, TokenId> best{};
    long best_count = 1;
    for (const auto& [pair, count] : counts) {  // map order = ascending pair
      if (count > best_count && !id.count(tokens[pair.first] + tokens[pair.second])) {
        best = pair;
        best_count = count;
      }
    }
    if (best_count < 2) break;
    const auto merged = static_cast<TokenId>(tokens.size());
    tokens.push_back(tokens[best.first] + tokens[best.second]);
    id[tokens.back()] = merged;
    merges.push_back({best.first, best.second});
    for (auto& w : words) {
      std::vector<TokenId> out;
      for (std::size_t i = 0; i < w.size();) {
        if (i + 1 < w.size() && w[i] == best.first && w[i + 1] == best.second) {
          out.push_back(merged);
          i += 2;
        } else {
          out.push_back(w[i++]);
        }
      }
      w = out;
    }
  }
  return merges;
}

std::vector<std::string> toy_codes(std::size_t n, std::uint64_t seed) {
  std::vector<std::string> out;
  for (const auto& s : generate_toy_corpus(n, seed)) out.push_back(s.code);
  return out;
}

std::vector<LexKind> kinds(std::string_view text) {
  std::vector<LexKind> out;
  for (const auto& u : lex(text)) out.push_back(u.kind);
  return out;
}

}  // namespace

TEST_CASE("a corpus of repeated 'aa' merges 'aa' first") {
  const Vocabulary v = train_vocab({"aa aa aa"}, 300);
  TokenId id = 0;
  REQUIRE(v.find("aa", id));
  // (a, a) occurs three times, (space, a) twice: it is the first merge.
  REQUIRE(!v.merges().empty());
  CHECK(v.merges().front() == Vocabulary::Merge{Vocabulary::byte_id('a'), Vocabulary::byte_id('a')});
  CHECK(v.encode("aa") == TokenSeq{id});
}

TEST_CASE("merge list matches a naive BPE trainer") {
  support::Gen g(21);
  for (int trial = 0; trial < 6; ++trial) {
    std::vector<std::string> corpus;
    const std::size_t lines = 1 + g.index(6);
    for (std::size_t i = 0; i < lines; ++i) corpus.push_back(g.text(40, "ab c\n(x)=:"));
    corpus.push_back("abab ab");
    const std::size_t target = kByteLevelSize + 1 + g.index(30);
    const Vocabulary v = train_vocab(corpus, target);
    CHECK(v.merges() == naive_bpe(corpus, target));
  }
  const auto codes = toy_codes(20, 3);
  CHECK(train_vocab(codes, 400).merges() == naive_bpe(codes, 400));
}

TEST_CASE("vocabulary size limits") {
  const Vocabulary byte_level = train_vocab({"def f(): return 1"}, kByteLevelSize);
  CHECK(byte_level.size() == kByteLevelSize);
  CHECK(byte_level.merges().empty());
  CHECK_THROWS_AS(train_vocab({}, 300), InputError);
  CHECK_THROWS_AS(train_vocab({"x"}, kByteLevelSize - 1), InputError);
  const Vocabulary capped = train_vocab(toy_codes(50, 1), 300);
  CHECK(capped.size() == 300);
}

TEST_CASE("training is deterministic") {
  const auto codes = toy_codes(40, 9);
  CHECK(train_vocab(codes, 500) == train_vocab(codes, 500));
}

TEST_CASE("encode and decode examples") {
  const Vocabulary v = train_vocab(toy_codes(60, 4), 600);
  CHECK(v.encode("").empty());
  CHECK(v.decode({}).empty());

  const Vocabulary defs = train_vocab({"def f():\n    pass\n", "def g():\n    pass\n", "def h(): pass"}, 400);
  TokenId def_id = 0;
  REQUIRE(defs.find("def", def_id));
  CHECK(defs.encode("def f():").front() == def_id);

  const Vocabulary parts = train_vocab({"ret", "ret", "urn", "urn"}, 300);
  CHECK(parts.decode({parts.id_of("ret"), parts.id_of("urn")}) == "return");

  CHECK(v.decode({kBos, v.id_of("d"), kEos, kPad}) == "d");
  CHECK_THROWS_AS(v.decode({static_cast<TokenId>(v.size())}), IndexError);
  CHECK_THROWS_AS(v.id_of("\x01\x02\x03 not a token"), IndexError);
}

TEST_CASE("round trip and determinism on arbitrary text") {
  const auto codes = toy_codes(80, 6);
  const Vocabulary v = train_vocab(codes, 700);
  for (const auto& c : codes) CHECK(v.decode(v.encode(c)) == c);
  support::Gen g(8);
  for (int trial = 0; trial < 300; ++trial) {
    const std::string s = trial % 2 ? g.bytes(60) : g.text(80, "def ret(urn):\n\t x=1+2#'\"");
    const TokenSeq ids = v.encode(s);
    CHECK(v.decode(ids) == s);
    CHECK(v.encode(s) == ids);
    for (TokenId id : ids) CHECK(!Vocabulary::is_special(id));
  }
}

TEST_CASE("merges stay inside chunks") {
  const auto chunks = merge_chunks("def f(a):\n    return a + 1\n");
  std::string joined;
  for (auto c : chunks) joined += c;
  CHECK(joined == "def f(a):\n    return a + 1\n");
  CHECK(std::find(chunks.begin(), chunks.end(), std::string_view(" a")) != chunks.end());
  CHECK(std::find(chunks.begin(), chunks.end(), std::string_view("return")) != chunks.end());
  CHECK(std::find(chunks.begin(), chunks.end(), std::string_view("\n    ")) != chunks.end());
  CHECK(std::find(chunks.begin(), chunks.end(), std::string_view(" +")) != chunks.end());

  const Vocabulary v = train_vocab(toy_codes(80, 2), 700);
  const std::string code = "def f(a):\n    return a + 1\n";
  std::size_t offset = 0;
  std::set<std::size_t> boundaries{0};
  for (auto c : merge_chunks(code)) boundaries.insert(offset += c.size());
  offset = 0;
  for (TokenId id : v.encode(code)) {
    CHECK(boundaries.count(offset) == 1);
    const std::size_t end = offset + v.token(id).size();
    // A token never straddles a boundary.
    CHECK(std::none_of(boundaries.begin(), boundaries.end(),
                       [&](std::size_t b) { return b > offset && b < end; }));
    offset = end;
  }
}

TEST_CASE("vocabulary persistence") {
  const Vocabulary v = train_vocab(toy_codes(30, 5), 450);
  std::stringstream s;
  v.save(s);
  CHECK(Vocabulary::load(s) == v);

  std::istringstream bad_header("bpe-vocab v9 300\n");
  CHECK_THROWS_AS(Vocabulary::load(bad_header), FormatError);
  std::istringstream truncated("bpe-vocab v1 300\n<pad>\n");
  CHECK_THROWS_AS(Vocabulary::load(truncated), FormatError);

  support::Gen g(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::string raw = g.bytes(12);
    const std::string esc = escape_token(raw);
    CHECK(esc.find('\n') == std::string::npos);
    CHECK(esc.find('\t') == std::string::npos);
    CHECK(unescape_token(esc) == raw);
  }
  CHECK_THROWS_AS(unescape_token("ab\\"), FormatError);
  CHECK_THROWS_AS(unescape_token("\\q"), FormatError);
}

TEST_CASE("lexer examples") {
  const auto units = lex("x = 1");
  REQUIRE(units.size() == 5);
  CHECK(kinds("x = 1") == std::vector<LexKind>{LexKind::identifier, LexKind::whitespace,
                                              LexKind::symbol, LexKind::whitespace,
                                              LexKind::literal});
  CHECK(units[0].text == "x");
  CHECK(units[2].text == "=");
  CHECK(units[4].text == "1");
  CHECK(kinds("def foo(a):") ==
        std::vector<LexKind>{LexKind::keyword, LexKind::whitespace, LexKind::identifier,
                             LexKind::symbol, LexKind::identifier, LexKind::symbol,
                             LexKind::symbol});
  CHECK(lex("").empty());
}

TEST_CASE("lex covers arbitrary bytes") {
  support::Gen g(17);
  for (int trial = 0; trial < 500; ++trial) {
    const std::string s = trial % 2 ? g.bytes(50) : g.text(60, "ab1 _.'\"#\n\\=+<>(),:");
    std::string joined;
    std::size_t at = 0;
    for (const auto& u : lex(s)) {
      CHECK(u.begin == at);
      CHECK(u.end > u.begin);
      CHECK(u.text == s.substr(u.begin, u.end - u.begin));
      joined += u.text;
      at = u.end;
    }
    CHECK(joined == s);
  }
}
