#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "codecipher/types.hpp"

namespace codecipher {

/// Reserved ids. Byte tokens follow at [kFirstByteId, kFirstByteId + 256).
enum SpecialToken : TokenId { kPad = 0, kBos = 1, kEos = 2, kUnk = 3 };
inline constexpr TokenId kNumSpecial = 4;
inline constexpr TokenId kFirstByteId = kNumSpecial;
inline constexpr std::size_t kByteLevelSize = kNumSpecial + 256;
inline constexpr std::size_t kDefaultVocabSize = 2048;

/// Byte-level BPE vocabulary. Immutable once built.
class Vocabulary {
 public:
  struct Merge {
    TokenId left;
    TokenId right;
    bool operator==(const Merge&) const = default;
  };

  /// Byte-level vocabulary with no merges.
  Vocabulary();

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::vector<Merge>& merges() const noexcept { return merges_; }

  /// Throws IndexError when `id` >= size().
  const std::string& token(TokenId id) const;
  /// Returns false when `text` is not a token.
  bool find(std::string_view text, TokenId& id) const;
  /// Throws IndexError when `text` is not a token.
  TokenId id_of(std::string_view text) const;

  static bool is_special(TokenId id) noexcept { return id < kNumSpecial; }
  static TokenId byte_id(unsigned char b) noexcept { return kFirstByteId + b; }

  /// Merges never cross chunk boundaries (see merge_chunks).
  TokenSeq encode(std::string_view text) const;
  /// Concatenated token strings with specials omitted. Throws IndexError on a bad id.
  std::string decode(const TokenSeq& ids) const;

  /// Text format: `bpe-vocab v1 <size>`, one escaped token per line, `#merges`,
  /// then `<left> <right>` per merge.
  void save(std::ostream& out) const;
  static Vocabulary load(std::istream& in);
  void save_file(const std::string& path) const;
  static Vocabulary load_file(const std::string& path);

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_ && merges_ == other.merges_;
  }

 private:
  friend Vocabulary train_vocab(const std::vector<std::string>& corpus, std::size_t target_size);

  void add_merge(Merge m);
  TokenSeq encode_chunk(std::string_view chunk) const;
  static std::uint64_t pair_key(TokenId a, TokenId b) noexcept {
    return (static_cast<std::uint64_t>(a) << 32) | b;
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> id_of_;
  std::vector<Merge> merges_;
  // pair -> (rank, merged id)
  std::unordered_map<std::uint64_t, std::pair<std::size_t, TokenId>> merge_rank_;
};

/// Learns merges within chunks (see merge_chunks). Most frequent adjacent pair
/// wins, ties to the smaller (left, right) id pair; stops at `target_size` or
/// when no pair occurs twice.
/// Throws InputError for an empty corpus or target_size < 260.
Vocabulary train_vocab(const std::vector<std::string>& corpus,
                       std::size_t target_size = kDefaultVocabSize);

/// Spans that BPE merges may not cross: lexical units, with a run of spaces
/// or tabs glued to the unit after it (" return", " +"). Runs containing a
/// newline stay on their own. The spans cover `text` in order.
std::vector<std::string_view> merge_chunks(std::string_view text);

std::string escape_token(std::string_view raw);
std::string unescape_token(std::string_view escaped);

// ---------------------------------------------------------------------------
// Lexical pass used by the rule-based baselines and the toy grammar.

enum class LexKind { identifier, keyword, symbol, literal, whitespace, comment };

struct LexUnit {
  std::string text;
  LexKind kind;
  std::size_t begin;  // byte offset, inclusive
  std::size_t end;    // byte offset, exclusive
  bool operator==(const LexUnit&) const = default;
};

const char* to_string(LexKind kind) noexcept;
bool is_keyword(std::string_view word) noexcept;
bool is_builtin(std::string_view word) noexcept;

/// Splits arbitrary bytes into covering, non-overlapping units. Never throws;
/// unrecognised bytes become one-byte symbols.
std::vector<LexUnit> lex(std::string_view text);

}  // namespace codecipher
