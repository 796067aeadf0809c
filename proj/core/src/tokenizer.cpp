#include "codecipher/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "codecipher/error.hpp"

namespace codecipher {

namespace {

constexpr const char* kSpecialNames[kNumSpecial] = {"<pad>", "<bos>", "<eos>", "<unk>"};

}  // namespace

std::vector<std::string_view> merge_chunks(std::string_view text) {
  std::vector<std::string_view> chunks;
  std::size_t pending = std::string_view::npos;  // start of a held-back space run
  for (const LexUnit& u : lex(text)) {
    const bool spaces = u.kind == LexKind::whitespace && u.text.find('\n') == std::string::npos;
    if (pending != std::string_view::npos) {
      if (u.kind == LexKind::whitespace) {
        chunks.push_back(text.substr(pending, u.begin - pending));
      } else {
        chunks.push_back(text.substr(pending, u.end - pending));
        pending = std::string_view::npos;
        continue;
      }
      pending = std::string_view::npos;
    }
    if (spaces) {
      pending = u.begin;
    } else {
      chunks.push_back(text.substr(u.begin, u.end - u.begin));
    }
  }
  if (pending != std::string_view::npos) chunks.push_back(text.substr(pending));
  return chunks;
}

Vocabulary::Vocabulary() {
  tokens_.reserve(kByteLevelSize);
  for (const char* name : kSpecialNames) tokens_.emplace_back(name);
  for (int b = 0; b < 256; ++b) tokens_.emplace_back(1, static_cast<char>(b));
  for (TokenId id = 0; id < tokens_.size(); ++id) id_of_.emplace(tokens_[id], id);
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) {
    throw IndexError("Vocabulary: id " + std::to_string(id) + " >= " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

bool Vocabulary::find(std::string_view text, TokenId& id) const {
  const auto it = id_of_.find(std::string(text));
  if (it == id_of_.end()) return false;
  id = it->second;
  return true;
}

TokenId Vocabulary::id_of(std::string_view text) const {
  TokenId id = 0;
  if (!find(text, id)) throw IndexError("Vocabulary: no token '" + escape_token(text) + "'");
  return id;
}

void Vocabulary::add_merge(Merge m) {
  const TokenId id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(tokens_[m.left] + tokens_[m.right]);
  id_of_.emplace(tokens_.back(), id);
  merge_rank_.emplace(pair_key(m.left, m.right), std::make_pair(merges_.size(), id));
  merges_.push_back(m);
}

TokenSeq Vocabulary::encode_chunk(std::string_view chunk) const {
  TokenSeq ids;
  ids.reserve(chunk.size());
  for (char c : chunk) ids.push_back(byte_id(static_cast<unsigned char>(c)));
  if (merges_.empty()) return ids;

  TokenSeq next;
  next.reserve(ids.size());
  while (ids.size() >= 2) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    TokenId best_left = 0, best_right = 0, best_id = 0;
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      const auto it = merge_rank_.find(pair_key(ids[i], ids[i + 1]));
      if (it != merge_rank_.end() && it->second.first < best_rank) {
        best_rank = it->second.first;
        best_left = ids[i];
        best_right = ids[i + 1];
        best_id = it->second.second;
      }
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    next.clear();
    for (std::size_t i = 0; i < ids.size();) {
      if (i + 1 < ids.size() && ids[i] == best_left && ids[i + 1] == best_right) {
        next.push_back(best_id);
        i += 2;
      } else {
        next.push_back(ids[i]);
        ++i;
      }
    }
    ids.swap(next);
  }
  return ids;
}

TokenSeq Vocabulary::encode(std::string_view text) const {
  TokenSeq ids;
  ids.reserve(text.size() / 2);
  for (std::string_view chunk : merge_chunks(text)) {
    const TokenSeq part = encode_chunk(chunk);
    ids.insert(ids.end(), part.begin(), part.end());
  }
  return ids;
}

std::string Vocabulary::decode(const TokenSeq& ids) const {
  std::string out;
  for (TokenId id : ids) {
    const std::string& t = token(id);
    if (!is_special(id)) out += t;
  }
  return out;
}

// ---------------------------------------------------------------------------
// training

Vocabulary train_vocab(const std::vector<std::string>& corpus, std::size_t target_size) {
  if (corpus.empty()) throw InputError("train_vocab: empty corpus");
  if (target_size < kByteLevelSize) {
    throw InputError("train_vocab: target size " + std::to_string(target_size) + " < " +
                     std::to_string(kByteLevelSize));
  }
  Vocabulary vocab;

  // Distinct chunks with their multiplicities, in first-seen order.
  std::vector<TokenSeq> seqs;
  std::vector<std::int64_t> weight;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& text : corpus) {
    for (std::string_view chunk : merge_chunks(text)) {
      const auto [it, fresh] = index.emplace(std::string(chunk), seqs.size());
      if (fresh) {
        TokenSeq s;
        s.reserve(chunk.size());
        for (char c : chunk) s.push_back(Vocabulary::byte_id(static_cast<unsigned char>(c)));
        seqs.push_back(std::move(s));
        weight.push_back(0);
      }
      ++weight[it->second];
    }
  }

  std::unordered_map<std::uint64_t, std::int64_t> counts;
  auto add_pairs = [&counts](const TokenSeq& s, std::int64_t w) {
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      counts[Vocabulary::pair_key(s[i], s[i + 1])] += w;
    }
  };
  for (std::size_t k = 0; k < seqs.size(); ++k) add_pairs(seqs[k], weight[k]);

  std::unordered_set<std::uint64_t> forbidden;
  TokenSeq next;
  while (vocab.size() < target_size) {
    std::uint64_t best_key = 0;
    std::int64_t best_count = 1;
    for (const auto& [key, count] : counts) {
      if (count > best_count || (count == best_count && count > 1 && key < best_key)) {
        if (forbidden.contains(key)) continue;
        best_key = key;
        best_count = count;
      }
    }
    if (best_count < 2) break;
    const TokenId left = static_cast<TokenId>(best_key >> 32);
    const TokenId right = static_cast<TokenId>(best_key & 0xffffffffu);
    // A merged string may collide with a special token name; never merge those.
    if (vocab.id_of_.contains(vocab.tokens_[left] + vocab.tokens_[right])) {
      forbidden.insert(best_key);
      continue;
    }
    vocab.add_merge({left, right});
    const TokenId merged = static_cast<TokenId>(vocab.size() - 1);

    for (std::size_t k = 0; k < seqs.size(); ++k) {
      TokenSeq& s = seqs[k];
      bool hit = false;
      for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        if (s[i] == left && s[i + 1] == right) {
          hit = true;
          break;
        }
      }
      if (!hit) continue;
      add_pairs(s, -weight[k]);
      next.clear();
      for (std::size_t i = 0; i < s.size();) {
        if (i + 1 < s.size() && s[i] == left && s[i + 1] == right) {
          next.push_back(merged);
          i += 2;
        } else {
          next.push_back(s[i++]);
        }
      }
      s.swap(next);
      add_pairs(s, weight[k]);
    }
    std::erase_if(counts, [](const auto& kv) { return kv.second == 0; });
  }
  return vocab;
}

// ---------------------------------------------------------------------------
// persistence

std::string escape_token(std::string_view raw) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(raw.size());
  for (char ch : raw) {
    const auto c = static_cast<unsigned char>(ch);
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (c < 0x20 || c >= 0x7f) {
          out += "\\x";
          out += kHex[c >> 4];
          out += kHex[c & 0xf];
        } else {
          out += ch;
        }
    }
  }
  return out;
}

std::string unescape_token(std::string_view escaped) {
  auto hex = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  std::string out;
  for (std::size_t i = 0; i < escaped.size(); ++i) {
    if (escaped[i] != '\\') {
      out += escaped[i];
      continue;
    }
    if (++i >= escaped.size()) throw FormatError("unescape_token: dangling backslash");
    switch (escaped[i]) {
      case '\\': out += '\\'; break;
      case 'n': out += '\n'; break;
      case 't': out += '\t'; break;
      case 'r': out += '\r'; break;
      case 'x': {
        if (i + 2 >= escaped.size()) {
          throw FormatError("unescape_token: truncated \\x escape");
        }
        const int hi = hex(escaped[i + 1]);
        const int lo = hex(escaped[i + 2]);
        if (hi < 0 || lo < 0) throw FormatError("unescape_token: bad \\x escape");
        out += static_cast<char>(hi * 16 + lo);
        i += 2;
        break;
      }
      default:
        throw FormatError(std::string("unescape_token: unknown escape \\") + escaped[i]);
    }
  }
  return out;
}

void Vocabulary::save(std::ostream& out) const {
  out << "bpe-vocab v1 " << tokens_.size() << '\n';
  for (const auto& t : tokens_) out << escape_token(t) << '\n';
  out << "#merges\n";
  for (const auto& m : merges_) out << m.left << ' ' << m.right << '\n';
}

Vocabulary Vocabulary::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("vocab: missing header");
  std::istringstream header(line);
  std::string magic, version;
  std::size_t size = 0;
  if (!(header >> magic >> version >> size) || magic != "bpe-vocab" || version != "v1") {
    throw FormatError("vocab: bad header '" + line + "'");
  }
  if (size < kByteLevelSize) throw FormatError("vocab: size below byte-level minimum");

  std::vector<std::string> tokens;
  tokens.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    if (!std::getline(in, line)) throw FormatError("vocab: truncated token list");
    tokens.push_back(unescape_token(line));
  }
  if (!std::getline(in, line) || line != "#merges") throw FormatError("vocab: missing #merges");

  Vocabulary v;
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (tokens[i] != v.tokens_[i]) {
      throw FormatError("vocab: reserved token " + std::to_string(i) + " does not match");
    }
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::uint64_t left = 0, right = 0;
    if (!(ls >> left >> right)) throw FormatError("vocab: bad merge line '" + line + "'");
    if (left >= v.size() || right >= v.size()) {
      throw FormatError("vocab: merge references unknown id");
    }
    const std::size_t id = v.size();
    if (id >= tokens.size()) throw FormatError("vocab: more merges than tokens");
    v.add_merge({static_cast<TokenId>(left), static_cast<TokenId>(right)});
    if (v.tokens_.back() != tokens[id]) {
      throw FormatError("vocab: merge " + std::to_string(v.merges_.size() - 1) +
                        " does not produce token " + std::to_string(id));
    }
  }
  if (v.size() != size) throw FormatError("vocab: merge count does not match size");
  if (v.id_of_.size() != v.tokens_.size()) throw FormatError("vocab: duplicate tokens");
  return v;
}

void Vocabulary::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write vocabulary to " + path);
  save(out);
}

Vocabulary Vocabulary::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read vocabulary from " + path);
  return load(in);
}

}  // namespace codecipher
