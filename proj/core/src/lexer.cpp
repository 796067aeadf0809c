#include <algorithm>
#include <array>
#include <cctype>

#include "codecipher/tokenizer.hpp"

namespace codecipher {

namespace {

constexpr std::array<std::string_view, 33> kKeywords = {
    "False",  "None",     "True",  "and",    "as",     "assert", "break",
    "class",  "continue", "def",   "del",    "elif",   "else",   "except",
    "finally", "for",     "from",  "global", "if",     "import", "in",
    "is",     "lambda",   "nonlocal", "not", "or",     "pass",   "raise",
    "return", "try",      "while", "with",   "yield"};

constexpr std::array<std::string_view, 24> kBuiltins = {
    "abs",   "all",   "any",    "bool", "dict",  "enumerate", "float", "int",
    "len",   "list",  "max",    "min",  "print", "range",     "reversed", "round",
    "set",   "sorted", "str",   "sum",  "tuple", "zip",       "isinstance", "map"};

constexpr std::array<std::string_view, 14> kMultiCharOps = {
    "**=", "//=", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", "**", "//", "->"};

bool ident_start(unsigned char c) { return std::isalpha(c) || c == '_'; }
bool ident_char(unsigned char c) { return std::isalnum(c) || c == '_'; }
bool space_char(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

}  // namespace

const char* to_string(LexKind kind) noexcept {
  switch (kind) {
    case LexKind::identifier: return "identifier";
    case LexKind::keyword: return "keyword";
    case LexKind::symbol: return "symbol";
    case LexKind::literal: return "literal";
    case LexKind::whitespace: return "whitespace";
    case LexKind::comment: return "comment";
  }
  return "unknown";
}

bool is_keyword(std::string_view word) noexcept {
  return std::find(kKeywords.begin(), kKeywords.end(), word) != kKeywords.end();
}

bool is_builtin(std::string_view word) noexcept {
  return std::find(kBuiltins.begin(), kBuiltins.end(), word) != kBuiltins.end();
}

std::vector<LexUnit> lex(std::string_view text) {
  std::vector<LexUnit> units;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto emit = [&](std::size_t begin, std::size_t end, LexKind kind) {
    units.push_back({std::string(text.substr(begin, end - begin)), kind, begin, end});
  };
  while (i < n) {
    const auto c = static_cast<unsigned char>(text[i]);
    const std::size_t start = i;
    if (space_char(c)) {
      while (i < n && space_char(static_cast<unsigned char>(text[i]))) ++i;
      emit(start, i, LexKind::whitespace);
    } else if (c == '#') {
      while (i < n && text[i] != '\n') ++i;
      emit(start, i, LexKind::comment);
    } else if (ident_start(c)) {
      while (i < n && ident_char(static_cast<unsigned char>(text[i]))) ++i;
      emit(start, i, is_keyword(text.substr(start, i - start)) ? LexKind::keyword
                                                                : LexKind::identifier);
    } else if (std::isdigit(c) ||
               (c == '.' && i + 1 < n && std::isdigit(static_cast<unsigned char>(text[i + 1])))) {
      while (i < n && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
      if (i < n && text[i] == '.') {
        ++i;
        while (i < n && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
      }
      emit(start, i, LexKind::literal);
    } else if (c == '"' || c == '\'') {
      ++i;
      // Unterminated strings stop at end of line.
      while (i < n && text[i] != static_cast<char>(c) && text[i] != '\n') {
        if (text[i] == '\\' && i + 1 < n && text[i + 1] != '\n') ++i;
        ++i;
      }
      if (i < n && text[i] == static_cast<char>(c)) ++i;
      emit(start, i, LexKind::literal);
    } else {
      std::size_t len = 1;
      for (std::string_view op : kMultiCharOps) {
        if (text.substr(i, op.size()) == op) {
          len = op.size();
          break;
        }
      }
      i += len;
      emit(start, i, LexKind::symbol);
    }
  }
  return units;
}

}  // namespace codecipher
