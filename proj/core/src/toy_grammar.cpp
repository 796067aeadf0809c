#include "codecipher/toy_grammar.hpp"

#include <stdexcept>
#include <vector>

#include "codecipher/tokenizer.hpp"

namespace codecipher {

namespace {

enum class T { name, keyword, number, string, op, newline, indent, dedent, end };

struct Tok {
  T type;
  std::string text;
  std::size_t offset;
};

struct SyntaxError {
  std::size_t offset;
  std::string message;
};

std::size_t indent_width(std::string_view ws) {
  std::size_t w = 0;
  for (char c : ws) w = c == '\t' ? (w / 8 + 1) * 8 : w + 1;
  return w;
}

std::vector<Tok> tokenize(std::string_view src) {
  struct Line {
    std::size_t indent;
    std::vector<Tok> toks;
  };
  std::vector<Line> lines;
  Line cur{0, {}};
  std::size_t pending_indent = 0;

  auto flush = [&] {
    if (!cur.toks.empty()) lines.push_back(std::move(cur));
    cur = Line{0, {}};
  };

  for (const LexUnit& u : lex(src)) {
    switch (u.kind) {
      case LexKind::whitespace: {
        const auto nl = u.text.rfind('\n');
        if (nl != std::string::npos) {
          flush();
          pending_indent = indent_width(std::string_view(u.text).substr(nl + 1));
        } else if (u.begin == 0) {
          pending_indent = indent_width(u.text);
        }
        break;
      }
      case LexKind::comment: break;
      default: {
        if (cur.toks.empty()) cur.indent = pending_indent;
        T type = T::op;
        if (u.kind == LexKind::identifier) type = T::name;
        if (u.kind == LexKind::keyword) type = T::keyword;
        if (u.kind == LexKind::literal) {
          const char c0 = u.text.front();
          if (c0 == '"' || c0 == '\'') {
            if (u.text.size() < 2 || u.text.back() != c0) {
              throw SyntaxError{u.begin, "unterminated string literal"};
            }
            type = T::string;
          } else {
            type = T::number;
          }
        }
        cur.toks.push_back({type, u.text, u.begin});
      }
    }
  }
  flush();

  std::vector<Tok> out;
  std::vector<std::size_t> stack{0};
  for (auto& line : lines) {
    const std::size_t off = line.toks.front().offset;
    if (line.indent > stack.back()) {
      stack.push_back(line.indent);
      out.push_back({T::indent, "", off});
    } else {
      while (line.indent < stack.back()) {
        stack.pop_back();
        out.push_back({T::dedent, "", off});
      }
      if (line.indent != stack.back()) throw SyntaxError{off, "inconsistent dedent"};
    }
    for (auto& t : line.toks) out.push_back(std::move(t));
    out.push_back({T::newline, "", src.size()});
  }
  while (stack.size() > 1) {
    stack.pop_back();
    out.push_back({T::dedent, "", src.size()});
  }
  out.push_back({T::end, "", src.size()});
  return out;
}

class Parser {
 public:
  explicit Parser(std::vector<Tok> toks) : toks_(std::move(toks)) {}

  void program() {
    while (!at(T::end)) {
      if (accept(T::newline)) continue;
      if (at(T::indent)) fail("unexpected indent");
      statement();
    }
  }

 private:
  const Tok& peek() const { return toks_[pos_]; }
  bool at(T type) const { return peek().type == type; }
  bool at(T type, std::string_view text) const {
    return peek().type == type && peek().text == text;
  }
  bool at_op(std::string_view text) const { return at(T::op, text); }
  bool at_kw(std::string_view text) const { return at(T::keyword, text); }

  bool accept(T type) {
    if (!at(type)) return false;
    ++pos_;
    return true;
  }
  bool accept_op(std::string_view text) {
    if (!at_op(text)) return false;
    ++pos_;
    return true;
  }
  bool accept_kw(std::string_view text) {
    if (!at_kw(text)) return false;
    ++pos_;
    return true;
  }

  [[noreturn]] void fail(const std::string& what) const {
    const Tok& t = peek();
    throw SyntaxError{t.offset, what + (t.text.empty() ? "" : " near '" + t.text + "'")};
  }
  void expect(T type, const char* what) {
    if (!accept(type)) fail(std::string("expected ") + what);
  }
  void expect_op(std::string_view text) {
    if (!accept_op(text)) fail("expected '" + std::string(text) + "'");
  }

  void statement() {
    if (accept_kw("def")) {
      expect(T::name, "function name");
      expect_op("(");
      if (!at_op(")")) {
        do {
          expect(T::name, "parameter name");
        } while (accept_op(","));
      }
      expect_op(")");
      expect_op(":");
      suite();
    } else if (accept_kw("if")) {
      expression();
      expect_op(":");
      suite();
      while (accept_kw("elif")) {
        expression();
        expect_op(":");
        suite();
      }
      if (accept_kw("else")) {
        expect_op(":");
        suite();
      }
    } else if (accept_kw("while")) {
      expression();
      expect_op(":");
      suite();
    } else if (accept_kw("for")) {
      expect(T::name, "loop variable");
      if (!accept_kw("in")) fail("expected 'in'");
      expression();
      expect_op(":");
      suite();
    } else {
      simple_statement();
      expect(T::newline, "end of line");
    }
  }

  void suite() {
    if (accept(T::newline)) {
      expect(T::indent, "indented block");
      do {
        statement();
      } while (!at(T::dedent) && !at(T::end));
      expect(T::dedent, "dedent");
    } else {
      simple_statement();
      expect(T::newline, "end of line");
    }
  }

  void simple_statement() {
    if (accept_kw("return")) {
      if (!at(T::newline)) expression();
      return;
    }
    if (accept_kw("pass") || accept_kw("break") || accept_kw("continue")) return;
    const bool assignable = expression();
    static constexpr std::string_view kAssignOps[] = {"=",  "+=", "-=",  "*=", "/=",
                                                      "//=", "%=", "**="};
    for (std::string_view op : kAssignOps) {
      if (at_op(op)) {
        if (!assignable) fail("cannot assign to expression");
        ++pos_;
        expression();
        return;
      }
    }
  }

  // Returns whether the parsed expression is an assignment target.
  bool expression() { return or_expr(); }

  bool or_expr() {
    bool target = and_expr();
    while (accept_kw("or")) {
      and_expr();
      target = false;
    }
    return target;
  }

  bool and_expr() {
    bool target = not_expr();
    while (accept_kw("and")) {
      not_expr();
      target = false;
    }
    return target;
  }

  bool not_expr() {
    if (accept_kw("not")) {
      not_expr();
      return false;
    }
    return comparison();
  }

  bool comparison() {
    bool target = arith();
    for (;;) {
      if (accept_op("==") || accept_op("!=") || accept_op("<") || accept_op(">") ||
          accept_op("<=") || accept_op(">=") || accept_kw("in")) {
      } else if (at_kw("not") && toks_[pos_ + 1].type == T::keyword &&
                 toks_[pos_ + 1].text == "in") {
        pos_ += 2;
      } else if (accept_kw("is")) {
        accept_kw("not");
      } else {
        return target;
      }
      arith();
      target = false;
    }
  }

  bool arith() {
    bool target = term();
    while (accept_op("+") || accept_op("-")) {
      term();
      target = false;
    }
    return target;
  }

  bool term() {
    bool target = factor();
    while (accept_op("*") || accept_op("/") || accept_op("//") || accept_op("%")) {
      factor();
      target = false;
    }
    return target;
  }

  bool factor() {
    if (accept_op("-") || accept_op("+")) {
      factor();
      return false;
    }
    return power();
  }

  bool power() {
    bool target = primary();
    if (accept_op("**")) {
      factor();
      target = false;
    }
    return target;
  }

  bool primary() {
    bool target = atom();
    for (;;) {
      if (accept_op("(")) {
        if (!at_op(")")) {
          do {
            expression();
          } while (accept_op(","));
        }
        expect_op(")");
        target = false;
      } else if (accept_op("[")) {
        expression();
        expect_op("]");
        target = true;
      } else if (accept_op(".")) {
        expect(T::name, "attribute name");
        target = true;
      } else {
        return target;
      }
    }
  }

  bool atom() {
    if (accept(T::name)) return true;
    if (accept(T::number) || accept(T::string)) return false;
    if (accept_kw("True") || accept_kw("False") || accept_kw("None")) return false;
    if (accept_op("(")) {
      expression();
      expect_op(")");
      return false;
    }
    if (accept_op("[")) {
      if (!at_op("]")) {
        do {
          expression();
        } while (accept_op(","));
      }
      expect_op("]");
      return false;
    }
    fail("expected expression");
  }

  std::vector<Tok> toks_;
  std::size_t pos_ = 0;
};

}  // namespace

ParseResult parse_program(std::string_view source) {
  try {
    Parser p(tokenize(source));
    p.program();
    return {};
  } catch (const SyntaxError& e) {
    return {false, e.offset, e.message};
  }
}

}  // namespace codecipher
