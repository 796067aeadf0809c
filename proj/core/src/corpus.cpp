#include "codecipher/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <random>
#include <string_view>

#include <nlohmann/json.hpp>

#include "codecipher/error.hpp"
#include "codecipher/toy_grammar.hpp"

namespace codecipher {

namespace {

using Rng = std::mt19937_64;

template <std::size_t N>
std::string pick(const std::array<std::string_view, N>& pool, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, N - 1);
  return std::string(pool[d(rng)]);
}

int pick_int(int lo, int hi, Rng& rng) {
  std::uniform_int_distribution<int> d(lo, hi);
  return d(rng);
}

/// Draws names from `pool` without repeats within one snippet.
class NamePicker {
 public:
  explicit NamePicker(Rng& rng) : rng_(rng) {}

  template <std::size_t N>
  std::string operator()(const std::array<std::string_view, N>& pool) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      std::string n = pick(pool, rng_);
      if (std::find(used_.begin(), used_.end(), n) == used_.end()) {
        used_.push_back(n);
        return n;
      }
    }
    std::string n = pick(pool, rng_) + std::to_string(used_.size());
    used_.push_back(n);
    return n;
  }

 private:
  Rng& rng_;
  std::vector<std::string> used_;
};

constexpr std::array<std::string_view, 16> kVerbs = {
    "compute", "get",   "find",  "make",  "calc",    "build", "count",  "check",
    "apply",   "merge", "scale", "total", "collect", "pick",  "process", "update"};
constexpr std::array<std::string_view, 14> kNouns = {
    "value", "values", "items", "score",  "total", "result", "number",
    "sum",   "data",   "list",  "amount", "price", "count",  "record"};
constexpr std::array<std::string_view, 12> kScalars = {"a",     "b",     "x",    "y",
                                                       "n",     "m",     "value", "num",
                                                       "limit", "start", "step",  "size"};
constexpr std::array<std::string_view, 10> kLists = {"items",  "values", "nums",  "data",
                                                     "scores", "prices", "xs",    "numbers",
                                                     "counts", "records"};
constexpr std::array<std::string_view, 8> kElems = {"item", "v", "x", "num", "entry", "elem",
                                                    "val",  "e"};
constexpr std::array<std::string_view, 10> kAccs = {"total", "result", "acc", "out", "res",
                                                    "best",  "answer", "tmp", "cur", "ret"};
constexpr std::array<std::string_view, 6> kStrings = {"text", "s", "word", "name", "line",
                                                      "msg"};
constexpr std::array<std::string_view, 5> kChars = {"ch", "c", "letter", "char", "sym"};
constexpr std::array<std::string_view, 6> kIndices = {"i", "j", "k", "idx", "pos", "index"};
constexpr std::array<std::string_view, 8> kComments = {
    "# simple helper",    "# loop over input", "# compute the answer", "# TODO: speed up",
    "# handle edge case", "# main logic",      "# accumulate",          "# return early"};

struct Op {
  std::string_view sym;
  std::string_view desc;
};
constexpr std::array<Op, 5> kOps = {{{"+", "the sum"},
                                     {"-", "the difference"},
                                     {"*", "the product"},
                                     {"//", "the integer quotient"},
                                     {"%", "the remainder"}}};
constexpr std::array<Op, 4> kCmps = {{{">", "greater than"},
                                      {"<", "less than"},
                                      {">=", "at least"},
                                      {"<=", "at most"}}};

std::string func_name(Rng& rng) { return pick(kVerbs, rng) + "_" + pick(kNouns, rng); }

std::string maybe_comment(Rng& rng, const std::string& indent) {
  if (pick_int(0, 9, rng) < 3) return indent + pick(kComments, rng) + "\n";
  return "";
}

using Snippet = std::pair<std::string, std::string>;

Snippet make_snippet(int kind, Rng& rng) {
  NamePicker nm(rng);
  const std::string f = func_name(rng);
  const std::string c = maybe_comment(rng, "    ");
  switch (kind) {
    case 0: {
      const auto a = nm(kScalars), b = nm(kScalars), r = nm(kAccs);
      const Op& op = kOps[static_cast<std::size_t>(pick_int(0, 4, rng))];
      return {"def " + f + "(" + a + ", " + b + "):\n" + c + "    " + r + " = " + a + " " +
                  std::string(op.sym) + " " + b + "\n    return " + r + "\n",
              "Return " + std::string(op.desc) + " of " + a + " and " + b + "."};
    }
    case 1: {
      const auto xs = nm(kLists), x = nm(kElems), acc = nm(kAccs);
      return {"def " + f + "(" + xs + "):\n" + c + "    " + acc + " = 0\n    for " + x + " in " +
                  xs + ":\n        " + acc + " += " + x + "\n    return " + acc + "\n",
              "Sum the elements of " + xs + "."};
    }
    case 2: {
      const auto xs = nm(kLists), t = nm(kScalars), x = nm(kElems), out = nm(kAccs);
      const Op& cmp = kCmps[static_cast<std::size_t>(pick_int(0, 3, rng))];
      return {"def " + f + "(" + xs + ", " + t + "):\n" + c + "    " + out + " = []\n    for " +
                  x + " in " + xs + ":\n        if " + x + " " + std::string(cmp.sym) + " " + t +
                  ":\n            " + out + ".append(" + x + ")\n    return " + out + "\n",
              "Keep the elements of " + xs + " " + std::string(cmp.desc) + " " + t + "."};
    }
    case 3: {
      const auto xs = nm(kLists), x = nm(kElems), best = nm(kAccs);
      const bool is_max = pick_int(0, 1, rng) == 0;
      return {"def " + f + "(" + xs + "):\n" + c + "    " + best + " = " + xs +
                  "[0]\n    for " + x + " in " + xs + ":\n        if " + x +
                  (is_max ? " > " : " < ") + best + ":\n            " + best + " = " + x +
                  "\n    return " + best + "\n",
              std::string("Return the ") + (is_max ? "largest" : "smallest") + " element of " +
                  xs + "."};
    }
    case 4: {
      const auto s = nm(kStrings), ch = nm(kChars), target = nm(kChars), n = nm(kAccs);
      return {"def " + f + "(" + s + ", " + target + "):\n" + c + "    " + n + " = 0\n    for " +
                  ch + " in " + s + ":\n        if " + ch + " == " + target + ":\n            " +
                  n + " += 1\n    return " + n + "\n",
              "Count how often " + target + " occurs in " + s + "."};
    }
    case 5: {
      const auto n = nm(kScalars), r = nm(kAccs);
      return {"def " + f + "(" + n + "):\n" + c + "    " + r + " = 1\n    while " + n +
                  " > 1:\n        " + r + " = " + r + " * " + n + "\n        " + n + " = " + n +
                  " - 1\n    return " + r + "\n",
              "Return the factorial of " + n + "."};
    }
    case 6: {
      const auto n = nm(kScalars);
      const int k = pick_int(2, 5, rng);
      return {"def " + f + "(" + n + "):\n" + c + "    if " + n + " % " + std::to_string(k) +
                  " == 0:\n        return True\n    else:\n        return False\n",
              "Check whether " + n + " is divisible by " + std::to_string(k) + "."};
    }
    case 7: {
      const auto x = nm(kScalars), lo = nm(kScalars), hi = nm(kScalars);
      return {"def " + f + "(" + x + ", " + lo + ", " + hi + "):\n" + c + "    if " + x + " < " +
                  lo + ":\n        return " + lo + "\n    if " + x + " > " + hi +
                  ":\n        return " + hi + "\n    return " + x + "\n",
              "Clamp " + x + " between " + lo + " and " + hi + "."};
    }
    case 8: {
      const auto s = nm(kStrings), ch = nm(kChars), r = nm(kAccs);
      return {"def " + f + "(" + s + "):\n" + c + "    " + r + " = \"\"\n    for " + ch +
                  " in " + s + ":\n        " + r + " = " + ch + " + " + r + "\n    return " + r +
                  "\n",
              "Reverse the string " + s + "."};
    }
    case 9: {
      const auto n = nm(kScalars), a = nm(kAccs), b = nm(kAccs), t = nm(kAccs),
                 i = nm(kIndices);
      return {"def " + f + "(" + n + "):\n" + c + "    " + a + " = 0\n    " + b +
                  " = 1\n    for " + i + " in range(" + n + "):\n        " + t + " = " + a +
                  " + " + b + "\n        " + a + " = " + b + "\n        " + b + " = " + t +
                  "\n    return " + a + "\n",
              "Return the " + n + "-th Fibonacci number."};
    }
    case 10: {
      const auto xs = nm(kLists), k = nm(kScalars), x = nm(kElems), out = nm(kAccs);
      const Op& op = kOps[static_cast<std::size_t>(pick_int(0, 2, rng))];
      return {"def " + f + "(" + xs + ", " + k + "):\n" + c + "    " + out + " = []\n    for " +
                  x + " in " + xs + ":\n        " + out + ".append(" + x + " " +
                  std::string(op.sym) + " " + k + ")\n    return " + out + "\n",
              "Combine every element of " + xs + " with " + k + "."};
    }
    case 11: {
      const auto name = nm(kStrings), msg = nm(kAccs);
      constexpr std::array<std::string_view, 5> greet = {"Hello", "Hi", "Welcome", "Goodbye",
                                                         "Hey"};
      const auto g = pick(greet, rng);
      return {"def " + f + "(" + name + "):\n" + c + "    " + msg + " = \"" + g + ", \" + " +
                  name + "\n    print(" + msg + ")\n    return " + msg + "\n",
              "Print a greeting for " + name + "."};
    }
    case 12: {
      const auto xs = nm(kLists), total = nm(kAccs);
      return {"def " + f + "(" + xs + "):\n" + c + "    if len(" + xs +
                  ") == 0:\n        return 0\n    " + total + " = sum(" + xs + ")\n    return " +
                  total + " / len(" + xs + ")\n",
              "Return the average of " + xs + "."};
    }
    case 13: {
      const auto x = nm(kScalars);
      const int c1 = pick_int(1, 9, rng), c2 = pick_int(0, 9, rng), c3 = pick_int(0, 20, rng);
      return {"def " + f + "(" + x + "):\n" + c + "    return " + std::to_string(c1) + " * " + x +
                  " * " + x + " + " + std::to_string(c2) + " * " + x + " + " +
                  std::to_string(c3) + "\n",
              "Evaluate a quadratic polynomial at " + x + "."};
    }
    case 14: {
      const auto xs = nm(kLists), target = nm(kScalars), i = nm(kIndices);
      return {"def " + f + "(" + xs + ", " + target + "):\n" + c + "    " + i +
                  " = 0\n    while " + i + " < len(" + xs + "):\n        if " + xs + "[" + i +
                  "] == " + target + ":\n            return " + i + "\n        " + i +
                  " += 1\n    return -1\n",
              "Return the index of " + target + " in " + xs + "."};
    }
    case 15: {
      const auto s = nm(kStrings), ch = nm(kChars), n = nm(kAccs);
      return {"def " + f + "(" + s + "):\n" + c + "    " + n + " = 0\n    for " + ch + " in " +
                  s + ":\n        if " + ch + " in \"aeiou\":\n            " + n +
                  " += 1\n    return " + n + "\n",
              "Count the vowels in " + s + "."};
    }
    case 16: {
      const auto n = nm(kScalars), out = nm(kAccs), i = nm(kIndices);
      const int p = pick_int(2, 3, rng);
      return {"def " + f + "(" + n + "):\n" + c + "    " + out + " = []\n    for " + i +
                  " in range(" + n + "):\n        " + out + ".append(" + i + " ** " +
                  std::to_string(p) + ")\n    return " + out + "\n",
              "List the powers of the numbers below " + n + "."};
    }
    default: {
      const auto n = nm(kScalars), i = nm(kIndices);
      return {"def " + f + "(" + n + "):\n" + c + "    if " + n + " < 2:\n        return False\n    " +
                  i + " = 2\n    while " + i + " * " + i + " <= " + n + ":\n        if " + n +
                  " % " + i + " == 0:\n            return False\n        " + i +
                  " += 1\n    return True\n",
              "Check whether " + n + " is a prime number."};
    }
  }
}

constexpr int kTemplateCount = 18;

Split assign_split(std::size_t rank, std::size_t held_out) {
  return rank < held_out ? Split::held_out : Split::train;
}

}  // namespace

std::vector<const CodeSample*> Corpus::split(Split which) const {
  std::vector<const CodeSample*> out;
  for (const auto& s : samples) {
    if (s.split == which) out.push_back(&s);
  }
  return out;
}

std::vector<std::string> Corpus::codes(Split which) const {
  std::vector<std::string> out;
  for (const auto& s : samples) {
    if (s.split == which) out.push_back(s.code);
  }
  return out;
}

Corpus ingest_lines(const std::vector<std::string>& lines, std::uint64_t seed) {
  Corpus corpus;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(i + 1);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where + ": invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw FormatError(where + ": expected a JSON object");
    if (!j.contains("code") || !j["code"].is_string()) {
      throw FormatError(where + ": missing string field 'code'");
    }
    CodeSample s;
    s.code = j["code"].get<std::string>();
    if (j.contains("docstring") && !j["docstring"].is_null()) {
      if (!j["docstring"].is_string()) throw FormatError(where + ": 'docstring' must be a string");
      s.docstring = j["docstring"].get<std::string>();
    }
    corpus.samples.push_back(std::move(s));
  }
  if (corpus.samples.empty()) throw InputError("ingest: corpus is empty");

  const std::size_t n = corpus.samples.size();
  const std::size_t held_out = (n + 5) / 10;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t rank = 0; rank < n; ++rank) {
    corpus.samples[order[rank]].split = assign_split(rank, held_out);
  }

  std::size_t ok = 0;
  for (const auto& s : corpus.samples) {
    if (parse_program(s.code).ok) ++ok;
  }
  corpus.parse_fraction = static_cast<double>(ok) / static_cast<double>(n);
  corpus.parse_warning = corpus.parse_fraction < 0.9;
  return corpus;
}

Corpus ingest(const std::string& path, std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("ingest: cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return ingest_lines(lines, seed);
}

std::vector<CodeSample> generate_toy_corpus(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CodeSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    // Cycle templates so every kind appears at a similar rate.
    const int kind = static_cast<int>(i % kTemplateCount);
    auto [code, doc] = make_snippet(kind, rng);
    out.push_back({std::move(code), std::move(doc), Split::train});
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

void write_jsonl(const std::string& path, const std::vector<CodeSample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["code"] = s.code;
    if (s.docstring) j["docstring"] = *s.docstring;
    out << j.dump() << '\n';
  }
}

std::vector<TaskPair> completion_pairs(const std::vector<std::string>& codes,
                                       const Vocabulary& vocab, std::size_t context_len) {
  std::vector<TaskPair> pairs;
  for (const auto& code : codes) {
    TokenSeq ids = vocab.encode(code);
    if (ids.size() > context_len) ids.resize(context_len);
    if (ids.size() < 4) continue;
    const auto mid = static_cast<std::ptrdiff_t>(ids.size() / 2);
    pairs.push_back({TokenSeq(ids.begin(), ids.begin() + mid), TokenSeq(ids.begin() + mid, ids.end()),
                     TaskKind::completion});
  }
  return pairs;
}

std::vector<TaskPair> summarization_pairs(const std::vector<const CodeSample*>& samples,
                                          const Vocabulary& vocab, std::size_t context_len) {
  std::vector<TaskPair> pairs;
  for (const CodeSample* s : samples) {
    if (!s->docstring || s->docstring->empty()) continue;
    TaskPair p{vocab.encode(s->code), vocab.encode(*s->docstring), TaskKind::summarization};
    if (p.input.size() < 2 || p.input.size() + p.target.size() > context_len) continue;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace codecipher
