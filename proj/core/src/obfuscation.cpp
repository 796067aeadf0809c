#include "codecipher/obfuscation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>
#include <unordered_set>

#include "codecipher/error.hpp"
#include "codecipher/toy_grammar.hpp"

namespace codecipher {

std::string obfuscate_text(const ConfusionMap& map, const Vocabulary& vocab,
                           std::string_view code) {
  return vocab.decode(apply_map(map, vocab.encode(code)));
}

const char* to_string(BaselineKind kind) noexcept {
  switch (kind) {
    case BaselineKind::random_perturb: return "random_perturb";
    case BaselineKind::rename_identifiers: return "rename_identifiers";
    case BaselineKind::dead_branch: return "dead_branch";
    case BaselineKind::remove_symbols: return "remove_symbols";
  }
  return "unknown";
}

BaselineKind parse_baseline_kind(std::string_view text) {
  for (auto k : {BaselineKind::random_perturb, BaselineKind::rename_identifiers,
                 BaselineKind::dead_branch, BaselineKind::remove_symbols}) {
    if (text == to_string(k)) return k;
  }
  throw InputError("unknown baseline kind '" + std::string(text) + "'");
}

void BaselineSpec::validate() const {
  if (!std::isfinite(intensity) || intensity < 0.0 || intensity > 1.0) {
    throw InputError("baseline intensity must lie in [0, 1]");
  }
}

namespace {

std::size_t quota(double intensity, std::size_t n) {
  // Guard against 0.3·10 landing a hair above 3.
  const double raw = intensity * static_cast<double>(n);
  const auto k = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::min(k, n);
}

std::vector<std::size_t> seeded_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the order is library-independent.
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> d(0, i - 1);
    std::swap(order[i - 1], order[d(rng)]);
  }
  return order;
}

struct RenamePlan {
  std::vector<LexUnit> units;
  std::unordered_set<std::string> existing;
  std::vector<std::string> order;  // renamable names, first occurrence first
  std::vector<bool> renamable;     // per unit
};

RenamePlan plan_rename(std::string_view code) {
  RenamePlan p;
  p.units = lex(code);
  p.renamable.assign(p.units.size(), false);
  std::string prev_sig;  // previous non-whitespace unit text
  for (std::size_t i = 0; i < p.units.size(); ++i) {
    const LexUnit& u = p.units[i];
    if (u.kind == LexKind::whitespace || u.kind == LexKind::comment) continue;
    if (u.kind == LexKind::identifier) {
      p.existing.insert(u.text);
      if (prev_sig != "." && !is_builtin(u.text)) {
        p.renamable[i] = true;
        if (std::find(p.order.begin(), p.order.end(), u.text) == p.order.end()) {
          p.order.push_back(u.text);
        }
      }
    }
    prev_sig = u.text;
  }
  return p;
}

std::string rename_identifiers(std::string_view code, double intensity) {
  const RenamePlan plan = plan_rename(code);
  const auto& units = plan.units;
  const auto& existing = plan.existing;
  const auto& order = plan.order;
  const auto& renamable = plan.renamable;

  const std::size_t k = quota(intensity, order.size());
  std::unordered_map<std::string, std::string> fresh;
  std::size_t counter = 0;
  for (std::size_t i = 0; i < k; ++i) {
    std::string name;
    do {
      name = "v" + std::to_string(counter++);
    } while (existing.contains(name));
    fresh.emplace(order[i], std::move(name));
  }

  std::string out;
  out.reserve(code.size());
  for (std::size_t i = 0; i < units.size(); ++i) {
    const auto it = renamable[i] ? fresh.find(units[i].text) : fresh.end();
    out += it != fresh.end() ? it->second : units[i].text;
  }
  return out;
}

constexpr std::string_view kFillers[] = {
    "pass",
    "_unused = 0",
    "_unused = [1, 2, 3]",
    "print(\"unreachable\")",
    "_unused = len(\"\") + 1",
};

std::size_t indent_of(std::string_view line) {
  std::size_t n = 0;
  while (n < line.size() && (line[n] == ' ' || line[n] == '\t')) ++n;
  return n;
}

bool blank_or_comment(std::string_view line) {
  const std::size_t n = indent_of(line);
  return n == line.size() || line[n] == '\n' || line[n] == '\r' || line[n] == '#';
}

bool starts_clause(std::string_view line) {
  line.remove_prefix(indent_of(line));
  for (std::string_view kw : {"else", "elif"}) {
    if (line.starts_with(kw) && (line.size() == kw.size() || !std::isalnum(static_cast<unsigned char>(line[kw.size()])))) {
      return true;
    }
  }
  return false;
}

bool opens_block(std::string_view line) {
  while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) {
    line.remove_suffix(1);
  }
  return !line.empty() && line.back() == ':';
}

std::vector<std::string_view> split_lines(std::string_view code) {
  std::vector<std::string_view> lines;
  for (std::size_t start = 0; start < code.size();) {
    const std::size_t nl = code.find('\n', start);
    const std::size_t end = nl == std::string_view::npos ? code.size() : nl + 1;
    lines.push_back(code.substr(start, end - start));
    start = end;
  }
  return lines;
}

// Only lines that end in a newline accept a branch after them.
std::size_t branch_sites(const std::vector<std::string_view>& lines) {
  std::size_t eligible = lines.size();
  if (!lines.empty() && !lines.back().ends_with('\n')) --eligible;
  return eligible;
}

bool removable(const LexUnit& u) {
  return u.kind == LexKind::whitespace || u.kind == LexKind::symbol;
}

std::string dead_branch(std::string_view code, double intensity, std::uint64_t seed) {
  const auto lines = split_lines(code);
  const std::size_t eligible = branch_sites(lines);

  const auto order = seeded_order(eligible, seed);
  const std::size_t k = quota(intensity, eligible);
  std::vector<int> filler_after(lines.size(), -1);
  std::mt19937_64 rng(seed ^ 0xd1b54a32d192ed03ull);
  std::uniform_int_distribution<std::size_t> pick(0, std::size(kFillers) - 1);
  std::vector<std::size_t> draws(eligible);
  for (auto& d : draws) d = pick(rng);
  for (std::size_t i = 0; i < k; ++i) filler_after[order[i]] = static_cast<int>(draws[i]);

  std::string out;
  out.reserve(code.size() + k * 32);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    out += lines[i];
    if (filler_after[i] < 0) continue;
    std::size_t next = i + 1;
    while (next < lines.size() && blank_or_comment(lines[next])) ++next;
    std::size_t indent = 0;
    if (next < lines.size() && !starts_clause(lines[next])) {
      indent = indent_of(lines[next]);
    } else if (!blank_or_comment(lines[i])) {
      // Before an else/elif, or at the end: stay in the current block.
      indent = opens_block(lines[i]) ? indent_of(lines[i]) + 4 : indent_of(lines[i]);
    }
    const std::string pad(indent, ' ');
    out += pad + "if False:\n" + pad + "    " + std::string(kFillers[filler_after[i]]) + "\n";
  }
  return out;
}

std::string remove_symbols(std::string_view code, double intensity) {
  const auto units = lex(code);
  const auto total = static_cast<std::size_t>(std::count_if(units.begin(), units.end(), removable));
  std::size_t k = quota(intensity, total);
  std::string out;
  out.reserve(code.size());
  for (const auto& u : units) {
    if (k > 0 && removable(u)) {
      --k;
      continue;
    }
    out += u.text;
  }
  return out;
}

std::string transform(const BaselineSpec& spec, std::string_view code, const Vocabulary* vocab) {
  switch (spec.kind) {
    case BaselineKind::random_perturb: {
      if (vocab == nullptr) throw InputError("random_perturb needs a vocabulary");
      return vocab->decode(
          random_perturb_ids(vocab->encode(code), spec.intensity, spec.seed, vocab->size()));
    }
    case BaselineKind::rename_identifiers: return rename_identifiers(code, spec.intensity);
    case BaselineKind::dead_branch: return dead_branch(code, spec.intensity, spec.seed);
    case BaselineKind::remove_symbols: return remove_symbols(code, spec.intensity);
  }
  throw InputError("unknown baseline kind");
}

}  // namespace

TokenSeq random_perturb_ids(const TokenSeq& ids, double intensity, std::uint64_t seed,
                            std::size_t vocab_size) {
  if (vocab_size <= kNumSpecial + 1) throw InputError("random_perturb: vocabulary too small");
  const auto order = seeded_order(ids.size(), seed);
  const std::size_t k = quota(intensity, ids.size());
  // One draw per rank, independent of k, so edits nest as intensity grows.
  std::mt19937_64 rng(seed ^ 0x94d049bb133111ebull);
  std::uniform_int_distribution<std::size_t> pick(kNumSpecial, vocab_size - 2);
  TokenSeq out = ids;
  for (std::size_t r = 0; r < ids.size(); ++r) {
    auto draw = static_cast<TokenId>(pick(rng));
    if (r >= k) continue;
    const std::size_t pos = order[r];
    // Skip over the current id so the replacement always differs.
    if (draw >= out[pos] && out[pos] >= kNumSpecial) ++draw;
    out[pos] = draw;
  }
  return out;
}

std::size_t baseline_sites(BaselineKind kind, std::string_view code, const Vocabulary* vocab) {
  switch (kind) {
    case BaselineKind::random_perturb:
      if (vocab == nullptr) throw InputError("random_perturb needs a vocabulary");
      return vocab->encode(code).size();
    case BaselineKind::rename_identifiers: return plan_rename(code).order.size();
    case BaselineKind::dead_branch: return branch_sites(split_lines(code));
    case BaselineKind::remove_symbols: {
      const auto units = lex(code);
      return static_cast<std::size_t>(std::count_if(units.begin(), units.end(), removable));
    }
  }
  throw InputError("unknown baseline kind");
}

std::string run_baseline(const BaselineSpec& spec, std::string_view code,
                         const Vocabulary* vocab) {
  spec.validate();
  if (spec.kind == BaselineKind::rename_identifiers || spec.kind == BaselineKind::dead_branch) {
    const ParseResult pr = parse_program(code);
    if (!pr.ok) {
      throw InputError(std::string(to_string(spec.kind)) + ": input does not parse at byte " +
                       std::to_string(pr.error_offset) + ": " + pr.message);
    }
  }
  return transform(spec, code, vocab);
}

std::string run_baseline_fragment(const BaselineSpec& spec, std::string_view code,
                                  const Vocabulary* vocab) {
  spec.validate();
  return transform(spec, code, vocab);
}

double parse_rate(const std::vector<std::string>& programs) {
  if (programs.empty()) throw InputError("parse_rate: no programs");
  std::size_t ok = 0;
  for (const auto& p : programs) {
    if (parse_program(p).ok) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(programs.size());
}

ConfusionMap frequency_attack(const std::vector<TokenSeq>& obfuscated,
                              const std::vector<TokenSeq>& reference, std::size_t vocab_size) {
  if (obfuscated.empty() || reference.empty()) {
    throw InputError("frequency_attack: empty corpus");
  }
  auto ranking = [vocab_size](const std::vector<TokenSeq>& corpus) {
    std::vector<std::size_t> freq(vocab_size, 0);
    for (const auto& s : corpus) {
      for (TokenId id : s) {
        if (id >= vocab_size) throw IndexError("frequency_attack: id out of range");
        ++freq[id];
      }
    }
    std::vector<TokenId> ids;
    for (TokenId id = 0; id < vocab_size; ++id) {
      if (freq[id] > 0) ids.push_back(id);
    }
    std::stable_sort(ids.begin(), ids.end(),
                     [&freq](TokenId a, TokenId b) { return freq[a] > freq[b]; });
    return ids;
  };
  const auto obf_rank = ranking(obfuscated);
  const auto ref_rank = ranking(reference);
  std::vector<TokenId> guess(vocab_size);
  std::iota(guess.begin(), guess.end(), TokenId{0});
  for (std::size_t i = 0; i < obf_rank.size() && i < ref_rank.size(); ++i) {
    guess[obf_rank[i]] = ref_rank[i];
  }
  return ConfusionMap(std::move(guess));
}

}  // namespace codecipher
