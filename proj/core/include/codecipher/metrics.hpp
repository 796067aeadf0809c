#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "codecipher/cipher.hpp"
#include "codecipher/code_lm.hpp"
#include "codecipher/tokenizer.hpp"
#include "codecipher/types.hpp"

namespace codecipher {

/// Byte-level Levenshtein distance (unit costs).
std::size_t levenshtein(std::string_view a, std::string_view b);

/// 100 · levenshtein(a, b) / max(|a|, |b|); 0 when both are empty.
double normalized_edit_distance(std::string_view a, std::string_view b);

/// |multiset(original) ∩ multiset(recovered)| / |original|.
/// Throws InputError when `original` is empty.
double token_recall(const TokenSeq& original, const TokenSeq& recovered);

/// |NLL(y | map(x)) − NLL(y | x)|.
double score_gap(const LMParams& params, const TaskPair& pair, const ConfusionMap& map);

struct SampleRecord {
  double ppl_original = 1.0;
  double ppl_obfuscated = 1.0;
  double edit_distance_pct = 0.0;
  double task_nll_original = 0.0;
  double task_nll_obfuscated = 0.0;
  bool parsed = true;

  double nll_delta() const noexcept { return task_nll_obfuscated - task_nll_original; }
  double ppl_delta() const noexcept { return ppl_obfuscated - ppl_original; }
};

struct ReportSummary {
  std::size_t count = 0;
  double mean_ppl_original = 0.0, median_ppl_original = 0.0;
  double mean_ppl_obfuscated = 0.0, median_ppl_obfuscated = 0.0;
  double mean_edit_distance = 0.0, median_edit_distance = 0.0;
  double mean_nll_original = 0.0, median_nll_original = 0.0;
  double mean_nll_obfuscated = 0.0, median_nll_obfuscated = 0.0;
  double mean_nll_delta = 0.0, median_nll_delta = 0.0;
  double mean_ppl_delta = 0.0;
  double parse_rate = 0.0;
};

/// Recomputes every aggregate from `records` in index order.
ReportSummary summarize(const std::vector<SampleRecord>& records);

struct ObfuscationReport {
  std::vector<SampleRecord> records;
  ReportSummary summary;

  /// Keys in a fixed order: `summary` then `records`.
  void write_json(std::ostream& out) const;
  /// Header line then one row per record.
  void write_csv(std::ostream& out) const;
};

/// Cuts an obfuscated input from the left so it fits beside a target of
/// `target_len` tokens; an empty result becomes a single <unk>.
TokenSeq fit_obfuscated_input(TokenSeq x, std::size_t target_len, std::size_t context_len);

/// One pair's metrics given its obfuscated prefix. `obfuscated_program` is the
/// whole program as the obfuscating method would emit it; it only feeds the
/// `parsed` flag. Inputs shorter than two tokens are left-padded with <bos> for
/// the perplexity term, and obfuscated inputs that no longer fit beside the
/// target are cut from the left.
SampleRecord measure_pair(const LMParams& params, const Vocabulary& vocab, const TaskPair& pair,
                          const TokenSeq& obfuscated_input, std::string_view obfuscated_program);

/// Applies `map` to every pair and measures it. `parsed` checks the program
/// formed by mapping input and (for completion pairs) target together.
/// Throws InputError for an empty dataset; sub-metric failures are rethrown
/// naming the sample index.
ObfuscationReport build_report(const LMParams& params, const std::vector<TaskPair>& dataset,
                               const Vocabulary& vocab, const ConfusionMap& map);

}  // namespace codecipher
