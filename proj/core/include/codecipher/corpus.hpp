#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "codecipher/code_lm.hpp"
#include "codecipher/tokenizer.hpp"

namespace codecipher {

enum class Split { train, held_out };

struct CodeSample {
  std::string code;
  std::optional<std::string> docstring;
  Split split = Split::train;
};

struct Corpus {
  std::vector<CodeSample> samples;
  /// Fraction of samples whose code parses under the toy grammar.
  double parse_fraction = 1.0;
  /// Set when parse_fraction < 0.9.
  bool parse_warning = false;

  std::vector<const CodeSample*> split(Split which) const;
  std::vector<std::string> codes(Split which) const;
};

/// Reads JSON lines with a string `code` and optional string `docstring`, then
/// assigns a seeded 90/10 train/held-out split (held-out count = round(n/10)).
/// Throws InputError for an empty file and FormatError naming the line for a
/// malformed one.
Corpus ingest(const std::string& path, std::uint64_t seed);
Corpus ingest_lines(const std::vector<std::string>& lines, std::uint64_t seed);

/// Seeded template generator for toy Python functions with docstrings.
std::vector<CodeSample> generate_toy_corpus(std::size_t count, std::uint64_t seed);

/// Writes samples as JSON lines (`code`, optional `docstring`).
void write_jsonl(const std::string& path, const std::vector<CodeSample>& samples);

/// Splits each encoded snippet at its midpoint token: input = first half,
/// target = second half. Snippets shorter than 4 tokens are skipped; longer
/// ones are truncated to `context_len` tokens first.
std::vector<TaskPair> completion_pairs(const std::vector<std::string>& codes,
                                       const Vocabulary& vocab, std::size_t context_len);

/// (code, docstring) pairs for samples that carry a docstring and fit the context.
std::vector<TaskPair> summarization_pairs(const std::vector<const CodeSample*>& samples,
                                          const Vocabulary& vocab, std::size_t context_len);

}  // namespace codecipher
