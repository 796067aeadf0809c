#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "codecipher/cipher.hpp"
#include "codecipher/tokenizer.hpp"
#include "codecipher/types.hpp"

namespace codecipher {

/// decode(apply_map(map, encode(code))).
std::string obfuscate_text(const ConfusionMap& map, const Vocabulary& vocab, std::string_view code);

enum class BaselineKind { random_perturb, rename_identifiers, dead_branch, remove_symbols };

const char* to_string(BaselineKind kind) noexcept;
/// Throws InputError for an unknown name.
BaselineKind parse_baseline_kind(std::string_view text);

struct BaselineSpec {
  BaselineKind kind = BaselineKind::random_perturb;
  double intensity = 0.0;  // in [0, 1]
  std::uint64_t seed = 0;

  /// Throws InputError when intensity is outside [0, 1] or not finite.
  void validate() const;
};

/// Rule-based obfuscation of a whole program. Structural kinds
/// (rename_identifiers, dead_branch) throw InputError unless `code` parses
/// under the toy grammar; random_perturb throws InputError without `vocab`.
///
/// Raising intensity under a fixed seed only adds edits: the edited positions
/// at a lower intensity are a prefix of those at a higher one.
std::string run_baseline(const BaselineSpec& spec, std::string_view code,
                         const Vocabulary* vocab = nullptr);

/// Same transforms without the parse precondition, for code fragments such as
/// completion prefixes. Dead branches go only after newline-terminated lines.
std::string run_baseline_fragment(const BaselineSpec& spec, std::string_view code,
                                  const Vocabulary* vocab = nullptr);

/// Number of places a baseline can edit in `code`, the n of its ⌈intensity·n⌉
/// quota: tokens (random_perturb), distinct renamable names
/// (rename_identifiers), newline-terminated lines (dead_branch), whitespace and
/// symbol units (remove_symbols). random_perturb throws InputError without `vocab`.
std::size_t baseline_sites(BaselineKind kind, std::string_view code,
                           const Vocabulary* vocab = nullptr);

/// Token-level random perturbation: ⌈intensity·|ids|⌉ positions, taken from a
/// seeded permutation, are replaced by a seeded uniform draw over the
/// non-special ids other than the current one.
TokenSeq random_perturb_ids(const TokenSeq& ids, double intensity, std::uint64_t seed,
                            std::size_t vocab_size);

/// Fraction of programs accepted by the toy grammar. Throws InputError when empty.
double parse_rate(const std::vector<std::string>& programs);

/// Attacker's inverse guess: the i-th most frequent obfuscated id maps to the
/// i-th most frequent reference id (frequency ties to the lower id). Ids
/// absent from `obfuscated`, or ranked past the end of the reference list,
/// map to themselves. Throws InputError when either corpus is empty.
ConfusionMap frequency_attack(const std::vector<TokenSeq>& obfuscated,
                              const std::vector<TokenSeq>& reference, std::size_t vocab_size);

}  // namespace codecipher
