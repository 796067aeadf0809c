#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "codecipher/cipher.hpp"
#include "codecipher/code_lm.hpp"
#include "codecipher/config_file.hpp"
#include "codecipher/corpus.hpp"
#include "codecipher/metrics.hpp"
#include "codecipher/obfuscation.hpp"
#include "codecipher/tokenizer.hpp"

namespace codecipher {

struct ExperimentConfig {
  /// JSONL corpus; empty means the bundled toy corpus of `toy_corpus_size`.
  std::string dataset_path;
  std::size_t toy_corpus_size = 500;
  /// Optional pre-built artifacts; when empty they are trained from the corpus.
  std::string vocab_path;
  std::string lm_checkpoint;
  /// Optional `key = value` files layered under the inline keys.
  std::string lm_config_path;
  std::string cipher_config_path;

  LMConfig lm;  // vocab_size is the tokenizer's target size
  LMTrainOptions train;
  std::size_t lm_steps = 300;
  CipherConfig cipher;
  std::vector<BaselineKind> baselines{BaselineKind::random_perturb,
                                      BaselineKind::rename_identifiers, BaselineKind::dead_branch,
                                      BaselineKind::remove_symbols};
  std::string out_dir;
  std::uint64_t seed = 0;

  /// Reads every key above (plus the LM, cipher and training keys of
  /// config_file.hpp). The seed also seeds the cipher unless `cipher.seed` is
  /// set separately. Throws InputError on unknown keys or missing files.
  static ExperimentConfig from(const ConfigFile& file);
  /// Throws InputError when a referenced path does not exist.
  void validate() const;
};

/// Everything an experiment reads: corpus, tokenizer, model, and the
/// completion pairs for cipher training and held-out evaluation.
struct Workbench {
  Corpus corpus;
  Vocabulary vocab;
  LMParams lm;
  std::vector<TaskPair> train_pairs;
  std::vector<TaskPair> eval_pairs;
  std::vector<TokenSeq> train_sequences;  // whole encoded training programs
};

/// Deterministic given the config. Trains what is not supplied.
Workbench prepare_workbench(const ExperimentConfig& cfg);

/// Per-sample seed derived from an experiment seed and a sample index.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept;

/// Applies `map` at a seeded ⌈fraction·c⌉ of the c positions in `ids` it would change.
/// Positions kept at a lower fraction are kept at every higher one.
TokenSeq apply_map_thinned(const ConfusionMap& map, const TokenSeq& ids, double fraction,
                           std::uint64_t seed);

/// One obfuscation method at one setting, measured on the held-out pairs.
struct MethodRow {
  std::string method;
  double intensity = 0.0;  // baseline intensity, or thinning fraction for maps
  bool matched = true;     // edit distance within tolerance of the target
  std::string warning;
  ObfuscationReport report;
  double attacker_recall = 0.0;
  double deobfuscation_distance = 0.0;  // edit distance after the attack, %
};

struct AttackResult {
  ConfusionMap guess;                   // attacker's inverse map
  double recall = 0.0;                  // mean token recall over pairs
  double deobfuscation_distance = 0.0;  // mean edit distance after the attack, %
};

/// Frequency attack on the obfuscated prefixes of `pairs` (same order), with
/// the workbench's training programs as the attacker's reference corpus.
AttackResult run_attack(const Workbench& wb, const std::vector<TaskPair>& pairs,
                        const std::vector<TokenSeq>& obfuscated);

/// Measures a (possibly thinned) confusion map on `pairs`. Below a fraction
/// of 1 the edits are budgeted across the whole set: ⌈fraction·C⌉ of the C
/// positions the map would change, drawn from one seeded permutation, so the
/// mean edit distance moves in one-token steps.
MethodRow evaluate_map(const Workbench& wb, const LMParams& model, const std::vector<TaskPair>& pairs,
                       const ConfusionMap& map, const std::string& name, double fraction = 1.0,
                       std::uint64_t seed = 0);
/// Measures a rule-based baseline, budgeting ⌈intensity·S⌉ edits over the S
/// edit sites of all prefixes the same way and handing each program its share
/// as a per-program intensity. Prefixes are transformed as fragments and
/// re-encoded; `parsed` uses the whole program at that program's intensity.
MethodRow evaluate_baseline(const Workbench& wb, const LMParams& model,
                            const std::vector<TaskPair>& pairs, BaselineKind kind,
                            double intensity, std::uint64_t seed);

/// Mean held-out edit distance alone (no model calls), for intensity search.
double map_edit_distance(const Workbench& wb, const std::vector<TaskPair>& pairs,
                         const ConfusionMap& map, double fraction, std::uint64_t seed);
double baseline_edit_distance(const Workbench& wb, const std::vector<TaskPair>& pairs,
                              BaselineKind kind, double intensity, std::uint64_t seed);

struct MatchResult {
  double knob = 0.0;
  double edit_distance = 0.0;
  bool matched = false;
};

/// Bisection on a knob in [0, 1] for a non-decreasing `distance(knob)` to hit
/// `target` within `tolerance` (absolute, percentage points), at most
/// `max_steps` halvings.
template <class F>
MatchResult match_knob(F&& distance, double target, double tolerance = 1.0,
                       std::size_t max_steps = 20) {
  double lo = 0.0, hi = 1.0;
  MatchResult best{1.0, distance(1.0), false};
  if (best.edit_distance < target - tolerance) return best;
  best = {0.0, distance(0.0), false};
  if (best.edit_distance >= target - tolerance) {
    best.matched = best.edit_distance <= target + tolerance;
    return best;
  }
  for (std::size_t step = 0; step < max_steps; ++step) {
    const double mid = 0.5 * (lo + hi);
    const double d = distance(mid);
    if (std::abs(d - target) < std::abs(best.edit_distance - target)) best = {mid, d, false};
    if (std::abs(d - target) <= tolerance) {
      best = {mid, d, true};
      break;
    }
    (d < target ? lo : hi) = mid;
  }
  return best;
}

struct ComparisonResult {
  CipherResult cipher;
  std::vector<MethodRow> rows;  // "origin", "codecipher", then baselines in config order

  const MethodRow& row(const std::string& method) const;
  /// Stable key order; records omitted unless `with_records`.
  void write_json(std::ostream& out, bool with_records = false) const;
  /// Aligned text table, one row per method.
  void write_table(std::ostream& out) const;
};

/// Learns the cipher on the training pairs and measures it against each
/// baseline, whose intensity is bisected to the learned map's mean edit
/// distance (±1 point). Infeasible matches are flagged, not fatal.
ComparisonResult run_comparison(const Workbench& wb, const ExperimentConfig& cfg);
/// Convenience: prepare_workbench + run_comparison, writing artifacts to
/// cfg.out_dir when it is set.
ComparisonResult run_comparison(const ExperimentConfig& cfg);

struct SweepPoint {
  std::string method;
  double level = 0.0;
  double edit_distance = 0.0;
  double nll_delta = 0.0;
  double ppl_obfuscated = 0.0;
  double parse_rate = 0.0;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  /// Fraction of learned points whose NLL delta is at most the random curve's,
  /// interpolated at the same edit distance. Points outside the random curve's
  /// range are not counted.
  double dominance = 0.0;
  std::size_t compared = 0;

  void write_csv(std::ostream& out) const;
};

/// The learned map thinned to each level, and every baseline at intensity =
/// level. Throws InputError for fewer than two levels or a level outside [0, 1].
SweepResult run_sweep(const Workbench& wb, const ExperimentConfig& cfg, const ConfusionMap& map,
                      const std::vector<double>& levels);

struct AblationRow {
  double single_step_lr = 0.0;
  double target_edit_distance = 0.0;
  MethodRow discrete;
  MethodRow single_step;
};

/// For each learning rate: the single-step variant at that rate against the
/// configured discrete search, the wider of the two thinned to the other's
/// mean edit distance.
std::vector<AblationRow> run_ablation(const Workbench& wb, const ExperimentConfig& cfg,
                                      const std::vector<double>& single_step_lrs);

struct TransferResult {
  ConfusionMap maps[2];
  /// delta[i][j]: mean held-out NLL delta of the map learned on model i,
  /// evaluated on model j.
  double delta[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
  double edit_distance[2] = {0.0, 0.0};

  /// delta[i][1-i] / delta[i][i]; infinite when the diagonal is zero and the
  /// off-diagonal is not, 1 when both are zero.
  double ratio(int learned_on) const;
  void write_json(std::ostream& out) const;
};

/// Throws InputError when either model's vocabulary size differs from the
/// workbench vocabulary.
TransferResult run_transfer(const Workbench& wb, const CipherConfig& cipher, const LMParams& model_a,
                            const LMParams& model_b);

}  // namespace codecipher
