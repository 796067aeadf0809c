#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "codecipher/code_lm.hpp"
#include "codecipher/tensor.hpp"
#include "codecipher/tokenizer.hpp"
#include "codecipher/types.hpp"

namespace codecipher {

enum class ProjectionMetric { euclidean, cosine };

const char* to_string(ProjectionMetric m) noexcept;
/// Throws InputError for anything but "euclidean" or "cosine".
ProjectionMetric parse_metric(std::string_view text);

/// How each sampled pair's prefix embeddings are searched.
enum class SearchMode {
  /// T projected mini-steps, keeping the lowest-loss accumulator state.
  discrete,
  /// One plain gradient step followed by decoding (the ablation variant).
  single_step,
};

const char* to_string(SearchMode m) noexcept;
SearchMode parse_search_mode(std::string_view text);

struct CipherConfig {
  double learning_rate = 0.002;
  std::size_t max_samples = 32;  // N
  std::size_t inner_steps = 10;  // T
  double ppl_slope = 1.5;        // α
  double ppl_intercept = 1.0 / 90.0;  // β
  ProjectionMetric metric = ProjectionMetric::euclidean;
  std::set<TokenId> protected_ids{kPad, kBos, kEos, kUnk};
  std::uint64_t seed = 0;
  SearchMode mode = SearchMode::discrete;

  /// Throws InputError unless η ≥ 0, α ≥ 0, β > 0, T ≥ 1 and every special id
  /// is protected. η = 0 and N = 0 are accepted and yield the identity map.
  void validate() const;
};

/// Total token-to-token substitution table.
class ConfusionMap {
 public:
  ConfusionMap() = default;
  explicit ConfusionMap(std::vector<TokenId> mapping);
  static ConfusionMap identity(std::size_t vocab_size);

  std::size_t size() const noexcept { return mapping_.size(); }
  TokenId operator[](TokenId source) const { return mapping_.at(source); }
  const std::vector<TokenId>& mapping() const noexcept { return mapping_; }

  /// Number of source ids whose target differs from the source.
  std::size_t moved() const noexcept;
  /// Distinct targets / vocabulary size.
  double injectivity_ratio() const;
  bool is_identity() const noexcept { return moved() == 0; }

  /// `# codecipher-map v1 vocab=<n> metric=<m>` then
  /// `source_id TAB source_token TAB target_id TAB target_token` per id, tokens escaped.
  void save_tsv(std::ostream& out, const Vocabulary& vocab, ProjectionMetric metric) const;
  void save_tsv_file(const std::string& path, const Vocabulary& vocab,
                     ProjectionMetric metric) const;
  static ConfusionMap load_tsv(std::istream& in, ProjectionMetric* metric = nullptr);
  static ConfusionMap load_tsv_file(const std::string& path, ProjectionMetric* metric = nullptr);

  bool operator==(const ConfusionMap&) const = default;

 private:
  std::vector<TokenId> mapping_;
};

/// Elementwise substitution. Throws IndexError for ids outside the map.
TokenSeq apply_map(const ConfusionMap& map, const TokenSeq& ids);

/// Nearest row of `table` to `v` among rows not in `excluded`, lowest id on ties.
/// Throws ShapeError on a width mismatch and InputError when every row is excluded.
TokenId project_to_vocab(std::span<const double> v, const Tensor2D& table, ProjectionMetric metric,
                         const std::set<TokenId>& excluded = {});

/// Projection with per-row norms cached, for repeated queries against one table.
class VocabProjector {
 public:
  VocabProjector(const Tensor2D& table, ProjectionMetric metric, std::set<TokenId> excluded);
  TokenId nearest(std::span<const double> v) const;
  /// Projects every row of `rows`; returns the chosen ids.
  TokenSeq nearest_rows(const Tensor2D& rows) const;

 private:
  const Tensor2D& table_;
  ProjectionMetric metric_;
  std::vector<bool> excluded_;
  std::vector<double> norms_;
};

/// True iff (ppl_obfuscated − ppl_original) ≤ α·iteration + β.
bool ppl_gate(double ppl_obfuscated, double ppl_original, std::size_t iteration,
              const CipherConfig& cfg);

struct PerturbedEmbedding {
  Tensor2D e_prime;
  std::set<TokenId> touched;

  static PerturbedEmbedding from(const Tensor2D& original) { return {original, {}}; }
};

struct SearchResult {
  Tensor2D best_embeddings;  // accumulator state, not yet projected
  double best_loss = 0.0;
  double initial_loss = 0.0;
};

/// Loss at a point of input-embedding space; the gradient only when asked.
using EmbeddingObjective = std::function<LossAndGrad(const Tensor2D& embedded_input, bool want_grad)>;

/// The search loop against any objective. `start` holds one accumulator row
/// per position and `source` the ids at those positions. Each mini-step moves
/// the unfrozen accumulator rows against the gradient taken at their projected
/// point (frozen positions project to their source id). Returns the
/// accumulator whose projection scored lowest, the start if none improved.
/// In single_step mode: one step, kept regardless of loss.
SearchResult projected_search(const VocabProjector& projector, const Tensor2D& table,
                              Tensor2D start, const TokenSeq& source,
                              const std::vector<bool>& frozen, const CipherConfig& cfg,
                              const EmbeddingObjective& objective);

/// Searches the embedding rows of `pair.input` (read from `pe`) for a lower task
/// loss. Rows at protected ids never move. Throws NumericError on a non-finite
/// loss or gradient.
SearchResult discrete_gradient_search(const LMParams& params, const PerturbedEmbedding& pe,
                                      const TaskPair& pair, const CipherConfig& cfg);

struct IterationLog {
  std::size_t iteration = 0;
  std::size_t sample = 0;
  bool trained = false;
  double ppl_original = 0.0;
  double ppl_obfuscated = 0.0;
  double ppl_deviation = 0.0;
  double threshold = 0.0;
  double initial_loss = 0.0;
  double best_loss = 0.0;
  std::size_t rows_changed = 0;
  std::size_t moved_tokens = 0;
  double injectivity_ratio = 1.0;
};

struct CipherResult {
  PerturbedEmbedding perturbed;
  ConfusionMap map;
  std::vector<IterationLog> log;
};

/// Learns a confusion map over `dataset` against the frozen model `params`.
/// Throws InputError for an empty dataset or pairs that do not fit the model.
CipherResult learn_cipher(const LMParams& params, const std::vector<TaskPair>& dataset,
                          const CipherConfig& cfg);

/// One JSON object per line, one line per iteration.
void write_training_log(std::ostream& out, const std::vector<IterationLog>& log);

}  // namespace codecipher
