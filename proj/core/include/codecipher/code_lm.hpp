#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "codecipher/tape.hpp"
#include "codecipher/tensor.hpp"
#include "codecipher/types.hpp"

namespace codecipher {

struct LMConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t context_len = 256;
  std::size_t vocab_size = 2048;
  std::size_t ff_mult = 4;

  /// Throws InputError when d_model % n_heads != 0, context_len < 2, or a size is zero.
  void validate() const;
  bool operator==(const LMConfig&) const = default;
};

/// E is stored at 1/m of its read-out scale and multiplied by m on the way in
/// and out (m = 16). Training is invariant to m; the cipher search, which steps
/// in stored coordinates, is not.
double embedding_multiplier(const LMConfig& cfg) noexcept;

struct LayerParams {
  Tensor2D ln1_gain, ln1_bias;
  Tensor2D w_qkv, b_qkv;
  Tensor2D w_attn_out, b_attn_out;
  Tensor2D ln2_gain, ln2_bias;
  Tensor2D w_ff_in, b_ff_in;
  Tensor2D w_ff_out, b_ff_out;
  bool operator==(const LayerParams&) const = default;
};

/// Decoder-only transformer weights. The embedding matrix doubles as the
/// output projection (tied weights).
struct LMParams {
  LMConfig config;
  Tensor2D embedding;  // vocab_size × d_model
  Tensor2D positions;  // context_len × d_model
  std::vector<LayerParams> layers;
  Tensor2D final_gain, final_bias;

  /// Every tensor in declaration order (the checkpoint order).
  std::vector<Tensor2D*> tensors();
  std::vector<const Tensor2D*> tensors() const;

  /// Binary checkpoint: "CCLM", u32 version, six u64 config fields, then every
  /// tensor as little-endian f64 in declaration order.
  void save(std::ostream& out) const;
  static LMParams load(std::istream& in);
  void save_file(const std::string& path) const;
  static LMParams load_file(const std::string& path);

  bool operator==(const LMParams&) const = default;
};

enum class TaskKind { completion, summarization };

const char* to_string(TaskKind kind) noexcept;

/// Supervision pair: predict `target` given `input`.
struct TaskPair {
  TokenSeq input;
  TokenSeq target;
  TaskKind kind = TaskKind::completion;
};

/// Throws InputError when the pair is empty on either side or exceeds the context.
void check_pair_fits(const TaskPair& pair, const LMConfig& cfg);

LMParams init_params(const LMConfig& cfg, std::uint64_t seed);

struct LMTrainOptions {
  std::size_t batch_size = 8;
  double learning_rate = 3e-3;
  double warmup_fraction = 0.05;
  double grad_clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.98;
};

/// Adam with linear warmup and cosine decay on next-token NLL over `corpus`.
/// Deterministic given `seed`. Throws InputError on an empty corpus and
/// IndexError on an out-of-range token.
LMParams train_lm(const std::vector<TokenSeq>& corpus, const LMConfig& cfg, std::size_t steps,
                  std::uint64_t seed, const LMTrainOptions& opts = {});

/// Row t = E[x_t]. Throws IndexError on a bad id.
Tensor2D embed(const LMParams& params, const TokenSeq& x);

/// Records the teacher-forced task loss on `tape`: the model reads the given
/// input embeddings followed by E[y_0..y_{m-2}] and is scored on predicting y.
Var record_task_loss(Tape& tape, const LMParams& params, Var embedded_input, const TokenSeq& y);

double task_loss(const LMParams& params, const Tensor2D& embedded_input, const TokenSeq& y);

struct LossAndGrad {
  double loss = 0.0;
  Tensor2D grad;  // d loss / d embedded_input
};
LossAndGrad task_loss_and_grad(const LMParams& params, const Tensor2D& embedded_input,
                               const TokenSeq& y);

/// Task NLL via the token-id path (embedding lookup of x).
double task_nll(const LMParams& params, const TokenSeq& x, const TokenSeq& y);

/// exp(mean −log p(x_t | x_<t)) over t = 2..|x|. Throws InputError when |x| < 2
/// or |x| > context_len.
double perplexity(const LMParams& params, const TokenSeq& x);

/// Full next-token logits for every position of x.
Tensor2D logits(const LMParams& params, const TokenSeq& x);

/// Perplexity of the maximum-likelihood unigram model fit on `train`,
/// evaluated on `eval` (add-one smoothing over `vocab_size`).
double unigram_perplexity(const std::vector<TokenSeq>& train, const std::vector<TokenSeq>& eval,
                          std::size_t vocab_size);

/// Corpus-level perplexity: exp of the token-weighted mean NLL over sequences.
double corpus_perplexity(const LMParams& params, const std::vector<TokenSeq>& seqs);

}  // namespace codecipher
