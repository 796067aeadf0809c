#include "codecipher/code_lm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <string>

#include "codecipher/error.hpp"

namespace codecipher {

namespace {

constexpr char kMagic[4] = {'C', 'C', 'L', 'M'};
constexpr std::uint32_t kVersion = 1;
constexpr double kInitStd = 0.02;
// Chosen so a 0.002 search step is a sizeable fraction of the distance between
// neighbouring token rows of a trained model.
constexpr double kEmbeddingMultiplier = 16.0;

struct BoundLayer {
  Var ln1_gain, ln1_bias, w_qkv, b_qkv, w_attn_out, b_attn_out;
  Var ln2_gain, ln2_bias, w_ff_in, b_ff_in, w_ff_out, b_ff_out;
};

struct BoundParams {
  Var embedding, positions;
  std::vector<BoundLayer> layers;
  Var final_gain, final_bias;
  std::vector<Var> all;  // declaration order
};

BoundParams bind(Tape& t, const LMParams& p, bool trainable) {
  BoundParams b;
  auto use = [&](const Tensor2D& x) {
    Var v = trainable ? t.leaf_ref(x) : t.constant_ref(x);
    b.all.push_back(v);
    return v;
  };
  b.embedding = use(p.embedding);
  b.positions = use(p.positions);
  for (const auto& l : p.layers) {
    BoundLayer bl;
    bl.ln1_gain = use(l.ln1_gain);
    bl.ln1_bias = use(l.ln1_bias);
    bl.w_qkv = use(l.w_qkv);
    bl.b_qkv = use(l.b_qkv);
    bl.w_attn_out = use(l.w_attn_out);
    bl.b_attn_out = use(l.b_attn_out);
    bl.ln2_gain = use(l.ln2_gain);
    bl.ln2_bias = use(l.ln2_bias);
    bl.w_ff_in = use(l.w_ff_in);
    bl.b_ff_in = use(l.b_ff_in);
    bl.w_ff_out = use(l.w_ff_out);
    bl.b_ff_out = use(l.b_ff_out);
    b.layers.push_back(bl);
  }
  b.final_gain = use(p.final_gain);
  b.final_bias = use(p.final_bias);
  return b;
}

/// Final hidden states (after the last layer norm) for an [n × d] input.
Var hidden_states(Tape& t, const BoundParams& b, const LMConfig& cfg, Var input) {
  const std::size_t n = t.value(input).rows();
  const std::size_t n_heads = cfg.n_heads;
  Var h = add(t, scale(t, input, embedding_multiplier(cfg)), slice_rows(t, b.positions, 0, n));
  for (const auto& l : b.layers) {
    Var a = layer_norm(t, h, l.ln1_gain, l.ln1_bias);
    Var qkv = add_row(t, matmul(t, a, l.w_qkv), l.b_qkv);
    Var att = causal_attention(t, qkv, n_heads);
    h = add(t, h, add_row(t, matmul(t, att, l.w_attn_out), l.b_attn_out));
    Var f = layer_norm(t, h, l.ln2_gain, l.ln2_bias);
    Var ff = gelu(t, add_row(t, matmul(t, f, l.w_ff_in), l.b_ff_in));
    h = add(t, h, add_row(t, matmul(t, ff, l.w_ff_out), l.b_ff_out));
  }
  return layer_norm(t, h, b.final_gain, b.final_bias);
}

/// Tied output head: logits = m · hs · Eᵀ.
Var output_logits(Tape& t, const BoundParams& b, const LMConfig& cfg, Var hs) {
  return matmul_nt(t, scale(t, hs, embedding_multiplier(cfg)), b.embedding);
}

void check_ids(const TokenSeq& ids, std::size_t vocab) {
  for (TokenId id : ids) {
    if (id >= vocab) {
      throw IndexError("token id " + std::to_string(id) + " >= vocab size " +
                       std::to_string(vocab));
    }
  }
}

/// Mean NLL of x_2..x_n given prefixes, token-id path.
double sequence_nll(const LMParams& p, const TokenSeq& x) {
  Tape t;
  BoundParams b = bind(t, p, false);
  const TokenSeq in(x.begin(), x.end() - 1);
  const TokenSeq tgt(x.begin() + 1, x.end());
  Var hs = hidden_states(t, b, p.config, gather_rows(t, b.embedding, in));
  Var loss = softmax_cross_entropy(t, output_logits(t, b, p.config, hs), tgt);
  return t.value(loss)(0, 0);
}

Tensor2D normal_tensor(std::size_t r, std::size_t c, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor2D out(r, c);
  for (double& v : out.values()) v = dist(rng);
  return out;
}

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), 8)) throw FormatError("checkpoint: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

double embedding_multiplier(const LMConfig&) noexcept { return kEmbeddingMultiplier; }

void LMConfig::validate() const {
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || vocab_size == 0 || ff_mult == 0) {
    throw InputError("LMConfig: sizes must be positive");
  }
  if (d_model % n_heads != 0) throw InputError("LMConfig: d_model not divisible by n_heads");
  if (context_len < 2) throw InputError("LMConfig: context_len must be at least 2");
}

std::vector<Tensor2D*> LMParams::tensors() {
  std::vector<Tensor2D*> out{&embedding, &positions};
  for (auto& l : layers) {
    for (Tensor2D* t : {&l.ln1_gain, &l.ln1_bias, &l.w_qkv, &l.b_qkv, &l.w_attn_out,
                        &l.b_attn_out, &l.ln2_gain, &l.ln2_bias, &l.w_ff_in, &l.b_ff_in,
                        &l.w_ff_out, &l.b_ff_out}) {
      out.push_back(t);
    }
  }
  out.push_back(&final_gain);
  out.push_back(&final_bias);
  return out;
}

std::vector<const Tensor2D*> LMParams::tensors() const {
  auto mut = const_cast<LMParams*>(this)->tensors();
  return {mut.begin(), mut.end()};
}

const char* to_string(TaskKind kind) noexcept {
  return kind == TaskKind::completion ? "completion" : "summarization";
}

void check_pair_fits(const TaskPair& pair, const LMConfig& cfg) {
  if (pair.input.empty() || pair.target.empty()) {
    throw InputError("task pair needs non-empty input and target");
  }
  if (pair.input.size() + pair.target.size() > cfg.context_len) {
    throw InputError("task pair length " +
                     std::to_string(pair.input.size() + pair.target.size()) +
                     " exceeds context " + std::to_string(cfg.context_len));
  }
}

LMParams init_params(const LMConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg.d_model, ff = cfg.ff_mult * cfg.d_model;
  const double resid_std = kInitStd / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
  LMParams p;
  p.config = cfg;
  p.embedding = normal_tensor(cfg.vocab_size, d, kInitStd / embedding_multiplier(cfg), rng);
  p.positions = normal_tensor(cfg.context_len, d, kInitStd / 2, rng);
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    LayerParams l;
    l.ln1_gain = Tensor2D(1, d, 1.0);
    l.ln1_bias = Tensor2D(1, d);
    l.w_qkv = normal_tensor(d, 3 * d, kInitStd, rng);
    l.b_qkv = Tensor2D(1, 3 * d);
    l.w_attn_out = normal_tensor(d, d, resid_std, rng);
    l.b_attn_out = Tensor2D(1, d);
    l.ln2_gain = Tensor2D(1, d, 1.0);
    l.ln2_bias = Tensor2D(1, d);
    l.w_ff_in = normal_tensor(d, ff, kInitStd, rng);
    l.b_ff_in = Tensor2D(1, ff);
    l.w_ff_out = normal_tensor(ff, d, resid_std, rng);
    l.b_ff_out = Tensor2D(1, d);
    p.layers.push_back(std::move(l));
  }
  p.final_gain = Tensor2D(1, d, 1.0);
  p.final_bias = Tensor2D(1, d);
  return p;
}

LMParams train_lm(const std::vector<TokenSeq>& corpus, const LMConfig& cfg, std::size_t steps,
                  std::uint64_t seed, const LMTrainOptions& opts) {
  cfg.validate();
  std::vector<const TokenSeq*> usable;
  for (const auto& s : corpus) {
    check_ids(s, cfg.vocab_size);
    if (s.size() >= 2) usable.push_back(&s);
  }
  if (usable.empty()) throw InputError("train_lm: corpus has no sequence of length >= 2");

  LMParams p = init_params(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);

  auto params = p.tensors();
  std::vector<Tensor2D> m, v, g;
  for (const Tensor2D* t : params) {
    m.emplace_back(t->rows(), t->cols());
    v.emplace_back(t->rows(), t->cols());
    g.emplace_back(t->rows(), t->cols());
  }
  const std::size_t warmup =
      std::max<std::size_t>(1, static_cast<std::size_t>(opts.warmup_fraction * steps));

  for (std::size_t step = 0; step < steps; ++step) {
    for (auto& gi : g) gi.fill(0.0);
    std::size_t total_positions = 0;
    for (std::size_t b = 0; b < opts.batch_size; ++b) {
      const TokenSeq& s = *usable[pick(rng)];
      std::size_t begin = 0, len = s.size();
      if (len > cfg.context_len + 1) {
        std::uniform_int_distribution<std::size_t> off(0, len - cfg.context_len - 1);
        begin = off(rng);
        len = cfg.context_len + 1;
      }
      const TokenSeq in(s.begin() + static_cast<std::ptrdiff_t>(begin),
                        s.begin() + static_cast<std::ptrdiff_t>(begin + len - 1));
      const TokenSeq tgt(s.begin() + static_cast<std::ptrdiff_t>(begin + 1),
                         s.begin() + static_cast<std::ptrdiff_t>(begin + len));
      Tape t;
      BoundParams bp = bind(t, p, true);
      Var hs = hidden_states(t, bp, cfg, gather_rows(t, bp.embedding, in));
      Var loss = softmax_cross_entropy(t, output_logits(t, bp, cfg, hs), tgt);
      // Weight by position count so the batch loss is a token-level mean.
      Var weighted = scale(t, loss, static_cast<double>(tgt.size()));
      t.backward(weighted);
      for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor2D& gi = t.grad(bp.all[i]);
        if (gi.empty()) continue;
        auto dst = g[i].values();
        const auto src = gi.values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
      total_positions += tgt.size();
    }

    // Clipping sees the embedding gradient in read-out units (divided by m) so
    // the stored scale of E does not change the trajectory.
    const double mult = embedding_multiplier(cfg);
    double norm_sq = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double unit = i == 0 ? 1.0 / mult : 1.0;
      for (double& x : g[i].values()) {
        x /= static_cast<double>(total_positions);
        norm_sq += x * x * unit * unit;
      }
    }
    const double norm = std::sqrt(norm_sq);
    if (!std::isfinite(norm)) throw NumericError("train_lm: non-finite gradient");
    const double clip = norm > opts.grad_clip ? opts.grad_clip / norm : 1.0;

    double lr = opts.learning_rate;
    if (step < warmup) {
      lr *= static_cast<double>(step + 1) / static_cast<double>(warmup);
    } else {
      const double progress =
          static_cast<double>(step - warmup) / static_cast<double>(std::max<std::size_t>(1, steps - warmup));
      lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
    const double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(step + 1));
    const double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(step + 1));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double step_size = i == 0 ? lr / mult : lr;
      auto w = params[i]->values();
      auto mi = m[i].values();
      auto vi = v[i].values();
      const auto gi = g[i].values();
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = gi[k] * clip;
        mi[k] = opts.beta1 * mi[k] + (1.0 - opts.beta1) * gk;
        vi[k] = opts.beta2 * vi[k] + (1.0 - opts.beta2) * gk * gk;
        w[k] -= step_size * (mi[k] / bc1) / (std::sqrt(vi[k] / bc2) + 1e-8);
      }
    }
  }
  return p;
}

Tensor2D embed(const LMParams& params, const TokenSeq& x) {
  check_ids(x, params.embedding.rows());
  const std::size_t d = params.embedding.cols();
  Tensor2D out(x.size(), d);
  for (std::size_t r = 0; r < x.size(); ++r) {
    std::copy_n(params.embedding.row(x[r]).data(), d, out.row(r).data());
  }
  return out;
}

Var record_task_loss(Tape& t, const LMParams& params, Var embedded_input, const TokenSeq& y) {
  const Tensor2D& in = t.value(embedded_input);
  const std::size_t nx = in.rows();
  if (nx == 0 || y.empty()) throw InputError("task_loss: empty input or target");
  if (in.cols() != params.config.d_model) {
    throw ShapeError("task_loss: input width " + std::to_string(in.cols()) + " != d_model " +
                     std::to_string(params.config.d_model));
  }
  if (nx + y.size() > params.config.context_len) {
    throw InputError("task_loss: length " + std::to_string(nx + y.size()) +
                     " exceeds context " + std::to_string(params.config.context_len));
  }
  check_ids(y, params.config.vocab_size);
  BoundParams b = bind(t, params, false);
  Var seq = embedded_input;
  if (y.size() > 1) {
    const TokenSeq teacher(y.begin(), y.end() - 1);
    seq = concat_rows(t, embedded_input, gather_rows(t, b.embedding, teacher));
  }
  Var hs = hidden_states(t, b, params.config, seq);
  Var scored = slice_rows(t, hs, nx - 1, nx - 1 + y.size());
  return softmax_cross_entropy(t, output_logits(t, b, params.config, scored), y);
}

double task_loss(const LMParams& params, const Tensor2D& embedded_input, const TokenSeq& y) {
  Tape t;
  Var in = t.constant_ref(embedded_input);
  return t.value(record_task_loss(t, params, in, y))(0, 0);
}

LossAndGrad task_loss_and_grad(const LMParams& params, const Tensor2D& embedded_input,
                               const TokenSeq& y) {
  Tape t;
  Var in = t.leaf_ref(embedded_input);
  Var loss = record_task_loss(t, params, in, y);
  t.backward(loss);
  return {t.value(loss)(0, 0), t.grad(in)};
}

double task_nll(const LMParams& params, const TokenSeq& x, const TokenSeq& y) {
  return task_loss(params, embed(params, x), y);
}

double perplexity(const LMParams& params, const TokenSeq& x) {
  if (x.size() < 2) throw InputError("perplexity: sequence needs at least 2 tokens");
  if (x.size() > params.config.context_len) {
    throw InputError("perplexity: sequence longer than context");
  }
  check_ids(x, params.config.vocab_size);
  return std::exp(sequence_nll(params, x));
}

Tensor2D logits(const LMParams& params, const TokenSeq& x) {
  if (x.size() > params.config.context_len) throw InputError("logits: sequence longer than context");
  check_ids(x, params.config.vocab_size);
  Tape t;
  BoundParams b = bind(t, params, false);
  Var hs = hidden_states(t, b, params.config, gather_rows(t, b.embedding, x));
  return t.value(output_logits(t, b, params.config, hs));
}

double unigram_perplexity(const std::vector<TokenSeq>& train, const std::vector<TokenSeq>& eval,
                          std::size_t vocab_size) {
  std::vector<double> counts(vocab_size, 1.0);
  double total = static_cast<double>(vocab_size);
  for (const auto& s : train) {
    check_ids(s, vocab_size);
    for (TokenId id : s) {
      counts[id] += 1.0;
      total += 1.0;
    }
  }
  double nll = 0.0;
  std::size_t n = 0;
  for (const auto& s : eval) {
    check_ids(s, vocab_size);
    for (std::size_t i = 1; i < s.size(); ++i) {
      nll -= std::log(counts[s[i]] / total);
      ++n;
    }
  }
  if (n == 0) throw InputError("unigram_perplexity: no scored positions");
  return std::exp(nll / static_cast<double>(n));
}

double corpus_perplexity(const LMParams& params, const std::vector<TokenSeq>& seqs) {
  double nll = 0.0;
  std::size_t n = 0;
  for (const auto& s : seqs) {
    if (s.size() < 2) continue;
    const std::size_t len = std::min(s.size(), params.config.context_len);
    const TokenSeq x(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(len));
    nll += sequence_nll(params, x) * static_cast<double>(len - 1);
    n += len - 1;
  }
  if (n == 0) throw InputError("corpus_perplexity: no scored positions");
  return std::exp(nll / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// checkpoint

void LMParams::save(std::ostream& out) const {
  out.write(kMagic, 4);
  unsigned char ver[4];
  for (int i = 0; i < 4; ++i) ver[i] = static_cast<unsigned char>((kVersion >> (8 * i)) & 0xffu);
  out.write(reinterpret_cast<const char*>(ver), 4);
  for (std::size_t f : {config.d_model, config.n_layers, config.n_heads, config.context_len,
                        config.vocab_size, config.ff_mult}) {
    write_u64(out, f);
  }
  for (const Tensor2D* t : tensors()) {
    for (double x : t->values()) write_u64(out, std::bit_cast<std::uint64_t>(x));
  }
}

LMParams LMParams::load(std::istream& in) {
  char magic[4];
  unsigned char ver[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  if (!in.read(reinterpret_cast<char*>(ver), 4)) throw FormatError("checkpoint: truncated");
  std::uint32_t version = 0;
  for (int i = 0; i < 4; ++i) version |= static_cast<std::uint32_t>(ver[i]) << (8 * i);
  if (version != kVersion) throw FormatError("checkpoint: unsupported version");
  LMConfig cfg;
  cfg.d_model = read_u64(in);
  cfg.n_layers = read_u64(in);
  cfg.n_heads = read_u64(in);
  cfg.context_len = read_u64(in);
  cfg.vocab_size = read_u64(in);
  cfg.ff_mult = read_u64(in);
  try {
    cfg.validate();
  } catch (const InputError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  if (cfg.d_model * cfg.vocab_size > (std::size_t{1} << 32) || cfg.n_layers > 1024) {
    throw FormatError("checkpoint: implausible dimensions");
  }
  LMParams p = init_params(cfg, 0);
  for (Tensor2D* t : p.tensors()) {
    for (double& x : t->values()) x = std::bit_cast<double>(read_u64(in));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
  return p;
}

void LMParams::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint to " + path);
  save(out);
}

LMParams LMParams::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read checkpoint from " + path);
  return load(in);
}

}  // namespace codecipher
