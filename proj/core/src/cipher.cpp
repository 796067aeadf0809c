#include "codecipher/cipher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "codecipher/error.hpp"

namespace codecipher {

const char* to_string(ProjectionMetric m) noexcept {
  return m == ProjectionMetric::euclidean ? "euclidean" : "cosine";
}

ProjectionMetric parse_metric(std::string_view text) {
  if (text == "euclidean") return ProjectionMetric::euclidean;
  if (text == "cosine") return ProjectionMetric::cosine;
  throw InputError("unknown projection metric '" + std::string(text) + "'");
}

const char* to_string(SearchMode m) noexcept {
  return m == SearchMode::discrete ? "discrete" : "single_step";
}

SearchMode parse_search_mode(std::string_view text) {
  if (text == "discrete") return SearchMode::discrete;
  if (text == "single_step") return SearchMode::single_step;
  throw InputError("unknown search mode '" + std::string(text) + "'");
}

void CipherConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InputError("cipher: learning rate must be finite and >= 0");
  }
  if (inner_steps < 1) throw InputError("cipher: inner_steps must be >= 1");
  if (!(ppl_slope >= 0.0)) throw InputError("cipher: ppl_slope must be >= 0");
  if (!(ppl_intercept > 0.0)) throw InputError("cipher: ppl_intercept must be > 0");
  for (TokenId s = 0; s < kNumSpecial; ++s) {
    if (!protected_ids.contains(s)) throw InputError("cipher: special ids must be protected");
  }
}

// ---------------------------------------------------------------------------
// ConfusionMap

ConfusionMap::ConfusionMap(std::vector<TokenId> mapping) : mapping_(std::move(mapping)) {
  for (TokenId t : mapping_) {
    if (t >= mapping_.size()) throw IndexError("ConfusionMap: target id out of range");
  }
}

ConfusionMap ConfusionMap::identity(std::size_t vocab_size) {
  std::vector<TokenId> m(vocab_size);
  for (std::size_t i = 0; i < vocab_size; ++i) m[i] = static_cast<TokenId>(i);
  return ConfusionMap(std::move(m));
}

std::size_t ConfusionMap::moved() const noexcept {
  std::size_t n = 0;
  for (std::size_t i = 0; i < mapping_.size(); ++i) n += mapping_[i] != i;
  return n;
}

double ConfusionMap::injectivity_ratio() const {
  if (mapping_.empty()) return 1.0;
  std::unordered_set<TokenId> distinct(mapping_.begin(), mapping_.end());
  return static_cast<double>(distinct.size()) / static_cast<double>(mapping_.size());
}

void ConfusionMap::save_tsv(std::ostream& out, const Vocabulary& vocab,
                            ProjectionMetric metric) const {
  if (vocab.size() != mapping_.size()) {
    throw InputError("ConfusionMap: vocabulary size does not match map size");
  }
  out << "# codecipher-map v1 vocab=" << mapping_.size() << " metric=" << to_string(metric)
      << '\n';
  for (std::size_t i = 0; i < mapping_.size(); ++i) {
    out << i << '\t' << escape_token(vocab.token(static_cast<TokenId>(i))) << '\t'
        << mapping_[i] << '\t' << escape_token(vocab.token(mapping_[i])) << '\n';
  }
}

void ConfusionMap::save_tsv_file(const std::string& path, const Vocabulary& vocab,
                                 ProjectionMetric metric) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write map to " + path);
  save_tsv(out, vocab, metric);
}

ConfusionMap ConfusionMap::load_tsv(std::istream& in, ProjectionMetric* metric) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("map: missing header");
  const std::string prefix = "# codecipher-map v1 vocab=";
  if (line.rfind(prefix, 0) != 0) throw FormatError("map: bad header '" + line + "'");
  std::istringstream hs(line.substr(prefix.size()));
  std::size_t n = 0;
  std::string metric_field;
  if (!(hs >> n >> metric_field) || metric_field.rfind("metric=", 0) != 0) {
    throw FormatError("map: bad header '" + line + "'");
  }
  try {
    const ProjectionMetric m = parse_metric(metric_field.substr(7));
    if (metric != nullptr) *metric = m;
  } catch (const InputError& e) {
    throw FormatError(std::string("map: ") + e.what());
  }
  std::vector<TokenId> mapping(n);
  std::vector<bool> seen(n, false);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 4) {
      throw FormatError("map: line " + std::to_string(lineno) + " needs 4 tab-separated fields");
    }
    std::size_t src = 0, dst = 0;
    try {
      std::size_t used = 0;
      src = std::stoull(fields[0], &used);
      if (used != fields[0].size()) throw std::invalid_argument("trailing");
      dst = std::stoull(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError("map: line " + std::to_string(lineno) + " has a non-numeric id");
    }
    if (src >= n || dst >= n) throw FormatError("map: line " + std::to_string(lineno) + " id out of range");
    if (seen[src]) throw FormatError("map: duplicate source id " + std::to_string(src));
    seen[src] = true;
    mapping[src] = static_cast<TokenId>(dst);
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw FormatError("map: not every source id is present");
  }
  return ConfusionMap(std::move(mapping));
}

ConfusionMap ConfusionMap::load_tsv_file(const std::string& path, ProjectionMetric* metric) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read map from " + path);
  return load_tsv(in, metric);
}

TokenSeq apply_map(const ConfusionMap& map, const TokenSeq& ids) {
  TokenSeq out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id >= map.size()) throw IndexError("apply_map: id " + std::to_string(id) + " outside map");
    out.push_back(map[id]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// projection

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double norm(std::span<const double> a) {
  double s = 0.0;
  for (double x : a) s += x * x;
  return std::sqrt(s);
}

double cosine_distance(std::span<const double> a, double norm_a, std::span<const double> b,
                       double norm_b) {
  if (norm_a == 0.0 || norm_b == 0.0) return 1.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return 1.0 - dot / (norm_a * norm_b);
}

}  // namespace

VocabProjector::VocabProjector(const Tensor2D& table, ProjectionMetric metric,
                               std::set<TokenId> excluded)
    : table_(table), metric_(metric), excluded_(table.rows(), false) {
  std::size_t n_excluded = 0;
  for (TokenId id : excluded) {
    if (id < excluded_.size() && !excluded_[id]) {
      excluded_[id] = true;
      ++n_excluded;
    }
  }
  if (n_excluded == table.rows()) throw InputError("project_to_vocab: every row is excluded");
  if (metric_ == ProjectionMetric::cosine) {
    norms_.resize(table.rows());
    for (std::size_t r = 0; r < table.rows(); ++r) norms_[r] = norm(table.row(r));
  }
}

TokenId VocabProjector::nearest(std::span<const double> v) const {
  if (v.size() != table_.cols()) {
    throw ShapeError("project_to_vocab: vector width " + std::to_string(v.size()) +
                     " != table width " + std::to_string(table_.cols()));
  }
  const double nv = metric_ == ProjectionMetric::cosine ? norm(v) : 0.0;
  double best = std::numeric_limits<double>::infinity();
  TokenId best_id = 0;
  bool found = false;
  for (std::size_t r = 0; r < table_.rows(); ++r) {
    if (excluded_[r]) continue;
    const double d = metric_ == ProjectionMetric::euclidean
                         ? squared_distance(v, table_.row(r))
                         : cosine_distance(v, nv, table_.row(r), norms_[r]);
    if (!found || d < best) {
      best = d;
      best_id = static_cast<TokenId>(r);
      found = true;
    }
  }
  return best_id;
}

TokenSeq VocabProjector::nearest_rows(const Tensor2D& rows) const {
  TokenSeq out(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r) out[r] = nearest(rows.row(r));
  return out;
}

TokenId project_to_vocab(std::span<const double> v, const Tensor2D& table, ProjectionMetric metric,
                         const std::set<TokenId>& excluded) {
  return VocabProjector(table, metric, excluded).nearest(v);
}

bool ppl_gate(double ppl_obfuscated, double ppl_original, std::size_t iteration,
              const CipherConfig& cfg) {
  return (ppl_obfuscated - ppl_original) <=
         cfg.ppl_slope * static_cast<double>(iteration) + cfg.ppl_intercept;
}

// ---------------------------------------------------------------------------
// search

namespace {

std::set<TokenId> special_ids() { return {kPad, kBos, kEos, kUnk}; }

std::vector<bool> frozen_positions(const TokenSeq& input, const CipherConfig& cfg) {
  std::vector<bool> frozen(input.size());
  for (std::size_t p = 0; p < input.size(); ++p) frozen[p] = cfg.protected_ids.contains(input[p]);
  return frozen;
}

void require_finite(const LossAndGrad& lg) {
  if (!std::isfinite(lg.loss) || !lg.grad.all_finite()) {
    throw NumericError("non-finite task loss or gradient");
  }
}

Tensor2D gather(const Tensor2D& table, const TokenSeq& ids) {
  Tensor2D out(ids.size(), table.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::copy_n(table.row(ids[r]).data(), table.cols(), out.row(r).data());
  }
  return out;
}

/// Projects each accumulator row; frozen positions keep their source token.
TokenSeq decode_rows(const VocabProjector& projector, const Tensor2D& acc,
                     const std::vector<bool>& frozen, const TokenSeq& source) {
  TokenSeq ids = projector.nearest_rows(acc);
  for (std::size_t p = 0; p < ids.size(); ++p) {
    if (frozen[p]) ids[p] = source[p];
  }
  return ids;
}

void step(Tensor2D& acc, const Tensor2D& grad, double lr, const std::vector<bool>& frozen) {
  for (std::size_t r = 0; r < acc.rows(); ++r) {
    if (frozen[r]) continue;
    auto a = acc.row(r);
    const auto g = grad.row(r);
    for (std::size_t c = 0; c < a.size(); ++c) a[c] -= lr * g[c];
  }
}

SearchResult search_with(const LMParams& params, const VocabProjector& projector,
                         const PerturbedEmbedding& pe, const TaskPair& pair,
                         const CipherConfig& cfg) {
  check_pair_fits(pair, params.config);
  const EmbeddingObjective objective = [&](const Tensor2D& x, bool want_grad) {
    if (want_grad) return task_loss_and_grad(params, x, pair.target);
    return LossAndGrad{task_loss(params, x, pair.target), {}};
  };
  return projected_search(projector, params.embedding, gather(pe.e_prime, pair.input),
                          pair.input, frozen_positions(pair.input, cfg), cfg, objective);
}

}  // namespace

SearchResult projected_search(const VocabProjector& projector, const Tensor2D& table,
                              Tensor2D start, const TokenSeq& source,
                              const std::vector<bool>& frozen, const CipherConfig& cfg,
                              const EmbeddingObjective& objective) {
  if (start.rows() != source.size() || frozen.size() != source.size()) {
    throw ShapeError("projected_search: start, source and frozen lengths differ");
  }
  const auto evaluate = [&](const Tensor2D& acc, bool want_grad) {
    LossAndGrad lg = objective(gather(table, decode_rows(projector, acc, frozen, source)), want_grad);
    if (!std::isfinite(lg.loss)) throw NumericError("non-finite task loss");
    if (want_grad) require_finite(lg);
    return lg;
  };

  Tensor2D acc = std::move(start);
  LossAndGrad lg = evaluate(acc, true);
  SearchResult res{acc, lg.loss, lg.loss};
  if (cfg.mode == SearchMode::single_step) {
    step(acc, lg.grad, cfg.learning_rate, frozen);
    res.best_embeddings = acc;
    res.best_loss = evaluate(acc, false).loss;
    return res;
  }
  for (std::size_t t = 1; t <= cfg.inner_steps; ++t) {
    step(acc, lg.grad, cfg.learning_rate, frozen);
    // The last step's gradient would go unused.
    lg = evaluate(acc, t < cfg.inner_steps);
    if (lg.loss < res.best_loss) {
      res.best_loss = lg.loss;
      res.best_embeddings = acc;
    }
  }
  return res;
}

SearchResult discrete_gradient_search(const LMParams& params, const PerturbedEmbedding& pe,
                                      const TaskPair& pair, const CipherConfig& cfg) {
  cfg.validate();
  const VocabProjector projector(params.embedding, cfg.metric, special_ids());
  return search_with(params, projector, pe, pair, cfg);
}

CipherResult learn_cipher(const LMParams& params, const std::vector<TaskPair>& dataset,
                          const CipherConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw InputError("learn_cipher: empty dataset");
  const Tensor2D& table = params.embedding;
  if (params.config.vocab_size != table.rows()) {
    throw InputError("learn_cipher: embedding rows do not match vocab size");
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    try {
      check_pair_fits(dataset[i], params.config);
      for (const TokenSeq* s : {&dataset[i].input, &dataset[i].target}) {
        for (TokenId id : *s) {
          if (id >= table.rows()) throw InputError("token id outside the model vocabulary");
        }
      }
    } catch (const InputError& e) {
      throw InputError("learn_cipher: sample " + std::to_string(i) + ": " + e.what());
    }
  }

  const VocabProjector search_projector(table, cfg.metric, special_ids());
  CipherResult out{PerturbedEmbedding::from(table), ConfusionMap::identity(table.rows()), {}};
  std::vector<TokenId> current = out.map.mapping();

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);

  for (std::size_t i = 1; i <= cfg.max_samples; ++i) {
    IterationLog rec;
    rec.iteration = i;
    rec.sample = pick(rng);
    const TaskPair& pair = dataset[rec.sample];

    TokenSeq obfuscated(pair.input.size());
    for (std::size_t p = 0; p < pair.input.size(); ++p) obfuscated[p] = current[pair.input[p]];
    if (pair.input.size() >= 2) {
      rec.ppl_original = perplexity(params, pair.input);
      rec.ppl_obfuscated = perplexity(params, obfuscated);
    } else {
      rec.ppl_original = rec.ppl_obfuscated = 1.0;
    }
    rec.ppl_deviation = rec.ppl_obfuscated - rec.ppl_original;
    rec.threshold = cfg.ppl_slope * static_cast<double>(i) + cfg.ppl_intercept;
    rec.trained = ppl_gate(rec.ppl_obfuscated, rec.ppl_original, i, cfg);

    if (rec.trained) {
      SearchResult sr;
      try {
        sr = search_with(params, search_projector, out.perturbed, pair, cfg);
      } catch (const NumericError& e) {
        throw NumericError("learn_cipher: sample " + std::to_string(rec.sample) + ": " + e.what());
      }
      rec.initial_loss = sr.initial_loss;
      rec.best_loss = sr.best_loss;
      const TokenSeq chosen = decode_rows(search_projector, sr.best_embeddings,
                                          frozen_positions(pair.input, cfg), pair.input);
      for (std::size_t p = 0; p < pair.input.size(); ++p) {
        const TokenId src = pair.input[p];
        if (cfg.protected_ids.contains(src)) continue;
        auto dst = out.perturbed.e_prime.row(src);
        std::copy_n(table.row(chosen[p]).data(), table.cols(), dst.data());
        out.perturbed.touched.insert(src);
        if (current[src] != chosen[p]) ++rec.rows_changed;
        current[src] = chosen[p];
      }
    }
    const ConfusionMap snapshot(current);
    rec.moved_tokens = snapshot.moved();
    rec.injectivity_ratio = snapshot.injectivity_ratio();
    out.log.push_back(rec);
  }

  std::vector<TokenId> mapping = ConfusionMap::identity(table.rows()).mapping();
  const VocabProjector final_projector(table, cfg.metric, {});
  for (TokenId k : out.perturbed.touched) {
    mapping[k] = final_projector.nearest(out.perturbed.e_prime.row(k));
  }
  for (TokenId k : cfg.protected_ids) {
    if (k < mapping.size()) mapping[k] = k;
  }
  out.map = ConfusionMap(std::move(mapping));
  return out;
}

void write_training_log(std::ostream& out, const std::vector<IterationLog>& log) {
  for (const auto& r : log) {
    nlohmann::ordered_json j;
    j["iteration"] = r.iteration;
    j["sample"] = r.sample;
    j["trained"] = r.trained;
    j["ppl_original"] = r.ppl_original;
    j["ppl_obfuscated"] = r.ppl_obfuscated;
    j["ppl_deviation"] = r.ppl_deviation;
    j["threshold"] = r.threshold;
    j["initial_loss"] = r.initial_loss;
    j["best_loss"] = r.best_loss;
    j["rows_changed"] = r.rows_changed;
    j["moved_tokens"] = r.moved_tokens;
    j["injectivity_ratio"] = r.injectivity_ratio;
    out << j.dump() << '\n';
  }
}

}  // namespace codecipher
