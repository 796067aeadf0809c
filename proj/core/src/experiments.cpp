#include "codecipher/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "codecipher/error.hpp"
#include "codecipher/toy_grammar.hpp"

namespace codecipher {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

const std::set<std::string, std::less<>>& known_keys() {
  static const std::set<std::string, std::less<>> keys{
      // experiment
      "dataset", "toy_corpus_size", "vocab", "lm_checkpoint", "lm_config", "cipher_config",
      "lm_steps", "baselines", "out_dir", "seed", "cipher_seed",
      // lm
      "d_model", "n_layers", "n_heads", "context_len", "vocab_size", "ff_mult",
      // training
      "batch_size", "train_learning_rate", "warmup_fraction", "grad_clip",
      // cipher
      "learning_rate", "max_samples", "inner_steps", "ppl_slope", "ppl_intercept", "metric",
      "mode", "protected_ids"};
  return keys;
}

void merge_into(ConfigFile& dst, const ConfigFile& src) {
  for (const auto& [k, v] : src.entries()) {
    if (!dst.has(k)) dst.set(k, v);
  }
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in{std::string(text)};
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

TokenSeq concat(const TokenSeq& a, const TokenSeq& b) {
  TokenSeq out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> d(0, i - 1);
    std::swap(order[i - 1], order[d(rng)]);
  }
  return order;
}

std::size_t quota(double level, std::size_t n) {
  const double raw = std::max(0.0, level) * static_cast<double>(n);
  return std::min(n, static_cast<std::size_t>(std::ceil(raw - 1e-9)));
}

/// Spreads one budget of ⌈level·Σsites⌉ edits over the programs through a
/// seeded permutation of all (program, site) slots, and returns each
/// program's share as a per-program level (count / sites). Shares only grow
/// with `level`, and the mean edit distance moves in one-site steps instead of
/// one site per program.
std::vector<double> pooled_levels(const std::vector<std::size_t>& sites, double level,
                                  std::uint64_t seed) {
  std::vector<std::size_t> owner;
  for (std::size_t i = 0; i < sites.size(); ++i) owner.insert(owner.end(), sites[i], i);
  const auto order = shuffled(owner.size(), derive_seed(seed, 0xffffffffull));
  std::vector<std::size_t> count(sites.size(), 0);
  for (std::size_t r = 0, k = quota(level, owner.size()); r < k; ++r) ++count[owner[order[r]]];
  std::vector<double> out(sites.size(), 0.0);
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (sites[i] > 0) {
      out[i] = count[i] == sites[i]
                   ? 1.0
                   : static_cast<double>(count[i]) / static_cast<double>(sites[i]);
    }
  }
  return out;
}

std::vector<double> map_levels(const std::vector<TaskPair>& pairs, const ConfusionMap& map,
                               double fraction, std::uint64_t seed) {
  if (fraction >= 1.0) return std::vector<double>(pairs.size(), 1.0);
  std::vector<std::size_t> sites;
  for (const auto& p : pairs) {
    sites.push_back(static_cast<std::size_t>(std::count_if(
        p.input.begin(), p.input.end(), [&](TokenId id) { return map[id] != id; })));
  }
  return pooled_levels(sites, fraction, seed);
}

std::vector<double> baseline_levels(const Workbench& wb, const std::vector<TaskPair>& pairs,
                                    BaselineKind kind, double intensity, std::uint64_t seed) {
  std::vector<std::size_t> sites;
  for (const auto& p : pairs) {
    // random_perturb edits the ids directly; the others edit the decoded text.
    sites.push_back(kind == BaselineKind::random_perturb
                        ? p.input.size()
                        : baseline_sites(kind, wb.vocab.decode(p.input), &wb.vocab));
  }
  return pooled_levels(sites, intensity, seed);
}

/// Obfuscated prefix and whole program produced by one baseline on one pair.
struct BaselineOutput {
  TokenSeq input;
  std::string program;
};

BaselineOutput baseline_on_pair(const Workbench& wb, const TaskPair& pair, BaselineKind kind,
                                double intensity, std::uint64_t seed, bool want_program) {
  BaselineOutput out;
  const std::size_t vocab_size = wb.vocab.size();
  if (kind == BaselineKind::random_perturb) {
    out.input = random_perturb_ids(pair.input, intensity, seed, vocab_size);
    if (want_program) {
      out.program =
          wb.vocab.decode(random_perturb_ids(concat(pair.input, pair.target), intensity, seed,
                                             vocab_size));
    }
    return out;
  }
  const BaselineSpec spec{kind, intensity, seed};
  out.input = wb.vocab.encode(run_baseline_fragment(spec, wb.vocab.decode(pair.input), &wb.vocab));
  if (want_program) {
    const std::string whole = wb.vocab.decode(concat(pair.input, pair.target));
    out.program = parse_program(whole).ok ? run_baseline(spec, whole, &wb.vocab)
                                          : run_baseline_fragment(spec, whole, &wb.vocab);
  }
  return out;
}

void attach_attack(const Workbench& wb, const std::vector<TaskPair>& pairs,
                   const std::vector<TokenSeq>& obfuscated, MethodRow& row) {
  const AttackResult attack = run_attack(wb, pairs, obfuscated);
  row.attacker_recall = attack.recall;
  row.deobfuscation_distance = attack.deobfuscation_distance;
}

void require_pairs(const std::vector<TaskPair>& pairs) {
  if (pairs.empty()) throw InputError("experiment: no evaluation pairs");
}

nlohmann::ordered_json row_json(const MethodRow& r) {
  nlohmann::ordered_json j;
  const auto& s = r.report.summary;
  j["method"] = r.method;
  j["intensity"] = r.intensity;
  j["matched"] = r.matched;
  j["warning"] = r.warning;
  j["edit_distance_pct"] = s.mean_edit_distance;
  j["ppl_original"] = s.mean_ppl_original;
  j["ppl_obfuscated"] = s.mean_ppl_obfuscated;
  j["ppl_delta"] = s.mean_ppl_delta;
  j["task_nll_original"] = s.mean_nll_original;
  j["task_nll_obfuscated"] = s.mean_nll_obfuscated;
  j["task_nll_delta"] = s.mean_nll_delta;
  j["parse_rate"] = s.parse_rate;
  j["attacker_recall"] = r.attacker_recall;
  j["deobfuscation_distance_pct"] = r.deobfuscation_distance;
  return j;
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << content;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return splitmix64(seed ^ splitmix64(index + 0x632be59bd9b4e019ull));
}

// ---------------------------------------------------------------------------
// configuration

ExperimentConfig ExperimentConfig::from(const ConfigFile& file) {
  ConfigFile merged = file;
  if (auto p = file.get("lm_config")) merge_into(merged, ConfigFile::load(*p));
  if (auto p = file.get("cipher_config")) merge_into(merged, ConfigFile::load(*p));
  if (const auto unknown = merged.unknown_keys(known_keys()); !unknown.empty()) {
    throw InputError("unknown config key '" + *unknown.begin() + "'");
  }

  ExperimentConfig cfg;
  cfg.dataset_path = merged.get_string("dataset", "");
  cfg.toy_corpus_size = merged.get_count("toy_corpus_size", cfg.toy_corpus_size);
  cfg.vocab_path = merged.get_string("vocab", "");
  cfg.lm_checkpoint = merged.get_string("lm_checkpoint", "");
  cfg.lm_config_path = merged.get_string("lm_config", "");
  cfg.cipher_config_path = merged.get_string("cipher_config", "");
  cfg.lm = lm_config_from(merged, cfg.lm);
  cfg.train = train_options_from(merged, cfg.train);
  cfg.lm_steps = merged.get_count("lm_steps", cfg.lm_steps);
  cfg.seed = merged.get_u64("seed", cfg.seed);
  cfg.cipher.seed = cfg.seed;
  cfg.cipher = cipher_config_from(merged, cfg.cipher);
  cfg.cipher.seed = merged.get_u64("cipher_seed", cfg.seed);
  if (auto list = merged.get("baselines")) {
    cfg.baselines.clear();
    for (const auto& name : split_list(*list)) cfg.baselines.push_back(parse_baseline_kind(name));
  }
  cfg.out_dir = merged.get_string("out_dir", "");
  return cfg;
}

void ExperimentConfig::validate() const {
  for (const std::string* p : {&dataset_path, &vocab_path, &lm_checkpoint, &lm_config_path,
                               &cipher_config_path}) {
    if (!p->empty() && !fs::exists(*p)) throw InputError("no such file: " + *p);
  }
  lm.validate();
  cipher.validate();
}

// ---------------------------------------------------------------------------
// workbench

Workbench prepare_workbench(const ExperimentConfig& cfg) {
  cfg.validate();
  Workbench wb;
  if (!cfg.dataset_path.empty()) {
    wb.corpus = ingest(cfg.dataset_path, cfg.seed);
  } else {
    std::vector<std::string> lines;
    for (const auto& s : generate_toy_corpus(cfg.toy_corpus_size, cfg.seed)) {
      nlohmann::ordered_json j;
      j["code"] = s.code;
      if (s.docstring) j["docstring"] = *s.docstring;
      lines.push_back(j.dump());
    }
    wb.corpus = ingest_lines(lines, cfg.seed);
  }
  const auto train_codes = wb.corpus.codes(Split::train);
  const auto held_codes = wb.corpus.codes(Split::held_out);
  if (train_codes.empty()) throw InputError("experiment: corpus has no training samples");

  wb.vocab = cfg.vocab_path.empty() ? train_vocab(train_codes, cfg.lm.vocab_size)
                                    : Vocabulary::load_file(cfg.vocab_path);
  for (const auto& code : train_codes) wb.train_sequences.push_back(wb.vocab.encode(code));

  if (!cfg.lm_checkpoint.empty()) {
    wb.lm = LMParams::load_file(cfg.lm_checkpoint);
    if (wb.lm.config.vocab_size != wb.vocab.size()) {
      throw InputError("checkpoint vocabulary size " + std::to_string(wb.lm.config.vocab_size) +
                       " does not match the tokenizer's " + std::to_string(wb.vocab.size()));
    }
  } else {
    LMConfig lm = cfg.lm;
    lm.vocab_size = wb.vocab.size();
    wb.lm = train_lm(wb.train_sequences, lm, cfg.lm_steps, cfg.seed, cfg.train);
  }
  wb.train_pairs = completion_pairs(train_codes, wb.vocab, wb.lm.config.context_len);
  wb.eval_pairs = completion_pairs(held_codes, wb.vocab, wb.lm.config.context_len);
  return wb;
}

TokenSeq apply_map_thinned(const ConfusionMap& map, const TokenSeq& ids, double fraction,
                           std::uint64_t seed) {
  if (fraction >= 1.0) return apply_map(map, ids);
  std::vector<std::size_t> changing;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (map[ids[i]] != ids[i]) changing.push_back(i);
  }
  const auto order = shuffled(changing.size(), seed);
  const std::size_t k = quota(fraction, changing.size());
  TokenSeq out = ids;
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t pos = changing[order[r]];
    out[pos] = map[ids[pos]];
  }
  return out;
}

// ---------------------------------------------------------------------------
// measuring one method

AttackResult run_attack(const Workbench& wb, const std::vector<TaskPair>& pairs,
                        const std::vector<TokenSeq>& obfuscated) {
  require_pairs(pairs);
  if (obfuscated.size() != pairs.size()) {
    throw InputError("run_attack: " + std::to_string(obfuscated.size()) +
                     " obfuscated inputs for " + std::to_string(pairs.size()) + " pairs");
  }
  AttackResult result;
  result.guess = frequency_attack(obfuscated, wb.train_sequences, wb.vocab.size());
  std::vector<double> recall, distance;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const TokenSeq recovered = apply_map(result.guess, obfuscated[i]);
    recall.push_back(token_recall(pairs[i].input, recovered));
    distance.push_back(
        normalized_edit_distance(wb.vocab.decode(pairs[i].input), wb.vocab.decode(recovered)));
  }
  result.recall = mean(recall);
  result.deobfuscation_distance = mean(distance);
  return result;
}

MethodRow evaluate_map(const Workbench& wb, const LMParams& model,
                       const std::vector<TaskPair>& pairs, const ConfusionMap& map,
                       const std::string& name, double fraction, std::uint64_t seed) {
  require_pairs(pairs);
  MethodRow row;
  row.method = name;
  row.intensity = fraction;
  std::vector<TokenSeq> obfuscated;
  const auto levels = map_levels(pairs, map, fraction, seed);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::uint64_t s = derive_seed(seed, i);
    const TokenSeq x = apply_map_thinned(map, pairs[i].input, levels[i], s);
    std::string program = wb.vocab.decode(x);
    program += wb.vocab.decode(apply_map_thinned(map, pairs[i].target, levels[i], ~s));
    try {
      row.report.records.push_back(measure_pair(model, wb.vocab, pairs[i], x, program));
    } catch (const std::invalid_argument& e) {
      throw InputError(name + ", sample " + std::to_string(i) + ": " + e.what());
    }
    obfuscated.push_back(
        fit_obfuscated_input(x, pairs[i].target.size(), model.config.context_len));
  }
  row.report.summary = summarize(row.report.records);
  attach_attack(wb, pairs, obfuscated, row);
  return row;
}

MethodRow evaluate_baseline(const Workbench& wb, const LMParams& model,
                            const std::vector<TaskPair>& pairs, BaselineKind kind,
                            double intensity, std::uint64_t seed) {
  require_pairs(pairs);
  MethodRow row;
  row.method = to_string(kind);
  row.intensity = intensity;
  std::vector<TokenSeq> obfuscated;
  const auto levels = baseline_levels(wb, pairs, kind, intensity, seed);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto out = baseline_on_pair(wb, pairs[i], kind, levels[i], derive_seed(seed, i), true);
    try {
      row.report.records.push_back(measure_pair(model, wb.vocab, pairs[i], out.input, out.program));
    } catch (const std::invalid_argument& e) {
      throw InputError(row.method + ", sample " + std::to_string(i) + ": " + e.what());
    }
    obfuscated.push_back(
        fit_obfuscated_input(out.input, pairs[i].target.size(), model.config.context_len));
  }
  row.report.summary = summarize(row.report.records);
  attach_attack(wb, pairs, obfuscated, row);
  return row;
}

double map_edit_distance(const Workbench& wb, const std::vector<TaskPair>& pairs,
                         const ConfusionMap& map, double fraction, std::uint64_t seed) {
  std::vector<double> d;
  const auto levels = map_levels(pairs, map, fraction, seed);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const TokenSeq x = fit_obfuscated_input(
        apply_map_thinned(map, pairs[i].input, levels[i], derive_seed(seed, i)),
        pairs[i].target.size(), wb.lm.config.context_len);
    d.push_back(normalized_edit_distance(wb.vocab.decode(pairs[i].input), wb.vocab.decode(x)));
  }
  return mean(d);
}

double baseline_edit_distance(const Workbench& wb, const std::vector<TaskPair>& pairs,
                              BaselineKind kind, double intensity, std::uint64_t seed) {
  std::vector<double> d;
  const auto levels = baseline_levels(wb, pairs, kind, intensity, seed);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const TokenSeq input =
        baseline_on_pair(wb, pairs[i], kind, levels[i], derive_seed(seed, i), false).input;
    const TokenSeq x = fit_obfuscated_input(input, pairs[i].target.size(), wb.lm.config.context_len);
    d.push_back(normalized_edit_distance(wb.vocab.decode(pairs[i].input), wb.vocab.decode(x)));
  }
  return mean(d);
}

// ---------------------------------------------------------------------------
// comparison

const MethodRow& ComparisonResult::row(const std::string& method) const {
  for (const auto& r : rows) {
    if (r.method == method) return r;
  }
  throw InputError("comparison has no row '" + method + "'");
}

void ComparisonResult::write_json(std::ostream& out, bool with_records) const {
  nlohmann::ordered_json j;
  auto& c = j["cipher"];
  c["moved_tokens"] = cipher.map.moved();
  c["injectivity_ratio"] = cipher.map.injectivity_ratio();
  std::size_t trained = 0;
  for (const auto& l : cipher.log) trained += l.trained ? 1 : 0;
  c["iterations"] = cipher.log.size();
  c["trained_iterations"] = trained;
  auto& methods = j["methods"];
  methods = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    auto jr = row_json(r);
    if (with_records) {
      std::ostringstream rec;
      r.report.write_json(rec);
      jr["report"] = nlohmann::ordered_json::parse(rec.str())["records"];
    }
    methods.push_back(std::move(jr));
  }
  out << j.dump(2) << '\n';
}

void ComparisonResult::write_table(std::ostream& out) const {
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::left << std::setw(20) << "method" << std::right << std::setw(10) << "intensity"
      << std::setw(10) << "edit%" << std::setw(10) << "ppl" << std::setw(12) << "nll_delta"
      << std::setw(8) << "parse" << std::setw(9) << "recall" << "  note\n";
  out << std::fixed;
  for (const auto& r : rows) {
    const auto& s = r.report.summary;
    out << std::left << std::setw(20) << r.method << std::right << std::setprecision(3)
        << std::setw(10) << r.intensity << std::setprecision(2) << std::setw(10)
        << s.mean_edit_distance << std::setw(10) << s.mean_ppl_obfuscated << std::setprecision(4)
        << std::setw(12) << s.mean_nll_delta << std::setprecision(2) << std::setw(8)
        << s.parse_rate << std::setw(9) << r.attacker_recall << "  "
        << (r.matched ? "" : "unmatched") << (r.warning.empty() ? "" : " " + r.warning) << '\n';
  }
  out.flags(flags);
  out.precision(precision);
}

ComparisonResult run_comparison(const Workbench& wb, const ExperimentConfig& cfg) {
  require_pairs(wb.train_pairs);
  require_pairs(wb.eval_pairs);
  ComparisonResult result;
  result.cipher = learn_cipher(wb.lm, wb.train_pairs, cfg.cipher);
  const ConfusionMap identity = ConfusionMap::identity(wb.vocab.size());
  result.rows.push_back(evaluate_map(wb, wb.lm, wb.eval_pairs, identity, "origin"));
  result.rows.push_back(evaluate_map(wb, wb.lm, wb.eval_pairs, result.cipher.map, "codecipher"));
  const double target = result.rows.back().report.summary.mean_edit_distance;

  for (BaselineKind kind : cfg.baselines) {
    const std::uint64_t seed = derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(kind));
    const MatchResult m = match_knob(
        [&](double k) { return baseline_edit_distance(wb, wb.eval_pairs, kind, k, seed); },
        target);
    MethodRow row = evaluate_baseline(wb, wb.lm, wb.eval_pairs, kind, m.knob, seed);
    row.matched = m.matched;
    if (!m.matched) {
      std::ostringstream w;
      w << "edit distance " << std::fixed << std::setprecision(2)
        << row.report.summary.mean_edit_distance << " vs target " << target;
      row.warning = w.str();
    }
    result.rows.push_back(std::move(row));
  }
  return result;
}

ComparisonResult run_comparison(const ExperimentConfig& cfg) {
  const Workbench wb = prepare_workbench(cfg);
  ComparisonResult result = run_comparison(wb, cfg);
  if (!cfg.out_dir.empty()) {
    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    result.cipher.map.save_tsv_file((dir / "map.tsv").string(), wb.vocab, cfg.cipher.metric);
    std::ostringstream log, json, table, csv;
    write_training_log(log, result.cipher.log);
    result.write_json(json);
    result.write_table(table);
    result.row("codecipher").report.write_csv(csv);
    write_text_file(dir / "training_log.jsonl", log.str());
    write_text_file(dir / "comparison.json", json.str());
    write_text_file(dir / "comparison.txt", table.str());
    write_text_file(dir / "codecipher_records.csv", csv.str());
  }
  return result;
}

// ---------------------------------------------------------------------------
// sweep

void SweepResult::write_csv(std::ostream& out) const {
  out << "method,level,edit_distance_pct,task_nll_delta,ppl_obfuscated,parse_rate\n";
  const auto precision = out.precision(10);
  for (const auto& p : points) {
    out << p.method << ',' << p.level << ',' << p.edit_distance << ',' << p.nll_delta << ','
        << p.ppl_obfuscated << ',' << p.parse_rate << '\n';
  }
  out.precision(precision);
}

SweepResult run_sweep(const Workbench& wb, const ExperimentConfig& cfg, const ConfusionMap& map,
                      const std::vector<double>& levels) {
  if (levels.size() < 2) throw InputError("run_sweep: need at least two levels");
  for (double l : levels) {
    if (!(l >= 0.0 && l <= 1.0)) throw InputError("run_sweep: level outside [0, 1]");
  }
  SweepResult result;
  auto point = [](const MethodRow& r, double level) {
    const auto& s = r.report.summary;
    return SweepPoint{r.method, level, s.mean_edit_distance, s.mean_nll_delta,
                      s.mean_ppl_obfuscated, s.parse_rate};
  };
  std::vector<SweepPoint> learned, random;
  for (double level : levels) {
    const auto row = evaluate_map(wb, wb.lm, wb.eval_pairs, map, "codecipher", level, cfg.seed);
    learned.push_back(point(row, level));
    result.points.push_back(learned.back());
  }
  for (BaselineKind kind : cfg.baselines) {
    const std::uint64_t seed = derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(kind));
    for (double level : levels) {
      const auto row = evaluate_baseline(wb, wb.lm, wb.eval_pairs, kind, level, seed);
      result.points.push_back(point(row, level));
      if (kind == BaselineKind::random_perturb) random.push_back(result.points.back());
    }
  }

  std::sort(random.begin(), random.end(), [](const SweepPoint& a, const SweepPoint& b) {
    return a.edit_distance < b.edit_distance;
  });
  std::size_t wins = 0;
  for (const auto& p : learned) {
    if (p.level == 0.0 || random.size() < 2) continue;
    if (p.edit_distance < random.front().edit_distance ||
        p.edit_distance > random.back().edit_distance) {
      continue;
    }
    double reference = random.back().nll_delta;
    for (std::size_t i = 1; i < random.size(); ++i) {
      if (p.edit_distance <= random[i].edit_distance) {
        const auto& a = random[i - 1];
        const auto& b = random[i];
        const double span = b.edit_distance - a.edit_distance;
        const double t = span > 0.0 ? (p.edit_distance - a.edit_distance) / span : 0.0;
        reference = a.nll_delta + t * (b.nll_delta - a.nll_delta);
        break;
      }
    }
    ++result.compared;
    if (p.nll_delta <= reference) ++wins;
  }
  result.dominance =
      result.compared == 0 ? 0.0 : static_cast<double>(wins) / static_cast<double>(result.compared);
  return result;
}

// ---------------------------------------------------------------------------
// ablation

std::vector<AblationRow> run_ablation(const Workbench& wb, const ExperimentConfig& cfg,
                                      const std::vector<double>& single_step_lrs) {
  require_pairs(wb.eval_pairs);
  const ConfusionMap discrete = learn_cipher(wb.lm, wb.train_pairs, cfg.cipher).map;
  const std::uint64_t thin_seed = derive_seed(cfg.seed, 2000);
  const double discrete_full = map_edit_distance(wb, wb.eval_pairs, discrete, 1.0, thin_seed);

  std::vector<AblationRow> rows;
  for (double lr : single_step_lrs) {
    CipherConfig ss = cfg.cipher;
    ss.mode = SearchMode::single_step;
    ss.learning_rate = lr;
    const ConfusionMap single = learn_cipher(wb.lm, wb.train_pairs, ss).map;
    const double single_full = map_edit_distance(wb, wb.eval_pairs, single, 1.0, thin_seed);

    AblationRow row;
    row.single_step_lr = lr;
    double fd = 1.0, fs = 1.0;
    bool matched = true;
    if (discrete_full > single_full) {
      row.target_edit_distance = single_full;
      const auto m = match_knob(
          [&](double f) { return map_edit_distance(wb, wb.eval_pairs, discrete, f, thin_seed); },
          single_full);
      fd = m.knob;
      matched = m.matched;
    } else {
      row.target_edit_distance = discrete_full;
      const auto m = match_knob(
          [&](double f) { return map_edit_distance(wb, wb.eval_pairs, single, f, thin_seed); },
          discrete_full);
      fs = m.knob;
      matched = m.matched;
    }
    row.discrete = evaluate_map(wb, wb.lm, wb.eval_pairs, discrete, "discrete", fd, thin_seed);
    row.single_step = evaluate_map(wb, wb.lm, wb.eval_pairs, single, "single_step", fs, thin_seed);
    row.discrete.matched = row.single_step.matched = matched;
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// transfer

double TransferResult::ratio(int learned_on) const {
  const double own = delta[learned_on][learned_on];
  const double cross = delta[learned_on][1 - learned_on];
  if (own == 0.0) return cross == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  return cross / own;
}

void TransferResult::write_json(std::ostream& out) const {
  nlohmann::ordered_json j;
  j["delta"] = {{delta[0][0], delta[0][1]}, {delta[1][0], delta[1][1]}};
  j["edit_distance_pct"] = {edit_distance[0], edit_distance[1]};
  const double r0 = ratio(0), r1 = ratio(1);
  j["ratio_a_on_b"] = std::isfinite(r0) ? nlohmann::ordered_json(r0) : nlohmann::ordered_json();
  j["ratio_b_on_a"] = std::isfinite(r1) ? nlohmann::ordered_json(r1) : nlohmann::ordered_json();
  j["moved_tokens"] = {maps[0].moved(), maps[1].moved()};
  out << j.dump(2) << '\n';
}

TransferResult run_transfer(const Workbench& wb, const CipherConfig& cipher,
                            const LMParams& model_a, const LMParams& model_b) {
  for (const LMParams* m : {&model_a, &model_b}) {
    if (m->config.vocab_size != wb.vocab.size()) {
      throw InputError("run_transfer: model vocabulary size " +
                       std::to_string(m->config.vocab_size) + " != " +
                       std::to_string(wb.vocab.size()));
    }
  }
  TransferResult result;
  const LMParams* models[2] = {&model_a, &model_b};
  for (int i = 0; i < 2; ++i) result.maps[i] = learn_cipher(*models[i], wb.train_pairs, cipher).map;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const auto row = evaluate_map(wb, *models[j], wb.eval_pairs, result.maps[i], "transfer");
      result.delta[i][j] = row.report.summary.mean_nll_delta;
      if (i == j) result.edit_distance[i] = row.report.summary.mean_edit_distance;
    }
  }
  return result;
}

}  // namespace codecipher
