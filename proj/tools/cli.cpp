#include "cli.hpp"

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "codecipher/error.hpp"
#include "codecipher/experiments.hpp"

namespace codecipher::cli {

namespace {

namespace fs = std::filesystem;

constexpr const char* kDefaultOutDir = "codecipher-out";

/// A request the parser accepted but that cannot be served as given.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every output file funnels through here and is written only by commit(),
/// so a failing command leaves nothing behind.
class ArtifactWriter {
 public:
  void add(fs::path path, std::string content) {
    files_.emplace_back(std::move(path), std::move(content));
  }

  void commit() const {
    for (const auto& [path, content] : files_) {
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      std::ofstream out(path, std::ios::binary);
      out << content;
      if (!out) throw InputError("cannot write " + path.string());
    }
  }

  std::vector<fs::path> paths() const {
    std::vector<fs::path> out;
    for (const auto& f : files_) out.push_back(f.first);
    return out;
  }

 private:
  std::vector<std::pair<fs::path, std::string>> files_;
};

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::vector<std::string> overrides;  // key=value
};

/// Options shared by the subcommands that build a workbench.
struct WorkbenchOptions {
  std::string corpus;
  std::string vocab;
  std::string lm;
  std::optional<std::size_t> steps;
};

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

/// Config file, then --set overrides, then subcommand flags; --seed and
/// --out-dir beat the file, which beats the environment.
ConfigFile assemble(const GlobalOptions& g,
                    const std::vector<std::pair<std::string, std::string>>& extra = {}) {
  ConfigFile file;
  if (!g.config_path.empty()) file = ConfigFile::load(g.config_path);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    file.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  for (const auto& [k, v] : extra) {
    if (!v.empty()) file.set(k, v);
  }
  if (g.seed) {
    file.set("seed", std::to_string(*g.seed));
  } else if (const char* env = std::getenv(kSeedEnv); env && !file.has("seed")) {
    file.set("seed", env);
  }
  if (!g.out_dir.empty()) {
    file.set("out_dir", g.out_dir);
  } else if (const char* env = std::getenv(kOutDirEnv); env && *env && !file.has("out_dir")) {
    file.set("out_dir", env);
  }
  return file;
}

ExperimentConfig experiment_config(const GlobalOptions& g, const WorkbenchOptions& w) {
  ExperimentConfig cfg = ExperimentConfig::from(assemble(
      g, {{"dataset", w.corpus},
          {"vocab", w.vocab},
          {"lm_checkpoint", w.lm},
          {"lm_steps", w.steps ? std::to_string(*w.steps) : std::string{}}}));
  if (cfg.out_dir.empty()) cfg.out_dir = kDefaultOutDir;
  return cfg;
}

void add_workbench_options(CLI::App* sub, WorkbenchOptions& w) {
  sub->add_option("--corpus", w.corpus, "JSONL corpus (default: bundled toy corpus)")
      ->check(CLI::ExistingFile);
  sub->add_option("--vocab", w.vocab, "Tokenizer file (default: train one)")
      ->check(CLI::ExistingFile);
  sub->add_option("--lm", w.lm, "LM checkpoint (default: train one)")->check(CLI::ExistingFile);
  sub->add_option("--steps", w.steps, "LM training steps when no checkpoint is given");
}

template <class F>
std::string render(F&& write) {
  std::ostringstream s;
  write(s);
  return s.str();
}

std::string read_all(std::istream& in) {
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_input(const std::string& path, std::istream& in) {
  if (path.empty() || path == "-") return read_all(in);
  std::ifstream file(path, std::ios::binary);
  if (!file) throw InputError("cannot open " + path);
  return read_all(file);
}

void emit(const std::string& text, const std::string& output, std::ostream& out,
          ArtifactWriter& writer) {
  if (output.empty() || output == "-") {
    writer.commit();
    out << text;
  } else {
    writer.add(output, text);
    writer.commit();
  }
}

/// Tokenizer, and LM when it was trained here, so later commands can reuse them.
void add_model_artifacts(ArtifactWriter& writer, const Workbench& wb, const ExperimentConfig& cfg) {
  const fs::path dir(cfg.out_dir);
  writer.add(dir / "vocab.txt", render([&](std::ostream& s) { wb.vocab.save(s); }));
  if (cfg.lm_checkpoint.empty()) {
    writer.add(dir / "lm.bin", render([&](std::ostream& s) { wb.lm.save(s); }));
  }
}

ConfusionMap load_map_for(const std::string& path, std::size_t vocab_size) {
  ConfusionMap map = ConfusionMap::load_tsv_file(path);
  if (map.size() != vocab_size) {
    throw InputError("map " + path + " covers " + std::to_string(map.size()) +
                     " ids but the vocabulary has " + std::to_string(vocab_size));
  }
  return map;
}

void add_cipher_artifacts(ArtifactWriter& writer, const fs::path& map_path,
                          const fs::path& log_path, const CipherResult& cipher,
                          const Workbench& wb, ProjectionMetric metric) {
  writer.add(map_path, render([&](std::ostream& s) { cipher.map.save_tsv(s, wb.vocab, metric); }));
  writer.add(log_path, render([&](std::ostream& s) { write_training_log(s, cipher.log); }));
}

std::vector<TokenSeq> held_out_sequences(const Workbench& wb) {
  std::vector<TokenSeq> out;
  for (const auto& code : wb.corpus.codes(Split::held_out)) {
    TokenSeq ids = wb.vocab.encode(code);
    if (ids.size() > wb.lm.config.context_len) ids.resize(wb.lm.config.context_len);
    if (ids.size() >= 2) out.push_back(std::move(ids));
  }
  return out;
}

void report_files(std::ostream& out, const ArtifactWriter& writer) {
  for (const auto& p : writer.paths()) out << "wrote " << p.string() << '\n';
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_train_lm(const GlobalOptions& g, const WorkbenchOptions& w, std::ostream& out) {
  const ExperimentConfig cfg = experiment_config(g, w);
  const Workbench wb = prepare_workbench(cfg);
  const auto held = held_out_sequences(wb);

  nlohmann::ordered_json j;
  j["vocab_size"] = wb.vocab.size();
  j["d_model"] = wb.lm.config.d_model;
  j["n_layers"] = wb.lm.config.n_layers;
  j["n_heads"] = wb.lm.config.n_heads;
  j["context_len"] = wb.lm.config.context_len;
  j["steps"] = cfg.lm_checkpoint.empty() ? cfg.lm_steps : 0;
  j["seed"] = cfg.seed;
  j["held_out_ppl"] = nullptr;
  j["unigram_ppl"] = nullptr;
  if (!held.empty()) {
    j["held_out_ppl"] = corpus_perplexity(wb.lm, held);
    j["unigram_ppl"] = unigram_perplexity(wb.train_sequences, held, wb.vocab.size());
  }

  ArtifactWriter writer;
  add_model_artifacts(writer, wb, cfg);
  writer.add(fs::path(cfg.out_dir) / "lm_summary.json", j.dump(2) + "\n");
  writer.commit();
  report_files(out, writer);
  return kExitOk;
}

int cmd_learn_cipher(const GlobalOptions& g, const WorkbenchOptions& w,
                     const std::string& map_out, std::ostream& out) {
  const ExperimentConfig cfg = experiment_config(g, w);
  const Workbench wb = prepare_workbench(cfg);
  const CipherResult cipher = learn_cipher(wb.lm, wb.train_pairs, cfg.cipher);

  const fs::path dir(cfg.out_dir);
  ArtifactWriter writer;
  add_model_artifacts(writer, wb, cfg);
  add_cipher_artifacts(writer, map_out.empty() ? dir / "map.tsv" : fs::path(map_out),
                       dir / "training_log.jsonl", cipher, wb, cfg.cipher.metric);
  writer.commit();
  out << "moved " << cipher.map.moved() << " of " << cipher.map.size() << " tokens\n";
  report_files(out, writer);
  return kExitOk;
}

int cmd_obfuscate(const GlobalOptions& g, const std::string& map_path, const std::string& vocab,
                  const std::string& input, const std::string& output, std::istream& in,
                  std::ostream& out) {
  const ConfigFile file = assemble(g);
  const std::string vocab_path = vocab.empty() ? file.get_string("vocab", "") : vocab;
  const ConfusionMap map = ConfusionMap::load_tsv_file(map_path);
  const std::string code = read_input(input, in);

  std::string text;
  if (vocab_path.empty()) {
    // decode(encode(x)) == x under any vocabulary, so the identity needs none.
    if (!map.is_identity()) throw UsageError("obfuscate: --vocab is required for this map");
    text = code;
  } else {
    const Vocabulary v = Vocabulary::load_file(vocab_path);
    if (map.size() != v.size()) {
      throw InputError("map covers " + std::to_string(map.size()) +
                       " ids but the vocabulary has " + std::to_string(v.size()));
    }
    text = obfuscate_text(map, v, code);
  }
  ArtifactWriter writer;
  emit(text, output, out, writer);
  return kExitOk;
}

int cmd_baseline(const GlobalOptions& g, const std::string& kind, double intensity,
                 bool fragment, const std::string& vocab, const std::string& input,
                 const std::string& output, std::istream& in, std::ostream& out) {
  const ConfigFile file = assemble(g);
  const std::string vocab_path = vocab.empty() ? file.get_string("vocab", "") : vocab;
  const BaselineSpec spec{parse_baseline_kind(kind), intensity, file.get_u64("seed", 0)};
  spec.validate();
  if (spec.kind == BaselineKind::random_perturb && vocab_path.empty()) {
    throw UsageError("baseline: random_perturb needs --vocab");
  }
  std::optional<Vocabulary> v;
  if (!vocab_path.empty()) v = Vocabulary::load_file(vocab_path);
  const std::string code = read_input(input, in);
  const Vocabulary* vp = v ? &*v : nullptr;
  const std::string text =
      fragment ? run_baseline_fragment(spec, code, vp) : run_baseline(spec, code, vp);
  ArtifactWriter writer;
  emit(text, output, out, writer);
  return kExitOk;
}

int cmd_evaluate(const GlobalOptions& g, const WorkbenchOptions& w, const std::string& map_path,
                 bool with_records, std::ostream& out) {
  const ExperimentConfig cfg = experiment_config(g, w);
  const Workbench wb = prepare_workbench(cfg);
  const fs::path dir(cfg.out_dir);
  ArtifactWriter writer;
  add_model_artifacts(writer, wb, cfg);

  if (!map_path.empty()) {
    const ConfusionMap map = load_map_for(map_path, wb.vocab.size());
    const MethodRow row = evaluate_map(wb, wb.lm, wb.eval_pairs, map, "map");
    writer.add(dir / "report.json", render([&](std::ostream& s) { row.report.write_json(s); }));
    writer.add(dir / "report.csv", render([&](std::ostream& s) { row.report.write_csv(s); }));
    writer.commit();
    const auto& s = row.report.summary;
    out << "edit% " << s.mean_edit_distance << "  nll_delta " << s.mean_nll_delta << "  ppl "
        << s.mean_ppl_original << " -> " << s.mean_ppl_obfuscated << "  parse " << s.parse_rate
        << '\n';
    report_files(out, writer);
    return kExitOk;
  }

  const ComparisonResult result = run_comparison(wb, cfg);
  add_cipher_artifacts(writer, dir / "map.tsv", dir / "training_log.jsonl", result.cipher, wb,
                       cfg.cipher.metric);
  writer.add(dir / "comparison.json",
             render([&](std::ostream& s) { result.write_json(s, with_records); }));
  const std::string table = render([&](std::ostream& s) { result.write_table(s); });
  writer.add(dir / "comparison.txt", table);
  writer.add(dir / "codecipher_records.csv",
             render([&](std::ostream& s) { result.row("codecipher").report.write_csv(s); }));
  writer.commit();
  out << table;
  report_files(out, writer);
  return kExitOk;
}

int cmd_sweep(const GlobalOptions& g, const WorkbenchOptions& w, const std::string& map_path,
              const std::vector<double>& levels, std::ostream& out) {
  const ExperimentConfig cfg = experiment_config(g, w);
  const Workbench wb = prepare_workbench(cfg);
  const fs::path dir(cfg.out_dir);
  ArtifactWriter writer;
  add_model_artifacts(writer, wb, cfg);

  ConfusionMap map;
  if (map_path.empty()) {
    const CipherResult cipher = learn_cipher(wb.lm, wb.train_pairs, cfg.cipher);
    add_cipher_artifacts(writer, dir / "map.tsv", dir / "training_log.jsonl", cipher, wb,
                         cfg.cipher.metric);
    map = cipher.map;
  } else {
    map = load_map_for(map_path, wb.vocab.size());
  }
  const SweepResult sweep = run_sweep(wb, cfg, map, levels);
  nlohmann::ordered_json j;
  j["levels"] = levels;
  j["dominance"] = sweep.dominance;
  j["compared"] = sweep.compared;
  writer.add(dir / "sweep.csv", render([&](std::ostream& s) { sweep.write_csv(s); }));
  writer.add(dir / "sweep.json", j.dump(2) + "\n");
  writer.commit();
  out << "dominance " << sweep.dominance << " over " << sweep.compared << " levels\n";
  report_files(out, writer);
  return kExitOk;
}

int cmd_transfer(const GlobalOptions& g, const WorkbenchOptions& w, const std::string& lm_b,
                 std::optional<std::size_t> layers_b, std::ostream& out) {
  const ExperimentConfig cfg = experiment_config(g, w);
  const Workbench wb = prepare_workbench(cfg);
  const fs::path dir(cfg.out_dir);
  ArtifactWriter writer;
  add_model_artifacts(writer, wb, cfg);

  LMParams model_b;
  if (!lm_b.empty()) {
    model_b = LMParams::load_file(lm_b);
  } else {
    LMConfig config_b = wb.lm.config;
    config_b.n_layers = layers_b.value_or(config_b.n_layers + 1);
    model_b = train_lm(wb.train_sequences, config_b, cfg.lm_steps, derive_seed(cfg.seed, 3000),
                       cfg.train);
    writer.add(dir / "lm_b.bin", render([&](std::ostream& s) { model_b.save(s); }));
  }
  const TransferResult result = run_transfer(wb, cfg.cipher, wb.lm, model_b);
  for (int i = 0; i < 2; ++i) {
    writer.add(dir / (i == 0 ? "map_a.tsv" : "map_b.tsv"), render([&](std::ostream& s) {
                 result.maps[i].save_tsv(s, wb.vocab, cfg.cipher.metric);
               }));
  }
  writer.add(dir / "transfer.json", render([&](std::ostream& s) { result.write_json(s); }));
  writer.commit();
  out << "nll delta  on A      on B\n"
      << "from A   " << result.delta[0][0] << "  " << result.delta[0][1] << '\n'
      << "from B   " << result.delta[1][0] << "  " << result.delta[1][1] << '\n';
  report_files(out, writer);
  return kExitOk;
}

int cmd_attack(const GlobalOptions& g, const WorkbenchOptions& w, const std::string& map_path,
               std::ostream& out) {
  const ExperimentConfig cfg = experiment_config(g, w);
  const Workbench wb = prepare_workbench(cfg);
  const ConfusionMap map = load_map_for(map_path, wb.vocab.size());
  std::vector<TokenSeq> obfuscated;
  for (const auto& pair : wb.eval_pairs) {
    obfuscated.push_back(fit_obfuscated_input(apply_map(map, pair.input), pair.target.size(),
                                              wb.lm.config.context_len));
  }
  const AttackResult attack = run_attack(wb, wb.eval_pairs, obfuscated);
  double before = 0.0;
  for (std::size_t i = 0; i < obfuscated.size(); ++i) {
    before += normalized_edit_distance(wb.vocab.decode(wb.eval_pairs[i].input),
                                       wb.vocab.decode(obfuscated[i]));
  }
  before /= static_cast<double>(obfuscated.size());

  nlohmann::ordered_json j;
  j["count"] = obfuscated.size();
  j["attacker_recall"] = attack.recall;
  j["edit_distance_pct"] = before;
  j["deobfuscation_distance_pct"] = attack.deobfuscation_distance;
  const fs::path dir(cfg.out_dir);
  ArtifactWriter writer;
  add_model_artifacts(writer, wb, cfg);
  writer.add(dir / "attack.json", j.dump(2) + "\n");
  writer.add(dir / "attack_map.tsv", render([&](std::ostream& s) {
               attack.guess.save_tsv(s, wb.vocab, cfg.cipher.metric);
             }));
  writer.commit();
  out << "recall " << attack.recall << "  edit% before " << before << " after "
      << attack.deobfuscation_distance << '\n';
  report_files(out, writer);
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::istream& in, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"Learned token confusion maps for private code LLM queries", "codecipher"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config_path, "key = value configuration file")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Experiment seed (overrides config and environment)");
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.add_option("--set", g.overrides, "Config override, repeatable")
      ->type_name("KEY=VALUE")
      ->check(CLI::Validator(
          [](std::string& s) {
            return s.find('=') == std::string::npos ? std::string("expected KEY=VALUE")
                                                    : std::string();
          },
          "KEY=VALUE"));

  WorkbenchOptions w;
  std::string map_path, map_out, vocab, input, output, kind, lm_b;
  double intensity = 0.0;
  bool fragment = false, with_records = false;
  std::vector<double> levels{0.0, 0.25, 0.5, 0.75, 1.0};
  std::optional<std::size_t> layers_b;

  auto* train = app.add_subcommand("train-lm", "Train the tokenizer and language model");
  add_workbench_options(train, w);

  auto* learn = app.add_subcommand("learn-cipher", "Learn a confusion map");
  add_workbench_options(learn, w);
  learn->add_option("--map-out", map_out, "Map TSV path (default: <out-dir>/map.tsv)");

  auto* obf = app.add_subcommand("obfuscate", "Apply a confusion map to code");
  obf->add_option("--map", map_path, "Map TSV")->required()->check(CLI::ExistingFile);
  obf->add_option("--vocab", vocab, "Tokenizer file")->check(CLI::ExistingFile);
  obf->add_option("input", input, "Input file (default: stdin)");
  obf->add_option("-o,--output", output, "Output file (default: stdout)");

  auto* base = app.add_subcommand("baseline", "Apply a rule-based obfuscation");
  base->add_option("--kind", kind, "Baseline kind")
      ->required()
      ->check(CLI::IsMember(
          {"random_perturb", "rename_identifiers", "dead_branch", "remove_symbols"}));
  base->add_option("--intensity", intensity, "Intensity in [0, 1]")
      ->required()
      ->check(CLI::Range(0.0, 1.0));
  base->add_flag("--fragment", fragment, "Do not require the input to parse");
  base->add_option("--vocab", vocab, "Tokenizer file (random_perturb)")->check(CLI::ExistingFile);
  base->add_option("input", input, "Input file (default: stdin)");
  base->add_option("-o,--output", output, "Output file (default: stdout)");

  auto* eval = app.add_subcommand(
      "evaluate", "Compare a learned map with the baselines, or report on a given map");
  add_workbench_options(eval, w);
  eval->add_option("--map", map_path, "Report on this map instead")->check(CLI::ExistingFile);
  eval->add_flag("--records", with_records, "Include per-sample records in comparison.json");

  auto* sweep = app.add_subcommand("sweep", "Performance against obfuscation level");
  add_workbench_options(sweep, w);
  sweep->add_option("--map", map_path, "Map TSV (default: learn one)")->check(CLI::ExistingFile);
  sweep->add_option("--levels", levels, "Comma-separated levels in [0, 1]")
      ->delimiter(',')
      ->check(CLI::Range(0.0, 1.0));

  auto* transfer = app.add_subcommand("transfer", "Cross-model portability of learned maps");
  add_workbench_options(transfer, w);
  transfer->add_option("--lm-b", lm_b, "Second LM checkpoint (default: train one)")
      ->check(CLI::ExistingFile);
  transfer->add_option("--layers-b", layers_b, "Depth of the second LM when trained here");

  auto* attack = app.add_subcommand("attack", "Frequency attack on an obfuscated held-out set");
  add_workbench_options(attack, w);
  attack->add_option("--map", map_path, "Map TSV")->required()->check(CLI::ExistingFile);

  CLI::App* active = &app;
  try {
    app.parse(argc, argv);
    active = app.get_subcommands().front();
    if (active == train) return cmd_train_lm(g, w, out);
    if (active == learn) return cmd_learn_cipher(g, w, map_out, out);
    if (active == obf) return cmd_obfuscate(g, map_path, vocab, input, output, in, out);
    if (active == base) {
      return cmd_baseline(g, kind, intensity, fragment, vocab, input, output, in, out);
    }
    if (active == eval) return cmd_evaluate(g, w, map_path, with_records, out);
    if (active == sweep) return cmd_sweep(g, w, map_path, levels, out);
    if (active == transfer) return cmd_transfer(g, w, lm_b, layers_b, out);
    return cmd_attack(g, w, map_path, out);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    const auto extra = app.remaining();
    if (subs.empty() && !extra.empty()) {
      err << "error: unknown subcommand '" << extra.front() << "'\n\n";
    } else {
      err << "error: " << e.what() << "\n\n";
    }
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << active->help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace codecipher::cli
