#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "codecipher/config_file.hpp"
#include "codecipher/error.hpp"
#include "codecipher/experiments.hpp"
#include "support.hpp"

using namespace codecipher;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("codecipher_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string jsonl_line(const std::string& code, const std::string& doc = "") {
  nlohmann::json j;
  j["code"] = code;
  if (!doc.empty()) j["docstring"] = doc;
  return j.dump();
}

ConfigFile parse_config(const std::string& text) {
  std::istringstream in(text);
  return ConfigFile::parse(in, "test.cfg");
}

ExperimentConfig small_config(std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.toy_corpus_size = 80;
  cfg.lm.d_model = 16;
  cfg.lm.n_layers = 1;
  cfg.lm.n_heads = 2;
  cfg.lm.context_len = 128;
  cfg.lm.vocab_size = 400;
  cfg.lm_steps = 40;
  cfg.seed = seed;
  cfg.cipher.seed = seed;
  cfg.cipher.max_samples = 8;
  cfg.cipher.inner_steps = 3;
  cfg.cipher.learning_rate = 0.02;
  return cfg;
}

const Workbench& small_workbench() {
  static const Workbench wb = prepare_workbench(small_config(1));
  return wb;
}

}  // namespace

TEST_CASE("ingesting JSON lines") {
  std::vector<std::string> lines;
  for (int i = 0; i < 100; ++i) {
    lines.push_back(jsonl_line("def f" + std::to_string(i) + "(a):\n    return a\n",
                               i % 2 ? "doc" : ""));
  }
  const Corpus c = ingest_lines(lines, 7);
  CHECK(c.split(Split::train).size() == 90);
  CHECK(c.split(Split::held_out).size() == 10);
  CHECK(c.parse_fraction == 1.0);
  CHECK_FALSE(c.parse_warning);
  CHECK(c.samples[1].docstring.value() == "doc");
  CHECK_FALSE(c.samples[0].docstring.has_value());

  const Corpus again = ingest_lines(lines, 7);
  CHECK(again.codes(Split::held_out) == c.codes(Split::held_out));
  CHECK(ingest_lines(lines, 8).codes(Split::held_out) != c.codes(Split::held_out));

  const std::vector<std::string> train_codes = c.codes(Split::train);
  const std::set<std::string> train(train_codes.begin(), train_codes.end());
  for (const auto& h : c.codes(Split::held_out)) CHECK(train.count(h) == 0);

  std::vector<std::string> bad = lines;
  bad[41] = R"({"docstring": "no code"})";
  try {
    ingest_lines(bad, 1);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("42") != std::string::npos);
  }
  bad[41] = "{not json";
  CHECK_THROWS_AS(ingest_lines(bad, 1), FormatError);
  CHECK_THROWS_AS(ingest_lines({}, 1), InputError);

  std::vector<std::string> junk(20, jsonl_line("def (:"));
  CHECK(ingest_lines(junk, 1).parse_warning);

  const fs::path dir = scratch_dir("ingest");
  std::ofstream(dir / "empty.jsonl").close();
  CHECK_THROWS_AS(ingest((dir / "empty.jsonl").string(), 1), InputError);
  write_jsonl((dir / "toy.jsonl").string(), generate_toy_corpus(30, 2));
  const Corpus toy = ingest((dir / "toy.jsonl").string(), 3);
  CHECK(toy.samples.size() == 30);
  CHECK(toy.split(Split::held_out).size() == 3);
}

TEST_CASE("completion and summarization pairs") {
  std::vector<std::string> codes;
  for (const auto& s : generate_toy_corpus(20, 4)) codes.push_back(s.code);
  const Vocabulary v = train_vocab(codes, 350);
  const auto pairs = completion_pairs(codes, v, 64);
  REQUIRE(!pairs.empty());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    CHECK(p.kind == TaskKind::completion);
    CHECK(p.input.size() + p.target.size() <= 64);
    CHECK(p.target.size() >= p.input.size());
    CHECK(p.target.size() <= p.input.size() + 1);
  }
  const Corpus c = ingest_lines({jsonl_line("def f(a):\n    return a\n", "Return a.")}, 1);
  std::vector<const CodeSample*> all;
  for (const auto& s : c.samples) all.push_back(&s);
  const auto summ = summarization_pairs(all, v, 128);
  REQUIRE(summ.size() == 1);
  CHECK(v.decode(summ[0].target) == "Return a.");
  CHECK(summ[0].kind == TaskKind::summarization);
}

TEST_CASE("configuration files") {
  const ConfigFile f = parse_config(
      "# comment\n\nlearning_rate = 0.002\nppl_intercept = 1/90  # trailing\nmax_samples=32\n"
      "metric = cosine\nseed = 5\nseed = 6\nbaselines = random_perturb, dead_branch\n");
  CHECK(f.get_real("ppl_intercept", 0.0) == doctest::Approx(1.0 / 90.0));
  CHECK(f.get_u64("seed", 0) == 6);
  CHECK(f.get_count("missing", 17) == 17);
  const ExperimentConfig cfg = ExperimentConfig::from(f);
  CHECK(cfg.cipher.learning_rate == 0.002);
  CHECK(cfg.cipher.max_samples == 32);
  CHECK(cfg.cipher.metric == ProjectionMetric::cosine);
  CHECK(cfg.seed == 6);
  CHECK(cfg.cipher.seed == 6);
  CHECK(cfg.baselines == std::vector<BaselineKind>{BaselineKind::random_perturb, BaselineKind::dead_branch});

  CHECK_THROWS_AS(parse_config("no equals sign\n"), FormatError);
  CHECK_THROWS_AS(parse_config(" = 3\n"), FormatError);
  CHECK_THROWS_AS(ExperimentConfig::from(parse_config("bogus_key = 1\n")), InputError);
  CHECK_THROWS_AS(parse_config("max_samples = -3\n").get_count("max_samples", 0), InputError);
  CHECK_THROWS_AS(parse_config("x = yes please\n").get_bool("x", false), InputError);
  CHECK_THROWS_AS(ConfigFile::load("/nonexistent/codecipher.cfg"), InputError);

  ExperimentConfig missing;
  missing.dataset_path = "/nonexistent/corpus.jsonl";
  CHECK_THROWS_AS(missing.validate(), InputError);
}

TEST_CASE("seed derivation and thinning") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(42, i));
  CHECK(seen.size() == 1000);
  CHECK(derive_seed(42, 3) == derive_seed(42, 3));
  CHECK(derive_seed(42, 3) != derive_seed(43, 3));

  support::Gen g(5);
  std::vector<TokenId> raw(50);
  for (TokenId k = 0; k < 50; ++k) raw[k] = k % 3 ? static_cast<TokenId>((k + 7) % 50) : k;
  const ConfusionMap m(raw);
  for (int trial = 0; trial < 100; ++trial) {
    const TokenSeq x = g.ids(1 + g.index(40), 0, 50);
    const double lo = g.uniform(0.0, 1.0), hi = g.uniform(lo, 1.0);
    const TokenSeq a = apply_map_thinned(m, x, lo, 9), b = apply_map_thinned(m, x, hi, 9);
    std::size_t changing = 0, changed = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (m[x[i]] != x[i]) ++changing;
      if (b[i] != x[i]) ++changed;
      if (a[i] != x[i]) CHECK(b[i] == a[i]);
      CHECK((b[i] == x[i] || b[i] == m[x[i]]));
    }
    CHECK(changed == static_cast<std::size_t>(std::ceil(hi * changing - 1e-9)));
    CHECK(apply_map_thinned(m, x, 1.0, 9) == apply_map(m, x));
    CHECK(apply_map_thinned(m, x, 0.0, 9) == x);
  }
}

TEST_CASE("knob matching") {
  const auto linear = [](double k) { return 40.0 * k; };
  const MatchResult hit = match_knob(linear, 13.0);
  CHECK(hit.matched);
  CHECK(std::abs(hit.edit_distance - 13.0) <= 1.0);
  const MatchResult out_of_reach = match_knob(linear, 55.0);
  CHECK_FALSE(out_of_reach.matched);
  CHECK(out_of_reach.knob == 1.0);
  const auto steps = [](double k) { return k < 0.5 ? 0.0 : 30.0; };
  CHECK_FALSE(match_knob(steps, 15.0).matched);
}

TEST_CASE("a small comparison end to end") {
  const Workbench& wb = small_workbench();
  CHECK(wb.vocab.size() <= 400);
  CHECK(!wb.eval_pairs.empty());
  const ExperimentConfig cfg = small_config(1);
  const ComparisonResult res = run_comparison(wb, cfg);
  REQUIRE(res.rows.size() == 2 + cfg.baselines.size());
  const MethodRow& origin = res.row("origin");
  CHECK(origin.report.summary.mean_nll_delta == 0.0);
  CHECK(origin.report.summary.mean_ppl_delta == 0.0);
  CHECK(origin.report.summary.mean_edit_distance == 0.0);
  CHECK(res.rows[1].method == "codecipher");
  CHECK_THROWS_AS(res.row("nonexistent"), InputError);

  std::ostringstream a, b, table;
  res.write_json(a, true);
  run_comparison(wb, cfg).write_json(b, true);
  CHECK(a.str() == b.str());
  const auto j = nlohmann::json::parse(a.str());
  REQUIRE(j.contains("methods"));
  for (const auto& row : j["methods"]) {
    for (const char* key : {"method", "intensity", "matched", "edit_distance_pct", "ppl_delta",
                            "task_nll_delta", "parse_rate", "attacker_recall",
                            "deobfuscation_distance_pct", "report"}) {
      CHECK_MESSAGE(row.contains(key), key);
    }
  }
  res.write_table(table);
  CHECK(table.str().find("codecipher") != std::string::npos);
}

TEST_CASE("an identity map reports zero everywhere") {
  const Workbench& wb = small_workbench();
  ExperimentConfig cfg = small_config(1);
  cfg.cipher.learning_rate = 0.0;
  const ComparisonResult res = run_comparison(wb, cfg);
  CHECK(res.cipher.map.is_identity());
  const auto& s = res.row("codecipher").report.summary;
  CHECK(s.mean_nll_delta == 0.0);
  CHECK(s.mean_ppl_delta == 0.0);
  CHECK(s.mean_edit_distance == 0.0);
  for (const auto& pair : wb.eval_pairs) CHECK(score_gap(wb.lm, pair, res.cipher.map) == 0.0);
}

TEST_CASE("sweeps, ablation and transfer on the small setup") {
  const Workbench& wb = small_workbench();
  const ExperimentConfig cfg = small_config(1);
  const CipherResult learned = learn_cipher(wb.lm, wb.train_pairs, cfg.cipher);

  const SweepResult sweep = run_sweep(wb, cfg, learned.map, {0.0, 0.5, 1.0});
  for (const auto& p : sweep.points) {
    if (p.level == 0.0) {
      CHECK(p.edit_distance == 0.0);
      CHECK(p.nll_delta == 0.0);
    }
  }
  CHECK(sweep.dominance >= 0.0);
  CHECK(sweep.dominance <= 1.0);
  CHECK_THROWS_AS(run_sweep(wb, cfg, learned.map, {0.5}), InputError);
  CHECK_THROWS_AS(run_sweep(wb, cfg, learned.map, {0.0, 1.5}), InputError);

  const auto ablation = run_ablation(wb, cfg, {0.01});
  REQUIRE(ablation.size() == 1);
  CHECK(ablation[0].single_step_lr == 0.01);

  const TransferResult t = run_transfer(wb, cfg.cipher, wb.lm, wb.lm);
  CHECK(t.delta[0][0] == t.delta[0][1]);
  CHECK(t.maps[0] == learned.map);
  const MethodRow own = evaluate_map(wb, wb.lm, wb.eval_pairs, learned.map, "own");
  CHECK(t.delta[0][0] == own.report.summary.mean_nll_delta);

  LMParams other = wb.lm;
  other.config.vocab_size += 1;
  CHECK_THROWS_AS(run_transfer(wb, cfg.cipher, wb.lm, other), InputError);
}
