// Acceptance suite: one PASS/FAIL line per criterion. Exit status 1 if any
// criterion fails, except those listed in kExpectedFailures, which still print
// FAIL. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "codecipher/cipher.hpp"
#include "codecipher/code_lm.hpp"
#include "codecipher/experiments.hpp"
#include "codecipher/metrics.hpp"

using namespace codecipher;

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};
constexpr std::uint64_t kTransferSeeds[] = {1, 2, 3};
constexpr double kAblationRates[] = {0.005, 0.01, 0.02};

// Transfer: the seed-3 map learned on the 2-layer model has a tiny own delta
// and costs about five times that on the 3-layer model. Not tuned away.
const std::set<int> kExpectedFailures = {9};

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

ExperimentConfig config_for(std::uint64_t seed) {
  ExperimentConfig cfg;  // shipped defaults: η 0.002, N 32, T 10, α 1.5, β 1/90
  cfg.seed = seed;
  cfg.cipher.seed = seed;
  return cfg;
}

/// Workbenches and comparisons are shared by several criteria; built on first use.
class Runs {
 public:
  const Workbench& workbench(std::uint64_t seed) {
    auto& slot = workbenches_[seed];
    if (!slot) slot = std::make_unique<Workbench>(prepare_workbench(config_for(seed)));
    return *slot;
  }
  const ComparisonResult& comparison(std::uint64_t seed) {
    auto& slot = comparisons_[seed];
    if (!slot) {
      slot = std::make_unique<ComparisonResult>(run_comparison(workbench(seed), config_for(seed)));
      record_cipher(workbench(seed).lm, slot->cipher, config_for(seed).cipher);
    }
    return *slot;
  }

  /// Criterion 5 looks at every learn_cipher run made anywhere in the suite.
  void record_cipher(const LMParams& lm, const CipherResult& res, const CipherConfig& cfg) {
    ++cipher_runs_;
    const Tensor2D& e = lm.embedding;
    std::string problem;
    if (res.map.size() != e.rows()) problem = "map is not total";
    for (TokenId k = 0; problem.empty() && k < res.map.size(); ++k) {
      if (res.map[k] >= e.rows()) problem = "map value out of range";
      bool found = false;
      const auto row = res.perturbed.e_prime.row(k);
      for (std::size_t r = 0; !found && r < e.rows(); ++r) {
        found = std::equal(row.begin(), row.end(), e.row(r).begin());
      }
      if (!found) problem = "E' row " + std::to_string(k) + " is not a row of E";
    }
    for (TokenId k : cfg.protected_ids) {
      if (problem.empty() && k < res.map.size() && res.map[k] != k) {
        problem = "protected id " + std::to_string(k) + " moved";
      }
    }
    if (!problem.empty()) invariant_failures_.push_back(problem);
  }
  std::size_t cipher_runs() const { return cipher_runs_; }
  const std::vector<std::string>& invariant_failures() const { return invariant_failures_; }

 private:
  std::map<std::uint64_t, std::unique_ptr<Workbench>> workbenches_;
  std::map<std::uint64_t, std::unique_ptr<ComparisonResult>> comparisons_;
  std::size_t cipher_runs_ = 0;
  std::vector<std::string> invariant_failures_;
};

// 1 --------------------------------------------------------------------------
Verdict gradient_check(Runs& runs) {
  const Workbench& wb = runs.workbench(1);
  std::mt19937_64 rng(101);
  std::size_t checked = 0, bad = 0;
  double worst = 0.0;
  for (std::size_t p = 0; p < 4; ++p) {
    const TaskPair& pair = wb.eval_pairs[p];
    Tensor2D e = embed(wb.lm, pair.input);
    const LossAndGrad lg = task_loss_and_grad(wb.lm, e, pair.target);
    std::uniform_int_distribution<std::size_t> pick(0, e.size() - 1);
    for (int k = 0; k < 10; ++k) {
      const std::size_t i = pick(rng);
      const double saved = e.values()[i];
      const double h = 1e-5;
      e.values()[i] = saved + h;
      const double up = task_loss(wb.lm, e, pair.target);
      e.values()[i] = saved - h;
      const double down = task_loss(wb.lm, e, pair.target);
      e.values()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = lg.grad.values()[i];
      const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      const double rel = std::abs(numeric - analytic) / scale;
      worst = std::max(worst, rel);
      ++checked;
      if (rel > 1e-3) ++bad;
    }
  }
  return {bad == 0 && checked >= 20, std::to_string(checked) + " coordinates, worst relative error " +
                                         fmt("%.2e", worst)};
}

// 2 --------------------------------------------------------------------------
Verdict projection_oracle(Runs&) {
  std::mt19937_64 rng(202);
  std::normal_distribution<double> n01;
  Tensor2D table(2048, 64);
  for (double& v : table.values()) v = n01(rng);
  std::size_t agree = 0, total = 0;
  for (auto metric : {ProjectionMetric::euclidean, ProjectionMetric::cosine}) {
    const VocabProjector cached(table, metric, {});
    for (int t = 0; t < 1000; ++t) {
      std::vector<double> v(64);
      for (double& x : v) x = n01(rng);
      double vn = 0.0;
      for (double x : v) vn += x * x;
      TokenId best = 0;
      double best_score = std::numeric_limits<double>::infinity();
      for (TokenId r = 0; r < table.rows(); ++r) {
        double score = 0.0, dot = 0.0, rn = 0.0;
        for (std::size_t c = 0; c < 64; ++c) {
          const double d = v[c] - table(r, c);
          score += d * d;
          dot += v[c] * table(r, c);
          rn += table(r, c) * table(r, c);
        }
        if (metric == ProjectionMetric::cosine) score = -dot / std::sqrt(vn * rn);
        if (score < best_score) {
          best_score = score;
          best = r;
        }
      }
      ++total;
      if (project_to_vocab(v, table, metric) == best && cached.nearest(v) == best) ++agree;
    }
  }
  return {agree == total, std::to_string(agree) + "/" + std::to_string(total) +
                              " agree (1000 vectors x 2 metrics, 2048x64)"};
}

// 3 --------------------------------------------------------------------------
Verdict edit_distance_oracle(Runs&) {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<int> len(0, 30), byte(0, 255), small(0, 3);
  std::size_t agree = 0;
  for (int t = 0; t < 10000; ++t) {
    std::string a(len(rng), ' '), b(len(rng), ' ');
    // Small alphabets give many equal characters, so the DP takes every branch.
    const bool narrow = t % 2 == 0;
    for (char& c : a) c = static_cast<char>(narrow ? 'a' + small(rng) : byte(rng));
    for (char& c : b) c = static_cast<char>(narrow ? 'a' + small(rng) : byte(rng));
    std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
    for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
    for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i)
      for (std::size_t j = 1; j <= b.size(); ++j)
        d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1])});
    const std::size_t m = std::max(a.size(), b.size());
    const double want = m == 0 ? 0.0 : 100.0 * static_cast<double>(d[a.size()][b.size()]) / static_cast<double>(m);
    if (normalized_edit_distance(a, b) == want) ++agree;
  }
  return {agree == 10000, std::to_string(agree) + "/10000 pairs exact"};
}

// 4 --------------------------------------------------------------------------
Verdict identity_control(Runs& runs) {
  const Workbench& wb = runs.workbench(1);
  ExperimentConfig cfg = config_for(1);
  cfg.cipher.learning_rate = 0.0;
  const CipherResult frozen = learn_cipher(wb.lm, wb.train_pairs, cfg.cipher);
  runs.record_cipher(wb.lm, frozen, cfg.cipher);
  std::size_t nonzero = 0;
  for (const ConfusionMap* m : {&frozen.map}) {
    const ConfusionMap id = ConfusionMap::identity(wb.vocab.size());
    for (const ConfusionMap* map : {m, &id}) {
      for (const auto& pair : wb.eval_pairs) nonzero += score_gap(wb.lm, pair, *map) != 0.0;
      const ObfuscationReport r = build_report(wb.lm, wb.eval_pairs, wb.vocab, *map);
      for (const auto& rec : r.records) {
        nonzero += rec.nll_delta() != 0.0;
        nonzero += rec.ppl_delta() != 0.0;
        nonzero += rec.edit_distance_pct != 0.0;
      }
      nonzero += r.summary.mean_nll_delta != 0.0;
      nonzero += r.summary.mean_ppl_delta != 0.0;
      nonzero += r.summary.mean_edit_distance != 0.0;
    }
  }
  const bool identity = frozen.map.is_identity();
  return {identity && nonzero == 0,
          std::string(identity ? "eta=0 map is the identity" : "eta=0 map moved tokens") + ", " +
              std::to_string(nonzero) + " nonzero deltas over " +
              std::to_string(wb.eval_pairs.size()) + " pairs x 2 maps"};
}

// 6 --------------------------------------------------------------------------
Verdict table_mirror(Runs& runs) {
  std::size_t wins = 0;
  double ppl_orig = 0.0, ppl_obf = 0.0;
  std::ostringstream per_seed;
  for (std::uint64_t seed : kSeeds) {
    const ComparisonResult& c = runs.comparison(seed);
    const MethodRow& learned = c.row("codecipher");
    const MethodRow& random = c.row(to_string(BaselineKind::random_perturb));
    const bool matched = random.matched;
    const bool win = matched && learned.report.summary.mean_nll_delta < random.report.summary.mean_nll_delta;
    wins += win;
    ppl_orig += learned.report.summary.mean_ppl_original;
    ppl_obf += learned.report.summary.mean_ppl_obfuscated;
    per_seed << " s" << seed << ":" << fmt("%.3f", learned.report.summary.mean_nll_delta) << "<"
             << fmt("%.3f", random.report.summary.mean_nll_delta) << (win ? "" : "(lost)")
             << (matched ? "" : "(unmatched)");
  }
  const std::size_t n = std::size(kSeeds);
  ppl_orig /= n;
  ppl_obf /= n;
  return {wins >= 4 && ppl_obf > ppl_orig,
          std::to_string(wins) + "/5 seeds learned NLL delta below random at matched edit distance;" +
              per_seed.str() + "; mean PPL " + fmt("%.2f", ppl_orig) + " -> " + fmt("%.2f", ppl_obf)};
}

// 7 --------------------------------------------------------------------------
Verdict ablation_mirror(Runs& runs) {
  std::map<double, std::size_t> wins;
  std::ostringstream detail;
  for (std::uint64_t seed : kSeeds) {
    const Workbench& wb = runs.workbench(seed);
    const ExperimentConfig cfg = config_for(seed);
    const auto rows = run_ablation(wb, cfg, std::vector<double>(std::begin(kAblationRates), std::end(kAblationRates)));
    for (const auto& r : rows) {
      const bool matched = r.discrete.matched &&
                           std::abs(r.discrete.report.summary.mean_edit_distance -
                                    r.single_step.report.summary.mean_edit_distance) <= 1.0;
      wins[r.single_step_lr] += matched && r.discrete.report.summary.mean_nll_delta <=
                                               r.single_step.report.summary.mean_nll_delta;
    }
    for (double lr : kAblationRates) {
      CipherConfig ss = cfg.cipher;
      ss.mode = SearchMode::single_step;
      ss.learning_rate = lr;
      runs.record_cipher(wb.lm, learn_cipher(wb.lm, wb.train_pairs, ss), ss);
    }
  }
  bool pass = true;
  for (double lr : kAblationRates) {
    pass = pass && wins[lr] >= 4;
    detail << " lr " << lr << ": " << wins[lr] << "/5";
  }
  return {pass, "discrete <= single-step at matched edit distance;" + detail.str()};
}

// 8 --------------------------------------------------------------------------
Verdict privacy_mirror(Runs& runs) {
  double learned_parse = 0.0, branch_parse = 0.0, learned_recall = 0.0, rename_recall = 0.0;
  std::vector<std::string> full_branch;
  for (std::uint64_t seed : kSeeds) {
    const ComparisonResult& c = runs.comparison(seed);
    learned_parse += c.row("codecipher").report.summary.parse_rate;
    branch_parse += c.row(to_string(BaselineKind::dead_branch)).report.summary.parse_rate;
    learned_recall += c.row("codecipher").attacker_recall;
    rename_recall += c.row(to_string(BaselineKind::rename_identifiers)).attacker_recall;
    // Matched intensities can be small; also check dead branches after every line.
    for (const auto* s : runs.workbench(seed).corpus.split(Split::held_out)) {
      full_branch.push_back(run_baseline({BaselineKind::dead_branch, 1.0, seed}, s->code));
    }
  }
  const double n = std::size(kSeeds);
  learned_parse /= n;
  branch_parse /= n;
  learned_recall /= n;
  rename_recall /= n;
  const double full_rate = parse_rate(full_branch);
  return {learned_parse <= 0.05 && branch_parse >= 0.90 && full_rate >= 0.90,
          "parse rate learned " + fmt("%.3f", learned_parse) + ", dead_branch matched " +
              fmt("%.3f", branch_parse) + " / full " + fmt("%.3f", full_rate) +
              "; attacker recall learned " + fmt("%.3f", learned_recall) + " vs renaming " +
              fmt("%.3f", rename_recall) + " (reported)"};
}

// 9 --------------------------------------------------------------------------
Verdict transfer_mirror(Runs& runs, std::vector<TransferResult>* keep = nullptr) {
  std::size_t pass_seeds = 0;
  std::ostringstream detail;
  for (std::uint64_t seed : kTransferSeeds) {
    const Workbench& wb = runs.workbench(seed);
    const ExperimentConfig cfg = config_for(seed);
    LMConfig deeper = wb.lm.config;
    deeper.n_layers = 3;
    const LMParams lm_b = train_lm(wb.train_sequences, deeper, cfg.lm_steps, derive_seed(seed, 3000), cfg.train);
    const TransferResult t = run_transfer(wb, cfg.cipher, wb.lm, lm_b);
    // The maps are exactly what learn_cipher returns on each model.
    const CipherResult a = learn_cipher(wb.lm, wb.train_pairs, cfg.cipher);
    const CipherResult b = learn_cipher(lm_b, wb.train_pairs, cfg.cipher);
    runs.record_cipher(wb.lm, a, cfg.cipher);
    runs.record_cipher(lm_b, b, cfg.cipher);
    const bool ok = t.delta[0][1] <= 2.0 * t.delta[0][0] && t.delta[1][0] <= 2.0 * t.delta[1][1];
    pass_seeds += ok;
    detail << " s" << seed << ": A " << fmt("%.4f", t.delta[0][0]) << "->B " << fmt("%.4f", t.delta[0][1])
           << ", B " << fmt("%.4f", t.delta[1][1]) << "->A " << fmt("%.4f", t.delta[1][0])
           << (ok ? "" : " (outside 2x)");
    if (keep) keep->push_back(t);
  }
  return {pass_seeds == std::size(kTransferSeeds),
          std::to_string(pass_seeds) + "/3 seeds with cross delta <= 2x own delta both ways;" + detail.str()};
}

// 10 -------------------------------------------------------------------------
Verdict determinism(Runs& runs) {
  const auto artifacts = [](const ComparisonResult& c, const Vocabulary& v) {
    std::ostringstream map, report;
    c.cipher.map.save_tsv(map, v, ProjectionMetric::euclidean);
    c.write_json(report, true);
    return std::make_pair(map.str(), report.str());
  };
  const auto first = artifacts(runs.comparison(1), runs.workbench(1).vocab);
  // A second run from scratch: new tokenizer, new LM, new cipher.
  const Workbench again = prepare_workbench(config_for(1));
  const auto second = artifacts(run_comparison(again, config_for(1)), again.vocab);
  std::ostringstream ta, tb;
  run_transfer(again, config_for(1).cipher, again.lm, again.lm).write_json(ta);
  run_transfer(runs.workbench(1), config_for(1).cipher, runs.workbench(1).lm, runs.workbench(1).lm).write_json(tb);
  const bool maps = first.first == second.first, reports = first.second == second.second;
  return {maps && reports && ta.str() == tb.str(),
          std::string("map TSV ") + (maps ? "identical" : "differs") + ", report JSON " +
              (reports ? "identical" : "differs") + ", transfer JSON " +
              (ta.str() == tb.str() ? "identical" : "differs") + " (" +
              std::to_string(first.first.size()) + " + " + std::to_string(first.second.size()) + " bytes)"};
}

Verdict invariants(Runs& runs) {
  // Make sure at least the comparison ciphers exist.
  for (std::uint64_t seed : kSeeds) runs.comparison(seed);
  const auto& f = runs.invariant_failures();
  return {f.empty(), std::to_string(runs.cipher_runs()) + " learn_cipher runs checked" +
                         (f.empty() ? std::string() : ", first failure: " + f.front())};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const auto wanted = [&](int id) { return only.empty() || only.count(id) > 0; };

  struct Criterion {
    int id;
    const char* name;
    std::function<Verdict(Runs&)> run;
  };
  // Criterion 5 runs last so it sees every cipher learned by the others.
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", gradient_check},
      {2, "projection oracle", projection_oracle},
      {3, "edit-distance oracle", edit_distance_oracle},
      {4, "identity control", identity_control},
      {6, "learned vs random at matched edit distance", table_mirror},
      {7, "discrete search vs single step", ablation_mirror},
      {8, "parse rate and attacker recall", privacy_mirror},
      {9, "cross-model transfer", [](Runs& r) { return transfer_mirror(r); }},
      {10, "determinism", determinism},
      {5, "permutation image and protected fixpoints", invariants},
  };

  Runs runs;
  int failures = 0;
  for (const auto& c : criteria) {
    if (!wanted(c.id)) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = c.run(runs);
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const bool expected = kExpectedFailures.count(c.id) > 0;
    failures += !v.pass && !expected;
    std::printf("%s criterion %d (%s): %s [%.1fs]%s\n", v.pass ? "PASS" : "FAIL", c.id, c.name,
                v.detail.c_str(), secs, !v.pass && expected ? " (expected failure)" : "");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
