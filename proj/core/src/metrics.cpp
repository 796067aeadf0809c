#include "codecipher/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "codecipher/error.hpp"
#include "codecipher/toy_grammar.hpp"

namespace codecipher {

std::size_t levenshtein(std::string_view a, std::string_view b) {
  // Common affixes never contribute.
  while (!a.empty() && !b.empty() && a.front() == b.front()) {
    a.remove_prefix(1);
    b.remove_prefix(1);
  }
  while (!a.empty() && !b.empty() && a.back() == b.back()) {
    a.remove_suffix(1);
    b.remove_suffix(1);
  }
  if (a.size() < b.size()) std::swap(a, b);
  if (b.empty()) return a.size();

  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      const std::size_t sub = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
      row[j] = std::min({sub, up + 1, row[j - 1] + 1});
      diag = up;
    }
  }
  return row[b.size()];
}

double normalized_edit_distance(std::string_view a, std::string_view b) {
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 0.0;
  return 100.0 * static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

double token_recall(const TokenSeq& original, const TokenSeq& recovered) {
  if (original.empty()) throw InputError("token_recall: empty original sequence");
  std::unordered_map<TokenId, std::size_t> available;
  for (TokenId id : recovered) ++available[id];
  std::size_t hits = 0;
  for (TokenId id : original) {
    auto it = available.find(id);
    if (it != available.end() && it->second > 0) {
      --it->second;
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(original.size());
}

double score_gap(const LMParams& params, const TaskPair& pair, const ConfusionMap& map) {
  const double before = task_nll(params, pair.input, pair.target);
  const double after = task_nll(params, apply_map(map, pair.input), pair.target);
  return std::abs(after - before);
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double prefix_perplexity(const LMParams& params, TokenSeq x) {
  if (x.empty()) x.push_back(kUnk);
  if (x.size() < 2) x.insert(x.begin(), kBos);
  return perplexity(params, x);
}

}  // namespace

TokenSeq fit_obfuscated_input(TokenSeq x, std::size_t target_len, std::size_t context_len) {
  const std::size_t room = context_len > target_len ? context_len - target_len : 0;
  if (x.size() > room) x.erase(x.begin(), x.end() - static_cast<std::ptrdiff_t>(room));
  if (x.empty()) x.push_back(kUnk);
  return x;
}

ReportSummary summarize(const std::vector<SampleRecord>& records) {
  ReportSummary s;
  s.count = records.size();
  std::vector<double> po, pb, ed, no, nb, nd, pd;
  std::size_t parsed = 0;
  for (const auto& r : records) {
    po.push_back(r.ppl_original);
    pb.push_back(r.ppl_obfuscated);
    ed.push_back(r.edit_distance_pct);
    no.push_back(r.task_nll_original);
    nb.push_back(r.task_nll_obfuscated);
    nd.push_back(r.nll_delta());
    pd.push_back(r.ppl_delta());
    if (r.parsed) ++parsed;
  }
  s.mean_ppl_original = mean_of(po);
  s.median_ppl_original = median_of(po);
  s.mean_ppl_obfuscated = mean_of(pb);
  s.median_ppl_obfuscated = median_of(pb);
  s.mean_edit_distance = mean_of(ed);
  s.median_edit_distance = median_of(ed);
  s.mean_nll_original = mean_of(no);
  s.median_nll_original = median_of(no);
  s.mean_nll_obfuscated = mean_of(nb);
  s.median_nll_obfuscated = median_of(nb);
  s.mean_nll_delta = mean_of(nd);
  s.median_nll_delta = median_of(nd);
  s.mean_ppl_delta = mean_of(pd);
  s.parse_rate =
      records.empty() ? 0.0 : static_cast<double>(parsed) / static_cast<double>(records.size());
  return s;
}

void ObfuscationReport::write_json(std::ostream& out) const {
  nlohmann::ordered_json j;
  auto& s = j["summary"];
  s["count"] = summary.count;
  s["mean_ppl_original"] = summary.mean_ppl_original;
  s["median_ppl_original"] = summary.median_ppl_original;
  s["mean_ppl_obfuscated"] = summary.mean_ppl_obfuscated;
  s["median_ppl_obfuscated"] = summary.median_ppl_obfuscated;
  s["mean_edit_distance_pct"] = summary.mean_edit_distance;
  s["median_edit_distance_pct"] = summary.median_edit_distance;
  s["mean_task_nll_original"] = summary.mean_nll_original;
  s["median_task_nll_original"] = summary.median_nll_original;
  s["mean_task_nll_obfuscated"] = summary.mean_nll_obfuscated;
  s["median_task_nll_obfuscated"] = summary.median_nll_obfuscated;
  s["mean_task_nll_delta"] = summary.mean_nll_delta;
  s["median_task_nll_delta"] = summary.median_nll_delta;
  s["mean_ppl_delta"] = summary.mean_ppl_delta;
  s["parse_rate"] = summary.parse_rate;
  auto& rs = j["records"];
  rs = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    nlohmann::ordered_json jr;
    jr["ppl_original"] = r.ppl_original;
    jr["ppl_obfuscated"] = r.ppl_obfuscated;
    jr["edit_distance_pct"] = r.edit_distance_pct;
    jr["task_nll_original"] = r.task_nll_original;
    jr["task_nll_obfuscated"] = r.task_nll_obfuscated;
    jr["parsed"] = r.parsed;
    rs.push_back(std::move(jr));
  }
  out << j.dump(2) << '\n';
}

void ObfuscationReport::write_csv(std::ostream& out) const {
  out << "index,ppl_original,ppl_obfuscated,edit_distance_pct,task_nll_original,"
         "task_nll_obfuscated,parsed\n";
  const auto old_precision = out.precision(17);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    out << i << ',' << r.ppl_original << ',' << r.ppl_obfuscated << ',' << r.edit_distance_pct
        << ',' << r.task_nll_original << ',' << r.task_nll_obfuscated << ','
        << (r.parsed ? 1 : 0) << '\n';
  }
  out.precision(old_precision);
}

SampleRecord measure_pair(const LMParams& params, const Vocabulary& vocab, const TaskPair& pair,
                          const TokenSeq& obfuscated_input, std::string_view obfuscated_program) {
  check_pair_fits(pair, params.config);
  const TokenSeq x_obf =
      fit_obfuscated_input(obfuscated_input, pair.target.size(), params.config.context_len);

  SampleRecord r;
  r.ppl_original = prefix_perplexity(params, pair.input);
  r.ppl_obfuscated = prefix_perplexity(params, x_obf);
  r.edit_distance_pct = normalized_edit_distance(vocab.decode(pair.input), vocab.decode(x_obf));
  r.task_nll_original = task_nll(params, pair.input, pair.target);
  r.task_nll_obfuscated = task_nll(params, x_obf, pair.target);
  r.parsed = parse_program(obfuscated_program).ok;
  return r;
}

ObfuscationReport build_report(const LMParams& params, const std::vector<TaskPair>& dataset,
                               const Vocabulary& vocab, const ConfusionMap& map) {
  if (dataset.empty()) throw InputError("build_report: empty dataset");
  ObfuscationReport report;
  report.records.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const TaskPair& pair = dataset[i];
    try {
      const TokenSeq x_obf = apply_map(map, pair.input);
      std::string program = vocab.decode(x_obf);
      if (pair.kind == TaskKind::completion) program += vocab.decode(apply_map(map, pair.target));
      report.records.push_back(measure_pair(params, vocab, pair, x_obf, program));
    } catch (const NumericError& e) {
      throw NumericError("sample " + std::to_string(i) + ": " + e.what());
    } catch (const IndexError& e) {
      throw IndexError("sample " + std::to_string(i) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw InputError("sample " + std::to_string(i) + ": " + e.what());
    }
  }
  report.summary = summarize(report.records);
  return report;
}

}  // namespace codecipher
