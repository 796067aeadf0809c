#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "codecipher/cipher.hpp"
#include "codecipher/corpus.hpp"
#include "codecipher/metrics.hpp"
#include "codecipher/tensor.hpp"
#include "codecipher/tokenizer.hpp"

using namespace codecipher;

namespace {

Tensor2D random_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Tensor2D t(rows, cols);
  for (double& v : t.values()) v = n01(rng);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor2D a = random_tensor(n, 64, 1), b = random_tensor(64, 256, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(256);

void BM_Projection(benchmark::State& state) {
  const Tensor2D table = random_tensor(2048, 64, 3);
  const auto metric = state.range(0) ? ProjectionMetric::cosine : ProjectionMetric::euclidean;
  const VocabProjector projector(table, metric, {});
  const Tensor2D queries = random_tensor(64, 64, 4);
  for (auto _ : state) benchmark::DoNotOptimize(projector.nearest_rows(queries));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_Projection)->Arg(0)->Arg(1);

void BM_Encode(benchmark::State& state) {
  std::vector<std::string> codes;
  for (const auto& s : generate_toy_corpus(200, 5)) codes.push_back(s.code);
  const Vocabulary vocab = train_vocab(codes, 1024);
  std::size_t bytes = 0;
  for (auto _ : state) {
    for (const auto& c : codes) benchmark::DoNotOptimize(vocab.encode(c));
  }
  for (const auto& c : codes) bytes += c.size();
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * bytes));
}
BENCHMARK(BM_Encode);

void BM_EditDistance(benchmark::State& state) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> ch('a', 'h');
  const auto n = static_cast<std::size_t>(state.range(0));
  std::string a(n, ' '), b(n, ' ');
  for (char& c : a) c = static_cast<char>(ch(rng));
  for (char& c : b) c = static_cast<char>(ch(rng));
  for (auto _ : state) benchmark::DoNotOptimize(levenshtein(a, b));
}
BENCHMARK(BM_EditDistance)->Arg(30)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
