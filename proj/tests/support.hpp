#pragma once

// Hand-rolled generators and oracles shared by the unit tests.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "codecipher/code_lm.hpp"
#include "codecipher/tensor.hpp"
#include "codecipher/types.hpp"

namespace support {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(rng_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  bool coin() { return index(2) == 1; }

  codecipher::Tensor2D tensor(std::size_t rows, std::size_t cols, double sd = 1.0) {
    codecipher::Tensor2D t(rows, cols);
    for (double& v : t.values()) v = normal(sd);
    return t;
  }

  codecipher::TokenSeq ids(std::size_t n, std::size_t lo, std::size_t hi) {
    codecipher::TokenSeq out(n);
    for (auto& id : out) id = static_cast<codecipher::TokenId>(lo + index(hi - lo));
    return out;
  }

  std::string text(std::size_t max_len, const std::string& alphabet) {
    std::string s(index(max_len + 1), ' ');
    for (char& c : s) c = alphabet[index(alphabet.size())];
    return s;
  }

  /// Arbitrary bytes, including NUL and high bytes.
  std::string bytes(std::size_t max_len) {
    std::string s(index(max_len + 1), '\0');
    for (char& c : s) c = static_cast<char>(index(256));
    return s;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// |a − n| ≤ max(abs_floor, rel · max(|a|, |n|)).
inline bool close(double analytic, double numeric, double rel = 1e-3, double abs_floor = 1e-6) {
  return std::abs(analytic - numeric) <= std::max(abs_floor, rel * std::max(std::abs(analytic), std::abs(numeric)));
}

/// Central difference of `f` in coordinate `i` of `x`, restoring `x`.
inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-4) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

inline codecipher::LMConfig tiny_config(std::size_t vocab_size, std::size_t context_len = 32) {
  codecipher::LMConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.context_len = context_len;
  c.vocab_size = vocab_size;
  c.ff_mult = 2;
  return c;
}

/// Randomised weights at a scale where every nonlinearity is exercised.
inline codecipher::LMParams noisy_lm(std::size_t vocab_size, std::uint64_t seed,
                                     std::size_t context_len = 32) {
  codecipher::LMParams p = codecipher::init_params(tiny_config(vocab_size, context_len), seed);
  Gen g(seed ^ 0x5eed);
  for (codecipher::Tensor2D* t : p.tensors()) {
    for (double& v : t->values()) v += g.normal(0.3);
  }
  return p;
}

}  // namespace support
