#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include "codecipher/cipher.hpp"
#include "codecipher/code_lm.hpp"

namespace codecipher {

/// Plain-text `key = value` settings. `#` starts a comment anywhere on a line;
/// blank lines are ignored; a repeated key keeps its last value.
class ConfigFile {
 public:
  /// Throws FormatError naming `origin` and the line for a line without `=` or
  /// with an empty key.
  static ConfigFile parse(std::istream& in, const std::string& origin = "<config>");
  /// Throws InputError when the file cannot be opened.
  static ConfigFile load(const std::string& path);

  bool has(std::string_view key) const;
  std::optional<std::string> get(std::string_view key) const;
  void set(std::string key, std::string value);
  const std::map<std::string, std::string, std::less<>>& entries() const noexcept {
    return entries_;
  }

  /// Typed lookups; throw InputError naming the key when the value is malformed.
  /// Reals accept `a/b` fractions such as `1/90`.
  std::string get_string(std::string_view key, std::string fallback) const;
  double get_real(std::string_view key, double fallback) const;
  std::size_t get_count(std::string_view key, std::size_t fallback) const;
  std::uint64_t get_u64(std::string_view key, std::uint64_t fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;

  /// Keys not in `known`, in sorted order.
  std::set<std::string> unknown_keys(const std::set<std::string, std::less<>>& known) const;

 private:
  std::map<std::string, std::string, std::less<>> entries_;
  std::string origin_;
};

/// Keys: d_model, n_layers, n_heads, context_len, vocab_size, ff_mult.
LMConfig lm_config_from(const ConfigFile& cfg, LMConfig base = {});
/// Keys: learning_rate, max_samples, inner_steps, ppl_slope, ppl_intercept,
/// metric, mode, seed, protected_ids (comma-separated; specials always added).
CipherConfig cipher_config_from(const ConfigFile& cfg, CipherConfig base = {});
/// Keys: batch_size, train_learning_rate, warmup_fraction, grad_clip.
LMTrainOptions train_options_from(const ConfigFile& cfg, LMTrainOptions base = {});

}  // namespace codecipher
