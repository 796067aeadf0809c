#include "codecipher/config_file.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>

#include "codecipher/error.hpp"

namespace codecipher {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (text.empty()) return false;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

}  // namespace

ConfigFile ConfigFile::parse(std::istream& in, const std::string& origin) {
  ConfigFile cfg;
  cfg.origin_ = origin;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::string_view view(line);
    if (const auto hash = view.find('#'); hash != std::string_view::npos) {
      view = view.substr(0, hash);
    }
    view = trim(view);
    if (view.empty()) continue;
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) {
      throw FormatError(origin + ":" + std::to_string(number) + ": expected key = value");
    }
    const auto key = trim(view.substr(0, eq));
    if (key.empty()) throw FormatError(origin + ":" + std::to_string(number) + ": empty key");
    cfg.entries_[std::string(key)] = std::string(trim(view.substr(eq + 1)));
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file " + path);
  return parse(in, path);
}

bool ConfigFile::has(std::string_view key) const { return entries_.find(key) != entries_.end(); }

std::optional<std::string> ConfigFile::get(std::string_view key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ConfigFile::set(std::string key, std::string value) {
  entries_[std::move(key)] = std::move(value);
}

std::string ConfigFile::get_string(std::string_view key, std::string fallback) const {
  auto v = get(key);
  return v ? *v : std::move(fallback);
}

double ConfigFile::get_real(std::string_view key, double fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  const std::string_view text(*v);
  double out = 0.0;
  if (const auto slash = text.find('/'); slash != std::string_view::npos) {
    double num = 0.0, den = 0.0;
    if (parse_double(text.substr(0, slash), num) && parse_double(text.substr(slash + 1), den) &&
        den != 0.0) {
      return num / den;
    }
  } else if (parse_double(text, out)) {
    return out;
  }
  throw InputError(origin_ + ": '" + std::string(key) + "' is not a real number: '" + *v + "'");
}

std::size_t ConfigFile::get_count(std::string_view key, std::size_t fallback) const {
  return static_cast<std::size_t>(get_u64(key, fallback));
}

std::uint64_t ConfigFile::get_u64(std::string_view key, std::uint64_t fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) {
    throw InputError(origin_ + ": '" + std::string(key) + "' is not a non-negative integer: '" +
                     *v + "'");
  }
  return out;
}

bool ConfigFile::get_bool(std::string_view key, bool fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw InputError(origin_ + ": '" + std::string(key) + "' is not a boolean: '" + *v + "'");
}

std::set<std::string> ConfigFile::unknown_keys(
    const std::set<std::string, std::less<>>& known) const {
  std::set<std::string> out;
  for (const auto& [k, v] : entries_) {
    if (!known.contains(k)) out.insert(k);
  }
  return out;
}

LMConfig lm_config_from(const ConfigFile& cfg, LMConfig base) {
  base.d_model = cfg.get_count("d_model", base.d_model);
  base.n_layers = cfg.get_count("n_layers", base.n_layers);
  base.n_heads = cfg.get_count("n_heads", base.n_heads);
  base.context_len = cfg.get_count("context_len", base.context_len);
  base.vocab_size = cfg.get_count("vocab_size", base.vocab_size);
  base.ff_mult = cfg.get_count("ff_mult", base.ff_mult);
  return base;
}

CipherConfig cipher_config_from(const ConfigFile& cfg, CipherConfig base) {
  base.learning_rate = cfg.get_real("learning_rate", base.learning_rate);
  base.max_samples = cfg.get_count("max_samples", base.max_samples);
  base.inner_steps = cfg.get_count("inner_steps", base.inner_steps);
  base.ppl_slope = cfg.get_real("ppl_slope", base.ppl_slope);
  base.ppl_intercept = cfg.get_real("ppl_intercept", base.ppl_intercept);
  if (auto m = cfg.get("metric")) base.metric = parse_metric(*m);
  if (auto m = cfg.get("mode")) base.mode = parse_search_mode(*m);
  base.seed = cfg.get_u64("seed", base.seed);
  if (auto list = cfg.get("protected_ids")) {
    std::set<TokenId> ids{kPad, kBos, kEos, kUnk};
    std::string_view rest(*list);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const auto item = trim(rest.substr(0, comma));
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
      if (item.empty()) continue;
      TokenId id = 0;
      const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), id);
      if (ec != std::errc() || ptr != item.data() + item.size()) {
        throw InputError("protected_ids: bad id '" + std::string(item) + "'");
      }
      ids.insert(id);
    }
    base.protected_ids = std::move(ids);
  }
  return base;
}

LMTrainOptions train_options_from(const ConfigFile& cfg, LMTrainOptions base) {
  base.batch_size = cfg.get_count("batch_size", base.batch_size);
  base.learning_rate = cfg.get_real("train_learning_rate", base.learning_rate);
  base.warmup_fraction = cfg.get_real("warmup_fraction", base.warmup_fraction);
  base.grad_clip = cfg.get_real("grad_clip", base.grad_clip);
  return base;
}

}  // namespace codecipher
