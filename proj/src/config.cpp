#include "cmsf/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "cmsf/errors.hpp"

namespace cmsf {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* what) {
  throw ConfigError("config key '" + std::string(key) + "': '" + std::string(value) + "' is not " + what);
}

std::size_t parse_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

float parse_float(std::string_view key, std::string_view v) {
  // strtof accepts the exponent forms people actually write (5e-4).
  const std::string s(v);
  char* end = nullptr;
  const float out = std::strtof(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(out)) bad_value(key, v, "a finite number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

std::string show(float v) {
  std::ostringstream o;
  o.precision(9);
  o << v;
  return o.str();
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define CMSF_SIZE(name) \
  {#name, [](RunConfig& c, auto k, auto v) { c.name = parse_size(k, v); }, \
   [](const RunConfig& c) { return std::to_string(c.name); }}
#define CMSF_FLOAT(name) \
  {#name, [](RunConfig& c, auto k, auto v) { c.name = parse_float(k, v); }, \
   [](const RunConfig& c) { return show(c.name); }}

#define CMSF_BOOL(name) \
  {#name, [](RunConfig& c, auto k, auto v) { c.name = parse_bool(k, v); }, \
   [](const RunConfig& c) { return std::string(c.name ? "true" : "false"); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      CMSF_SIZE(D),
      CMSF_SIZE(hidden),
      CMSF_SIZE(T),
      CMSF_SIZE(B),
      CMSF_FLOAT(alpha),
      CMSF_SIZE(h),
      CMSF_FLOAT(lambda),
      CMSF_FLOAT(temperature),
      CMSF_SIZE(epochs),
      CMSF_FLOAT(lr_encoder),
      CMSF_FLOAT(lr_fusion),
      CMSF_SIZE(decay_epochs),
      CMSF_FLOAT(decay_factor),
      CMSF_FLOAT(weight_decay),
      {"seed", [](RunConfig& c, auto k, auto v) { c.seed = parse_u64(k, v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"fusion", [](RunConfig& c, auto, auto v) { c.fusion = parse_fusion_kind(v); },
       [](const RunConfig& c) { return std::string(to_string(c.fusion)); }},
      {"align", [](RunConfig& c, auto, auto v) { c.align = parse_align_mode(v); },
       [](const RunConfig& c) { return std::string(to_string(c.align)); }},
      {"generator", [](RunConfig& c, auto, auto v) { c.generator = parse_generator_variant(v); },
       [](const RunConfig& c) { return std::string(to_string(c.generator)); }},
      {"early_alignment", [](RunConfig& c, auto k, auto v) { c.early_alignment = parse_bool(k, v); },
       [](const RunConfig& c) { return std::string(c.early_alignment ? "true" : "false"); }},
      CMSF_BOOL(detach_fusion_input),
      CMSF_BOOL(detach_soft_labels),
      CMSF_FLOAT(tau),
      CMSF_FLOAT(v_th),
      CMSF_FLOAT(v_reset),
      CMSF_FLOAT(ssa_scale),
      CMSF_FLOAT(surrogate_alpha),
      CMSF_FLOAT(val_fraction),
  };
  return f;
}

#undef CMSF_SIZE
#undef CMSF_FLOAT
#undef CMSF_BOOL

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(*this, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> v;
    for (const auto& f : fields()) v.emplace_back(f.key);
    return v;
  }();
  return k;
}

void RunConfig::validate(std::size_t regions, std::size_t words) const {
  if (B < 2) throw ConfigError("B must be at least 2 (contrastive negatives)");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(lr_encoder > 0.0f) || !(lr_fusion > 0.0f)) throw ConfigError("learning rates must be positive");
  if (decay_epochs > epochs) throw ConfigError("decay_epochs cannot exceed epochs");
  if (!(decay_factor > 0.0f && decay_factor <= 1.0f)) throw ConfigError("decay_factor must lie in (0, 1]");
  if (!(weight_decay >= 0.0f)) throw ConfigError("weight_decay must be non-negative");
  if (!(surrogate_alpha > 0.0f)) throw ConfigError("surrogate_alpha must be positive");
  if (!(val_fraction >= 0.0f && val_fraction < 1.0f)) throw ConfigError("val_fraction must lie in [0, 1)");
  loss_weights().validate();
  try {
    model_config(1, 1).validate(regions, words);
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
}

ModelConfig RunConfig::model_config(std::size_t d_region, std::size_t d_word) const {
  ModelConfig m;
  m.d_region = d_region;
  m.d_word = d_word;
  m.D = D;
  m.hidden = hidden;
  m.T = T;
  m.variant = generator;
  m.lif = {tau, v_th, v_reset};
  m.ssa_scale = ssa_scale;
  m.fusion = {fusion, h};
  m.pool = {alpha, align};
  m.early_alignment = early_alignment;
  m.detach_fusion_input = detach_fusion_input;
  m.detach_soft_labels = detach_soft_labels;
  m.seed = seed;
  return m;
}

float RunConfig::lr_scale(std::size_t epoch) const {
  return epoch + decay_epochs >= epochs ? decay_factor : 1.0f;
}

}  // namespace cmsf
