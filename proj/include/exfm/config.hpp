#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "training.hpp"

namespace exfm {

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Minimal TOML subset: [section] headers, `key = value` lines, # comments.
// Values are strings, integers, floats, booleans, or single-line arrays of
// those. That covers every key this tool reads; nested tables, dates and
// multi-line strings are intentionally not supported.
struct TomlValue {
  enum class Kind { boolean, integer, number, string, array };
  Kind kind = Kind::string;
  bool b = false;
  std::int64_t i = 0;
  double num = 0.0;
  std::string str;
  std::vector<TomlValue> arr;
  int line = 0;
};

using TomlTable = std::map<std::string, std::map<std::string, TomlValue>>;

namespace detail {

inline std::string toml_trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::string strip_inline_comment(const std::string& s) {
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

inline TomlValue parse_toml_scalar(const std::string& tok, int line) {
  TomlValue v;
  v.line = line;
  if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"') {
    v.kind = TomlValue::Kind::string;
    for (std::size_t i = 1; i + 1 < tok.size(); ++i) {
      if (tok[i] == '\\' && i + 2 < tok.size() && (tok[i + 1] == '"' || tok[i + 1] == '\\')) {
        v.str += tok[i + 1];
        ++i;
      } else {
        v.str += tok[i];
      }
    }
    return v;
  }
  if (tok == "true" || tok == "false") {
    v.kind = TomlValue::Kind::boolean;
    v.b = tok == "true";
    return v;
  }
  // integer first, float as fallback
  {
    std::int64_t out = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
    if (ec == std::errc() && p == tok.data() + tok.size()) {
      v.kind = TomlValue::Kind::integer;
      v.i = out;
      v.num = static_cast<double>(out);
      return v;
    }
  }
  {
    double out = 0.0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
    if (ec == std::errc() && p == tok.data() + tok.size()) {
      v.kind = TomlValue::Kind::number;
      v.num = out;
      return v;
    }
  }
  throw config_error("line " + std::to_string(line) + ": cannot parse value '" + tok + "'");
}

inline std::vector<std::string> split_toml_array(const std::string& body, int line) {
  std::vector<std::string> out;
  std::string cur;
  bool in_str = false;
  for (char c : body) {
    if (c == '"') in_str = !in_str;
    if (c == ',' && !in_str) {
      out.push_back(toml_trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  cur = toml_trim(cur);
  if (!cur.empty()) out.push_back(cur);
  if (in_str) throw config_error("line " + std::to_string(line) + ": unterminated string");
  return out;
}

}  // namespace detail

inline TomlTable parse_toml(const std::string& text) {
  TomlTable doc;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = detail::toml_trim(detail::strip_inline_comment(raw));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3)
        throw config_error("line " + std::to_string(line) + ": malformed section header");
      section = detail::toml_trim(s.substr(1, s.size() - 2));
      doc[section];
      continue;
    }
    std::size_t eq = std::string::npos;
    {
      bool in_str = false;
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') in_str = !in_str;
        if (s[i] == '=' && !in_str) {
          eq = i;
          break;
        }
      }
    }
    if (eq == std::string::npos)
      throw config_error("line " + std::to_string(line) + ": expected key = value");
    std::string key = detail::toml_trim(s.substr(0, eq));
    std::string val = detail::toml_trim(s.substr(eq + 1));
    if (key.empty() || val.empty())
      throw config_error("line " + std::to_string(line) + ": expected key = value");
    TomlValue v;
    if (val.front() == '[') {
      if (val.back() != ']')
        throw config_error("line " + std::to_string(line) + ": unterminated array");
      v.kind = TomlValue::Kind::array;
      v.line = line;
      for (const auto& tok : detail::split_toml_array(val.substr(1, val.size() - 2), line))
        v.arr.push_back(detail::parse_toml_scalar(tok, line));
    } else {
      v = detail::parse_toml_scalar(val, line);
    }
    if (doc[section].count(key))
      throw config_error("line " + std::to_string(line) + ": duplicate key '" + key + "'");
    doc[section][key] = std::move(v);
  }
  return doc;
}

inline MapKind map_kind_from_string(const std::string& s) {
  if (s == "linear") return MapKind::linear;
  if (s == "regularized_linear") return MapKind::regularized_linear;
  if (s == "ve") return MapKind::ve;
  if (s == "vp") return MapKind::vp;
  if (s == "brownian_bridge") return MapKind::brownian_bridge;
  throw config_error("unknown map kind '" + s + "'");
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "selu") return Activation::selu;
  throw config_error("unknown activation '" + s + "'");
}

namespace detail {

// Typed readers that record a problem instead of throwing, so one pass
// collects every broken key.
struct ConfigReader {
  const TomlTable& doc;
  std::vector<std::string>& errors;
  // tracks consumption so leftovers can be reported as unknown keys
  std::map<std::string, std::map<std::string, bool>> seen;

  const TomlValue* get(const std::string& sec, const std::string& key) {
    auto s = doc.find(sec);
    if (s == doc.end()) return nullptr;
    auto k = s->second.find(key);
    if (k == s->second.end()) return nullptr;
    seen[sec][key] = true;
    return &k->second;
  }

  void bad(const std::string& sec, const std::string& key, const std::string& what) {
    errors.push_back(sec + "." + key + ": " + what);
  }

  void read_string(const std::string& sec, const std::string& key, std::string& out) {
    if (const auto* v = get(sec, key)) {
      if (v->kind == TomlValue::Kind::string) out = v->str;
      else bad(sec, key, "expected a string");
    }
  }

  void read_bool(const std::string& sec, const std::string& key, bool& out) {
    if (const auto* v = get(sec, key)) {
      if (v->kind == TomlValue::Kind::boolean) out = v->b;
      else bad(sec, key, "expected true or false");
    }
  }

  void read_count(const std::string& sec, const std::string& key, std::size_t& out) {
    if (const auto* v = get(sec, key)) {
      if (v->kind == TomlValue::Kind::integer && v->i >= 0)
        out = static_cast<std::size_t>(v->i);
      else
        bad(sec, key, "expected a nonnegative integer");
    }
  }

  void read_seed(const std::string& sec, const std::string& key, std::uint64_t& out) {
    if (const auto* v = get(sec, key)) {
      if (v->kind == TomlValue::Kind::integer && v->i >= 0)
        out = static_cast<std::uint64_t>(v->i);
      else
        bad(sec, key, "expected a nonnegative integer");
    }
  }

  void read_number(const std::string& sec, const std::string& key, double& out) {
    if (const auto* v = get(sec, key)) {
      if (v->kind == TomlValue::Kind::number || v->kind == TomlValue::Kind::integer)
        out = v->num;
      else
        bad(sec, key, "expected a number");
    }
  }

  void read_counts(const std::string& sec, const std::string& key,
                   std::vector<std::size_t>& out) {
    if (const auto* v = get(sec, key)) {
      if (v->kind != TomlValue::Kind::array) {
        bad(sec, key, "expected an array of integers");
        return;
      }
      std::vector<std::size_t> tmp;
      for (const auto& e : v->arr) {
        if (e.kind != TomlValue::Kind::integer || e.i < 1) {
          bad(sec, key, "expected an array of positive integers");
          return;
        }
        tmp.push_back(static_cast<std::size_t>(e.i));
      }
      out = std::move(tmp);
    }
  }

  void report_unknown() {
    for (const auto& [sec, keys] : doc) {
      static const std::map<std::string, bool> known_sections{
          {"objective", true}, {"map", true}, {"model", true}, {"data", true}, {"run", true}};
      if (sec.empty() && keys.empty()) continue;
      if (!known_sections.count(sec)) {
        errors.push_back("[" + sec + "]: unknown section");
        continue;
      }
      for (const auto& [key, val] : keys)
        if (!seen[sec].count(key)) errors.push_back(sec + "." + key + ": unknown key");
    }
  }
};

}  // namespace detail

// Maps a parsed config onto TrainConfig, collecting every problem (type
// errors, unknown keys, semantic validation) into `errors`.
inline TrainConfig config_from_toml(const TomlTable& doc, std::vector<std::string>& errors) {
  TrainConfig cfg;
  detail::ConfigReader r{doc, errors, {}};

  r.read_string("objective", "kind", cfg.objective);
  r.read_count("objective", "bank", cfg.bank);

  std::string map_kind;
  r.read_string("map", "kind", map_kind);
  if (!map_kind.empty()) {
    try {
      cfg.map = map_kind_from_string(map_kind);
    } catch (const config_error& e) {
      errors.push_back(std::string("map.kind: ") + e.what());
    }
  }
  r.read_number("map", "sigma_s", cfg.sigma_s);
  r.read_number("map", "sigma_e", cfg.sigma_e);

  r.read_counts("model", "hidden", cfg.hidden);
  std::string act;
  r.read_string("model", "activation", act);
  if (!act.empty()) {
    try {
      cfg.activation = activation_from_string(act);
    } catch (const config_error& e) {
      errors.push_back(std::string("model.activation: ") + e.what());
    }
  }

  r.read_string("data", "toy", cfg.toy);
  r.read_string("data", "csv", cfg.csv);
  r.read_bool("data", "standardize", cfg.standardize);
  r.read_count("data", "n", cfg.data_n);

  r.read_count("run", "steps", cfg.steps);
  r.read_count("run", "batch", cfg.batch);
  r.read_number("run", "lr", cfg.lr);
  r.read_number("run", "weight_decay", cfg.weight_decay);
  r.read_number("run", "ema", cfg.ema_rate);
  r.read_seed("run", "seed", cfg.seed);
  r.read_count("run", "metric_every", cfg.metric_every);
  r.read_count("run", "metric_samples", cfg.metric_samples);
  r.read_count("run", "sample_steps", cfg.sample_steps);

  r.report_unknown();
  for (const auto& e : validate(cfg)) errors.push_back(e);
  return cfg;
}

inline TrainConfig load_train_config(const std::string& path, std::vector<std::string>& errors) {
  std::ifstream f(path);
  if (!f) throw config_error("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_toml(parse_toml(ss.str()), errors);
}

}  // namespace exfm
