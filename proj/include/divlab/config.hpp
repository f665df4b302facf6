#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "divlab/csv.hpp"
#include "divlab/distributions.hpp"
#include "divlab/objectives.hpp"
#include "divlab/toy_lab.hpp"

// Declarative config documents: INI-style sections with typed key = value
// lines (strings, numbers, booleans, single-line arrays, inline tables).
// Parsed into JSON; the emitter writes sorted keys so identical documents
// serialize byte-identically.

namespace divlab::config {

using json = nlohmann::json;

namespace detail {

inline bool is_bare_key_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
         (c >= '0' && c <= '9') || c == '_' || c == '-';
}

struct LineParser {
  const std::string& src;
  const std::string& where;
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw std::invalid_argument(where + ": " + msg);
  }
  void skip_ws() {
    while (pos < src.size() && (src[pos] == ' ' || src[pos] == '\t')) ++pos;
  }
  bool at_end() {
    skip_ws();
    return pos >= src.size() || src[pos] == '#';
  }
  char peek() {
    skip_ws();
    if (pos >= src.size()) fail("unexpected end of line");
    return src[pos];
  }
  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos;
  }

  std::string parse_bare_key() {
    skip_ws();
    std::size_t start = pos;
    while (pos < src.size() && is_bare_key_char(src[pos])) ++pos;
    if (pos == start) fail("expected a key");
    return src.substr(start, pos - start);
  }

  json parse_string() {
    ++pos;  // opening quote
    std::string out;
    while (pos < src.size() && src[pos] != '"') {
      char c = src[pos];
      if (c == '\\') {
        ++pos;
        if (pos >= src.size()) fail("unterminated escape");
        switch (src[pos]) {
          case '"': out.push_back('"'); break;
          case '\\': out.push_back('\\'); break;
          case 'n': out.push_back('\n'); break;
          case 't': out.push_back('\t'); break;
          case 'r': out.push_back('\r'); break;
          default: fail("unsupported escape sequence");
        }
      } else {
        out.push_back(c);
      }
      ++pos;
    }
    if (pos >= src.size()) fail("unterminated string");
    ++pos;  // closing quote
    return json(out);
  }

  json parse_number() {
    std::size_t start = pos;
    while (pos < src.size() &&
           (std::isdigit(static_cast<unsigned char>(src[pos])) ||
            src[pos] == '+' || src[pos] == '-' || src[pos] == '.' ||
            src[pos] == 'e' || src[pos] == 'E'))
      ++pos;
    const std::string tok = src.substr(start, pos - start);
    const char* b = tok.data();
    const char* e = tok.data() + tok.size();
    std::int64_t iv = 0;
    auto ri = std::from_chars(b, e, iv);
    if (ri.ec == std::errc() && ri.ptr == e) return json(iv);
    std::uint64_t uv = 0;
    auto ru = std::from_chars(b, e, uv);
    if (ru.ec == std::errc() && ru.ptr == e) return json(uv);
    double dv = 0.0;
    auto rd = std::from_chars(b, e, dv);
    if (rd.ec == std::errc() && rd.ptr == e) return json(dv);
    fail("malformed number '" + tok + "'");
  }

  json parse_array() {
    ++pos;  // '['
    json arr = json::array();
    skip_ws();
    if (peek() == ']') {
      ++pos;
      return arr;
    }
    while (true) {
      arr.push_back(parse_value());
      const char c = peek();
      if (c == ',') {
        ++pos;
        if (peek() == ']') {  // trailing comma
          ++pos;
          return arr;
        }
        continue;
      }
      if (c == ']') {
        ++pos;
        return arr;
      }
      fail("expected ',' or ']' in array");
    }
  }

  json parse_inline_table() {
    ++pos;  // '{'
    json obj = json::object();
    skip_ws();
    if (peek() == '}') {
      ++pos;
      return obj;
    }
    while (true) {
      const std::string key = parse_bare_key();
      expect('=');
      if (obj.contains(key)) fail("duplicate key '" + key + "'");
      obj[key] = parse_value();
      const char c = peek();
      if (c == ',') {
        ++pos;
        continue;
      }
      if (c == '}') {
        ++pos;
        return obj;
      }
      fail("expected ',' or '}' in inline table");
    }
  }

  json parse_value() {
    const char c = peek();
    if (c == '"') return parse_string();
    if (c == '[') return parse_array();
    if (c == '{') return parse_inline_table();
    if (src.compare(pos, 4, "true") == 0 &&
        (pos + 4 >= src.size() || !is_bare_key_char(src[pos + 4]))) {
      pos += 4;
      return json(true);
    }
    if (src.compare(pos, 5, "false") == 0 &&
        (pos + 5 >= src.size() || !is_bare_key_char(src[pos + 5]))) {
      pos += 5;
      return json(false);
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' ||
        c == '.')
      return parse_number();
    fail("unrecognized value");
  }

  void expect_end() {
    if (!at_end()) fail("unexpected trailing characters");
  }
};

}  // namespace detail

inline json parse_document(std::istream& in, const std::string& name) {
  json root = json::object();
  json* table = &root;
  std::set<std::string> sections;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string where = name + ":" + std::to_string(lineno);
    detail::LineParser lp{line, where};
    if (lp.at_end()) continue;
    if (lp.peek() == '[') {
      ++lp.pos;
      if (lp.pos < line.size() && line[lp.pos] == '[')
        lp.fail("arrays of tables are not supported; use an inline-table array");
      std::string path;
      json* cursor = &root;
      while (true) {
        const std::string part = lp.parse_bare_key();
        path += path.empty() ? part : "." + part;
        if (cursor->contains(part)) {
          if (!(*cursor)[part].is_object())
            lp.fail("section '" + path + "' collides with an existing key");
        } else {
          (*cursor)[part] = json::object();
        }
        cursor = &(*cursor)[part];
        const char c = lp.peek();
        if (c == '.') {
          ++lp.pos;
          continue;
        }
        if (c == ']') {
          ++lp.pos;
          break;
        }
        lp.fail("malformed section header");
      }
      lp.expect_end();
      if (!sections.insert(path).second)
        lp.fail("duplicate section '" + path + "'");
      table = cursor;
      continue;
    }
    const std::string key = lp.parse_bare_key();
    lp.expect('=');
    const json value = lp.parse_value();
    lp.expect_end();
    if (table->contains(key)) lp.fail("duplicate key '" + key + "'");
    (*table)[key] = value;
  }
  return root;
}

inline json parse_document_string(const std::string& text,
                                  const std::string& name = "config") {
  std::istringstream in(text);
  return parse_document(in, name);
}

inline json load_document(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  return parse_document(in, path);
}

// ---------------------------------------------------------------------------
// Emission

namespace detail {

inline void emit_scalar(std::ostream& out, const json& v);

inline void emit_string(std::ostream& out, const std::string& s) {
  out << '"';
  for (char c : s) {
    switch (c) {
      case '"': out << "\\\""; break;
      case '\\': out << "\\\\"; break;
      case '\n': out << "\\n"; break;
      case '\t': out << "\\t"; break;
      case '\r': out << "\\r"; break;
      default: out << c;
    }
  }
  out << '"';
}

inline void emit_value(std::ostream& out, const json& v) {
  if (v.is_array()) {
    out << '[';
    bool first = true;
    for (const auto& e : v) {
      if (!first) out << ", ";
      first = false;
      emit_value(out, e);
    }
    out << ']';
    return;
  }
  if (v.is_object()) {
    out << '{';
    bool first = true;
    for (auto it = v.begin(); it != v.end(); ++it) {
      if (!first) out << ',';
      first = false;
      out << ' ' << it.key() << " = ";
      emit_value(out, it.value());
    }
    out << (first ? "}" : " }");
    return;
  }
  emit_scalar(out, v);
}

inline void emit_scalar(std::ostream& out, const json& v) {
  if (v.is_string()) {
    emit_string(out, v.get<std::string>());
  } else if (v.is_boolean()) {
    out << (v.get<bool>() ? "true" : "false");
  } else if (v.is_number_unsigned()) {
    out << v.get<std::uint64_t>();
  } else if (v.is_number_integer()) {
    out << v.get<std::int64_t>();
  } else if (v.is_number_float()) {
    const double d = v.get<double>();
    if (!std::isfinite(d))
      throw std::invalid_argument("config values must be finite");
    out << divlab::csv::format_double(d);
  } else {
    throw std::invalid_argument("unsupported config value type");
  }
}

inline void emit_section(std::ostream& out, const std::string& path,
                         const json& obj) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!it.value().is_object()) {
      out << it.key() << " = ";
      emit_value(out, it.value());
      out << '\n';
    }
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (it.value().is_object()) {
      const std::string sub = path.empty() ? it.key() : path + "." + it.key();
      out << "\n[" << sub << "]\n";
      emit_section(out, sub, it.value());
    }
}

}  // namespace detail

/// Writes the document with keys in sorted order at every level: the inverse
/// of parse_document up to integer-valued floats collapsing to integers.
inline void emit_document(std::ostream& out, const json& root) {
  if (!root.is_object())
    throw std::invalid_argument("config document must be a table");
  detail::emit_section(out, "", root);
}

inline std::string emit_document_string(const json& root) {
  std::ostringstream out;
  emit_document(out, root);
  return out.str();
}

// ---------------------------------------------------------------------------
// Typed access helpers

inline void validate_keys(const json& obj, const std::set<std::string>& allowed,
                          const std::string& context) {
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key))
      throw std::invalid_argument(context + ": unknown key '" + key + "'");
}

inline double get_double(const json& v, const std::string& context) {
  if (!v.is_number())
    throw std::invalid_argument(context + ": expected a number");
  return v.get<double>();
}

inline std::int64_t get_int(const json& v, const std::string& context) {
  if (!v.is_number_integer() && !v.is_number_unsigned())
    throw std::invalid_argument(context + ": expected an integer");
  return v.get<std::int64_t>();
}

inline std::uint64_t get_u64(const json& v, const std::string& context) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  throw std::invalid_argument(context + ": expected a nonnegative integer");
}

inline bool get_bool(const json& v, const std::string& context) {
  if (!v.is_boolean())
    throw std::invalid_argument(context + ": expected true or false");
  return v.get<bool>();
}

inline std::string get_string(const json& v, const std::string& context) {
  if (!v.is_string())
    throw std::invalid_argument(context + ": expected a string");
  return v.get<std::string>();
}

// ---------------------------------------------------------------------------
// Struct <-> document conversion

inline json to_json(const ObjectiveSpec& s) {
  json j;
  j["kind"] = kind_name(s.kind);
  j["alpha"] = s.alpha;
  j["beta"] = s.beta_js;
  j["gamma"] = s.gamma;
  j["lambda"] = s.lambda_skew;
  return j;
}

inline ObjectiveSpec objective_from_json(const json& j,
                                         const std::string& context) {
  if (!j.is_object())
    throw std::invalid_argument(context + ": expected an objective table");
  validate_keys(j, {"kind", "alpha", "beta", "gamma", "lambda"}, context);
  if (!j.contains("kind"))
    throw std::invalid_argument(context + ": objective needs a kind");
  ObjectiveSpec s;
  s.kind = kind_from_name(get_string(j["kind"], context + ".kind"));
  if (j.contains("alpha")) s.alpha = get_double(j["alpha"], context + ".alpha");
  if (j.contains("beta")) s.beta_js = get_double(j["beta"], context + ".beta");
  if (j.contains("gamma")) s.gamma = get_double(j["gamma"], context + ".gamma");
  if (j.contains("lambda"))
    s.lambda_skew = get_double(j["lambda"], context + ".lambda");
  validate(s);
  return s;
}

inline json to_json(const TeacherSpec& spec) {
  json j;
  if (const auto* z = std::get_if<ZipfTeacher>(&spec)) {
    j["kind"] = "zipf";
    j["vocab_size"] = z->vocab_size;
    j["exponent"] = z->exponent;
    j["seed"] = z->seed;
    j["permute"] = z->permute;
  } else if (const auto* s = std::get_if<TwoSpikeTeacher>(&spec)) {
    j["kind"] = "two_spike";
    j["vocab_size"] = s->vocab_size;
    j["first_mass"] = s->first_mass;
    j["second_mass"] = s->second_mass;
  } else {
    const auto& m = std::get<MixtureGridTeacher>(spec);
    j["kind"] = "mixture_grid";
    j["means"] = m.means;
    j["stds"] = m.stds;
    j["weights"] = m.weights;
    j["lo"] = m.lo;
    j["hi"] = m.hi;
    j["bins"] = m.bins;
  }
  return j;
}

inline TeacherSpec teacher_from_json(const json& j,
                                     const std::string& context) {
  if (!j.is_object())
    throw std::invalid_argument(context + ": expected a teacher table");
  if (!j.contains("kind"))
    throw std::invalid_argument(context + ": teacher needs a kind");
  const std::string kind = get_string(j["kind"], context + ".kind");
  if (kind == "zipf") {
    validate_keys(j, {"kind", "vocab_size", "exponent", "seed", "permute"},
                  context);
    ZipfTeacher t;
    if (j.contains("vocab_size"))
      t.vocab_size =
          static_cast<int>(get_int(j["vocab_size"], context + ".vocab_size"));
    if (j.contains("exponent"))
      t.exponent = get_double(j["exponent"], context + ".exponent");
    if (j.contains("seed")) t.seed = get_u64(j["seed"], context + ".seed");
    if (j.contains("permute"))
      t.permute = get_bool(j["permute"], context + ".permute");
    return t;
  }
  if (kind == "two_spike") {
    validate_keys(j, {"kind", "vocab_size", "first_mass", "second_mass"},
                  context);
    TwoSpikeTeacher t;
    if (j.contains("vocab_size"))
      t.vocab_size =
          static_cast<int>(get_int(j["vocab_size"], context + ".vocab_size"));
    if (j.contains("first_mass"))
      t.first_mass = get_double(j["first_mass"], context + ".first_mass");
    if (j.contains("second_mass"))
      t.second_mass = get_double(j["second_mass"], context + ".second_mass");
    return t;
  }
  if (kind == "mixture_grid") {
    validate_keys(j, {"kind", "means", "stds", "weights", "lo", "hi", "bins"},
                  context);
    MixtureGridTeacher t;
    const auto read_list = [&](const char* key) {
      std::vector<double> out;
      if (!j.contains(key) || !j[key].is_array())
        throw std::invalid_argument(context + ": mixture_grid needs array '" +
                                    key + "'");
      for (const auto& v : j[key])
        out.push_back(get_double(v, context + "." + key));
      return out;
    };
    t.means = read_list("means");
    t.stds = read_list("stds");
    t.weights = read_list("weights");
    if (j.contains("lo")) t.lo = get_double(j["lo"], context + ".lo");
    if (j.contains("hi")) t.hi = get_double(j["hi"], context + ".hi");
    if (j.contains("bins"))
      t.bins = static_cast<int>(get_int(j["bins"], context + ".bins"));
    return t;
  }
  throw std::invalid_argument(context + ": unknown teacher kind '" + kind +
                              "'");
}

inline json to_json(const InitSpec& init) {
  json j;
  if (init.kind == InitKind::zero_logits) {
    j["kind"] = "zero_logits";
  } else {
    j["kind"] = "gaussian";
    j["stddev"] = init.stddev;
    j["seed"] = init.seed;
  }
  return j;
}

inline InitSpec init_from_json(const json& j, const std::string& context) {
  if (!j.is_object())
    throw std::invalid_argument(context + ": expected an init table");
  validate_keys(j, {"kind", "stddev", "seed"}, context);
  InitSpec init;
  if (j.contains("kind")) {
    const std::string kind = get_string(j["kind"], context + ".kind");
    if (kind == "zero_logits")
      init.kind = InitKind::zero_logits;
    else if (kind == "gaussian")
      init.kind = InitKind::gaussian;
    else
      throw std::invalid_argument(context + ": unknown init kind '" + kind +
                                  "'");
  }
  if (j.contains("stddev"))
    init.stddev = get_double(j["stddev"], context + ".stddev");
  if (j.contains("seed")) init.seed = get_u64(j["seed"], context + ".seed");
  return init;
}

/// The fully resolved document behind every CLI run.
struct LabConfig {
  std::string out_dir;  // empty = unset
  TeacherSpec teacher;
  std::vector<ObjectiveSpec> objectives;
  int target_index = -1;
  int steps = 300;
  double learning_rate = 0.5;
  InitSpec init;
  int record_every = 1;
  double active_set_threshold = 1e-3;
  double mixture_init_mean = 0.0;
  double mixture_init_stddev = 2.0;
};

inline LabConfig lab_config_from_json(const json& doc,
                                      const std::string& name = "config") {
  validate_keys(doc,
                {"command", "out_dir", "objective", "objectives", "teacher",
                 "run", "mixture"},
                name);
  if (!doc.contains("teacher"))
    throw std::invalid_argument(name + ": missing [teacher] section");
  LabConfig cfg;
  cfg.teacher = teacher_from_json(doc["teacher"], name + ".teacher");
  if (doc.contains("out_dir"))
    cfg.out_dir = get_string(doc["out_dir"], name + ".out_dir");
  if (doc.contains("objective") && doc.contains("objectives"))
    throw std::invalid_argument(
        name + ": give either 'objective' or 'objectives', not both");
  if (doc.contains("objective"))
    cfg.objectives.push_back(
        objective_from_json(doc["objective"], name + ".objective"));
  if (doc.contains("objectives")) {
    if (!doc["objectives"].is_array())
      throw std::invalid_argument(name + ": 'objectives' must be an array");
    std::size_t i = 0;
    for (const auto& o : doc["objectives"])
      cfg.objectives.push_back(objective_from_json(
          o, name + ".objectives[" + std::to_string(i++) + "]"));
  }
  if (doc.contains("run")) {
    const auto& run = doc["run"];
    const std::string ctx = name + ".run";
    validate_keys(run,
                  {"steps", "learning_rate", "record_every",
                   "active_set_threshold", "target_index", "init"},
                  ctx);
    if (run.contains("steps"))
      cfg.steps = static_cast<int>(get_int(run["steps"], ctx + ".steps"));
    if (run.contains("learning_rate"))
      cfg.learning_rate =
          get_double(run["learning_rate"], ctx + ".learning_rate");
    if (run.contains("record_every"))
      cfg.record_every =
          static_cast<int>(get_int(run["record_every"], ctx + ".record_every"));
    if (run.contains("active_set_threshold"))
      cfg.active_set_threshold = get_double(run["active_set_threshold"],
                                            ctx + ".active_set_threshold");
    if (run.contains("target_index")) {
      const auto& ti = run["target_index"];
      if (ti.is_string()) {
        if (ti.get<std::string>() != "argmax")
          throw std::invalid_argument(
              ctx + ".target_index: expected an index or \"argmax\"");
        cfg.target_index = -1;
      } else {
        cfg.target_index =
            static_cast<int>(get_int(ti, ctx + ".target_index"));
      }
    }
    if (run.contains("init"))
      cfg.init = init_from_json(run["init"], ctx + ".init");
  }
  if (doc.contains("mixture")) {
    const auto& mix = doc["mixture"];
    const std::string ctx = name + ".mixture";
    validate_keys(mix, {"init_mean", "init_stddev"}, ctx);
    if (mix.contains("init_mean"))
      cfg.mixture_init_mean = get_double(mix["init_mean"], ctx + ".init_mean");
    if (mix.contains("init_stddev"))
      cfg.mixture_init_stddev =
          get_double(mix["init_stddev"], ctx + ".init_stddev");
  }
  return cfg;
}

/// Resolved-config document for the manifest. Excludes out_dir so a rerun
/// into a fresh directory reproduces the manifest byte for byte.
inline json lab_config_to_json(const LabConfig& cfg, bool include_mixture) {
  json doc;
  doc["teacher"] = to_json(cfg.teacher);
  json run;
  run["steps"] = cfg.steps;
  run["learning_rate"] = cfg.learning_rate;
  run["record_every"] = cfg.record_every;
  run["active_set_threshold"] = cfg.active_set_threshold;
  run["target_index"] =
      cfg.target_index < 0 ? json("argmax") : json(cfg.target_index);
  run["init"] = to_json(cfg.init);
  doc["run"] = run;
  if (!cfg.objectives.empty()) {
    json arr = json::array();
    for (const auto& o : cfg.objectives) arr.push_back(to_json(o));
    doc["objectives"] = arr;
  }
  if (include_mixture) {
    json mix;
    mix["init_mean"] = cfg.mixture_init_mean;
    mix["init_stddev"] = cfg.mixture_init_stddev;
    doc["mixture"] = mix;
  }
  return doc;
}

inline RunConfig to_run_config(const LabConfig& cfg,
                               const ObjectiveSpec& objective) {
  RunConfig rc;
  rc.teacher = cfg.teacher;
  rc.objective = objective;
  rc.target_index = cfg.target_index;
  rc.steps = cfg.steps;
  rc.learning_rate = cfg.learning_rate;
  rc.init = cfg.init;
  rc.record_every = cfg.record_every;
  rc.active_set_threshold = cfg.active_set_threshold;
  return rc;
}

inline MixtureRunConfig to_mixture_config(const LabConfig& cfg,
                                          const ObjectiveSpec& objective) {
  const auto* grid = std::get_if<MixtureGridTeacher>(&cfg.teacher);
  if (!grid)
    throw std::invalid_argument(
        "mixture runs need a mixture_grid teacher");
  MixtureRunConfig mc;
  mc.teacher = *grid;
  mc.objective = objective;
  mc.target_index = cfg.target_index;
  mc.steps = cfg.steps;
  mc.learning_rate = cfg.learning_rate;
  mc.init_mean = cfg.mixture_init_mean;
  mc.init_stddev = cfg.mixture_init_stddev;
  mc.record_every = cfg.record_every;
  mc.active_set_threshold = cfg.active_set_threshold;
  return mc;
}

}  // namespace divlab::config
