#pragma once

// Scenario configuration, subcommand dispatch and file emission.
//
// A scenario is an INI file (sections, `key = value`, `;` or `#` comments).
// Every key is checked against the schema below before anything is computed;
// see README.md for the meaning of each key. Outputs go to
// $CVH_OUTPUT_ROOT/<[run] output> (default root ./cvh_output) and always end
// with manifest.csv listing every emitted file with its size and SHA-256.

#include <openssl/evp.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cvh/suites.hpp"

namespace cvh {

// ---------------------------------------------------------------------------
// Formatting and hashing

/// 17 significant digits, '.' decimal point regardless of locale.
inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, r.ptr);
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string format_cell(const Cell& c) {
  struct V {
    std::string operator()(std::monostate) const { return ""; }
    std::string operator()(double v) const { return format_real(v); }
    std::string operator()(long long v) const { return std::to_string(v); }
    std::string operator()(const std::string& s) const { return csv_quote(s); }
  };
  return std::visit(V{}, c);
}

inline std::string table_csv(const Table& t) {
  std::string out;
  for (std::size_t i = 0; i < t.header.size(); ++i) out += (i ? "," : "") + csv_quote(t.header[i]);
  out += '\n';
  for (const auto& r : t.rows) {
    for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + format_cell(r[i]);
    out += '\n';
  }
  return out;
}

inline std::string checks_csv(const std::vector<Check>& checks) {
  Table t{{"check", "value", "relation", "threshold", "passed"}, {}};
  for (const auto& c : checks)
    t.rows.push_back({c.name, c.value, std::string(relation_symbol(c.relation)), c.threshold,
                      std::string(c.passed ? "true" : "false")});
  return table_csv(t);
}

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256: digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

/// Writes files into one directory and the manifest that lists them.
class Emitter {
 public:
  explicit Emitter(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& dir() const { return dir_; }
  const std::vector<std::string>& files() const { return names_; }

  void write(const std::string& name, const std::string& bytes) {
    std::filesystem::create_directories(dir_);
    std::ofstream f(dir_ / name, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("cannot write " + (dir_ / name).string());
    names_.push_back(name);
    manifest_.rows.push_back({name, static_cast<long long>(bytes.size()), sha256_hex(bytes)});
  }

  /// name.csv, renamed name_2.csv, ... if the stem was already used.
  void write_table(const std::string& stem, const Table& t) {
    std::string name = stem + ".csv";
    for (int i = 2; used(name); ++i) name = stem + "_" + std::to_string(i) + ".csv";
    write(name, table_csv(t));
  }

  void finish() {
    std::filesystem::create_directories(dir_);
    std::ofstream f(dir_ / "manifest.csv", std::ios::binary | std::ios::trunc);
    f << table_csv(manifest_);
    if (!f) throw std::runtime_error("cannot write " + (dir_ / "manifest.csv").string());
  }

 private:
  bool used(const std::string& n) const { return std::find(names_.begin(), names_.end(), n) != names_.end(); }

  std::filesystem::path dir_;
  std::vector<std::string> names_;
  Table manifest_{{"file", "bytes", "sha256"}, {}};
};

// ---------------------------------------------------------------------------
// Configuration

/// Flat sectioned key-value store with field-level error messages.
class Config {
 public:
  static Config parse(const std::string& text) {
    Config c;
    std::istringstream is(text);
    try {
      boost::property_tree::ini_parser::read_ini(is, c.tree_);
    } catch (const boost::property_tree::ini_parser::ini_parser_error& e) {
      throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
    }
    return c;
  }

  bool has(const std::string& s, const std::string& k) const { return raw(s, k) != nullptr; }

  std::string text(const std::string& s, const std::string& k, const std::string& def) const {
    const std::string* v = raw(s, k);
    return v ? trim(*v) : def;
  }

  double real(const std::string& s, const std::string& k, double def) const {
    const std::string* v = raw(s, k);
    return v ? to_real(s, k, trim(*v)) : def;
  }

  int integer(const std::string& s, const std::string& k, int def) const {
    const std::string* v = raw(s, k);
    return v ? to_int(s, k, trim(*v)) : def;
  }

  bool flag(const std::string& s, const std::string& k, bool def) const {
    const std::string* v = raw(s, k);
    if (!v) return def;
    const std::string t = trim(*v);
    if (t == "true" || t == "yes" || t == "on" || t == "1") return true;
    if (t == "false" || t == "no" || t == "off" || t == "0") return false;
    throw error(s, k, "expected true or false, got '" + t + "'");
  }

  std::vector<std::string> list(const std::string& s, const std::string& k) const {
    std::vector<std::string> out;
    const std::string* v = raw(s, k);
    if (!v) return out;
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) throw error(s, k, "empty list entry");
      out.push_back(item);
    }
    return out;
  }

  std::vector<int> integers(const std::string& s, const std::string& k, std::vector<int> def) const {
    if (!has(s, k)) return def;
    std::vector<int> out;
    for (const auto& t : list(s, k)) out.push_back(to_int(s, k, t));
    return out;
  }

  Point3 vec3(const std::string& s, const std::string& k, Point3 def) const {
    if (!has(s, k)) return def;
    const auto items = list(s, k);
    if (items.size() != 3) throw error(s, k, "expected three comma-separated numbers");
    return {to_real(s, k, items[0]), to_real(s, k, items[1]), to_real(s, k, items[2])};
  }

  /// Every (section, key) present; keys outside sections are reported with section "".
  std::vector<std::pair<std::string, std::string>> entries() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [sec, body] : tree_) {
      if (body.empty()) {
        if (!body.data().empty()) out.push_back({"", sec});  // an empty section has no value
        continue;
      }
      for (const auto& kv : body) out.push_back({sec, kv.first});
    }
    return out;
  }

  static ConfigError error(const std::string& s, const std::string& k, const std::string& msg) {
    return ConfigError("config [" + s + "] " + k + ": " + msg);
  }

 private:
  const std::string* raw(const std::string& s, const std::string& k) const {
    const auto sec = tree_.find(s);
    if (sec == tree_.not_found()) return nullptr;
    const auto it = sec->second.find(k);
    if (it == sec->second.not_found()) return nullptr;
    return &it->second.data();
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  }

  static double to_real(const std::string& s, const std::string& k, const std::string& t) {
    std::istringstream is(t);
    is.imbue(std::locale::classic());
    double v = 0;
    if (!(is >> v) || !(is >> std::ws).eof()) throw error(s, k, "expected a number, got '" + t + "'");
    return v;
  }

  static int to_int(const std::string& s, const std::string& k, const std::string& t) {
    std::istringstream is(t);
    is.imbue(std::locale::classic());
    long v = 0;
    if (!(is >> v) || !(is >> std::ws).eof() || v < -2147483647L || v > 2147483647L)
      throw error(s, k, "expected an integer, got '" + t + "'");
    return static_cast<int>(v);
  }

  boost::property_tree::ptree tree_;
};

// ---------------------------------------------------------------------------
// Scenario

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> v{"micro-run",     "cell-elasticity", "homog-run",     "unfold-check",
                                          "korn-estimate", "mono-check",      "converge-study"};
  return v;
}

/// Check flags accepted in [checks] per subcommand.
inline const std::map<std::string, std::vector<std::string>>& check_names() {
  static const std::map<std::string, std::vector<std::string>> m{
      {"micro-run", {"trajectory", "invariants", "dissipation", "uniform", "skew", "oracle", "rothe"}},
      {"cell-elasticity", {"cell", "oracle", "bounds", "basis", "elasticity"}},
      {"homog-run", {"degeneracy", "sweep", "dissipation"}},
      {"unfold-check", {"structure", "unfolding", "helmholtz"}},
      {"korn-estimate", {"estimate", "torus"}},
      {"mono-check", {"monotone"}},
      {"converge-study", {"elastic", "limit"}},
  };
  return m;
}

inline const std::map<std::string, std::set<std::string>>& config_schema() {
  static const std::map<std::string, std::set<std::string>> m{
      {"run", {"output", "seed"}},
      {"grid", {"n"}},
      {"eta", {"values"}},
      {"material",
       {"pattern", "fraction", "axis", "lambda0", "mu0", "lambda1", "mu1", "C1_0", "C1_1", "C2"}},
      {"flow",
       {"projection", "phase0", "phase0_sigma_y", "phase0_r", "phase0_a", "phase0_p", "phase1", "phase1_sigma_y",
        "phase1_r", "phase1_a", "phase1_p"}},
      {"load", {"shape", "coef0", "coef1", "coef2", "coef3"}},
      {"time", {"T", "m", "freeze", "rothe_levels"}},
      {"solver", {"tol", "damping", "max_iter", "anderson", "elastic_rtol", "regularize"}},
      {"cell", {"n", "cells_per_eta", "oracle_tol", "energy_tol"}},
      {"macro", {"M", "n", "degeneracy_tol"}},
      {"korn", {"sizes", "block", "tol", "max_iter", "max_shifts", "spread_tol"}},
      {"mono", {"pairs", "lambda", "scale", "resolvent_samples", "class_m_samples", "sigma_max"}},
      {"unfold", {"lambda", "samples", "pairs"}},
      {"verifier", {"samples", "gap_tol"}},
      {"uniform", {"spread_tol"}},
      {"checks", {}},  // per subcommand, see check_names()
  };
  return m;
}

struct Scenario {
  std::string command;
  std::string output;
  std::uint64_t seed = 7;
  std::set<std::string> checks;

  int n = 16;
  bool grid_given = false;
  std::vector<int> Ks;

  Pattern pattern = Pattern::homogeneous();
  IsotropicElasticity c0{1.0, 1.0}, c1{1.0, 1.0};
  double h0 = 0.5, h1 = 0.5, C2 = 0.0;
  PeriodicFlowField flow;
  LoadSpec load;

  double T = 1.0;
  int m = 3;
  double freeze = std::numeric_limits<double>::infinity();
  std::vector<int> rothe_levels{2, 3, 4, 5};

  double tol = 1e-8, damping = 0.5, elastic_rtol = 1e-10;
  int max_iter = 200, anderson = 6;
  bool regularize = true;

  int cell_n = 16, cells_per_eta = 4;
  double oracle_tol = 0.01, energy_tol = 0.02;
  int M = 8, macro_n = 4;
  double degeneracy_tol = 1e-7;
  std::vector<int> korn_sizes{8, 16};
  KornOptions korn;
  double korn_spread = 0.1;
  MonoOptions mono;
  double unfold_lambda = 0.7;
  int unfold_samples = 2000, structure_pairs = 100;
  VerifierOptions verifier;
  double uniform_spread = 0.2;

  bool enabled(const std::string& c) const { return checks.count(c) > 0; }
};

namespace detail {

inline int parse_eta(const std::string& t) {
  const auto slash = t.find('/');
  if (slash != std::string::npos) {
    const std::string num = t.substr(0, slash), den = t.substr(slash + 1);
    char* end = nullptr;
    const long a = std::strtol(num.c_str(), &end, 10);
    if (*end || a != 1) throw Config::error("eta", "values", "'" + t + "' is not of the form 1/K");
    const long K = std::strtol(den.c_str(), &end, 10);
    if (*end || den.empty() || K < 1) throw Config::error("eta", "values", "'" + t + "' is not of the form 1/K");
    return static_cast<int>(K);
  }
  std::istringstream is(t);
  is.imbue(std::locale::classic());
  double x = 0;
  if (!(is >> x) || !(is >> std::ws).eof() || !(x > 0.0 && x <= 1.0))
    throw Config::error("eta", "values", "'" + t + "' is not a number in (0, 1]");
  const long K = std::lround(1.0 / x);
  if (std::abs(1.0 / static_cast<double>(K) - x) > 1e-12 * x)
    throw Config::error("eta", "values", "eta = " + t + " is not 1/K for an integer K");
  return static_cast<int>(K);
}

inline FlowRule parse_rule(const Config& c, int phase, Projection proj) {
  const std::string p = "phase" + std::to_string(phase);
  const std::string kind = c.text("flow", p, "linear");
  if (kind == "norton_hoff")
    return FlowRule::norton_hoff(c.real("flow", p + "_sigma_y", 0.05), c.real("flow", p + "_r", 2.0), proj);
  if (kind == "linear") return FlowRule::linear(c.real("flow", p + "_a", 1.0), proj);
  if (kind == "power_law") {
    if (proj != Projection::none) throw Config::error("flow", p, "power_law takes no projection; set projection = none");
    return FlowRule::power_law(c.real("flow", p + "_p", 2.0));
  }
  throw Config::error("flow", p, "unknown rule '" + kind + "' (norton_hoff | linear | power_law)");
}

inline std::function<Point3(const Point3&)> load_shape(const std::string& name) {
  if (name == "uniform") return [](const Point3&) { return Point3{1.0, 1.0, 1.0}; };
  if (name == "bump")
    return [](const Point3& x) {
      const double s = std::sin(M_PI * x[0]) * std::sin(M_PI * x[1]) * std::sin(M_PI * x[2]);
      return Point3{s, s, s};
    };
  if (name == "mixed") return [](const Point3& x) { return Point3{std::sin(M_PI * x[1]), 0.5 * x[0], -1.0}; };
  throw Config::error("load", "shape", "unknown shape '" + name + "' (uniform | bump | mixed)");
}

template <class F>
auto field(const std::string& s, const std::string& k, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError& e) {
    const std::string w = e.what();
    if (w.rfind("config ", 0) == 0) throw;
    throw Config::error(s, k, w);
  } catch (const PreconditionError& e) {
    throw Config::error(s, k, e.what());
  }
}

inline void require(bool ok, const std::string& s, const std::string& k, const std::string& msg) {
  if (!ok) throw Config::error(s, k, msg);
}

}  // namespace detail

/// Parses and validates a scenario for one subcommand; throws ConfigError naming
/// the offending field.
inline Scenario build_scenario(const std::string& command, const Config& c) {
  using detail::require;
  if (std::find(subcommands().begin(), subcommands().end(), command) == subcommands().end())
    throw ConfigError("unknown subcommand '" + command + "'");
  const auto& schema = config_schema();
  const auto& allowed_checks = check_names().at(command);
  for (const auto& [sec, key] : c.entries()) {
    if (sec.empty()) throw ConfigError("config: key '" + key + "' is outside any section");
    const auto it = schema.find(sec);
    if (it == schema.end()) throw ConfigError("config [" + sec + "]: unknown section");
    if (sec == "checks") {
      if (std::find(allowed_checks.begin(), allowed_checks.end(), key) == allowed_checks.end()) {
        std::string list;
        for (const auto& a : allowed_checks) list += (list.empty() ? "" : ", ") + a;
        throw Config::error(sec, key, "not a check of " + command + " (one of: " + list + ")");
      }
    } else if (!it->second.count(key)) {
      throw Config::error(sec, key, "unknown key");
    }
  }

  Scenario s;
  s.command = command;
  s.output = c.text("run", "output", command);
  {
    const std::filesystem::path p(s.output);
    require(!s.output.empty() && p.is_relative(), "run", "output", "must be a non-empty relative path");
    for (const auto& part : p) require(part != "..", "run", "output", "must not contain '..'");
  }
  const int seed = c.integer("run", "seed", 7);
  require(seed >= 0, "run", "seed", "must be non-negative");
  s.seed = static_cast<std::uint64_t>(seed);
  for (const auto& name : allowed_checks)
    if (c.flag("checks", name, false)) s.checks.insert(name);

  s.grid_given = c.has("grid", "n");
  s.n = c.integer("grid", "n", 16);
  require(s.n >= 2, "grid", "n", "must be at least 2");
  for (const auto& t : c.list("eta", "values")) s.Ks.push_back(detail::parse_eta(t));
  for (std::size_t i = 1; i < s.Ks.size(); ++i)
    require(s.Ks[i] > s.Ks[i - 1], "eta", "values", "must be strictly decreasing");
  if (s.grid_given || command == "micro-run" || command == "unfold-check")
    for (int K : s.Ks)
      require(s.n % K == 0, "eta", "values",
              "eta = 1/" + std::to_string(K) + " violates the divisibility rule: " + std::to_string(K) +
                  " must divide the grid resolution [grid] n = " + std::to_string(s.n));

  s.pattern = detail::field("material", "pattern", [&] {
    return Pattern::parse(c.text("material", "pattern", "homogeneous"), c.real("material", "fraction", 0.5),
                          c.integer("material", "axis", 0));
  });
  s.c0 = {c.real("material", "lambda0", 1.0), c.real("material", "mu0", 1.0)};
  s.c1 = {c.real("material", "lambda1", s.c0.lambda), c.real("material", "mu1", s.c0.mu)};
  detail::field("material", "lambda0", [&] { s.c0.validate(); });
  detail::field("material", "lambda1", [&] { s.c1.validate(); });
  s.h0 = c.real("material", "C1_0", 0.5);
  s.h1 = c.real("material", "C1_1", s.h0);
  require(s.h0 > 0.0, "material", "C1_0", "must be positive");
  require(s.h1 > 0.0, "material", "C1_1", "must be positive");
  s.C2 = c.real("material", "C2", 0.0);
  require(s.C2 >= 0.0, "material", "C2", "must be non-negative");

  const std::string proj = c.text("flow", "projection", "deviatoric");
  Projection pr = Projection::deviatoric;
  if (proj == "none") pr = Projection::none;
  else if (proj == "irrotational") pr = Projection::irrotational;
  else require(proj == "deviatoric", "flow", "projection", "unknown projection '" + proj + "' (none | deviatoric | irrotational)");
  s.flow.pattern = s.pattern;
  s.flow.phases.clear();
  for (int ph = 0; ph < 2; ++ph) {
    const std::string key = "phase" + std::to_string(ph);
    s.flow.phases.push_back(detail::field("flow", key, [&] {
      FlowRule g = detail::parse_rule(c, ph, pr);
      g.validate();
      return g;
    }));
  }

  s.load.shape = detail::load_shape(c.text("load", "shape", "mixed"));
  for (int k = 0; k < 4; ++k) {
    const std::string key = "coef" + std::to_string(k);
    if (c.has("load", key)) {
      s.load.coef.resize(static_cast<std::size_t>(k) + 1, Point3{0, 0, 0});
      s.load.coef[static_cast<std::size_t>(k)] = c.vec3("load", key, {0, 0, 0});
    }
  }

  s.T = c.real("time", "T", 1.0);
  require(s.T > 0.0, "time", "T", "must be positive");
  s.m = c.integer("time", "m", 3);
  require(s.m >= 0 && s.m <= 12, "time", "m", "must lie in [0, 12]");
  if (c.has("time", "freeze")) {
    s.freeze = c.real("time", "freeze", 0.0);
    require(s.freeze >= 0.0 && s.freeze < s.T, "time", "freeze", "must lie in [0, T)");
  }
  s.rothe_levels = c.integers("time", "rothe_levels", s.rothe_levels);
  for (int l : s.rothe_levels) require(l >= 1 && l <= 12, "time", "rothe_levels", "levels must lie in [1, 12]");

  s.tol = c.real("solver", "tol", 1e-8);
  require(s.tol > 0.0, "solver", "tol", "must be positive");
  s.damping = c.real("solver", "damping", 0.5);
  require(s.damping > 0.0 && s.damping <= 1.0, "solver", "damping", "must lie in (0, 1]");
  s.max_iter = c.integer("solver", "max_iter", 200);
  require(s.max_iter >= 1, "solver", "max_iter", "must be at least 1");
  s.anderson = c.integer("solver", "anderson", 6);
  require(s.anderson >= 0, "solver", "anderson", "must be non-negative");
  s.elastic_rtol = c.real("solver", "elastic_rtol", 1e-10);
  require(s.elastic_rtol > 0.0, "solver", "elastic_rtol", "must be positive");
  s.regularize = c.flag("solver", "regularize", true);

  s.cell_n = c.integer("cell", "n", 16);
  require(s.cell_n >= 2, "cell", "n", "must be at least 2");
  s.cells_per_eta = c.integer("cell", "cells_per_eta", 4);
  require(s.cells_per_eta >= 2, "cell", "cells_per_eta", "must be at least 2");
  s.oracle_tol = c.real("cell", "oracle_tol", 0.01);
  require(s.oracle_tol > 0.0, "cell", "oracle_tol", "must be positive");
  s.energy_tol = c.real("cell", "energy_tol", 0.02);
  require(s.energy_tol > 0.0, "cell", "energy_tol", "must be positive");

  s.M = c.integer("macro", "M", 8);
  require(s.M >= 2, "macro", "M", "must be at least 2");
  s.macro_n = c.integer("macro", "n", 4);
  require(s.macro_n >= 2, "macro", "n", "must be at least 2");
  s.degeneracy_tol = c.real("macro", "degeneracy_tol", 1e-7);
  require(s.degeneracy_tol > 0.0, "macro", "degeneracy_tol", "must be positive");
  if (command == "homog-run")
    for (int K : s.Ks)
      require(s.M % K == 0, "eta", "values",
              "eta = 1/" + std::to_string(K) + " violates the divisibility rule: " + std::to_string(K) +
                  " must divide the macro resolution [macro] M = " + std::to_string(s.M));

  s.korn_sizes = c.integers("korn", "sizes", s.korn_sizes);
  for (int N : s.korn_sizes) require(N >= 2, "korn", "sizes", "sizes must be at least 2");
  s.korn.block = c.integer("korn", "block", s.korn.block);
  require(s.korn.block >= 1, "korn", "block", "must be at least 1");
  s.korn.tol = c.real("korn", "tol", s.korn.tol);
  require(s.korn.tol > 0.0, "korn", "tol", "must be positive");
  s.korn.max_iter = c.integer("korn", "max_iter", s.korn.max_iter);
  require(s.korn.max_iter >= 1, "korn", "max_iter", "must be at least 1");
  s.korn.max_shifts = c.integer("korn", "max_shifts", s.korn.max_shifts);
  require(s.korn.max_shifts >= 1, "korn", "max_shifts", "must be at least 1");
  s.korn.seed = s.seed;
  s.korn_spread = c.real("korn", "spread_tol", 0.1);
  require(s.korn_spread > 0.0, "korn", "spread_tol", "must be positive");

  s.mono.rules = s.flow.phases;
  s.mono.pairs = c.integer("mono", "pairs", 10000);
  require(s.mono.pairs >= 1, "mono", "pairs", "must be at least 1");
  s.mono.lambda = c.real("mono", "lambda", 0.3);
  require(s.mono.lambda > 0.0, "mono", "lambda", "must be positive");
  s.mono.scale = c.real("mono", "scale", 3.0);
  require(s.mono.scale > 0.0, "mono", "scale", "must be positive");
  s.mono.resolvent_samples = c.integer("mono", "resolvent_samples", 2000);
  require(s.mono.resolvent_samples >= 1, "mono", "resolvent_samples", "must be at least 1");
  s.mono.class_m_samples = c.integer("mono", "class_m_samples", 10000);
  require(s.mono.class_m_samples >= 1, "mono", "class_m_samples", "must be at least 1");
  s.mono.sigma_max = c.real("mono", "sigma_max", 6.0);
  require(s.mono.sigma_max > 0.0, "mono", "sigma_max", "must be positive");
  s.mono.seed = s.seed;

  s.unfold_lambda = c.real("unfold", "lambda", 0.7);
  require(s.unfold_lambda > 0.0, "unfold", "lambda", "must be positive");
  s.unfold_samples = c.integer("unfold", "samples", 2000);
  require(s.unfold_samples >= 1, "unfold", "samples", "must be at least 1");
  s.structure_pairs = c.integer("unfold", "pairs", 100);
  require(s.structure_pairs >= 1, "unfold", "pairs", "must be at least 1");

  s.verifier.samples = c.integer("verifier", "samples", 1000);
  require(s.verifier.samples >= 1, "verifier", "samples", "must be at least 1");
  s.verifier.gap_tol = c.real("verifier", "gap_tol", 1e-6);
  require(s.verifier.gap_tol > 0.0, "verifier", "gap_tol", "must be positive");
  s.verifier.seed = s.seed;
  s.uniform_spread = c.real("uniform", "spread_tol", 0.2);
  require(s.uniform_spread > 0.0, "uniform", "spread_tol", "must be positive");

  // Cross-field requirements of the enabled checks.
  auto need_etas = [&](std::size_t k, const std::string& why) {
    require(s.Ks.size() >= k, "eta", "values", why + " needs at least " + std::to_string(k) + " eta values");
  };
  if (command == "micro-run") {
    if (s.enabled("trajectory") || s.enabled("invariants") || s.enabled("dissipation") || s.enabled("skew"))
      need_etas(1, "micro-run");
    if (s.enabled("uniform")) need_etas(2, "the uniform-estimate check");
    if (s.enabled("rothe")) require(s.rothe_levels.size() >= 2, "time", "rothe_levels", "needs at least 2 levels");
  }
  if (command == "homog-run") {
    if (s.enabled("sweep")) need_etas(3, "the two-scale sweep");
    if (!s.checks.empty()) require(s.C2 == 0.0, "material", "C2", "the two-scale solver needs C2 = 0");
  }
  if (command == "unfold-check" && s.enabled("unfolding")) need_etas(1, "the unfolding check");
  if (command == "converge-study") {
    if (s.enabled("elastic")) need_etas(1, "the elastic study");
    if (s.enabled("limit")) {
      need_etas(3, "the limit verifier");
      for (int K : s.Ks)
        require(s.Ks.back() % K == 0, "eta", "values", "every K must divide the finest K = " + std::to_string(s.Ks.back()));
    }
  }
  if (command == "cell-elasticity" && s.enabled("oracle"))
    require(s.pattern.kind == PatternKind::laminate && s.pattern.axis == 0, "material", "pattern",
            "the laminate oracle needs pattern = laminate and axis = 0");
  if (command == "korn-estimate" && s.enabled("estimate"))
    require(!s.korn_sizes.empty(), "korn", "sizes", "must list at least one size");
  return s;
}

// ---------------------------------------------------------------------------
// Dispatch

inline MicroProblem scenario_micro_problem(const Scenario& s, const BoxGrid& g, int K) {
  MicroProblem pb = MicroProblem::sampled(g, K, s.pattern, s.c0, s.c1, s.h0, s.h1, s.C2, s.flow);
  pb.load = s.load.on(g);
  pb.T_end = s.T;
  pb.freeze_time = s.freeze;
  pb.tol = s.tol;
  pb.damping = s.damping;
  pb.max_iter = s.max_iter;
  pb.anderson_depth = s.anderson;
  pb.elastic_rtol = s.elastic_rtol;
  pb.regularize = s.regularize;
  return pb;
}

inline TwoScaleProblem scenario_two_scale_problem(const Scenario& s) {
  TwoScaleProblem pb;
  pb.M = s.M;
  pb.n = s.macro_n;
  pb.pattern = s.pattern;
  pb.c0 = s.c0;
  pb.c1 = s.c1;
  pb.h0 = s.h0;
  pb.h1 = s.h1;
  pb.C2 = s.C2;
  pb.flow = s.flow;
  pb.T_end = s.T;
  pb.freeze_time = s.freeze;
  pb.tol = s.tol;
  pb.damping = s.damping;
  pb.max_iter = s.max_iter;
  pb.anderson_depth = s.anderson;
  pb.elastic_rtol = s.elastic_rtol;
  pb.regularize = s.regularize;
  return pb;
}

/// Static body force of the elastic problems: the load at t = T.
inline std::function<Point3(const Point3&)> static_load(const Scenario& s) {
  const LoadSpec l = s.load;
  const double T = s.T;
  return [l, T](const Point3& x) {
    const Point3 f = l.shape(x);
    Point3 b{0, 0, 0};
    double tk = 1.0;
    for (const auto& c : l.coef) {
      for (int r = 0; r < 3; ++r) b[r] += tk * c[r] * f[r];
      tk *= T;
    }
    return b;
  };
}

inline SuiteResult run_suites(const Scenario& s, bool snapshots) {
  SuiteResult res;
  const std::string& cmd = s.command;
  if (cmd == "micro-run") {
    if (s.enabled("oracle") || s.enabled("rothe")) {
      OracleSuiteOptions o;
      o.m = s.m;
      if (!s.enabled("rothe")) o.rothe_levels.clear();
      else o.rothe_levels = s.rothe_levels;
      SuiteResult r = oracle_suite(o);
      if (!s.enabled("oracle")) {
        std::erase_if(r.checks, [](const Check& c) { return c.name == "scalar_ode_oracle"; });
        std::erase_if(r.tables, [](const auto& t) { return t.first == "oracle"; });
      }
      res.merge(std::move(r));
    }
    MicroSuiteOptions o;
    o.make = [&s](int K) { return scenario_micro_problem(s, BoxGrid::unit(s.n, Mode::microhard), K); };
    o.Ks = s.Ks;
    o.m = s.m;
    o.trajectory = s.enabled("trajectory");
    o.invariants = s.enabled("invariants");
    o.dissipation = s.enabled("dissipation");
    o.uniform = s.enabled("uniform");
    o.skew = s.enabled("skew");
    o.spread_tol = s.uniform_spread;
    o.snapshots = snapshots;
    if (!o.Ks.empty()) res.merge(micro_suite(o));
  } else if (cmd == "cell-elasticity") {
    if (s.enabled("cell") || s.enabled("oracle") || s.enabled("bounds") || s.enabled("basis")) {
      CellSuiteOptions o;
      o.n = s.cell_n;
      o.pattern = s.pattern;
      o.c0 = s.c0;
      o.c1 = s.c1;
      o.oracle = s.enabled("oracle");
      o.bounds = s.enabled("bounds");
      o.basis = s.enabled("basis");
      o.oracle_tol = s.oracle_tol;
      o.seed = s.seed;
      o.snapshots = snapshots;
      res.merge(cell_suite(o));
    }
    if (s.enabled("elasticity")) {
      ElasticitySuiteOptions o;
      o.n = s.n;
      o.coarse = s.n / 2;
      o.c0 = s.c0;
      o.c1 = s.c1;
      res.merge(elasticity_suite(o));
    }
  } else if (cmd == "homog-run") {
    TwoScaleSuiteOptions o;
    o.problem = scenario_two_scale_problem(s);
    o.load = s.load;
    o.m = s.m;
    o.micro_Ks = s.Ks;
    o.degeneracy = s.enabled("degeneracy");
    o.sweep = s.enabled("sweep");
    o.dissipation = s.enabled("dissipation");
    o.degeneracy_tol = s.degeneracy_tol;
    o.snapshots = snapshots;
    res.merge(two_scale_suite(o));
  } else if (cmd == "unfold-check") {
    if (s.enabled("structure")) res.merge(structure_suite({s.n, s.structure_pairs, s.seed}));
    if (s.enabled("unfolding"))
      for (int K : s.Ks) {
        UnfoldOptions o;
        o.n = s.n;
        o.K = K;
        o.seed = s.seed;
        o.flow = s.flow;
        o.lambda = s.unfold_lambda;
        o.samples = s.unfold_samples;
        SuiteResult r = unfold_suite(o);
        for (auto& c : r.checks) c.name = "K" + std::to_string(K) + "_" + c.name;
        for (auto& t : r.tables) t.first += "_K" + std::to_string(K);
        res.merge(std::move(r));
      }
    if (s.enabled("helmholtz")) res.merge(helmholtz_suite({s.n, s.seed}));
  } else if (cmd == "korn-estimate") {
    if (s.enabled("estimate") || s.enabled("torus")) {
      KornSuiteOptions o;
      o.sizes = s.enabled("estimate") ? s.korn_sizes : std::vector<int>{};
      o.korn = s.korn;
      o.spread_tol = s.korn_spread;
      o.torus_rejection = s.enabled("torus");
      o.snapshots = snapshots;
      res.merge(korn_suite(o));
    }
  } else if (cmd == "mono-check") {
    if (s.enabled("monotone")) res.merge(mono_suite(s.mono));
  } else if (cmd == "converge-study") {
    if (s.enabled("elastic")) {
      ElasticSweepOptions o;
      o.cs.pattern = s.pattern;
      o.cs.c0 = s.c0;
      o.cs.c1 = s.c1;
      o.cs.cells_per_eta = s.cells_per_eta;
      o.cs.body_force = static_load(s);
      o.cs.rtol = s.elastic_rtol;
      o.Ks = s.Ks;
      o.energy_tol = s.energy_tol;
      SuiteResult r = elastic_sweep_suite(o);
      if (s.enabled("limit"))
        for (auto& t : r.tables) t.first = "elastic_" + t.first;
      res.merge(std::move(r));
    }
    if (s.enabled("limit")) {
      LimitSuiteOptions o;
      o.make = [&s](int K) { return scenario_micro_problem(s, BoxGrid::unit(s.cells_per_eta * K, Mode::microhard), K); };
      o.Ks = s.Ks;
      o.m = s.m;
      o.verifier = s.verifier;
      SuiteResult r = limit_suite(o);
      if (s.enabled("elastic"))
        for (auto& t : r.tables) t.first = "limit_" + t.first;
      res.merge(std::move(r));
    }
  }
  return res;
}

struct RunRequest {
  std::string command;
  std::string config_text;
  bool snapshots = false;
  std::string output_root;  // empty: $CVH_OUTPUT_ROOT, else ./cvh_output
};

struct RunOutcome {
  int exit_code = 0;  // 0 all checks pass, 1 a check failed, 2 configuration error, 3 runtime error
  std::filesystem::path dir;
  std::vector<Check> checks;
  std::vector<std::string> files;  // emitted, manifest excluded
  std::string message;
};

inline std::filesystem::path output_root(const std::string& override_root) {
  if (!override_root.empty()) return override_root;
  if (const char* env = std::getenv("CVH_OUTPUT_ROOT"); env && *env) return env;
  return "cvh_output";
}

inline RunOutcome run_scenario(const RunRequest& req) {
  RunOutcome out;
  Scenario s;
  try {
    s = build_scenario(req.command, Config::parse(req.config_text));
  } catch (const ConfigError& e) {
    out.exit_code = 2;
    out.message = e.what();
    return out;
  }
  out.dir = output_root(req.output_root) / s.output;
  Emitter em(out.dir);
  try {
    SuiteResult r = run_suites(s, req.snapshots);
    if (!r.checks.empty()) em.write("checks.csv", checks_csv(r.checks));
    for (const auto& [stem, t] : r.tables) em.write_table(stem, t);
    for (const auto& [stem, bytes] : r.snapshots) em.write(stem + ".cvhf", bytes);
    em.finish();
    out.checks = r.checks;
    out.files = em.files();
    out.exit_code = r.passed() ? 0 : 1;
  } catch (const ConfigError& e) {
    out.exit_code = 2;
    out.message = e.what();
  } catch (const std::exception& e) {
    out.exit_code = 3;
    out.message = std::string(req.command) + ": " + e.what();
  }
  return out;
}

}  // namespace cvh
