#pragma once

// Text formats: key-value documents (spec, teacher, joint map, experiment
// config, reports), the line-record network snapshot, and CSV exports.
// The FORMATS section of the README is the reference for all of them.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "spikecpg/cpg.hpp"
#include "spikecpg/decode.hpp"
#include "spikecpg/error.hpp"
#include "spikecpg/resume.hpp"

namespace spikecpg {

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr const char* kOutDirEnv = "SPIKECPG_OUT_DIR";

// ---------------------------------------------------------------------------
// Primitives

// Shortest text that reads back to the same double.
inline std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
    if (ec) throw ResourceError("cannot create directory " + p.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ResourceError("cannot write " + p.string());
  out << text;
  if (!out) throw ResourceError("write failed for " + p.string());
}

// Provenance line carried by every output file.
struct OutputHeader {
  std::uint64_t seed = 0;
  std::uint64_t input_hash = fnv1a64("");

  // Hash over the contents of all inputs, in order.
  static std::uint64_t hash_inputs(const std::vector<std::string>& contents) {
    std::uint64_t h = fnv1a64("");
    for (const auto& c : contents) {
      h = fnv1a64(c, h);
      h = fnv1a64(std::string_view("\0", 1), h);
    }
    return h;
  }

  std::string line() const {
    return std::string("# cpgsim ") + kToolVersion + " seed=" + std::to_string(seed) +
           " input_hash=" + hex64(input_hash) + "\n";
  }
};

inline double parse_double(std::string_view s, const std::string& source, int line) {
  std::string t(s);
  if (t == "inf" || t == "+inf") return INFINITY;
  if (t == "-inf") return -INFINITY;
  double v = 0.0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty())
    throw ParseError(source, line, "expected a number, got '" + t + "'");
  return v;
}

inline long long parse_int(std::string_view s, const std::string& source, int line) {
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    throw ParseError(source, line, "expected an integer, got '" + std::string(s) + "'");
  return v;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Key-value documents
//
//   # comment
//   key = value
//   list = 1, 2, 3
//   [section]        starts a new (repeatable) section

struct KvEntry {
  std::string key, value;
  int line = 0;
};

struct KvSection {
  std::string name;  // "" for the top level
  int line = 0;
  std::vector<KvEntry> entries;
};

class KvFields;

struct KvDocument {
  std::string source;
  std::vector<KvSection> sections;  // sections[0] is the top level

  static KvDocument parse(const std::string& text, const std::string& source) {
    KvDocument d;
    d.source = source;
    d.sections.push_back({"", 0, {}});
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      const auto hash = raw.find('#');
      const std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']' || s.size() < 3) throw ParseError(source, line, "malformed section header '" + s + "'");
        d.sections.push_back({trim(s.substr(1, s.size() - 2)), line, {}});
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ParseError(source, line, "expected 'key = value', got '" + s + "'");
      KvEntry e{trim(s.substr(0, eq)), trim(s.substr(eq + 1)), line};
      if (e.key.empty()) throw ParseError(source, line, "missing key before '='");
      for (const auto& prev : d.sections.back().entries)
        if (prev.key == e.key) throw ParseError(source, line, "duplicate key '" + e.key + "'");
      d.sections.back().entries.push_back(std::move(e));
    }
    return d;
  }

  std::vector<const KvSection*> named(const std::string& name) const {
    std::vector<const KvSection*> v;
    for (const auto& s : sections)
      if (s.name == name) v.push_back(&s);
    return v;
  }
};

// Typed access to one section; finish() rejects keys nobody asked for.
class KvFields {
public:
  KvFields(const KvSection& s, std::string source) : s_(s), source_(std::move(source)) {}

  const KvEntry* find(const std::string& key) {
    used_.insert(key);
    for (const auto& e : s_.entries)
      if (e.key == key) return &e;
    return nullptr;
  }

  bool has(const std::string& key) {
    return find(key) != nullptr;
  }

  double number(const std::string& key, double def) {
    const auto* e = find(key);
    return e ? parse_double(e->value, source_, e->line) : def;
  }

  double number(const std::string& key) { return parse_double(required(key).value, source_, required(key).line); }

  long long integer(const std::string& key, long long def) {
    const auto* e = find(key);
    return e ? parse_int(e->value, source_, e->line) : def;
  }

  long long integer(const std::string& key) {
    const auto& e = required(key);
    return parse_int(e.value, source_, e.line);
  }

  std::string text(const std::string& key, const std::string& def) {
    const auto* e = find(key);
    return e ? e->value : def;
  }

  bool boolean(const std::string& key, bool def) {
    const auto* e = find(key);
    if (!e) return def;
    if (e->value == "true") return true;
    if (e->value == "false") return false;
    throw ParseError(source_, e->line, "expected true or false for '" + key + "'");
  }

  std::vector<double> numbers(const std::string& key) {
    const auto* e = find(key);
    std::vector<double> v;
    if (!e || e->value.empty()) return v;
    for (const auto& part : split(e->value, ',')) v.push_back(parse_double(part, source_, e->line));
    return v;
  }

  // Integers with "a-b" inclusive ranges, e.g. "0-24, 30".
  std::vector<int> int_ranges(const std::string& key) {
    const auto& e = required(key);
    std::vector<int> v;
    for (const auto& part : split(e.value, ',')) {
      const auto dash = part.find('-', 1);
      if (dash == std::string::npos) {
        v.push_back(static_cast<int>(parse_int(part, source_, e.line)));
        continue;
      }
      const auto a = parse_int(trim(part.substr(0, dash)), source_, e.line);
      const auto b = parse_int(trim(part.substr(dash + 1)), source_, e.line);
      if (b < a) throw ParseError(source_, e.line, "descending range '" + part + "'");
      for (auto k = a; k <= b; ++k) v.push_back(static_cast<int>(k));
    }
    return v;
  }

  const KvEntry& required(const std::string& key) {
    const auto* e = find(key);
    if (!e) throw ParseError(source_, s_.line, "missing required key '" + key + "'");
    return *e;
  }

  int line_of(const std::string& key) {
    const auto* e = find(key);
    return e ? e->line : s_.line;
  }

  void finish() const {
    for (const auto& e : s_.entries)
      if (!used_.count(e.key)) throw ParseError(source_, e.line, "unknown key '" + e.key + "'");
  }

private:
  const KvSection& s_;
  std::string source_;
  std::set<std::string> used_;
};

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s;
}

// ---------------------------------------------------------------------------
// CpgSpec

inline std::string write_spec(const CpgSpec& s) {
  std::ostringstream o;
  o << "format_version = " << s.format_version << "\n";
  o << "motor_neuron_count = " << s.motor_neuron_count << "\n";
  o << "tonic_frequency_default = " << fmt(s.tonic_frequency_default) << "\n";
  o << "seed = " << s.seed << "\n";
  for (const auto& p : s.phases) {
    o << "\n[phase]\n";
    o << "duration_ms = " << fmt(p.duration_ms) << "\n";
    o << "pfn_size = " << p.pfn_size << "\n";
    o << "t_neuron_count = " << p.t_neuron_count << "\n";
  }
  return o.str();
}

inline CpgSpec parse_spec(const std::string& text, const std::string& source = "<spec>") {
  const auto doc = KvDocument::parse(text, source);
  CpgSpec s;
  KvFields top(doc.sections[0], source);
  s.format_version = static_cast<int>(top.integer("format_version"));
  if (s.format_version != CpgSpec::kFormatVersion)
    throw ParseError(source, top.line_of("format_version"),
                     "unsupported format_version " + std::to_string(s.format_version));
  s.motor_neuron_count = static_cast<int>(top.integer("motor_neuron_count", s.motor_neuron_count));
  s.tonic_frequency_default = top.number("tonic_frequency_default", s.tonic_frequency_default);
  const auto seed = top.integer("seed", 1);
  if (seed < 0) throw ParseError(source, top.line_of("seed"), "seed must be non-negative");
  s.seed = static_cast<std::uint64_t>(seed);
  top.finish();
  for (std::size_t i = 1; i < doc.sections.size(); ++i) {
    const auto& sec = doc.sections[i];
    if (sec.name != "phase") throw ParseError(source, sec.line, "unknown section [" + sec.name + "]");
    KvFields f(sec, source);
    PhaseSpec p;
    p.duration_ms = f.number("duration_ms");
    p.pfn_size = static_cast<int>(f.integer("pfn_size"));
    p.t_neuron_count = static_cast<int>(f.integer("t_neuron_count", 0));
    f.finish();
    s.phases.push_back(p);
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Network snapshot: one record per line, fields separated by spaces.

namespace detail {

inline const char* role_token(Role r) { return to_string(r); }

inline Role parse_role(const std::string& s, const std::string& source, int line) {
  for (Role r : {Role::npg_h, Role::npg_q, Role::npg_t, Role::pfn, Role::in, Role::motor, Role::tonic_source})
    if (s == to_string(r)) return r;
  throw ParseError(source, line, "unknown role '" + s + "'");
}

}  // namespace detail

inline std::string write_snapshot(const CpgNetwork& c) {
  std::ostringstream o;
  o << "snapshot 1\n";
  o << "seed " << c.spec.seed << "\n";
  o << "motor_neuron_count " << c.spec.motor_neuron_count << "\n";
  o << "tonic_frequency_default " << fmt(c.spec.tonic_frequency_default) << "\n";
  for (const auto& p : c.spec.phases)
    o << "phase " << fmt(p.duration_ms) << " " << p.pfn_size << " " << p.t_neuron_count << "\n";
  o << "t_counts";
  for (int t : c.t_counts) o << " " << t;
  o << "\n";
  auto w = c.weights;
  w.for_each_field([&](const char* name, double& v) { o << "weight " << name << " " << fmt(v) << "\n"; });
  for (const auto& p : c.net.populations())
    o << "population " << p.population_id << " " << p.first << " " << p.count << " " << detail::role_token(p.role)
      << "\n";
  o << "tonic " << c.tonic.population_id << "\n";
  for (std::size_t m = 0; m < c.phases.size(); ++m) {
    const auto& h = c.phases[m];
    o << "handles " << m << " " << h.h.population_id << " " << h.q.population_id << " " << h.t.population_id << " "
      << h.pfn.population_id << " " << h.in.population_id << "\n";
  }
  o << "motor " << (c.motor ? c.motor->population_id : -1) << "\n";
  // neuron id source E_L C tau_m V_th V_reset I_e t_ref tau_exc tau_inh
  for (int id = 0; id < c.net.neuron_count(); ++id) {
    const auto& p = c.net.params(id);
    o << "neuron " << id << " " << (c.net.is_source(id) ? 1 : 0) << " " << fmt(p.resting_potential_mV) << " "
      << fmt(p.membrane_capacity_pF) << " " << fmt(p.membrane_time_constant_ms) << " " << fmt(p.spike_threshold_mV)
      << " " << fmt(p.reset_potential_mV) << " " << fmt(p.external_current_pA) << " "
      << fmt(p.refractory_period_ms) << " " << fmt(p.syn_time_constant_excitatory_ms) << " "
      << fmt(p.syn_time_constant_inhibitory_ms) << "\n";
  }
  // synapse pre post weight E|I plastic delay
  for (const auto& s : c.net.synapses())
    o << "synapse " << s.pre << " " << s.post << " " << fmt(s.weight) << " "
      << (s.sign_class == SignClass::excitatory ? "E" : "I") << " " << (s.plastic ? 1 : 0) << " " << fmt(s.delay_ms)
      << "\n";
  for (std::size_t id = 0; id < c.pfn_inhibitory.size(); ++id)
    if (c.pfn_inhibitory[id]) o << "inhibitory " << id << "\n";
  for (std::size_t m = 0; m < c.pfn_layout.size(); ++m)
    for (std::size_t k = 0; k < c.pfn_layout[m].size(); ++k)
      o << "layout " << m << " " << k << " " << c.pfn_layout[m][k].start_relay << " "
        << fmt(c.pfn_layout[m][k].delay_ms) << "\n";
  return o.str();
}

inline CpgNetwork parse_snapshot(const std::string& text, const std::string& source = "<snapshot>") {
  CpgNetwork c;
  c.spec.phases.clear();
  std::vector<NeuronParams> params;
  std::vector<bool> is_source;
  std::vector<PopulationHandle> pops;
  std::vector<SynapseSpec> syns;
  std::vector<std::array<int, 5>> handles;
  std::vector<std::size_t> inhibitory;
  int tonic_pid = -1, motor_pid = -1;
  bool header = false;
  std::map<std::string, double> weights;

  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (raw.empty() || raw[0] == '#') continue;
    std::istringstream ls(raw);
    std::vector<std::string> f;
    for (std::string tok; ls >> tok;) f.push_back(tok);
    if (f.empty()) continue;
    auto need = [&](std::size_t n) {
      if (f.size() != n)
        throw ParseError(source, line, "'" + f[0] + "' record needs " + std::to_string(n - 1) + " fields");
    };
    auto num = [&](std::size_t i) { return parse_double(f[i], source, line); };
    auto integer = [&](std::size_t i) { return static_cast<int>(parse_int(f[i], source, line)); };
    const auto& k = f[0];
    if (!header) {
      if (k != "snapshot" || f.size() != 2 || f[1] != "1")
        throw ParseError(source, line, "not a version-1 network snapshot");
      header = true;
    } else if (k == "seed") {
      need(2);
      c.spec.seed = static_cast<std::uint64_t>(parse_int(f[1], source, line));
    } else if (k == "motor_neuron_count") {
      need(2);
      c.spec.motor_neuron_count = integer(1);
    } else if (k == "tonic_frequency_default") {
      need(2);
      c.spec.tonic_frequency_default = num(1);
    } else if (k == "phase") {
      need(4);
      c.spec.phases.push_back({num(1), integer(2), integer(3)});
    } else if (k == "t_counts") {
      for (std::size_t i = 1; i < f.size(); ++i) c.t_counts.push_back(integer(i));
    } else if (k == "weight") {
      need(3);
      weights[f[1]] = num(2);
    } else if (k == "population") {
      need(5);
      PopulationHandle h{integer(1), integer(2), integer(3), detail::parse_role(f[4], source, line)};
      if (h.population_id != static_cast<int>(pops.size()))
        throw ParseError(source, line, "populations must be listed in id order");
      pops.push_back(h);
    } else if (k == "tonic") {
      need(2);
      tonic_pid = integer(1);
    } else if (k == "handles") {
      need(7);
      if (integer(1) != static_cast<int>(handles.size())) throw ParseError(source, line, "handles out of phase order");
      handles.push_back({integer(2), integer(3), integer(4), integer(5), integer(6)});
    } else if (k == "motor") {
      need(2);
      motor_pid = integer(1);
    } else if (k == "neuron") {
      need(12);
      if (integer(1) != static_cast<int>(params.size())) throw ParseError(source, line, "neurons must be listed in id order");
      is_source.push_back(integer(2) != 0);
      NeuronParams p;
      p.resting_potential_mV = num(3);
      p.membrane_capacity_pF = num(4);
      p.membrane_time_constant_ms = num(5);
      p.spike_threshold_mV = num(6);
      p.reset_potential_mV = num(7);
      p.external_current_pA = num(8);
      p.refractory_period_ms = num(9);
      p.syn_time_constant_excitatory_ms = num(10);
      p.syn_time_constant_inhibitory_ms = num(11);
      if (!is_source.back()) {
        try {
          p.validate();
        } catch (const std::exception& e) {
          throw ParseError(source, line, e.what());
        }
      }
      params.push_back(p);
    } else if (k == "synapse") {
      need(7);
      if (f[4] != "E" && f[4] != "I") throw ParseError(source, line, "sign class must be E or I");
      syns.push_back({integer(1), integer(2), num(3), f[4] == "E" ? SignClass::excitatory : SignClass::inhibitory,
                      integer(5) != 0, num(6)});
    } else if (k == "inhibitory") {
      need(2);
      inhibitory.push_back(static_cast<std::size_t>(integer(1)));
    } else if (k == "layout") {
      need(5);
      const auto m = static_cast<std::size_t>(integer(1));
      const auto idx = static_cast<std::size_t>(integer(2));
      if (c.pfn_layout.size() <= m) c.pfn_layout.resize(m + 1);
      if (c.pfn_layout[m].size() != idx) throw ParseError(source, line, "layout entries out of order");
      c.pfn_layout[m].push_back({integer(3), num(4)});
    } else {
      throw ParseError(source, line, "unknown record '" + k + "'");
    }
  }
  if (!header) throw ParseError(source, line, "empty snapshot");
  try {
    c.spec.validate();
  } catch (const ConfigError& e) {
    throw ParseError(source, line, e.what());
  }
  c.weights.for_each_field([&](const char* name, double& v) {
    auto it = weights.find(name);
    if (it == weights.end()) throw ParseError(source, line, std::string("missing weight '") + name + "'");
    v = it->second;
  });
  std::size_t known = 0;
  c.weights.for_each_field([&](const char*, double&) { ++known; });
  if (weights.size() != known) throw ParseError(source, line, "unknown weight name in snapshot");
  for (const auto& p : pops)
    if (p.first < 0 || p.count < 1 || p.first + p.count > static_cast<int>(params.size()))
      throw ParseError(source, line, "population " + std::to_string(p.population_id) + " exceeds the neuron list");
  auto pop = [&](int pid) -> PopulationHandle {
    if (pid < 0) return {};
    if (pid >= static_cast<int>(pops.size())) throw ParseError(source, line, "unknown population " + std::to_string(pid));
    return pops[static_cast<std::size_t>(pid)];
  };
  if (handles.size() != c.spec.phases.size()) throw ParseError(source, line, "one handles record per phase required");
  try {
    c.net = Network::from_parts(c.spec.seed, std::move(params), std::move(is_source), pops, std::move(syns));
  } catch (const ConfigError& e) {
    throw ParseError(source, line, e.what());
  }
  c.tonic = pop(tonic_pid);
  for (const auto& h : handles) c.phases.push_back({pop(h[0]), pop(h[1]), pop(h[2]), pop(h[3]), pop(h[4])});
  if (motor_pid >= 0) c.motor = pop(motor_pid);
  c.pfn_inhibitory.assign(static_cast<std::size_t>(c.net.neuron_count()), 0);
  for (auto id : inhibitory) {
    if (id >= c.pfn_inhibitory.size()) throw ParseError(source, line, "inhibitory flag for unknown neuron");
    c.pfn_inhibitory[id] = 1;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Teacher pattern

inline std::string write_teacher(const TeacherPattern& t) {
  std::ostringstream o;
  o << "cycle_length_ms = " << fmt(t.cycle_length_ms) << "\n";
  o << "motor_neuron_count = " << t.spikes.size() << "\n";
  for (std::size_t i = 0; i < t.spikes.size(); ++i)
    if (!t.spikes[i].empty()) o << "neuron." << i << " = " << join(t.spikes[i]) << "\n";
  return o.str();
}

inline TeacherPattern parse_teacher(const std::string& text, const std::string& source = "<teacher>") {
  const auto doc = KvDocument::parse(text, source);
  if (doc.sections.size() > 1) throw ParseError(source, doc.sections[1].line, "teacher files have no sections");
  const auto& sec = doc.sections[0];
  KvFields f(sec, source);
  TeacherPattern t;
  t.cycle_length_ms = f.number("cycle_length_ms");
  const auto n = f.integer("motor_neuron_count");
  if (n < 1) throw ParseError(source, f.line_of("motor_neuron_count"), "motor_neuron_count must be positive");
  t.spikes.assign(static_cast<std::size_t>(n), {});
  for (const auto& e : sec.entries) {
    if (e.key.rfind("neuron.", 0) != 0) continue;
    const auto idx = parse_int(std::string_view(e.key).substr(7), source, e.line);
    if (idx < 0 || idx >= n) throw ParseError(source, e.line, "neuron index out of range");
    t.spikes[static_cast<std::size_t>(idx)] = f.numbers(e.key);
  }
  f.finish();
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw ParseError(source, 0, e.what());
  }
  return t;
}

// ---------------------------------------------------------------------------
// Joint map

inline std::string write_joint_map(const JointMap& m) {
  std::ostringstream o;
  o << "decode_window_ms = " << fmt(m.decode_window_ms) << "\n";
  for (const auto& j : m.joints) {
    o << "\n[joint]\nid = " << j.joint_id << "\nneurons = ";
    for (std::size_t i = 0; i < j.neurons.size(); ++i) o << (i ? ", " : "") << j.neurons[i];
    o << "\n";
  }
  return o.str();
}

inline JointMap parse_joint_map(const std::string& text, const std::string& source = "<joint map>") {
  const auto doc = KvDocument::parse(text, source);
  JointMap m;
  KvFields top(doc.sections[0], source);
  m.decode_window_ms = top.number("decode_window_ms", m.decode_window_ms);
  top.finish();
  for (std::size_t i = 1; i < doc.sections.size(); ++i) {
    const auto& sec = doc.sections[i];
    if (sec.name != "joint") throw ParseError(source, sec.line, "unknown section [" + sec.name + "]");
    KvFields f(sec, source);
    JointMap::Joint j;
    j.joint_id = static_cast<int>(f.integer("id"));
    j.neurons = f.int_ranges("neurons");
    f.finish();
    m.joints.push_back(std::move(j));
  }
  try {
    m.validate();
  } catch (const ConfigError& e) {
    throw ParseError(source, 0, e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// CSV exports

// neuron_id,time_ms sorted by time, then id. Neuron ids are network ids.
inline std::string write_spikes_csv(const SimulationResult& r) {
  std::vector<std::pair<double, int>> rows;
  for (const auto& [id, t] : r.trains)
    for (double x : t.spike_times_ms) rows.emplace_back(x, id);
  std::sort(rows.begin(), rows.end());
  std::string s = "neuron_id,time_ms\n";
  for (const auto& [t, id] : rows) s += std::to_string(id) + "," + fmt(t) + "\n";
  return s;
}

// Inverse of write_spikes_csv; `#` lines are skipped. Only neurons with
// spikes appear in the result.
inline SimulationResult parse_spikes_csv(const std::string& text, const std::string& source = "<spikes>") {
  SimulationResult r;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  bool header = false;
  while (std::getline(in, raw)) {
    ++line;
    const auto s = trim(raw);
    if (s.empty() || s[0] == '#') continue;
    if (!header) {
      if (s != "neuron_id,time_ms") throw ParseError(source, line, "expected header 'neuron_id,time_ms'");
      header = true;
      continue;
    }
    const auto f = split(s, ',');
    if (f.size() != 2) throw ParseError(source, line, "expected 2 columns");
    const auto id = static_cast<int>(parse_int(f[0], source, line));
    const double t = parse_double(f[1], source, line);
    auto& v = r.trains[id].spike_times_ms;
    if (!v.empty() && t < v.back()) throw ParseError(source, line, "rows are not sorted by time");
    v.push_back(t);
    r.total_duration_ms = std::max(r.total_duration_ms, t);
  }
  if (!header) throw ParseError(source, line, "missing header 'neuron_id,time_ms'");
  return r;
}

inline std::string write_trajectory_csv(const JointTrajectory& tr) {
  std::string s = "window_start_ms,joint_id,angle_rad\n";
  for (std::size_t k = 0; k < tr.windows(); ++k)
    for (std::size_t j = 0; j < tr.joint_ids.size(); ++j)
      s += fmt(tr.window_start_ms[k]) + "," + std::to_string(tr.joint_ids[j]) + "," + fmt(tr.angle_rad[j][k]) + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// Training outputs

inline std::string write_error_csv(const TrainingReport& r) {
  std::string s = "epoch,error_ms\n";
  for (std::size_t e = 0; e < r.errors_ms.size(); ++e) s += std::to_string(e) + "," + fmt(r.errors_ms[e]) + "\n";
  return s;
}

// Desired versus produced motor spikes of the final evaluated cycle, cycle-relative.
inline std::string write_raster_csv(const TrainingReport& r) {
  std::vector<std::tuple<double, int, int>> rows;  // time, motor, kind (0 desired, 1 actual)
  for (std::size_t i = 0; i < r.aligned_teacher.spikes.size(); ++i)
    for (double t : r.aligned_teacher.spikes[i]) rows.emplace_back(t, static_cast<int>(i), 0);
  for (std::size_t i = 0; i < r.final_output.size(); ++i)
    for (double t : r.final_output[i]) rows.emplace_back(t, static_cast<int>(i), 1);
  std::sort(rows.begin(), rows.end());
  std::string s = "kind,motor_index,time_ms\n";
  for (const auto& [t, m, k] : rows) s += std::string(k ? "actual" : "desired") + "," + std::to_string(m) + "," + fmt(t) + "\n";
  return s;
}

inline std::string write_training_report(const TrainingReport& r, const std::string& snapshot_ref) {
  std::ostringstream o;
  o << "converged = " << (r.converged ? "true" : "false") << "\n";
  o << "epochs_used = " << r.epochs_used << "\n";
  o << "updates_applied = " << r.updates_applied << "\n";
  o << "initial_error_ms = " << (r.errors_ms.empty() ? "nan" : fmt(r.errors_ms.front())) << "\n";
  o << "final_error_ms = " << (r.errors_ms.empty() ? "nan" : fmt(r.errors_ms.back())) << "\n";
  o << "matched = " << r.final_breakdown.matched << "\n";
  o << "missed = " << r.final_breakdown.missed << "\n";
  o << "spurious = " << r.final_breakdown.spurious << "\n";
  o << "cycle_length_ms = " << join(r.cycle_length_ms) << "\n";
  o << "weights_snapshot = " << snapshot_ref << "\n";
  o << "errors_ms = " << join(r.errors_ms) << "\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Experiment configuration

struct ExperimentConfig {
  std::string snapshot_path;  // trained or built network
  std::string cpg_spec_path;  // alternative: build + calibrate from a spec
  std::string teacher_path;
  std::optional<RandomTeacherParams> random_teacher;
  std::vector<std::uint64_t> seeds;  // teacher seeds (random teachers)
  ResumeHyperparams hp;
  std::vector<double> frequencies;
  std::vector<int> batch_pool_sizes;  // non-empty: batch mode
  int batch_teachers = 20;
  std::string out_dir;
  std::optional<double> dt_ms;
  std::string source;

  bool batch() const { return !batch_pool_sizes.empty(); }
};

inline ExperimentConfig parse_experiment(const std::string& text, const std::string& source = "<config>") {
  const auto doc = KvDocument::parse(text, source);
  ExperimentConfig c;
  c.source = source;
  KvFields top(doc.sections[0], source);
  c.snapshot_path = top.text("snapshot", "");
  c.cpg_spec_path = top.text("cpg_spec", "");
  c.teacher_path = top.text("teacher", "");
  for (double s : top.numbers("seeds")) {
    if (s < 0 || s != std::floor(s)) throw ParseError(source, top.line_of("seeds"), "seeds must be non-negative integers");
    c.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  c.frequencies = top.numbers("frequencies");
  c.out_dir = top.text("out_dir", "");
  if (top.has("dt_ms")) c.dt_ms = top.number("dt_ms");
  top.finish();
  if (!c.snapshot_path.empty() && !c.cpg_spec_path.empty())
    throw ParseError(source, top.line_of("cpg_spec"), "give either snapshot or cpg_spec, not both");
  bool saw_random = false;
  for (std::size_t i = 1; i < doc.sections.size(); ++i) {
    const auto& sec = doc.sections[i];
    KvFields f(sec, source);
    if (sec.name == "resume") {
      c.hp.a = f.number("a", c.hp.a);
      c.hp.A_d = f.number("A_d", c.hp.A_d);
      c.hp.A_l = f.number("A_l", c.hp.A_l);
      c.hp.tau_d_ms = f.number("tau_d_ms", c.hp.tau_d_ms);
      c.hp.tau_l_ms = f.number("tau_l_ms", c.hp.tau_l_ms);
      c.hp.window_cutoff_ms = f.number("window_cutoff_ms", c.hp.window_cutoff_ms);
      c.hp.epochs = static_cast<int>(f.integer("epochs", c.hp.epochs));
      c.hp.target_error_ms = f.number("target_error_ms", c.hp.target_error_ms);
      c.hp.learning_rate = f.number("learning_rate", c.hp.learning_rate);
      c.hp.excitatory_max_pA = f.number("excitatory_max_pA", c.hp.excitatory_max_pA);
      c.hp.inhibitory_min_pA = f.number("inhibitory_min_pA", c.hp.inhibitory_min_pA);
      try {
        c.hp.validate();
      } catch (const std::exception& e) {
        throw ParseError(source, sec.line, e.what());
      }
    } else if (sec.name == "random_teacher") {
      if (saw_random) throw ParseError(source, sec.line, "duplicate [random_teacher] section");
      saw_random = true;
      RandomTeacherParams p;
      p.motor_neurons = static_cast<int>(f.integer("motor_neurons", 0));  // 0: take the network's pool size
      p.spikes_min = static_cast<int>(f.integer("spikes_min", p.spikes_min));
      p.spikes_max = static_cast<int>(f.integer("spikes_max", p.spikes_max));
      p.min_separation_ms = f.number("min_separation_ms", p.min_separation_ms);
      c.random_teacher = p;
    } else if (sec.name == "batch") {
      for (double v : f.numbers("pool_sizes")) c.batch_pool_sizes.push_back(static_cast<int>(v));
      c.batch_teachers = static_cast<int>(f.integer("teachers", c.batch_teachers));
      if (c.batch_pool_sizes.empty()) throw ParseError(source, sec.line, "[batch] needs pool_sizes");
      if (c.batch_teachers < 1) throw ParseError(source, f.line_of("teachers"), "teachers must be positive");
    } else {
      throw ParseError(source, sec.line, "unknown section [" + sec.name + "]");
    }
    f.finish();
  }
  if (c.teacher_path.empty() == !c.random_teacher)
    throw ParseError(source, 1, "exactly one of 'teacher' or a [random_teacher] section is required");
  if (c.batch() && !c.random_teacher) throw ParseError(source, 1, "batch mode uses random teachers");
  if (c.batch() && c.cpg_spec_path.empty()) throw ParseError(source, 1, "batch mode builds per pool size and needs cpg_spec");
  if (c.snapshot_path.empty() && c.cpg_spec_path.empty())
    throw ParseError(source, 1, "one of 'snapshot' or 'cpg_spec' is required");
  return c;
}

// Output directory: explicit flag, then config, then environment, then ".".
inline std::filesystem::path resolve_out_dir(const std::string& flag, const std::string& config) {
  if (!flag.empty()) return flag;
  if (!config.empty()) return config;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return ".";
}

}  // namespace spikecpg
