#include "nlm/io/config.hpp"

#include "nlm/error.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace nlm::io {

std::string_view to_string(System s) {
  switch (s) {
    case System::Seg2: return "2seg";
    case System::Seg3: return "3seg";
    case System::Oracle: return "oracle";
  }
  return "unknown";
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

double to_double(const std::string& v) {
  double x = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw Error("config-error", "not a number: '" + v + "'");
  return x;
}

long to_long(const std::string& v) {
  long x = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw Error("config-error", "not an integer: '" + v + "'");
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error("config-error", "not a boolean: '" + v + "'");
}

std::vector<double> to_list(const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_double(item));
  }
  return out;
}

std::string list_str(const std::vector<double>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ", " : "") + fmt(xs[i]);
  return s;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define NLM_DOUBLE(key, member) \
  {key, {[](RunConfig& c, const std::string& v) { c.member = to_double(v); }, [](const RunConfig& c) { return fmt(c.member); }}}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"run.system",
       {[](RunConfig& c, const std::string& v) {
          if (v == "2seg") c.system = System::Seg2;
          else if (v == "3seg") c.system = System::Seg3;
          else if (v == "oracle") c.system = System::Oracle;
          else throw Error("config-error", "unknown system '" + v + "'");
        },
        [](const RunConfig& c) { return std::string(to_string(c.system)); }}},
      {"run.task", {[](RunConfig& c, const std::string& v) { c.task = v; }, [](const RunConfig& c) { return c.task; }}},
      {"run.output", {[](RunConfig& c, const std::string& v) { c.output = v; }, [](const RunConfig& c) { return c.output; }}},
      {"run.seed",
       {[](RunConfig& c, const std::string& v) { c.seed = static_cast<std::uint64_t>(to_long(v)); },
        [](const RunConfig& c) { return std::to_string(c.seed); }}},

      NLM_DOUBLE("params2.epsilon", params2.epsilon),
      NLM_DOUBLE("params2.gamma", params2.gamma),
      NLM_DOUBLE("params2.k2", params2.k2),
      NLM_DOUBLE("params2.k4", params2.k4),

      NLM_DOUBLE("params3.I1", params3.I1),
      NLM_DOUBLE("params3.I2", params3.I2),
      NLM_DOUBLE("params3.I3", params3.I3),
      NLM_DOUBLE("params3.l1", params3.l1),
      NLM_DOUBLE("params3.L2", params3.L2),
      NLM_DOUBLE("params3.L3", params3.L3),
      NLM_DOUBLE("params3.m1", params3.m1),
      NLM_DOUBLE("params3.m2", params3.m2),
      NLM_DOUBLE("params3.m3", params3.m3),
      NLM_DOUBLE("params3.k12", params3.k12),
      NLM_DOUBLE("params3.k2_1", params3.k2_1),
      NLM_DOUBLE("params3.k2_2", params3.k2_2),
      NLM_DOUBLE("params3.k4_1", params3.k4_1),
      NLM_DOUBLE("params3.k4_2", params3.k4_2),
      NLM_DOUBLE("params3.u1", params3.u1),
      NLM_DOUBLE("params3.u2", params3.u2),

      NLM_DOUBLE("tolerances.tau_ex", tau_ex),
      NLM_DOUBLE("tolerances.tau_rows", tau_rows),
      NLM_DOUBLE("tolerances.tau_return", tau_return),
      NLM_DOUBLE("tolerances.tau_drift", tau_drift),
      NLM_DOUBLE("tolerances.tau_POE", thresholds.tau_POE),
      NLM_DOUBLE("tolerances.tau_z", thresholds.tau_z),
      NLM_DOUBLE("tolerances.tau_car", thresholds.tau_car),
      NLM_DOUBLE("tolerances.tau_supp", thresholds.tau_supp),
      NLM_DOUBLE("tolerances.tau_rhs", thresholds.tau_rhs),
      NLM_DOUBLE("tolerances.tau_id", thresholds.tau_id),
      NLM_DOUBLE("tolerances.tau_rep", thresholds.tau_rep),
      NLM_DOUBLE("tolerances.d_min", thresholds.d_min),
      NLM_DOUBLE("tolerances.support", support_tolerance),

      {"flags.sector",
       {[](RunConfig& c, const std::string& v) {
          if (v == "both") c.sector.reset();
          else c.sector = seg3::parse_sector(v);
        },
        [](const RunConfig& c) { return c.sector ? std::string(seg3::to_string(*c.sector)) : std::string("both"); }}},
      {"flags.poe_row_enabled",
       {[](RunConfig& c, const std::string& v) { c.poe_row_enabled = to_bool(v); },
        [](const RunConfig& c) { return std::string(c.poe_row_enabled ? "true" : "false"); }}},
      {"flags.m_cov",
       {[](RunConfig& c, const std::string& v) { c.m_cov = static_cast<int>(to_long(v)); },
        [](const RunConfig& c) { return std::to_string(c.m_cov); }}},
      {"flags.gauge",
       {[](RunConfig& c, const std::string& v) { c.gauge = seg3::parse_gauge(v); },
        [](const RunConfig& c) { return std::string(seg3::to_string(c.gauge)); }}},
      {"flags.chart",
       {[](RunConfig& c, const std::string& v) { c.chart = seg3::parse_chart_kind(v); },
        [](const RunConfig& c) { return std::string(seg3::to_string(c.chart)); }}},
      {"flags.representation",
       {[](RunConfig& c, const std::string& v) { c.representation = seg3::parse_representation(v); },
        [](const RunConfig& c) { return std::string(seg3::to_string(c.representation)); }}},
      {"flags.collocation",
       {[](RunConfig& c, const std::string& v) { c.collocation = to_bool(v); },
        [](const RunConfig& c) { return std::string(c.collocation ? "true" : "false"); }}},
      {"flags.shooting_segments",
       {[](RunConfig& c, const std::string& v) { c.shooting_segments = static_cast<std::size_t>(to_long(v)); },
        [](const RunConfig& c) { return std::to_string(c.shooting_segments); }}},
      {"flags.collocation_intervals",
       {[](RunConfig& c, const std::string& v) { c.collocation_intervals = static_cast<std::size_t>(to_long(v)); },
        [](const RunConfig& c) { return std::to_string(c.collocation_intervals); }}},
      NLM_DOUBLE("flags.alpha", alpha),
      NLM_DOUBLE("flags.v_probe", v_probe),
      NLM_DOUBLE("flags.ds", ds),
      NLM_DOUBLE("flags.lambda_end", lambda_end),
      {"flags.max_steps",
       {[](RunConfig& c, const std::string& v) { c.max_steps = static_cast<int>(to_long(v)); },
        [](const RunConfig& c) { return std::to_string(c.max_steps); }}},
      NLM_DOUBLE("flags.vbar", vbar),
      NLM_DOUBLE("flags.support_amplitude", support_amplitude),
      NLM_DOUBLE("flags.horizon_periods", horizon_periods),
      {"flags.speed_grid",
       {[](RunConfig& c, const std::string& v) { c.speed_grid = to_list(v); },
        [](const RunConfig& c) { return list_str(c.speed_grid); }}},
      {"flags.amplitudes",
       {[](RunConfig& c, const std::string& v) { c.amplitudes = to_list(v); },
        [](const RunConfig& c) { return list_str(c.amplitudes); }}},
      {"flags.k",
       {[](RunConfig& c, const std::string& v) { c.k = to_list(v); }, [](const RunConfig& c) { return list_str(c.k); }}},
      {"flags.trajectories",
       {[](RunConfig& c, const std::string& v) { c.trajectories = static_cast<int>(to_long(v)); },
        [](const RunConfig& c) { return std::to_string(c.trajectories); }}},
  };
  return table;
}

#undef NLM_DOUBLE

}  // namespace

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw Error("config-error", "unknown key '" + key + "'");
  try {
    it->second.set(cfg, value);
  } catch (const Error& e) {
    throw Error("config-error", key + ": " + (e.detail().empty() ? e.kind() : e.detail()));
  }
}

RunConfig parse_config(const std::string& text, RunConfig cfg) {
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error("config-error", "line " + std::to_string(lineno) + ": bad section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config-error", "line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const std::string full = section.empty() ? key : section + "." + key;
    try {
      apply_setting(cfg, full, value);
    } catch (const Error& e) {
      throw Error("config-error", "line " + std::to_string(lineno) + ": " + e.detail());
    }
  }
  return cfg;
}

RunConfig load_config(const std::string& path, RunConfig base) {
  std::ifstream f(path);
  if (!f) throw Error("config-error", "cannot read '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

void validate(const RunConfig& c) {
  auto positive = [](const char* name, double x) {
    if (!(x > 0.0)) throw Error("config-error", std::string(name) + " must be positive");
  };
  positive("tau_ex", c.tau_ex);
  positive("tau_rows", c.tau_rows);
  positive("tau_return", c.tau_return);
  positive("tau_drift", c.tau_drift);
  positive("tau_POE", c.thresholds.tau_POE);
  positive("tau_z", c.thresholds.tau_z);
  positive("tau_car", c.thresholds.tau_car);
  positive("tau_supp", c.thresholds.tau_supp);
  positive("tau_rhs", c.thresholds.tau_rhs);
  positive("tau_id", c.thresholds.tau_id);
  positive("tau_rep", c.thresholds.tau_rep);
  positive("d_min", c.thresholds.d_min);
  positive("support", c.support_tolerance);
  positive("ds", c.ds);
  positive("v_probe", c.v_probe);
  if (c.m_cov != 1 && c.m_cov != 3) throw Error("config-error", "m_cov must be 1 or 3");
  if (c.alpha < 0.0 || c.alpha > 1.0) throw Error("config-error", "alpha must lie in [0, 1]");
  if (c.shooting_segments < 1) throw Error("config-error", "shooting_segments must be at least 1");
  if (c.collocation_intervals < 4) throw Error("config-error", "collocation_intervals must be at least 4");
  if (c.max_steps < 1 || c.trajectories < 1) throw Error("config-error", "counts must be positive");
  try {
    c.params2.validate();
    c.params3.validate();
  } catch (const Error& e) {
    throw Error("config-error", e.what());
  }
}

std::string RunConfig::canonical() const {
  std::string out;
  // where results land does not change them
  for (const auto& [key, f] : fields())
    if (key != "run.output") out += key + " = " + f.get(*this) + "\n";
  return out;
}

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : cfg.canonical()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const auto& [key, f] : fields()) out.push_back(key);
  return out;
}

}  // namespace nlm::io
