#include "occp/config.hpp"

#include <json.hpp>

#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <type_traits>
#include <utility>

namespace occp {

using json = nlohmann::ordered_json;

ConfigError::ConfigError(const std::string& msg, int line)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Line of every key in the text, by dotted path; array elements are "[i]".
std::map<std::string, int> key_lines(const std::string& text) {
  struct Frame {
    bool object;
    std::string path;
    int index = 0;
    bool expect_key = true;
    std::string pending;
  };
  std::map<std::string, int> out;
  std::vector<Frame> stack;
  int line = 1;
  auto value_path = [&]() -> std::string {
    if (stack.empty()) return "";
    const Frame& f = stack.back();
    if (f.object) return f.pending;
    return f.path + "[" + std::to_string(f.index) + "]";
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      ++line;
    } else if (c == '"') {
      std::string s;
      for (++i; i < text.size() && text[i] != '"'; ++i) {
        if (text[i] == '\\' && i + 1 < text.size()) ++i;
        if (text[i] == '\n') ++line;
        s += text[i];
      }
      if (!stack.empty() && stack.back().object && stack.back().expect_key) {
        Frame& f = stack.back();
        f.pending = f.path.empty() ? s : f.path + "." + s;
        f.expect_key = false;
        out[f.pending] = line;
      }
    } else if (c == ',') {
      if (!stack.empty()) {
        if (stack.back().object)
          stack.back().expect_key = true;
        else
          ++stack.back().index;
      }
    } else if (c == '{' || c == '[') {
      stack.push_back({c == '{', value_path(), 0, true, {}});
    } else if ((c == '}' || c == ']') && !stack.empty()) {
      stack.pop_back();
    }
  }
  return out;
}

struct Range {
  double lo = -kInf, hi = kInf;
  bool open_lo = false;

  bool contains(double v) const {
    return std::isfinite(v) && (open_lo ? v > lo : v >= lo) && v <= hi;
  }
  std::string text() const {
    std::ostringstream o;
    if (hi == kInf)
      o << (open_lo ? "> " : ">= ") << lo;
    else if (lo == -kInf)
      o << "<= " << hi;
    else
      o << "in " << (open_lo ? "(" : "[") << lo << ", " << hi << "]";
    return o.str();
  }
};

// Thrown by setters; the caller adds the key and line.
struct FieldError {
  FieldError(std::string m, std::string p = {}) : msg(std::move(m)), path(std::move(p)) {}
  std::string msg;
  std::string path;  // sub-path inside the field value, when known
};

struct Field {
  std::string key;
  std::function<json(const ScenarioConfig&)> get;
  std::function<void(ScenarioConfig&, const json&)> set;
};

template <class Ref>
Field real(std::string key, Ref ref, Range r = {}) {
  return {key, [ref](const ScenarioConfig& c) { return json(ref(const_cast<ScenarioConfig&>(c))); },
          [ref, r](ScenarioConfig& c, const json& v) {
            if (!v.is_number()) throw FieldError{"expected a number"};
            const double x = v.get<double>();
            if (!r.contains(x)) throw FieldError{"must be " + r.text()};
            ref(c) = x;
          }};
}

template <class Ref>
Field integer(std::string key, Ref ref, Range r = {}) {
  return {key, [ref](const ScenarioConfig& c) { return json(ref(const_cast<ScenarioConfig&>(c))); },
          [ref, r](ScenarioConfig& c, const json& v) {
            if (!v.is_number_integer()) throw FieldError{"expected an integer"};
            const auto x = v.get<long long>();
            if (!r.contains(static_cast<double>(x))) throw FieldError{"must be " + r.text()};
            ref(c) = static_cast<std::remove_reference_t<decltype(ref(c))>>(x);
          }};
}

template <class Ref>
Field boolean(std::string key, Ref ref) {
  return {key, [ref](const ScenarioConfig& c) { return json(ref(const_cast<ScenarioConfig&>(c))); },
          [ref](ScenarioConfig& c, const json& v) {
            if (!v.is_boolean()) throw FieldError{"expected true or false"};
            ref(c) = v.get<bool>();
          }};
}

double number_in(const json& obj, const char* name, const std::string& path, Range r,
                 double fallback, bool required) {
  if (!obj.contains(name)) {
    if (required) throw FieldError{"missing \"" + std::string(name) + "\"", path};
    return fallback;
  }
  const json& v = obj.at(name);
  const std::string p = path + "." + name;
  if (!v.is_number()) throw FieldError{"expected a number", p};
  const double x = v.get<double>();
  if (!r.contains(x)) throw FieldError{"must be " + r.text(), p};
  return x;
}

void only_keys(const json& obj, std::initializer_list<const char*> names, const std::string& path) {
  if (!obj.is_object()) throw FieldError{"expected an object", path};
  for (const auto& [k, v] : obj.items()) {
    bool known = false;
    for (const char* n : names) known = known || k == n;
    if (!known) throw FieldError{"unknown key \"" + k + "\"", path + "." + k};
  }
}

Field platoon(std::string key, std::vector<PlatoonEntry> ScenarioConfig::*member) {
  return {key,
          [member](const ScenarioConfig& c) {
            json a = json::array();
            for (const auto& e : c.*member) a.push_back({{"t_cross", e.t_cross}, {"speed", e.speed}});
            return a;
          },
          [member, key](ScenarioConfig& c, const json& v) {
            if (!v.is_array()) throw FieldError{"expected an array of {t_cross, speed}"};
            std::vector<PlatoonEntry> out;
            for (std::size_t i = 0; i < v.size(); ++i) {
              const std::string p = key + "[" + std::to_string(i) + "]";
              only_keys(v[i], {"t_cross", "speed"}, p);
              PlatoonEntry e;
              e.t_cross = number_in(v[i], "t_cross", p, {}, 0.0, true);
              e.speed = number_in(v[i], "speed", p, {0.0, 10.0}, 0.0, false);
              out.push_back(e);
            }
            c.*member = std::move(out);
          }};
}

Field roster() {
  return {"roster",
          [](const ScenarioConfig& c) {
            json a = json::array();
            for (const auto& r : c.roster)
              a.push_back({{"lane", r.lane},
                           {"s", r.s},
                           {"v", r.v},
                           {"v_desired", r.v_desired},
                           {"spawn_time", r.spawn_time}});
            return a;
          },
          [](ScenarioConfig& c, const json& v) {
            if (!v.is_array()) throw FieldError{"expected an array of vehicles"};
            std::vector<VehicleSpawn> out;
            for (std::size_t i = 0; i < v.size(); ++i) {
              const std::string p = "roster[" + std::to_string(i) + "]";
              only_keys(v[i], {"lane", "s", "v", "v_desired", "spawn_time"}, p);
              VehicleSpawn r;
              const double lane = number_in(v[i], "lane", p, {1.0, 2.0}, 1.0, true);
              if (lane != std::floor(lane)) throw FieldError{"lane must be 1 or 2", p + ".lane"};
              r.lane = static_cast<int>(lane);
              r.s = number_in(v[i], "s", p, {}, 0.0, true);
              r.v = number_in(v[i], "v", p, {0.0, 10.0}, 0.0, false);
              r.v_desired = number_in(v[i], "v_desired", p, {0.0, 10.0, true}, 6.0, false);
              r.spawn_time = number_in(v[i], "spawn_time", p, {0.0, kInf}, 0.0, false);
              out.push_back(r);
            }
            c.roster = std::move(out);
          }};
}

template <class E>
Field choice(std::string key, E ScenarioConfig::*member, E (*parse)(const std::string&),
             std::string (*print)(E)) {
  return {key, [member, print](const ScenarioConfig& c) { return json(print(c.*member)); },
          [member, parse](ScenarioConfig& c, const json& v) {
            if (!v.is_string()) throw FieldError{"expected a string"};
            try {
              c.*member = parse(v.get<std::string>());
            } catch (const std::invalid_argument& e) {
              throw FieldError{e.what()};
            }
          }};
}

#define OCCP_REF(expr) [](ScenarioConfig& c) -> auto& { return c.expr; }

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = [] {
    const Range pos{0.0, kInf, true}, nonneg{0.0, kInf}, unit{0.0, 1.0, true};
    std::vector<Field> f;
    // Scenario.
    f.push_back(real("lane_width", OCCP_REF(lane_width), pos));
    f.push_back(real("cross_lane_x0", OCCP_REF(cross_lane_x0)));
    f.push_back(real("cross_lane_x1", OCCP_REF(cross_lane_x1)));
    f.push_back(real("opposite_lane_y", OCCP_REF(opposite_lane_y)));
    f.push_back(real("building_setback", OCCP_REF(building_setback), nonneg));
    f.push_back(real("lane_half_span", OCCP_REF(lane_half_span), pos));
    f.push_back(real("traffic_lo", OCCP_REF(traffic_lo)));
    f.push_back(real("traffic_hi", OCCP_REF(traffic_hi)));
    f.push_back(real("conflict_margin", OCCP_REF(conflict_margin), nonneg));
    f.push_back(real("ev_x0", OCCP_REF(ev_x0)));
    f.push_back(real("ev_y0", OCCP_REF(ev_y0)));
    f.push_back(real("ev_v0", OCCP_REF(ev_v0), {0.0, 10.0}));
    f.push_back(real("vx_desired", OCCP_REF(vx_desired), {0.0, 10.0}));
    f.push_back(real("py_desired", OCCP_REF(py_desired)));
    f.push_back(real("sensor_range", OCCP_REF(sensor_range), pos));
    f.push_back(real("exit_offset", OCCP_REF(exit_offset)));
    f.push_back(real("t_max", OCCP_REF(t_max), pos));
    f.push_back(real("dt", OCCP_REF(dt), pos));
    f.push_back(integer("num_vehicles", OCCP_REF(num_vehicles), {0.0, 1000.0}));
    f.push_back(real("sv_v_min", OCCP_REF(sv_v_min), {0.0, 10.0, true}));
    f.push_back(real("sv_v_max", OCCP_REF(sv_v_max), {0.0, 10.0, true}));
    f.push_back(real("sv_position_jitter", OCCP_REF(sv_position_jitter), nonneg));
    f.push_back(choice("roster_style", &ScenarioConfig::roster_style, &parse_roster_style,
                       static_cast<std::string (*)(RosterStyle)>(&to_string)));
    f.push_back(platoon("platoon_lane1", &ScenarioConfig::platoon_lane1));
    f.push_back(platoon("platoon_lane2", &ScenarioConfig::platoon_lane2));
    f.push_back(real("platoon_speed1", OCCP_REF(platoon_speed1), {0.0, 10.0, true}));
    f.push_back(real("platoon_speed2", OCCP_REF(platoon_speed2), {0.0, 10.0, true}));
    f.push_back(real("platoon_jitter", OCCP_REF(platoon_jitter), nonneg));
    f.push_back(real("platoon_headway", OCCP_REF(platoon_headway), nonneg));
    f.push_back(real("platoon_boost", OCCP_REF(platoon_boost), nonneg));
    f.push_back(roster());
    f.push_back({"seed", [](const ScenarioConfig& c) { return json(c.seed); },
                 [](ScenarioConfig& c, const json& v) {
                   if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0))
                     throw FieldError{"expected a non-negative integer"};
                   c.seed = v.get<std::uint64_t>();
                 }});
    f.push_back(choice("mode", &ScenarioConfig::mode, &parse_mode,
                       static_cast<std::string (*)(RunMode)>(&to_string)));
    f.push_back(integer("plot_cycle", OCCP_REF(plot_cycle), {0.0, 1e6}));

    // Solver.
    f.push_back(integer("solver.n", OCCP_REF(solver.order), {3.0, 30.0}));
    f.push_back(integer("solver.N", OCCP_REF(solver.steps), {2.0, 1000.0}));
    f.push_back(real("solver.T", OCCP_REF(solver.horizon), pos));
    f.push_back(integer("solver.N_s", OCCP_REF(solver.n_s), {1.0, 1000.0}));
    f.push_back(integer("solver.N_d", OCCP_REF(solver.n_d), {0.0, 1000.0}));
    f.push_back(integer("solver.M", OCCP_REF(solver.slots), {0.0, 16.0}));
    f.push_back(real("solver.q_theta", OCCP_REF(solver.q_theta), nonneg));
    f.push_back(real("solver.q_x", OCCP_REF(solver.q_x), nonneg));
    f.push_back(real("solver.q_y", OCCP_REF(solver.q_y), nonneg));
    f.push_back(real("solver.q1", OCCP_REF(solver.q1), nonneg));
    f.push_back(real("solver.q2", OCCP_REF(solver.q2), nonneg));
    f.push_back(real("solver.rho_theta", OCCP_REF(solver.rho_theta), pos));
    f.push_back(real("solver.rho_cx", OCCP_REF(solver.rho_cx), pos));
    f.push_back(real("solver.rho_cy", OCCP_REF(solver.rho_cy), pos));
    f.push_back(real("solver.rho_ctheta", OCCP_REF(solver.rho_ctheta), pos));
    f.push_back(real("solver.rho_obs", OCCP_REF(solver.rho_obs), pos));
    f.push_back(real("solver.eps_pri", OCCP_REF(solver.eps_pri), pos));
    f.push_back(integer("solver.max_iter", OCCP_REF(solver.max_iter), {1.0, 1e6}));
    f.push_back(real("solver.l_x", OCCP_REF(solver.l_x), pos));
    f.push_back(real("solver.l_y", OCCP_REF(solver.l_y), pos));
    f.push_back(real("solver.alpha_start", OCCP_REF(solver.alpha_start), unit));
    f.push_back(real("solver.alpha_end", OCCP_REF(solver.alpha_end), unit));
    f.push_back(real("solver.x_min", OCCP_REF(solver.x_min)));
    f.push_back(real("solver.x_max", OCCP_REF(solver.x_max)));
    f.push_back(real("solver.y_min", OCCP_REF(solver.y_min)));
    f.push_back(real("solver.y_max", OCCP_REF(solver.y_max)));
    f.push_back(real("solver.v_min", OCCP_REF(solver.v_min), {0.0, 10.0}));
    f.push_back(real("solver.v_max", OCCP_REF(solver.v_max), {0.0, 10.0, true}));
    f.push_back(real("solver.ax_min", OCCP_REF(solver.ax_min), {-kInf, 0.0}));
    f.push_back(real("solver.ax_max", OCCP_REF(solver.ax_max), pos));
    f.push_back(real("solver.ay_min", OCCP_REF(solver.ay_min), {-kInf, 0.0}));
    f.push_back(real("solver.ay_max", OCCP_REF(solver.ay_max), pos));
    f.push_back(real("solver.jx_max", OCCP_REF(solver.jx_max), pos));
    f.push_back(real("solver.jy_max", OCCP_REF(solver.jy_max), pos));
    f.push_back(real("solver.bound_decel", OCCP_REF(solver.bound_decel), pos));
    f.push_back(real("solver.v_floor", OCCP_REF(solver.v_floor), pos));
    f.push_back(real("solver.shared_rank_tol", OCCP_REF(solver.shared_rank_tol), {0.0, 1.0, true}));
    f.push_back(boolean("solver.barrier_rows", OCCP_REF(solver.barrier_rows)));

    // Risk.
    f.push_back(real("risk.v_pv_max", OCCP_REF(risk.v_pv_max), pos));
    f.push_back(real("risk.T", OCCP_REF(risk.horizon), nonneg));
    f.push_back(real("risk.Z", OCCP_REF(risk.Z), pos));
    f.push_back(real("risk.c_th_min", OCCP_REF(risk.c_th_min), nonneg));
    f.push_back(real("risk.c_th_max_explore", OCCP_REF(risk.c_th_max_explore), pos));
    f.push_back(real("risk.c_th_max_fallback", OCCP_REF(risk.c_th_max_fallback), pos));
    f.push_back(real("risk.v_occ_min", OCCP_REF(risk.v_occ_min), {0.0, 10.0}));
    f.push_back(real("risk.v_occ_max", OCCP_REF(risk.v_occ_max), {0.0, 10.0, true}));
    f.push_back(real("risk.ds", OCCP_REF(risk.ds), pos));
    f.push_back({"risk.lateral_grid", [](const ScenarioConfig& c) { return json(c.risk.lateral_grid); },
                 [](ScenarioConfig& c, const json& v) {
                   if (!v.is_array() || v.empty()) throw FieldError{"expected a non-empty array"};
                   std::vector<double> g;
                   for (std::size_t i = 0; i < v.size(); ++i) {
                     if (!v[i].is_number() || !(std::abs(v[i].get<double>()) < 1.0))
                       throw FieldError{"values must be numbers in (-1, 1)",
                                        "risk.lateral_grid[" + std::to_string(i) + "]"};
                     g.push_back(v[i].get<double>());
                   }
                   c.risk.lateral_grid = std::move(g);
                 }});
    f.push_back(real("risk.aggregate_scale", OCCP_REF(risk.aggregate_scale), pos));

    // IDM.
    f.push_back(real("idm.a_max", OCCP_REF(idm.a_max), pos));
    f.push_back(real("idm.b", OCCP_REF(idm.b), pos));
    f.push_back(real("idm.s0", OCCP_REF(idm.s0), nonneg));
    f.push_back(real("idm.T_h", OCCP_REF(idm.T_h), nonneg));
    f.push_back(real("idm.delta", OCCP_REF(idm.delta), pos));
    f.push_back(real("idm.accel_limit", OCCP_REF(idm.accel_limit), pos));

    // Selection.
    f.push_back(real("selection.goal", OCCP_REF(selection.goal), nonneg));
    f.push_back(real("selection.lateral", OCCP_REF(selection.lateral), nonneg));
    f.push_back(real("selection.safety", OCCP_REF(selection.safety), nonneg));
    f.push_back(real("selection.bound", OCCP_REF(selection.bound), nonneg));
    f.push_back(real("selection.comfort", OCCP_REF(selection.comfort), nonneg));
    f.push_back(real("selection.consistency", OCCP_REF(selection.consistency), nonneg));
    return f;
  }();
  return fields;
}

#undef OCCP_REF

const Field* find_field(const std::string& key) {
  for (const auto& f : schema())
    if (f.key == key) return &f;
  return nullptr;
}

bool is_section(const std::string& k) {
  return k == "solver" || k == "risk" || k == "idm" || k == "selection";
}

// Dotted keys present in the document, in document order.
std::vector<std::pair<std::string, const json*>> flatten(const json& doc,
                                                         const std::map<std::string, int>& lines) {
  auto line_of = [&](const std::string& k) {
    const auto it = lines.find(k);
    return it == lines.end() ? 0 : it->second;
  };
  if (!doc.is_object()) throw ConfigError("the top level must be a JSON object", 1);
  std::vector<std::pair<std::string, const json*>> out;
  for (const auto& [k, v] : doc.items()) {
    if (is_section(k)) {
      if (!v.is_object()) throw ConfigError(k + ": expected an object", line_of(k));
      for (const auto& [kk, vv] : v.items()) out.emplace_back(k + "." + kk, &vv);
    } else {
      out.emplace_back(k, &v);
    }
  }
  for (const auto& [k, v] : out)
    if (!find_field(k)) throw ConfigError("unknown key \"" + k + "\"", line_of(k));
  return out;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : schema()) out.push_back(f.key);
  return out;
}

ScenarioConfig parse_config_text(const std::string& text) {
  const auto lines = key_lines(text);
  auto line_of = [&](const std::string& k) {
    const auto it = lines.find(k);
    return it == lines.end() ? 0 : it->second;
  };

  bool blank = true;
  for (char c : text) blank = blank && std::isspace(static_cast<unsigned char>(c));
  if (blank) return ScenarioConfig{};

  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    int line = 1;
    for (std::size_t i = 0; i < std::min(e.byte, text.size()); ++i) line += text[i] == '\n';
    std::string what = e.what();
    const auto colon = what.find("parse error");
    throw ConfigError("malformed JSON: " + (colon == std::string::npos ? what : what.substr(colon)), line);
  }

  const auto entries = flatten(doc, lines);
  ScenarioConfig cfg;
  for (const auto& [k, v] : entries) {
    try {
      find_field(k)->set(cfg, *v);
    } catch (const FieldError& e) {
      const std::string where = e.path.empty() ? k : e.path;
      const int line = line_of(where) ? line_of(where) : line_of(k);
      throw ConfigError(where + ": " + e.msg, line);
    }
  }

  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    // Blame the keys whose default would have made the config valid.
    const ScenarioConfig defaults;
    std::string blame;
    int first_line = 0;
    for (const auto& [k, v] : entries) {
      ScenarioConfig probe = cfg;
      const Field* f = find_field(k);
      f->set(probe, f->get(defaults));
      try {
        probe.validate();
      } catch (const std::invalid_argument&) {
        continue;
      }
      const int line = line_of(k);
      blame += (blame.empty() ? " (set by " : ", ") + k + (line ? " on line " + std::to_string(line) : "");
      if (!first_line) first_line = line;
    }
    if (!blame.empty()) blame += ")";
    throw ConfigError(std::string(e.what()) + blame, first_line);
  }
  return cfg;
}

ScenarioConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config_text(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string serialize_config(const ScenarioConfig& cfg, int indent) {
  json doc = json::object();
  for (const auto& f : schema()) {
    const auto dot = f.key.find('.');
    if (dot == std::string::npos)
      doc[f.key] = f.get(cfg);
    else
      doc[f.key.substr(0, dot)][f.key.substr(dot + 1)] = f.get(cfg);
  }
  return doc.dump(indent);
}

ScenarioConfig with_config_value(const ScenarioConfig& cfg, const std::string& key,
                                 const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown key \"" + key + "\"");
  json v;
  try {
    v = json::parse(value);
  } catch (const json::parse_error&) {
    v = value;
  }
  ScenarioConfig out = cfg;
  try {
    f->set(out, v);
  } catch (const FieldError& e) {
    throw ConfigError(key + " = " + value + ": " + e.msg);
  }
  try {
    out.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + " = " + value + ": " + e.what());
  }
  return out;
}

}  // namespace occp
