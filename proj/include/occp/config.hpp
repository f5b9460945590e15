#pragma once

#include "occp/sim_world.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace occp {

/// Configuration problem. `line` is 1-based and 0 when no single place in the
/// source text is to blame.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& msg, int line = 0);
  int line() const { return line_; }

 private:
  int line_;
};

/// Parses a JSON scenario. Every omitted key keeps its default, so "{}" and an
/// empty text both give the canonical scenario. Unknown keys, wrong types and
/// range violations throw ConfigError.
///
/// Layout: scenario keys at the top level plus the objects "solver", "risk",
/// "idm" and "selection". Solver keys use the symbols n, N, T, N_s, N_d, M.
ScenarioConfig parse_config_text(const std::string& text);
ScenarioConfig parse_config(const std::string& path);

/// Full JSON text of a config; parse_config_text(serialize_config(c)) == c.
std::string serialize_config(const ScenarioConfig& cfg, int indent = 2);

/// Dotted keys accepted by with_config_value, in schema order.
std::vector<std::string> config_keys();

/// Returns a copy of `cfg` with one dotted key (for example "solver.N_s")
/// set from text; the value is read as JSON, falling back to a plain string.
ScenarioConfig with_config_value(const ScenarioConfig& cfg, const std::string& key,
                                 const std::string& value);

}  // namespace occp
