#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "pathfollow/common.hpp"
#include "pathfollow/vehicle.hpp"

namespace pathfollow {

// Vehicle parameter files are flat JSON objects keyed by the field names
// below; all values SI. Missing keys keep their defaults.
//
//   { "wheelbase": 0.5, "steer_gain": 0.4, "gear_ratio": 0.2,
//     "wheel_inertia": 0.005, "wheel_radius": 0.09, "stall_torque": 0.3,
//     "no_load_speed": 120.0, "motor_damping": 1e-4 }

inline nlohmann::json to_json(const VehicleParams& p) {
  return {{"wheelbase", p.wheelbase},         {"steer_gain", p.steer_gain},
          {"gear_ratio", p.gear_ratio},       {"wheel_inertia", p.wheel_inertia},
          {"wheel_radius", p.wheel_radius},   {"stall_torque", p.stall_torque},
          {"no_load_speed", p.no_load_speed}, {"motor_damping", p.motor_damping}};
}

inline VehicleParams vehicle_params_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("vehicle params: expected a JSON object");
  VehicleParams p;
  const std::pair<const char*, double*> fields[] = {
      {"wheelbase", &p.wheelbase},         {"steer_gain", &p.steer_gain},
      {"gear_ratio", &p.gear_ratio},       {"wheel_inertia", &p.wheel_inertia},
      {"wheel_radius", &p.wheel_radius},   {"stall_torque", &p.stall_torque},
      {"no_load_speed", &p.no_load_speed}, {"motor_damping", &p.motor_damping}};
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const auto& f : fields) known = known || key == f.first;
    if (!known) throw ParseError("vehicle params: unknown key '" + key + "'");
  }
  for (const auto& [key, dst] : fields) {
    if (!j.contains(key)) continue;
    if (!j.at(key).is_number()) throw ParseError(std::string("vehicle params: '") + key + "' must be a number");
    *dst = j.at(key).get<double>();
  }
  try {
    p.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what());
  }
  return p;
}

/// Stable 64-bit fingerprint of a parameter set (hex).
inline std::string params_hash(const VehicleParams& p) { return hex64(fnv1a64(to_json(p).dump())); }

inline nlohmann::json read_json_file(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open '" + file + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("'" + file + "': " + e.what());
  }
}

inline void write_text_file(const std::string& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write '" + file + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + file + "'");
}

inline VehicleParams load_vehicle_params(const std::string& file) {
  return vehicle_params_from_json(read_json_file(file));
}

}  // namespace pathfollow
