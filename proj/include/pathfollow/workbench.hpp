#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "pathfollow/config.hpp"
#include "pathfollow/controllers.hpp"

namespace pathfollow {

// Workbench config: a flat JSON object, every key optional. File paths are
// relative to the config file.
//
//   { "vehicle_params": "vehicle.json", "mpc_weights": "mpc.json",
//     "lookahead": 0.5, "out": "out", "seed": 0, "workers": 1 }

struct WorkbenchConfig {
  VehicleParams params{};
  MpcWeights weights{};
  double lookahead = 0.5;
  std::string out = "out";
  std::uint64_t seed = 0;
  unsigned workers = 1;
};

/// The settings that change results (not seed, workers or output location).
inline nlohmann::json effective_json(const WorkbenchConfig& c) {
  return {{"vehicle", to_json(c.params)}, {"mpc", to_json(c.weights)}, {"lookahead", c.lookahead}};
}

inline std::string config_hash(const WorkbenchConfig& c) { return hex64(fnv1a64(effective_json(c).dump())); }

inline nlohmann::json provenance(const WorkbenchConfig& c, std::uint64_t seed) {
  return {{"tool_version", std::string(kToolVersion)}, {"seed", seed}, {"config_hash", config_hash(c)}};
}

inline WorkbenchConfig load_workbench_config(const std::string& file) {
  const nlohmann::json j = read_json_file(file);
  if (!j.is_object()) throw ParseError("config '" + file + "': expected a JSON object");
  const std::filesystem::path base = std::filesystem::path(file).parent_path();
  auto resolve = [&](const std::string& rel) {
    const std::filesystem::path p = std::filesystem::path(rel).is_absolute() ? std::filesystem::path(rel) : base / rel;
    if (!std::filesystem::exists(p)) throw IoError("config '" + file + "': referenced file '" + p.string() + "' not found");
    return p.string();
  };
  WorkbenchConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "vehicle_params") c.params = load_vehicle_params(resolve(value.get<std::string>()));
      else if (key == "mpc_weights") c.weights = mpc_weights_from_json(read_json_file(resolve(value.get<std::string>())));
      else if (key == "lookahead") c.lookahead = value.get<double>();
      else if (key == "out") c.out = value.get<std::string>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "workers") c.workers = value.get<unsigned>();
      else throw ParseError("config '" + file + "': unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("config '" + file + "': " + e.what());
  }
  if (!(c.lookahead >= 0.0)) throw ParseError("config '" + file + "': lookahead must be >= 0");
  if (c.workers < 1) throw ParseError("config '" + file + "': workers must be >= 1");
  return c;
}

}  // namespace pathfollow
