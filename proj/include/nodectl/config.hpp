#pragma once

// Shared JSON configuration for the bus, the emulated nodes and the service.
//
//   {
//     "bus":    {"baud": 9600, "corruption_probability": 0.0, "seed": 1},
//     "nodes":  [{"address": 5, "temp_baseline": 280, "humid_baseline": 550, "relay_on": true}],
//     "server": {"bind": "127.0.0.1:8080"},
//     "policy": {"timeout_us": 100000, "retries": 2, "inter_retry_gap_us": 10000},
//     "state":  {"path": "nodectl-state.json"},
//     "audit":  {"path": "nodectl-audit.ndjson"}
//   }

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nodectl/bus_sim.hpp"
#include "nodectl/master.hpp"
#include "nodectl/node_emulator.hpp"

namespace nodectl {

inline constexpr const char* kConfigEnvVar = "NODECTL_CONFIG";

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Config {
  bus::BusConfig bus;
  std::vector<node::NodeConfig> nodes;
  std::string bind = "127.0.0.1:8080";
  master::TransactionPolicy policy;
  std::string state_path;  // empty: registry is not persisted
  std::string audit_path = "nodectl-audit.ndjson";
  std::string static_dir;  // optional dashboard build to serve at /
};

inline std::uint64_t node_noise_seed(std::uint64_t bus_seed, std::uint8_t address) {
  return bus::detail::splitmix64(bus_seed ^ (0xA5A5ULL << 8 | address));
}

inline Config config_from_json(const nlohmann::json& j) {
  Config cfg;
  try {
    const auto b = j.value("bus", nlohmann::json::object());
    cfg.bus.baud = b.value("baud", cfg.bus.baud);
    cfg.bus.corruption_probability = b.value("corruption_probability", cfg.bus.corruption_probability);
    cfg.bus.rng_seed = b.value("seed", cfg.bus.rng_seed);
    cfg.bus.trace_capacity = b.value("trace_capacity", std::size_t{100'000});
    cfg.bus.validate();

    for (const auto& n : j.value("nodes", nlohmann::json::array())) {
      node::NodeConfig nc;
      const int addr = n.at("address").get<int>();
      if (addr < 1 || addr > 254) throw ConfigError("node address out of range: " + std::to_string(addr));
      nc.address = static_cast<std::uint8_t>(addr);
      nc.temperature_baseline = n.value("temp_baseline", nc.temperature_baseline);
      nc.humidity_baseline = n.value("humid_baseline", nc.humidity_baseline);
      if (nc.humidity_baseline > node::kHumidityMax) throw ConfigError("humid_baseline above 1000");
      nc.relay_on = n.value("relay_on", nc.relay_on);
      nc.noise_seed = n.value("seed", node_noise_seed(cfg.bus.rng_seed, nc.address));
      cfg.nodes.push_back(nc);
    }

    const auto s = j.value("server", nlohmann::json::object());
    cfg.bind = s.value("bind", cfg.bind);
    cfg.static_dir = s.value("static_dir", cfg.static_dir);

    const auto p = j.value("policy", nlohmann::json::object());
    cfg.policy.timeout_us = p.value("timeout_us", cfg.policy.timeout_us);
    cfg.policy.retries = p.value("retries", cfg.policy.retries);
    cfg.policy.inter_retry_gap_us = p.value("inter_retry_gap_us", cfg.policy.inter_retry_gap_us);

    cfg.state_path = j.value("state", nlohmann::json::object()).value("path", cfg.state_path);
    cfg.audit_path = j.value("audit", nlohmann::json::object()).value("path", cfg.audit_path);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  } catch (const bus::BusError& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  try {
    cfg.policy.validate(cfg.bus.byte_time_us());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON: " + path.string());
  return config_from_json(j);
}

// Explicit path first, then $NODECTL_CONFIG, then the fallback.
inline std::optional<std::filesystem::path> resolve_config_path(const std::optional<std::string>& explicit_path,
                                                                const std::optional<std::string>& fallback) {
  if (explicit_path && !explicit_path->empty()) return *explicit_path;
  if (const char* env = std::getenv(kConfigEnvVar); env && *env) return std::filesystem::path(env);
  if (fallback) return *fallback;
  return std::nullopt;
}

// Eight nodes at addresses 1..8, all powered.
inline Config demo_config() {
  Config cfg;
  cfg.bus.trace_capacity = 100'000;
  for (std::uint8_t a = 1; a <= 8; ++a) {
    node::NodeConfig nc;
    nc.address = a;
    nc.temperature_baseline = static_cast<std::uint16_t>(270 + a * 3);
    nc.humidity_baseline = static_cast<std::uint16_t>(400 + a * 5);
    nc.relay_on = true;
    nc.noise_seed = node_noise_seed(cfg.bus.rng_seed, a);
    cfg.nodes.push_back(nc);
  }
  return cfg;
}

}  // namespace nodectl
