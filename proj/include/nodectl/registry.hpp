#pragma once

// Master-side view of the cluster: known node-controllers and the blocks
// they are allocated to. Single writer (the bus owner), many readers.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nodectl/bus_sim.hpp"

namespace nodectl::master {

enum class PowerStatus { unknown, on, off };

constexpr std::string_view to_string(PowerStatus s) noexcept {
  switch (s) {
    case PowerStatus::on: return "on";
    case PowerStatus::off: return "off";
    case PowerStatus::unknown: break;
  }
  return "unknown";
}

struct NodeRecord {
  std::uint8_t address = 0;
  std::optional<std::string> block;
  PowerStatus last_status = PowerStatus::unknown;
  std::optional<bus::SimTime> last_seen;
  std::vector<std::string> labels;

  friend bool operator==(const NodeRecord&, const NodeRecord&) = default;
};

inline nlohmann::json to_json(const NodeRecord& r) {
  nlohmann::json j{{"address", r.address},
                   {"power", std::string(to_string(r.last_status))},
                   {"labels", r.labels}};
  j["block"] = r.block ? nlohmann::json(*r.block) : nlohmann::json(nullptr);
  j["last_seen"] = r.last_seen ? nlohmann::json(*r.last_seen) : nlohmann::json(nullptr);
  return j;
}

class RegistryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Registry {
 public:
  Registry() = default;

  std::vector<NodeRecord> nodes() const {
    std::shared_lock lock(mu_);
    std::vector<NodeRecord> out;
    out.reserve(nodes_.size());
    for (const auto& [addr, rec] : nodes_) out.push_back(with_block(rec));
    return out;
  }

  std::optional<NodeRecord> find(std::uint8_t address) const {
    std::shared_lock lock(mu_);
    auto it = nodes_.find(address);
    if (it == nodes_.end()) return std::nullopt;
    return with_block(it->second);
  }

  std::vector<std::uint8_t> addresses() const {
    std::shared_lock lock(mu_);
    std::vector<std::uint8_t> out;
    for (const auto& [addr, rec] : nodes_) out.push_back(addr);
    return out;
  }

  void mark_seen(std::uint8_t address, bus::SimTime at, std::optional<PowerStatus> status = std::nullopt) {
    std::unique_lock lock(mu_);
    auto& rec = nodes_[address];
    rec.address = address;
    rec.last_seen = at;
    if (status) rec.last_status = *status;
  }

  void set_all_status(PowerStatus status) {
    std::unique_lock lock(mu_);
    for (auto& [addr, rec] : nodes_) rec.last_status = status;
  }

  void add(NodeRecord rec) {
    std::unique_lock lock(mu_);
    nodes_[rec.address] = std::move(rec);
  }

  void remove(std::uint8_t address) {
    std::unique_lock lock(mu_);
    nodes_.erase(address);
  }

  // A node sits in at most one block; assigning it elsewhere moves it.
  void set_block(const std::string& name, std::vector<std::uint8_t> members) {
    if (name.empty()) throw RegistryError("block name must not be empty");
    std::sort(members.begin(), members.end());
    members.erase(std::unique(members.begin(), members.end()), members.end());
    std::unique_lock lock(mu_);
    for (auto& [other, addrs] : blocks_) {
      if (other == name) continue;
      std::erase_if(addrs, [&](std::uint8_t a) { return std::binary_search(members.begin(), members.end(), a); });
    }
    blocks_[name] = std::move(members);
  }

  std::optional<std::vector<std::uint8_t>> block_members(const std::string& name) const {
    std::shared_lock lock(mu_);
    auto it = blocks_.find(name);
    if (it == blocks_.end()) return std::nullopt;
    return it->second;
  }

  std::map<std::string, std::vector<std::uint8_t>> blocks() const {
    std::shared_lock lock(mu_);
    return blocks_;
  }

  nlohmann::json to_json() const {
    std::shared_lock lock(mu_);
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& [addr, rec] : nodes_) nodes.push_back(master::to_json(with_block(rec)));
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& [name, addrs] : blocks_) blocks.push_back({{"name", name}, {"nodes", addrs}});
    return {{"nodes", nodes}, {"blocks", blocks}};
  }

  void load_json(const nlohmann::json& j) {
    std::map<std::uint8_t, NodeRecord> nodes;
    for (const auto& n : j.value("nodes", nlohmann::json::array())) {
      NodeRecord rec;
      rec.address = n.at("address").get<std::uint8_t>();
      const auto power = n.value("power", std::string("unknown"));
      rec.last_status = power == "on" ? PowerStatus::on : power == "off" ? PowerStatus::off : PowerStatus::unknown;
      if (n.contains("last_seen") && !n["last_seen"].is_null()) rec.last_seen = n["last_seen"].get<bus::SimTime>();
      rec.labels = n.value("labels", std::vector<std::string>{});
      nodes[rec.address] = std::move(rec);
    }
    std::map<std::string, std::vector<std::uint8_t>> blocks;
    for (const auto& b : j.value("blocks", nlohmann::json::array())) {
      blocks[b.at("name").get<std::string>()] = b.at("nodes").get<std::vector<std::uint8_t>>();
    }
    std::unique_lock lock(mu_);
    nodes_ = std::move(nodes);
    blocks_ = std::move(blocks);
  }

  void save(const std::filesystem::path& path) const {
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw RegistryError("cannot write state file " + tmp);
      out << to_json().dump(2) << '\n';
    }
    std::filesystem::rename(tmp, path);
  }

  void load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RegistryError("cannot read state file " + path.string());
    load_json(nlohmann::json::parse(in));
  }

 private:
  NodeRecord with_block(NodeRecord rec) const {
    rec.block.reset();
    for (const auto& [name, addrs] : blocks_) {
      if (std::find(addrs.begin(), addrs.end(), rec.address) != addrs.end()) {
        rec.block = name;
        break;
      }
    }
    return rec;
  }

  mutable std::shared_mutex mu_;
  std::map<std::uint8_t, NodeRecord> nodes_;
  std::map<std::string, std::vector<std::uint8_t>> blocks_;
};

}  // namespace nodectl::master
