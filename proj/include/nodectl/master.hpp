#pragma once

// The master-controller: sole owner of the bus master port. It runs one
// request/response transaction at a time, which is the only thing keeping
// the shared half-duplex line free of collisions.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nodectl/bus_sim.hpp"
#include "nodectl/expected.hpp"
#include "nodectl/protocol.hpp"
#include "nodectl/registry.hpp"

namespace nodectl::master {

using bus::SimTime;
using protocol::CommandCode;

struct TransactionPolicy {
  SimTime timeout_us = 100'000;
  std::uint32_t retries = 2;
  SimTime inter_retry_gap_us = 10'000;

  // Must cover the command, the slave turnaround and the longest response.
  SimTime min_timeout(SimTime byte_time) const noexcept {
    return (protocol::kCommandFrameSize + 2 + protocol::kMaxResponseSize) * byte_time;
  }

  void validate(SimTime byte_time) const {
    if (timeout_us <= min_timeout(byte_time)) {
      throw std::invalid_argument("policy.timeout_us must exceed " + std::to_string(min_timeout(byte_time)) +
                                  " us at this baud rate");
    }
  }
};

class MasterError : public std::runtime_error {
 public:
  enum class Code { invalid_address, bus_detached, non_broadcastable, unknown_block, invalid_range };

  MasterError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

constexpr std::string_view to_string(MasterError::Code c) noexcept {
  switch (c) {
    case MasterError::Code::invalid_address: return "invalid-address";
    case MasterError::Code::bus_detached: return "bus-detached";
    case MasterError::Code::non_broadcastable: return "non-broadcastable";
    case MasterError::Code::unknown_block: return "unknown-block";
    case MasterError::Code::invalid_range: return "invalid-range";
  }
  return "error";
}

struct CommandOutcome {
  enum class Status { acked, timeout };

  Status status = Status::timeout;
  std::vector<std::uint8_t> payload;
  std::uint32_t attempts = 0;
  SimTime started_us = 0;   // first byte of the first attempt
  SimTime finished_us = 0;  // ack received or last window closed

  bool acked() const noexcept { return status == Status::acked; }
};

struct NodeOutcome {
  std::uint8_t address = 0;
  CommandOutcome outcome;
};

struct SensorReading {
  std::uint16_t temperature_tenths = 0;
  std::uint16_t humidity_tenths = 0;
};

struct SensorFailure {
  enum class Leg { temperature, humidity };
  enum class Kind { timeout, malformed_payload };

  Leg leg = Leg::temperature;
  Kind kind = Kind::timeout;

  std::string describe() const {
    const char* l = leg == Leg::temperature ? "temperature" : "humidity";
    return kind == Kind::timeout ? std::string("timeout(") + l + ")" : std::string("malformed-payload(") + l + ")";
  }
};

struct TransactionStats {
  std::uint64_t transactions = 0;
  std::uint64_t attempts = 0;
  std::uint64_t acked = 0;
  std::uint64_t timeouts = 0;
  std::uint64_t broadcasts = 0;
  std::uint64_t stray_responses = 0;  // valid frames for someone else
  std::map<protocol::Errc, std::uint64_t> response_errors;
};

class MasterController {
 public:
  // Silent interval the master requires on the line before it transmits.
  static constexpr SimTime kIdleGuardByteTimes = 4;
  static constexpr SimTime kScanTimeoutByteTimes = 32;

  MasterController(bus::Bus& bus, Registry& registry, TransactionPolicy policy = {})
      : bus_(bus), registry_(registry), policy_(policy) {
    policy_.validate(bus_.byte_time());
    port_ = bus_.attach(bus::PortKind::master, [this](std::uint8_t b, SimTime t) { receive(b, t); });
  }

  MasterController(const MasterController&) = delete;
  MasterController& operator=(const MasterController&) = delete;

  ~MasterController() {
    if (bus_.is_attached(port_)) bus_.detach(port_);
  }

  bus::PortId port() const noexcept { return port_; }
  const TransactionPolicy& policy() const noexcept { return policy_; }
  const TransactionStats& stats() const noexcept { return stats_; }

  void detach() {
    if (bus_.is_attached(port_)) bus_.detach(port_);
  }

  TransactionPolicy scan_policy() const noexcept {
    TransactionPolicy fast = policy_;
    fast.retries = 1;
    fast.timeout_us = std::min(policy_.timeout_us, kScanTimeoutByteTimes * bus_.byte_time());
    return fast;
  }

  CommandOutcome send_command(std::uint8_t address, CommandCode code,
                              std::optional<TransactionPolicy> override_policy = std::nullopt) {
    if (!protocol::is_unicast_address(address)) {
      throw MasterError(MasterError::Code::invalid_address, "address must be in 1..254");
    }
    ensure_attached();
    const TransactionPolicy policy = override_policy.value_or(policy_);
    const auto frame = protocol::encode_command({address, code}).value();

    CommandOutcome outcome;
    ++stats_.transactions;
    for (std::uint32_t attempt = 0; attempt <= policy.retries; ++attempt) {
      SimTime quiet = kIdleGuardByteTimes * bus_.byte_time();
      if (attempt > 0) quiet = std::max(quiet, policy.inter_retry_gap_us);
      wait_for_quiet(quiet);

      pending_ = Pending{address, static_cast<std::uint8_t>(static_cast<std::uint8_t>(code) | protocol::kResponseFlag), std::nullopt};
      assembler_.reset();
      const auto handle = bus_.transmit(port_, frame);
      ++stats_.attempts;
      ++outcome.attempts;
      if (attempt == 0) outcome.started_us = handle.first_byte_start_us;

      const SimTime deadline = handle.first_byte_start_us + policy.timeout_us;
      while (!pending_->answer) {
        const auto next = bus_.next_event_time();
        if (!next || *next > deadline) {
          bus_.advance_until(deadline);
          break;
        }
        bus_.advance_until(*next);
      }

      auto answer = std::move(pending_->answer);
      pending_.reset();
      if (answer) {
        outcome.status = CommandOutcome::Status::acked;
        outcome.payload = std::move(answer->payload);
        outcome.finished_us = bus_.now();
        ++stats_.acked;
        record_ack(address, code, outcome);
        return outcome;
      }
    }
    outcome.status = CommandOutcome::Status::timeout;
    outcome.finished_us = bus_.now();
    ++stats_.timeouts;
    return outcome;
  }

  // One DN=0 frame, no response expected. Returns when its last byte is delivered.
  SimTime broadcast(CommandCode code) {
    if (code != CommandCode::PowerOn && code != CommandCode::PowerOff) {
      throw MasterError(MasterError::Code::non_broadcastable,
                        std::string(protocol::command_name(code)) + " cannot be broadcast");
    }
    ensure_attached();
    wait_for_quiet(kIdleGuardByteTimes * bus_.byte_time());
    const auto frame = protocol::encode_command({protocol::kBroadcastAddress, code}).value();
    const auto handle = bus_.transmit(port_, frame);
    bus_.advance_until(handle.last_byte_delivered_us);
    ++stats_.broadcasts;
    const auto status = code == CommandCode::PowerOn ? PowerStatus::on : PowerStatus::off;
    registry_.set_all_status(status);
    return handle.last_byte_delivered_us;
  }

  // Sequential STATUS_QUERY sweep. Responders are (re)registered, silent
  // addresses inside the range are dropped from the registry.
  std::vector<std::uint8_t> scan_bus(unsigned from, unsigned to) {
    if (from < 1 || to > 254) throw MasterError(MasterError::Code::invalid_range, "scan range must lie in 1..254");
    std::vector<std::uint8_t> responders;
    if (from > to) return responders;
    const auto fast = scan_policy();
    for (unsigned a = from; a <= to; ++a) {
      const auto addr = static_cast<std::uint8_t>(a);
      if (send_command(addr, CommandCode::StatusQuery, fast).acked()) {
        responders.push_back(addr);
      } else {
        registry_.remove(addr);
      }
    }
    return responders;
  }

  std::vector<NodeOutcome> power_block(const std::string& name, bool on) {
    auto members = registry_.block_members(name);
    if (!members) throw MasterError(MasterError::Code::unknown_block, "unknown block '" + name + "'");
    std::vector<NodeOutcome> results;
    results.reserve(members->size());
    for (auto addr : *members) {
      results.push_back({addr, send_command(addr, on ? CommandCode::PowerOn : CommandCode::PowerOff)});
    }
    return results;
  }

  Expected<SensorReading, SensorFailure> read_sensors(std::uint8_t address) {
    SensorReading reading;
    auto leg = [&](CommandCode code, SensorFailure::Leg which, std::uint16_t& out) -> std::optional<SensorFailure> {
      auto r = send_command(address, code);
      if (!r.acked()) return SensorFailure{which, SensorFailure::Kind::timeout};
      if (r.payload.size() != 2) return SensorFailure{which, SensorFailure::Kind::malformed_payload};
      out = static_cast<std::uint16_t>((r.payload[0] << 8) | r.payload[1]);
      return std::nullopt;
    };
    if (auto f = leg(CommandCode::ReadTemperature, SensorFailure::Leg::temperature, reading.temperature_tenths)) {
      return unexpected(*f);
    }
    if (auto f = leg(CommandCode::ReadHumidity, SensorFailure::Leg::humidity, reading.humidity_tenths)) {
      return unexpected(*f);
    }
    return reading;
  }

 private:
  struct Pending {
    std::uint8_t address;
    std::uint8_t echo;
    std::optional<protocol::ResponseFrame> answer;
  };

  void ensure_attached() const {
    if (!bus_.is_attached(port_)) throw MasterError(MasterError::Code::bus_detached, "master port is detached");
  }

  // Runs the simulation until nothing has reached the master for `quiet` us.
  void wait_for_quiet(SimTime quiet) {
    for (;;) {
      const SimTime ready = last_rx_ ? std::max(bus_.now(), *last_rx_ + quiet) : bus_.now();
      const auto next = bus_.next_event_time();
      if (ready == bus_.now() && (!next || *next > ready)) return;
      if (next && *next <= ready) {
        bus_.advance_until(*next);
      } else {
        bus_.advance_until(ready);
      }
    }
  }

  void receive(std::uint8_t byte, SimTime at) {
    last_rx_ = at;
    if (!pending_ || pending_->answer) return;
    assembler_.push(byte);
    while (auto r = assembler_.next()) {
      if (!*r) {
        ++stats_.response_errors[r->error()];
        continue;
      }
      if ((*r)->device_number == pending_->address && (*r)->data_type_echo == pending_->echo) {
        pending_->answer = std::move(r->value());
        return;
      }
      ++stats_.stray_responses;
    }
  }

  void record_ack(std::uint8_t address, CommandCode code, const CommandOutcome& outcome) {
    std::optional<PowerStatus> status;
    if (code == CommandCode::PowerOn) status = PowerStatus::on;
    if (code == CommandCode::PowerOff) status = PowerStatus::off;
    if (code == CommandCode::StatusQuery && outcome.payload.size() == 1) {
      status = outcome.payload[0] ? PowerStatus::on : PowerStatus::off;
    }
    registry_.mark_seen(address, outcome.finished_us, status);
  }

  bus::Bus& bus_;
  Registry& registry_;
  TransactionPolicy policy_;
  bus::PortId port_ = 0;
  std::optional<SimTime> last_rx_;
  std::optional<Pending> pending_;
  protocol::ResponseAssembler assembler_;
  TransactionStats stats_;
};

}  // namespace nodectl::master
