#pragma once

// Behavioral model of one slave node-controller: an 8-position DIP switch
// holding the address, a solid-state relay gating the node's supply, a
// 3-digit common-anode seven-segment display, and two simulated sensors.

#include <algorithm>
#include <array>
#include <bitset>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "nodectl/bus_sim.hpp"
#include "nodectl/protocol.hpp"

namespace nodectl::node {

using protocol::CommandCode;
using protocol::Frame;
using protocol::ResponseFrame;

inline constexpr std::uint16_t kHumidityMax = 1000;
inline constexpr int kSensorNoiseTenths = 5;

// Active-low segment patterns (bit 0 = a ... bit 6 = g, bit 7 = dp) for a
// common-anode digit. Index 10 is blank.
inline constexpr std::array<std::uint8_t, 11> kSegmentPatterns = {
    0xC0, 0xF9, 0xA4, 0xB0, 0x99, 0x92, 0x82, 0xF8, 0x80, 0x90, 0xFF};

struct Display {
  std::array<char, 3> digits{' ', ' ', ' '};
  bool decimal_point = false;  // on the leftmost digit

  std::string text() const { return std::string(digits.begin(), digits.end()); }

  std::array<std::uint8_t, 3> segments() const {
    std::array<std::uint8_t, 3> out{};
    for (std::size_t i = 0; i < 3; ++i) {
      const char c = digits[i];
      out[i] = (c >= '0' && c <= '9') ? kSegmentPatterns[static_cast<std::size_t>(c - '0')] : kSegmentPatterns[10];
    }
    if (decimal_point) out[0] &= 0x7F;
    return out;
  }

  friend bool operator==(const Display&, const Display&) = default;
};

struct NodeConfig {
  std::uint8_t address = 1;
  std::uint16_t temperature_baseline = 250;  // tenths of a degree C
  std::uint16_t humidity_baseline = 500;     // tenths of %RH
  bool relay_on = false;
  std::uint64_t noise_seed = 0;
};

struct NodeDiagnostics {
  std::uint64_t frames_seen = 0;      // valid command frames, any address
  std::uint64_t frames_executed = 0;
  std::uint64_t malformed = 0;        // bytes discarded while resynchronizing
  std::uint64_t responses_sent = 0;
};

// What on_byte decided to do with a completed frame addressed to this node.
struct Action {
  Frame frame;
  std::optional<ResponseFrame> response;  // empty for broadcasts
};

class NodeController {
 public:
  explicit NodeController(const NodeConfig& cfg)
      : dip_(cfg.address),
        relay_on_(cfg.relay_on),
        temperature_baseline_(cfg.temperature_baseline),
        humidity_baseline_(cfg.humidity_baseline),
        noise_(cfg.noise_seed) {
    if (humidity_baseline_ > kHumidityMax) throw std::invalid_argument("humidity baseline above 1000");
    refresh_display();
  }

  // Sampled fresh on every completed frame; nothing caches it.
  std::uint8_t read_dip() const noexcept { return static_cast<std::uint8_t>(dip_.to_ulong()); }

  void set_dip_switch(std::size_t bit, bool on) {
    dip_.set(bit, on);
    refresh_display();
  }

  void set_dip(std::uint8_t value) {
    dip_ = std::bitset<8>(value);
    refresh_display();
  }

  const std::bitset<8>& dip_switches() const noexcept { return dip_; }
  bool relay_on() const noexcept { return relay_on_; }
  const Display& display() const noexcept { return display_; }
  const NodeDiagnostics& diagnostics() const noexcept { return diag_; }
  std::size_t rx_pending() const noexcept { return rx_len_; }
  std::uint16_t temperature_baseline() const noexcept { return temperature_baseline_; }
  std::uint16_t humidity_baseline() const noexcept { return humidity_baseline_; }

  // Four-byte sliding window, equivalent to protocol::resync_scan over the
  // received stream.
  std::optional<Action> on_byte(std::uint8_t byte) {
    rx_[rx_len_++] = byte;
    if (rx_len_ < rx_.size()) return std::nullopt;

    auto decoded = protocol::decode_command(rx_);
    if (!decoded) {
      std::copy(rx_.begin() + 1, rx_.end(), rx_.begin());
      --rx_len_;
      ++diag_.malformed;
      return std::nullopt;
    }
    rx_len_ = 0;
    ++diag_.frames_seen;

    const Frame frame = *decoded;
    if (!frame.is_broadcast() && frame.device_number != read_dip()) return std::nullopt;

    ++diag_.frames_executed;
    Action action{frame, execute(frame.data_type)};
    if (frame.is_broadcast()) action.response.reset();
    return action;
  }

  std::optional<ResponseFrame> execute(CommandCode code) {
    const std::uint8_t self = read_dip();
    std::vector<std::uint8_t> payload;
    switch (code) {
      case CommandCode::PowerOn:
        relay_on_ = true;
        break;
      case CommandCode::PowerOff:
        relay_on_ = false;
        break;
      case CommandCode::StatusQuery:
        payload.push_back(relay_on_ ? 1 : 0);
        break;
      case CommandCode::ReadTemperature:
        payload = big_endian(noisy(temperature_baseline_, 0xFFFF));
        break;
      case CommandCode::ReadHumidity:
        payload = big_endian(noisy(humidity_baseline_, kHumidityMax));
        break;
    }
    refresh_display();
    if (!protocol::is_unicast_address(self)) return std::nullopt;
    return ResponseFrame::reply(self, code, std::move(payload));
  }

  void count_response() noexcept { ++diag_.responses_sent; }

 private:
  std::uint16_t noisy(std::uint16_t baseline, int max) {
    const int jitter = static_cast<int>(noise_() % (2 * kSensorNoiseTenths + 1)) - kSensorNoiseTenths;
    return static_cast<std::uint16_t>(std::clamp(static_cast<int>(baseline) + jitter, 0, max));
  }

  static std::vector<std::uint8_t> big_endian(std::uint16_t v) {
    return {static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v & 0xFF)};
  }

  void refresh_display() {
    const unsigned addr = read_dip();
    display_.digits = {static_cast<char>('0' + addr / 100), static_cast<char>('0' + addr / 10 % 10),
                       static_cast<char>('0' + addr % 10)};
    display_.decimal_point = relay_on_;
  }

  std::bitset<8> dip_;
  bool relay_on_;
  std::uint16_t temperature_baseline_;
  std::uint16_t humidity_baseline_;
  std::mt19937_64 noise_;
  std::array<std::uint8_t, 4> rx_{};
  std::size_t rx_len_ = 0;
  Display display_;
  NodeDiagnostics diag_;
};

// Wires a NodeController to a bus port. Responses leave the node two byte
// times after the final byte of the command that triggered them.
class EmulatedNode {
 public:
  using ExecuteHook = std::function<void(const Frame&, bus::SimTime)>;

  static constexpr bus::SimTime kTurnaroundByteTimes = 2;

  EmulatedNode(bus::Bus& bus, const NodeConfig& cfg) : bus_(bus), controller_(cfg) { attach(); }

  EmulatedNode(const EmulatedNode&) = delete;
  EmulatedNode& operator=(const EmulatedNode&) = delete;

  ~EmulatedNode() {
    if (attached()) bus_.detach(port_);
  }

  void attach() {
    if (attached()) return;
    port_ = bus_.attach(bus::PortKind::slave, [this](std::uint8_t b, bus::SimTime t) { receive(b, t); });
    attached_ = true;
  }

  void detach() {
    if (!attached()) return;
    bus_.detach(port_);
    attached_ = false;
  }

  bool attached() const noexcept { return attached_ && bus_.is_attached(port_); }
  bus::PortId port() const noexcept { return port_; }

  NodeController& controller() noexcept { return controller_; }
  const NodeController& controller() const noexcept { return controller_; }

  void on_execute(ExecuteHook hook) { hook_ = std::move(hook); }

  bus::TransmissionHandle respond_after(const ResponseFrame& response, bus::SimTime frame_end) {
    auto bytes = protocol::encode_response(response);
    controller_.count_response();
    return bus_.transmit_at(port_, bytes.value(), frame_end + kTurnaroundByteTimes * bus_.byte_time());
  }

 private:
  void receive(std::uint8_t byte, bus::SimTime at) {
    auto action = controller_.on_byte(byte);
    if (!action) return;
    if (hook_) hook_(action->frame, at);
    if (action->response) respond_after(*action->response, at);
  }

  bus::Bus& bus_;
  NodeController controller_;
  bus::PortId port_ = 0;
  bool attached_ = false;
  ExecuteHook hook_;
};

}  // namespace nodectl::node
