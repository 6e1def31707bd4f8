#pragma once

// Wire format shared by the master and the node-controllers.
//
// Command frame (master -> nodes), fixed 4 bytes, no checksum:
//
//   [STX][DN][DT][ETX]
//
// Response frame (node -> master):
//
//   [STX][DN][DT|0x80][LEN][PAYLOAD x LEN][XOR(DN..last payload byte)][ETX]
//
// DN 0x00 addresses every node (no node answers), 0xFF is never a valid
// address. Multi-byte payload values are big-endian.

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "nodectl/expected.hpp"

namespace nodectl::protocol {

inline constexpr std::uint8_t kStx = 0x02;
inline constexpr std::uint8_t kEtx = 0x03;
inline constexpr std::uint8_t kBroadcastAddress = 0x00;
inline constexpr std::uint8_t kReservedAddress = 0xFF;
inline constexpr std::uint8_t kResponseFlag = 0x80;
inline constexpr std::size_t kCommandFrameSize = 4;
inline constexpr std::size_t kResponseOverhead = 6;
inline constexpr std::size_t kMaxPayload = 16;
inline constexpr std::size_t kMaxResponseSize = kResponseOverhead + kMaxPayload;

enum class CommandCode : std::uint8_t {
  PowerOn = 0x01,
  PowerOff = 0x02,
  StatusQuery = 0x10,
  ReadTemperature = 0x20,
  ReadHumidity = 0x21,
};

inline constexpr std::array<CommandCode, 5> kAllCommands = {
    CommandCode::PowerOn, CommandCode::PowerOff, CommandCode::StatusQuery,
    CommandCode::ReadTemperature, CommandCode::ReadHumidity};

constexpr bool is_command_code(std::uint8_t raw) noexcept {
  for (auto c : kAllCommands) {
    if (static_cast<std::uint8_t>(c) == raw) return true;
  }
  return false;
}

constexpr bool is_unicast_address(std::uint8_t dn) noexcept {
  return dn != kBroadcastAddress && dn != kReservedAddress;
}

constexpr std::string_view command_name(CommandCode code) noexcept {
  switch (code) {
    case CommandCode::PowerOn: return "POWER_ON";
    case CommandCode::PowerOff: return "POWER_OFF";
    case CommandCode::StatusQuery: return "STATUS_QUERY";
    case CommandCode::ReadTemperature: return "READ_TEMPERATURE";
    case CommandCode::ReadHumidity: return "READ_HUMIDITY";
  }
  return "UNKNOWN";
}

inline std::optional<CommandCode> parse_command_name(std::string_view name) {
  for (auto c : kAllCommands) {
    if (command_name(c) == name) return c;
  }
  return std::nullopt;
}

enum class Errc {
  invalid_address,
  unknown_command,
  bad_framing,
  length_mismatch,
  checksum_mismatch,
  payload_too_long,
};

constexpr std::string_view to_string(Errc e) noexcept {
  switch (e) {
    case Errc::invalid_address: return "invalid-address";
    case Errc::unknown_command: return "unknown-command";
    case Errc::bad_framing: return "bad-framing";
    case Errc::length_mismatch: return "length-mismatch";
    case Errc::checksum_mismatch: return "checksum-mismatch";
    case Errc::payload_too_long: return "payload-too-long";
  }
  return "unknown";
}

struct Frame {
  std::uint8_t device_number = 0;
  CommandCode data_type = CommandCode::StatusQuery;

  bool is_broadcast() const noexcept { return device_number == kBroadcastAddress; }
  friend bool operator==(const Frame&, const Frame&) = default;
};

using CommandBytes = std::array<std::uint8_t, kCommandFrameSize>;

inline Expected<CommandBytes, Errc> encode_command(const Frame& frame) {
  if (frame.device_number == kReservedAddress) return unexpected(Errc::invalid_address);
  const auto dt = static_cast<std::uint8_t>(frame.data_type);
  if (!is_command_code(dt)) return unexpected(Errc::unknown_command);
  return CommandBytes{kStx, frame.device_number, dt, kEtx};
}

inline Expected<Frame, Errc> decode_command(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kCommandFrameSize || bytes[0] != kStx || bytes[3] != kEtx) {
    return unexpected(Errc::bad_framing);
  }
  if (bytes[1] == kReservedAddress) return unexpected(Errc::invalid_address);
  if (!is_command_code(bytes[2])) return unexpected(Errc::unknown_command);
  return Frame{bytes[1], static_cast<CommandCode>(bytes[2])};
}

inline std::uint8_t xor_checksum(std::span<const std::uint8_t> bytes) noexcept {
  std::uint8_t acc = 0;
  for (auto b : bytes) acc ^= b;
  return acc;
}

struct ResponseFrame {
  std::uint8_t device_number = 0;
  std::uint8_t data_type_echo = 0;
  std::vector<std::uint8_t> payload;

  static ResponseFrame reply(std::uint8_t dn, CommandCode code, std::vector<std::uint8_t> payload = {}) {
    return ResponseFrame{dn, static_cast<std::uint8_t>(static_cast<std::uint8_t>(code) | kResponseFlag),
                         std::move(payload)};
  }

  // Low 7 bits of the echo; only meaningful for a frame that passed validation.
  CommandCode command() const noexcept {
    return static_cast<CommandCode>(data_type_echo & static_cast<std::uint8_t>(~kResponseFlag));
  }

  friend bool operator==(const ResponseFrame&, const ResponseFrame&) = default;
};

constexpr bool is_valid_echo(std::uint8_t echo) noexcept {
  return (echo & kResponseFlag) != 0 &&
         is_command_code(static_cast<std::uint8_t>(echo & static_cast<std::uint8_t>(~kResponseFlag)));
}

inline Expected<std::vector<std::uint8_t>, Errc> encode_response(const ResponseFrame& resp) {
  if (resp.payload.size() > kMaxPayload) return unexpected(Errc::payload_too_long);
  if (!is_unicast_address(resp.device_number)) return unexpected(Errc::invalid_address);
  if (!is_valid_echo(resp.data_type_echo)) return unexpected(Errc::unknown_command);

  std::vector<std::uint8_t> out;
  out.reserve(kResponseOverhead + resp.payload.size());
  out.push_back(kStx);
  out.push_back(resp.device_number);
  out.push_back(resp.data_type_echo);
  out.push_back(static_cast<std::uint8_t>(resp.payload.size()));
  out.insert(out.end(), resp.payload.begin(), resp.payload.end());
  out.push_back(xor_checksum(std::span(out).subspan(1)));
  out.push_back(kEtx);
  return out;
}

inline Expected<ResponseFrame, Errc> decode_response(std::span<const std::uint8_t> bytes) {
  if (bytes.empty() || bytes[0] != kStx) return unexpected(Errc::bad_framing);
  if (bytes.size() < kResponseOverhead) return unexpected(Errc::length_mismatch);
  const std::size_t len = bytes[3];
  if (len > kMaxPayload || bytes.size() != kResponseOverhead + len) {
    return unexpected(Errc::length_mismatch);
  }
  if (bytes.back() != kEtx) return unexpected(Errc::bad_framing);
  const std::size_t checksum_at = 4 + len;
  if (xor_checksum(bytes.subspan(1, checksum_at - 1)) != bytes[checksum_at]) {
    return unexpected(Errc::checksum_mismatch);
  }
  if (!is_unicast_address(bytes[1]) || !is_valid_echo(bytes[2])) {
    return unexpected(Errc::bad_framing);
  }
  return ResponseFrame{bytes[1], bytes[2],
                       std::vector<std::uint8_t>(bytes.begin() + 4, bytes.begin() + checksum_at)};
}

struct ScannedFrame {
  std::size_t offset = 0;
  Frame frame;
  friend bool operator==(const ScannedFrame&, const ScannedFrame&) = default;
};

struct ScanResult {
  std::vector<ScannedFrame> frames;
  std::size_t skipped = 0;  // bytes stepped over one at a time
};

// Greedy left-to-right recovery: a valid frame at the cursor is taken whole,
// anything else advances the cursor by one byte.
inline ScanResult resync_scan(std::span<const std::uint8_t> stream) {
  ScanResult result;
  std::size_t pos = 0;
  while (pos < stream.size()) {
    if (stream.size() - pos >= kCommandFrameSize) {
      auto decoded = decode_command(stream.subspan(pos, kCommandFrameSize));
      if (decoded) {
        result.frames.push_back({pos, *decoded});
        pos += kCommandFrameSize;
        continue;
      }
    }
    ++result.skipped;
    ++pos;
  }
  return result;
}

// Incremental response parser for a receiver that only sees a byte stream.
// Every completed candidate (valid or not) is queued for next(); bytes that
// cannot start a frame are dropped and counted.
class ResponseAssembler {
 public:
  void push(std::uint8_t byte) {
    buffer_.push_back(byte);
    drain();
  }

  std::optional<Expected<ResponseFrame, Errc>> next() {
    if (results_.empty()) return std::nullopt;
    auto r = std::move(results_.front());
    results_.pop_front();
    return r;
  }

  void reset() {
    buffer_.clear();
    results_.clear();
  }

  std::size_t skipped() const noexcept { return skipped_; }

 private:
  void drain() {
    for (;;) {
      while (!buffer_.empty() && buffer_.front() != kStx) {
        buffer_.erase(buffer_.begin());
        ++skipped_;
      }
      if (buffer_.size() < 4) return;
      const std::size_t len = buffer_[3];
      if (len > kMaxPayload) {
        results_.emplace_back(unexpected(Errc::length_mismatch));
        slide();
        continue;
      }
      const std::size_t total = kResponseOverhead + len;
      if (buffer_.size() < total) return;
      auto decoded = decode_response(std::span(buffer_).first(total));
      if (decoded) {
        buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(total));
        results_.emplace_back(std::move(decoded));
      } else {
        results_.emplace_back(std::move(decoded));
        slide();
      }
    }
  }

  void slide() {
    buffer_.erase(buffer_.begin());
    ++skipped_;
  }

  std::vector<std::uint8_t> buffer_;
  std::deque<Expected<ResponseFrame, Errc>> results_;
  std::size_t skipped_ = 0;
};

}  // namespace nodectl::protocol
