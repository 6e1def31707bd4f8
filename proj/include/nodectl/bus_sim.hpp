#pragma once

// Discrete-event model of a half-duplex multi-drop RS-485 line.
//
// Every byte occupies the wire for one byte time [start, start + byte_time)
// and reaches every other attached port at start + byte_time. A byte whose
// interval overlaps another port's byte is received as 0xFF by everyone.
// Line noise XORs a delivered byte with a random nonzero mask, drawn per
// receiver from that receiver's own RNG stream.
//
// Not thread-safe: one owner drives attach/detach/transmit/advance.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nodectl::bus {

using PortId = std::uint32_t;
using SimTime = std::uint64_t;  // simulated microseconds

enum class PortKind { master, slave };

enum class EventKind { byte_sent, byte_delivered, byte_corrupted, collision, attach, detach };

constexpr std::string_view to_string(EventKind k) noexcept {
  switch (k) {
    case EventKind::byte_sent: return "byte_sent";
    case EventKind::byte_delivered: return "byte_delivered";
    case EventKind::byte_corrupted: return "byte_corrupted";
    case EventKind::collision: return "collision";
    case EventKind::attach: return "attach";
    case EventKind::detach: return "detach";
  }
  return "unknown";
}

struct BusEvent {
  SimTime timestamp_us = 0;
  std::uint64_t sequence = 0;
  EventKind kind = EventKind::byte_sent;
  PortId port = 0;
  std::optional<std::uint8_t> value;

  friend bool operator==(const BusEvent&, const BusEvent&) = default;
};

// One trace-export line: "timestamp_us kind port value" (value "-" if absent).
inline std::string format_event(const BusEvent& e) {
  std::ostringstream os;
  os << e.timestamp_us << ' ' << to_string(e.kind) << ' ' << e.port << ' ';
  if (e.value) {
    static constexpr char kHex[] = "0123456789abcdef";
    os << "0x" << kHex[*e.value >> 4] << kHex[*e.value & 0xF];
  } else {
    os << '-';
  }
  return os.str();
}

template <typename Events>
void write_trace(std::ostream& os, const Events& events) {
  for (const auto& e : events) os << format_event(e) << '\n';
}

class BusError : public std::runtime_error {
 public:
  enum class Code { second_master, unknown_port, invalid_config };

  BusError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const noexcept { return code_; }

 private:
  Code code_;
};

struct BusConfig {
  std::uint32_t baud = 9600;
  double corruption_probability = 0.0;
  std::uint64_t rng_seed = 0;
  std::size_t trace_capacity = 0;  // 0 keeps every event

  // 8N1: start + 8 data + stop bits.
  SimTime byte_time_us() const noexcept {
    return (10ULL * 1'000'000ULL + baud / 2) / baud;
  }

  void validate() const {
    if (baud == 0) throw BusError(BusError::Code::invalid_config, "baud must be > 0");
    if (!(corruption_probability >= 0.0 && corruption_probability <= 1.0)) {
      throw BusError(BusError::Code::invalid_config, "corruption_probability must be in [0,1]");
    }
  }
};

struct TransmissionHandle {
  PortId port = 0;
  SimTime first_byte_start_us = 0;
  SimTime last_byte_delivered_us = 0;
  std::size_t size = 0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace detail

class Bus {
 public:
  using Receiver = std::function<void(std::uint8_t value, SimTime at)>;

  explicit Bus(BusConfig config = {}) : config_((config.validate(), config)), byte_time_(config.byte_time_us()) {}

  Bus(const Bus&) = delete;
  Bus& operator=(const Bus&) = delete;

  const BusConfig& config() const noexcept { return config_; }
  SimTime byte_time() const noexcept { return byte_time_; }
  SimTime now() const noexcept { return now_; }

  PortId attach(PortKind kind, Receiver receiver = {}) {
    if (kind == PortKind::master && master_attached()) {
      throw BusError(BusError::Code::second_master, "a master port is already attached");
    }
    const auto id = static_cast<PortId>(ports_.size());
    Port p;
    p.kind = kind;
    p.receiver = std::move(receiver);
    p.rng.seed(detail::splitmix64(config_.rng_seed ^ detail::splitmix64(id + 1)));
    ports_.push_back(std::move(p));
    log(EventKind::attach, id, std::nullopt);
    return id;
  }

  void detach(PortId id) {
    Port& p = port(id);
    p.attached = false;
    p.receiver = {};
    // Bytes already on the wire finish; queued ones never start.
    for (auto& slot : slots_) {
      if (slot->port == id && slot->start > now_) slot->cancelled = true;
    }
    log(EventKind::detach, id, std::nullopt);
  }

  bool is_attached(PortId id) const noexcept { return id < ports_.size() && ports_[id].attached; }

  void set_receiver(PortId id, Receiver receiver) { port(id).receiver = std::move(receiver); }

  TransmissionHandle transmit(PortId id, std::span<const std::uint8_t> bytes) {
    return transmit_at(id, bytes, now_);
  }

  // Bytes go out back to back, starting no earlier than `not_before` and not
  // before this port's previous transmission has left the wire.
  TransmissionHandle transmit_at(PortId id, std::span<const std::uint8_t> bytes, SimTime not_before) {
    Port& p = port(id);
    SimTime start = std::max({not_before, now_, p.busy_until});
    TransmissionHandle handle{id, start, start, bytes.size()};
    for (auto value : bytes) {
      auto slot = std::make_shared<Slot>(Slot{id, value, start, start + byte_time_, false});
      slots_.push_back(slot);
      push_item(start, Item::Kind::send, slot, {});
      push_item(start + byte_time_, Item::Kind::deliver, slot, {});
      start += byte_time_;
    }
    handle.last_byte_delivered_us = bytes.empty() ? handle.first_byte_start_us : start;
    p.busy_until = std::max(p.busy_until, start);
    return handle;
  }

  void schedule_at(SimTime at, std::function<void()> action) {
    push_item(std::max(at, now_), Item::Kind::timer, nullptr, std::move(action));
  }

  std::optional<SimTime> next_event_time() const {
    if (queue_.empty()) return std::nullopt;
    return queue_.begin()->first.first;
  }

  // Time at which the last scheduled byte leaves the wire (now if idle).
  SimTime idle_at() const noexcept {
    SimTime t = now_;
    for (const auto& s : slots_) {
      if (!s->cancelled) t = std::max(t, s->end);
    }
    return t;
  }

  std::vector<BusEvent> advance(SimTime duration_us) { return advance_until(now_ + duration_us); }

  std::vector<BusEvent> advance_until(SimTime target) {
    const std::size_t mark = total_logged_;
    while (!queue_.empty() && queue_.begin()->first.first <= target) {
      auto node = queue_.extract(queue_.begin());
      now_ = node.key().first;
      fire(node.mapped());
    }
    if (target > now_) now_ = target;
    prune();
    return events_after(mark);
  }

  // Runs until no scheduled work is left.
  std::vector<BusEvent> run_until_idle() {
    const std::size_t mark = total_logged_;
    while (auto t = next_event_time()) advance_until(*t);
    return events_after(mark);
  }

  const std::deque<BusEvent>& trace() const noexcept { return trace_; }

  std::vector<BusEvent> recent_events(std::size_t limit) const {
    const std::size_t n = std::min(limit, trace_.size());
    return {trace_.end() - static_cast<std::ptrdiff_t>(n), trace_.end()};
  }

 private:
  struct Port {
    PortKind kind = PortKind::slave;
    bool attached = true;
    Receiver receiver;
    std::mt19937_64 rng;
    SimTime busy_until = 0;
  };

  struct Slot {
    PortId port;
    std::uint8_t value;
    SimTime start;
    SimTime end;
    bool cancelled;
  };

  struct Item {
    enum class Kind { send, deliver, timer };
    Kind kind;
    std::shared_ptr<Slot> slot;
    std::function<void()> action;
  };

  bool master_attached() const noexcept {
    return std::any_of(ports_.begin(), ports_.end(),
                       [](const Port& p) { return p.attached && p.kind == PortKind::master; });
  }

  Port& port(PortId id) {
    if (id >= ports_.size() || !ports_[id].attached) {
      throw BusError(BusError::Code::unknown_port, "unknown port " + std::to_string(id));
    }
    return ports_[id];
  }

  void push_item(SimTime at, Item::Kind kind, std::shared_ptr<Slot> slot, std::function<void()> action) {
    queue_.emplace(std::make_pair(at, next_item_seq_++), Item{kind, std::move(slot), std::move(action)});
  }

  void fire(Item& item) {
    switch (item.kind) {
      case Item::Kind::timer:
        item.action();
        return;
      case Item::Kind::send:
        if (!item.slot->cancelled) log(EventKind::byte_sent, item.slot->port, item.slot->value);
        return;
      case Item::Kind::deliver:
        if (!item.slot->cancelled) deliver(*item.slot);
        return;
    }
  }

  bool collided(const Slot& s) const {
    return std::any_of(slots_.begin(), slots_.end(), [&](const std::shared_ptr<Slot>& o) {
      return !o->cancelled && o->port != s.port && o->start < s.end && s.start < o->end;
    });
  }

  void deliver(const Slot& s) {
    const bool collision = collided(s);
    if (collision) log(EventKind::collision, s.port, s.value);

    // Receivers may attach/detach from inside callbacks; snapshot ids first.
    std::vector<PortId> receivers;
    for (PortId id = 0; id < ports_.size(); ++id) {
      if (id != s.port && ports_[id].attached) receivers.push_back(id);
    }
    for (PortId id : receivers) {
      Port& p = ports_[id];
      if (!p.attached) continue;
      std::uint8_t value = s.value;
      if (collision) {
        value = 0xFF;
      } else if (config_.corruption_probability > 0.0) {
        const double u = static_cast<double>(p.rng() >> 11) * 0x1.0p-53;
        if (u < config_.corruption_probability) {
          const auto mask = static_cast<std::uint8_t>(1 + p.rng() % 255);
          value ^= mask;
          log(EventKind::byte_corrupted, id, mask);
        }
      }
      log(EventKind::byte_delivered, id, value);
      if (p.receiver) {
        auto receiver = p.receiver;  // callback may detach and clear p.receiver
        receiver(value, now_);
      }
    }
  }

  void prune() {
    std::erase_if(slots_, [&](const std::shared_ptr<Slot>& s) {
      return s->end + byte_time_ <= now_ || (s->cancelled && s->start <= now_);
    });
  }

  void log(EventKind kind, PortId id, std::optional<std::uint8_t> value) {
    trace_.push_back(BusEvent{now_, total_logged_++, kind, id, value});
    if (config_.trace_capacity != 0 && trace_.size() > config_.trace_capacity) trace_.pop_front();
  }

  std::vector<BusEvent> events_after(std::size_t mark) const {
    const std::size_t fresh = std::min<std::size_t>(total_logged_ - mark, trace_.size());
    return {trace_.end() - static_cast<std::ptrdiff_t>(fresh), trace_.end()};
  }

  BusConfig config_;
  SimTime byte_time_;
  SimTime now_ = 0;
  std::vector<Port> ports_;
  std::vector<std::shared_ptr<Slot>> slots_;
  std::map<std::pair<SimTime, std::uint64_t>, Item> queue_;
  std::uint64_t next_item_seq_ = 0;
  std::deque<BusEvent> trace_;
  std::uint64_t total_logged_ = 0;
};

}  // namespace nodectl::bus
