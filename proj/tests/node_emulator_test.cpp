#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "nodectl/bus_sim.hpp"
#include "nodectl/node_emulator.hpp"

using namespace nodectl;
using namespace nodectl::node;
using protocol::CommandCode;

namespace {

using Bytes = std::vector<std::uint8_t>;

Bytes frame(std::uint8_t dn, CommandCode code) {
  auto b = *protocol::encode_command({dn, code});
  return Bytes(b.begin(), b.end());
}

std::vector<Action> feed(NodeController& n, const Bytes& bytes) {
  std::vector<Action> out;
  for (auto b : bytes) {
    if (auto a = n.on_byte(b)) out.push_back(*a);
  }
  return out;
}

void expect_display_consistent(const NodeController& n) {
  const unsigned addr = n.read_dip();
  const std::string want{static_cast<char>('0' + addr / 100), static_cast<char>('0' + addr / 10 % 10),
                         static_cast<char>('0' + addr % 10)};
  EXPECT_EQ(n.display().text(), want);
  EXPECT_EQ(n.display().decimal_point, n.relay_on());
}

NodeConfig cfg(std::uint8_t addr, bool on = true) {
  NodeConfig c;
  c.address = addr;
  c.relay_on = on;
  c.noise_seed = addr;
  return c;
}

}  // namespace

TEST(NodeController, ReadDipBinaryWeighting) {
  NodeController n(cfg(0));
  EXPECT_EQ(n.read_dip(), 0);
  n.set_dip_switch(0, true);
  n.set_dip_switch(2, true);
  EXPECT_EQ(n.read_dip(), 5);
  EXPECT_EQ(n.display().text(), "005");
}

TEST(NodeController, MatchingUnicastPowersOff) {
  NodeController n(cfg(5, true));
  auto actions = feed(n, frame(5, CommandCode::PowerOff));
  ASSERT_EQ(actions.size(), 1u);
  EXPECT_FALSE(n.relay_on());
  EXPECT_FALSE(n.display().decimal_point);
  ASSERT_TRUE(actions[0].response);
  EXPECT_EQ(actions[0].response->device_number, 5);
  EXPECT_EQ(actions[0].response->data_type_echo, 0x82);
  EXPECT_TRUE(actions[0].response->payload.empty());
}

TEST(NodeController, ForeignAddressIgnored) {
  NodeController n(cfg(5, false));
  EXPECT_TRUE(feed(n, frame(6, CommandCode::PowerOn)).empty());
  EXPECT_FALSE(n.relay_on());
  EXPECT_EQ(n.diagnostics().frames_seen, 1u);
  EXPECT_EQ(n.diagnostics().frames_executed, 0u);
}

TEST(NodeController, BroadcastExecutesSilently) {
  NodeController n(cfg(5, false));
  auto actions = feed(n, frame(0, CommandCode::PowerOn));
  ASSERT_EQ(actions.size(), 1u);
  EXPECT_TRUE(n.relay_on());
  EXPECT_FALSE(actions[0].response);

  auto q = feed(n, frame(0, CommandCode::StatusQuery));
  ASSERT_EQ(q.size(), 1u);
  EXPECT_FALSE(q[0].response);
}

TEST(NodeController, PowerIsIdempotentAndStatusReports) {
  NodeController n(cfg(3, false));
  n.execute(CommandCode::PowerOn);
  n.execute(CommandCode::PowerOn);
  EXPECT_TRUE(n.relay_on());
  n.execute(CommandCode::PowerOff);
  auto s = n.execute(CommandCode::StatusQuery);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->payload, Bytes{0x00});
  n.execute(CommandCode::PowerOn);
  EXPECT_EQ(n.execute(CommandCode::StatusQuery)->payload, Bytes{0x01});
}

TEST(NodeController, SensorNoiseStaysWithinBounds) {
  NodeConfig c = cfg(9);
  c.temperature_baseline = 280;
  c.humidity_baseline = 550;
  NodeController n(c);
  int tmin = 1 << 20, tmax = -1, hmin = 1 << 20, hmax = -1;
  for (int i = 0; i < 1000; ++i) {
    auto t = n.execute(CommandCode::ReadTemperature);
    auto h = n.execute(CommandCode::ReadHumidity);
    ASSERT_EQ(t->payload.size(), 2u);
    const int tv = t->payload[0] << 8 | t->payload[1];
    const int hv = h->payload[0] << 8 | h->payload[1];
    tmin = std::min(tmin, tv);
    tmax = std::max(tmax, tv);
    hmin = std::min(hmin, hv);
    hmax = std::max(hmax, hv);
  }
  EXPECT_GE(tmin, 275);
  EXPECT_LE(tmax, 285);
  EXPECT_GE(hmin, 545);
  EXPECT_LE(hmax, 555);
  // 1000 uniform draws over 11 values hit both ends.
  EXPECT_EQ(tmin, 275);
  EXPECT_EQ(tmax, 285);
}

TEST(NodeController, SensorReadingsClampToRange) {
  NodeConfig c = cfg(9);
  c.temperature_baseline = 2;
  c.humidity_baseline = 998;
  NodeController n(c);
  for (int i = 0; i < 200; ++i) {
    const auto t = n.execute(CommandCode::ReadTemperature)->payload;
    const auto h = n.execute(CommandCode::ReadHumidity)->payload;
    EXPECT_LE(t[0] << 8 | t[1], 7);
    EXPECT_LE(h[0] << 8 | h[1], 1000);
  }
  NodeConfig bad = cfg(1);
  bad.humidity_baseline = 1001;
  EXPECT_THROW(NodeController{bad}, std::invalid_argument);
}

TEST(NodeController, AddressReadAtFrameCompletion) {
  NodeController n(cfg(4, false));
  Bytes f = frame(5, CommandCode::PowerOn);
  // First three bytes arrive while the switches read 4, last one after flipping to 5.
  for (int i = 0; i < 3; ++i) EXPECT_FALSE(n.on_byte(f[i]));
  n.set_dip_switch(0, true);
  auto a = n.on_byte(f[3]);
  ASSERT_TRUE(a);
  EXPECT_TRUE(n.relay_on());
  expect_display_consistent(n);
}

TEST(NodeController, DipFlipBetweenFrames) {
  NodeController n(cfg(4, true));
  feed(n, frame(4, CommandCode::PowerOff));
  EXPECT_FALSE(n.relay_on());
  n.set_dip_switch(1, true);  // 4 -> 6
  EXPECT_EQ(n.read_dip(), 6);
  EXPECT_TRUE(feed(n, frame(4, CommandCode::PowerOn)).empty());
  EXPECT_FALSE(n.relay_on());
  feed(n, frame(6, CommandCode::PowerOn));
  EXPECT_TRUE(n.relay_on());
}

TEST(NodeController, GarbageImmunityMatchesResyncScan) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 500; ++trial) {
    const auto self = static_cast<std::uint8_t>(1 + rng() % 254);
    const bool initial = rng() % 2;
    NodeController n(cfg(self, initial));

    Bytes stream;
    const int len = 1 + static_cast<int>(rng() % 64);
    for (int i = 0; i < len; ++i) {
      const std::uint8_t pool[] = {0x02, 0x03, 0x01, 0x02, self, 0x00, static_cast<std::uint8_t>(rng())};
      stream.push_back(pool[rng() % 7]);
    }
    if (rng() % 3 == 0) {
      auto f = frame(rng() % 2 ? self : static_cast<std::uint8_t>(rng() % 255), CommandCode::PowerOff);
      stream.insert(stream.begin() + static_cast<std::ptrdiff_t>(rng() % stream.size()), f.begin(), f.end());
    }

    // Oracle: replay the frames resync_scan finds that target this node.
    bool expected = initial;
    for (const auto& sf : protocol::resync_scan(stream).frames) {
      if (sf.frame.device_number != self && !sf.frame.is_broadcast()) continue;
      if (sf.frame.data_type == CommandCode::PowerOn) expected = true;
      if (sf.frame.data_type == CommandCode::PowerOff) expected = false;
    }
    feed(n, stream);
    EXPECT_EQ(n.relay_on(), expected) << "trial " << trial;
    EXPECT_LE(n.rx_pending(), 4u);
    expect_display_consistent(n);
  }
}

TEST(NodeController, SevenSegmentPatterns) {
  NodeController n(cfg(120, true));
  const auto seg = n.display().segments();
  EXPECT_EQ(seg[0], 0xF9 & 0x7F);  // '1' with the decimal point lit
  EXPECT_EQ(seg[1], 0xA4);         // '2'
  EXPECT_EQ(seg[2], 0xC0);         // '0'
}

TEST(EmulatedNode, RespondsTwoByteTimesAfterFrame) {
  bus::Bus bus;
  const auto master = bus.attach(bus::PortKind::master);
  EmulatedNode node(bus, cfg(7, true));
  const auto h = bus.transmit(master, frame(7, CommandCode::StatusQuery));
  bus.run_until_idle();

  std::vector<bus::BusEvent> node_sent;
  for (const auto& e : bus.trace()) {
    if (e.kind == bus::EventKind::byte_sent && e.port == node.port()) node_sent.push_back(e);
  }
  ASSERT_EQ(node_sent.size(), 7u);
  EXPECT_EQ(node_sent.front().timestamp_us, h.last_byte_delivered_us + 2 * bus.byte_time());
}

TEST(EmulatedNode, BroadcastQueryGetsNoResponse) {
  bus::Bus bus;
  const auto master = bus.attach(bus::PortKind::master);
  std::vector<std::unique_ptr<EmulatedNode>> nodes;
  for (std::uint8_t a = 1; a <= 4; ++a) nodes.push_back(std::make_unique<EmulatedNode>(bus, cfg(a)));
  bus.transmit(master, frame(0, CommandCode::StatusQuery));
  bus.run_until_idle();
  for (const auto& e : bus.trace()) {
    EXPECT_FALSE(e.kind == bus::EventKind::byte_sent && e.port != master);
  }
}

TEST(EmulatedNode, DuplicateAddressesCollide) {
  bus::Bus bus;
  const auto master = bus.attach(bus::PortKind::master);
  EmulatedNode a(bus, cfg(5));
  EmulatedNode b(bus, cfg(5));
  bus.transmit(master, frame(5, CommandCode::StatusQuery));
  bus.run_until_idle();
  std::size_t collisions = 0;
  for (const auto& e : bus.trace()) collisions += e.kind == bus::EventKind::collision ? 1 : 0;
  EXPECT_GE(collisions, 1u);
}
