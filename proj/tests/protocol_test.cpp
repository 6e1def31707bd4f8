#include <gtest/gtest.h>

#include <cstdint>
#include <random>
#include <vector>

#include "nodectl/protocol.hpp"

using namespace nodectl::protocol;

namespace {

using Bytes = std::vector<std::uint8_t>;

// Independent oracle: byte-wise XOR fold written without the codec.
std::uint8_t xor_fold(const Bytes& b, std::size_t first, std::size_t last_inclusive) {
  std::uint8_t acc = 0;
  for (std::size_t i = first; i <= last_inclusive; ++i) acc = static_cast<std::uint8_t>(acc ^ b[i]);
  return acc;
}

// Independent oracle for the greedy scan: raw byte tests, no decode_command.
std::vector<ScannedFrame> brute_force_scan(const Bytes& s) {
  auto valid_at = [&](std::size_t i) {
    if (i + 4 > s.size()) return false;
    const std::uint8_t dt = s[i + 2];
    const bool code = dt == 0x01 || dt == 0x02 || dt == 0x10 || dt == 0x20 || dt == 0x21;
    return s[i] == 0x02 && s[i + 3] == 0x03 && s[i + 1] != 0xFF && code;
  };
  std::vector<ScannedFrame> out;
  for (std::size_t i = 0; i < s.size();) {
    if (valid_at(i)) {
      out.push_back({i, Frame{s[i + 1], static_cast<CommandCode>(s[i + 2])}});
      i += 4;
    } else {
      ++i;
    }
  }
  return out;
}

Bytes to_vec(const CommandBytes& b) { return Bytes(b.begin(), b.end()); }

}  // namespace

TEST(Protocol, WireConstants) {
  EXPECT_EQ(kStx, 0x02);
  EXPECT_EQ(kEtx, 0x03);
  const std::vector<std::uint8_t> codes{0x01, 0x02, 0x10, 0x20, 0x21};
  ASSERT_EQ(kAllCommands.size(), codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) EXPECT_EQ(static_cast<std::uint8_t>(kAllCommands[i]), codes[i]);
  // POWER_OFF shares its value with STX; framing is positional, so it still decodes.
  const Bytes off{0x02, 0x02, 0x02, 0x03};
  auto f = decode_command(off);
  ASSERT_TRUE(f);
  EXPECT_EQ(f->device_number, 2);
  EXPECT_EQ(f->data_type, CommandCode::PowerOff);
}

TEST(Protocol, EncodeCommandExamples) {
  EXPECT_EQ(to_vec(*encode_command({5, CommandCode::PowerOn})), (Bytes{0x02, 0x05, 0x01, 0x03}));
  EXPECT_EQ(to_vec(*encode_command({0, CommandCode::PowerOff})), (Bytes{0x02, 0x00, 0x02, 0x03}));

  auto reserved = encode_command({255, CommandCode::PowerOn});
  ASSERT_FALSE(reserved);
  EXPECT_EQ(reserved.error(), Errc::invalid_address);

  auto bogus = encode_command({5, static_cast<CommandCode>(0x7E)});
  ASSERT_FALSE(bogus);
  EXPECT_EQ(bogus.error(), Errc::unknown_command);
}

TEST(Protocol, DecodeCommandExamples) {
  const Bytes ok{0x02, 0x07, 0x02, 0x03};
  auto f = decode_command(ok);
  ASSERT_TRUE(f);
  EXPECT_EQ(*f, (Frame{7, CommandCode::PowerOff}));

  const Bytes bad_stx{0xFF, 0x07, 0x02, 0x03};
  EXPECT_EQ(decode_command(bad_stx).error(), Errc::bad_framing);
  const Bytes bad_etx{0x02, 0x07, 0x02, 0x04};
  EXPECT_EQ(decode_command(bad_etx).error(), Errc::bad_framing);
  const Bytes short_frame{0x02, 0x07, 0x03};
  EXPECT_EQ(decode_command(short_frame).error(), Errc::bad_framing);
  const Bytes reserved{0x02, 0xFF, 0x02, 0x03};
  EXPECT_EQ(decode_command(reserved).error(), Errc::invalid_address);
  const Bytes unknown{0x02, 0x07, 0x55, 0x03};
  EXPECT_EQ(decode_command(unknown).error(), Errc::unknown_command);
}

TEST(Protocol, CommandRoundTripIsExhaustive) {
  std::size_t checked = 0;
  for (unsigned dn = 0; dn <= 254; ++dn) {
    for (auto code : kAllCommands) {
      const Frame f{static_cast<std::uint8_t>(dn), code};
      auto bytes = encode_command(f);
      ASSERT_TRUE(bytes);
      auto back = decode_command(*bytes);
      ASSERT_TRUE(back);
      EXPECT_EQ(*back, f);
      ++checked;
    }
  }
  EXPECT_EQ(checked, 255u * 5u);
}

TEST(Protocol, DecodeNeverFabricatesFrames) {
  // Every 4-byte input with the right markers: accepted iff the middle bytes are in domain.
  for (unsigned dn = 0; dn <= 255; ++dn) {
    for (unsigned dt = 0; dt <= 255; ++dt) {
      const Bytes b{0x02, static_cast<std::uint8_t>(dn), static_cast<std::uint8_t>(dt), 0x03};
      const bool expected = dn != 0xFF && is_command_code(static_cast<std::uint8_t>(dt));
      EXPECT_EQ(decode_command(b).has_value(), expected) << dn << ' ' << dt;
    }
  }
  std::mt19937 rng(7);
  for (int i = 0; i < 20000; ++i) {
    Bytes b(4);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    if (b[0] != 0x02 || b[3] != 0x03) {
      EXPECT_FALSE(decode_command(b));
    }
  }
}

TEST(Protocol, EncodeResponseEmptyPayload) {
  auto bytes = encode_response(ResponseFrame::reply(5, CommandCode::PowerOn));
  ASSERT_TRUE(bytes);
  // 0x05 ^ 0x81 ^ 0x00
  EXPECT_EQ(*bytes, (Bytes{0x02, 0x05, 0x81, 0x00, 0x84, 0x03}));
  EXPECT_EQ(xor_fold(*bytes, 1, 3), 0x84);
}

TEST(Protocol, EncodeResponseWithPayload) {
  auto bytes = encode_response(ResponseFrame::reply(9, CommandCode::ReadTemperature, {0x01, 0x18}));
  ASSERT_TRUE(bytes);
  ASSERT_EQ(bytes->size(), 8u);
  EXPECT_EQ((*bytes)[6], xor_fold(*bytes, 1, 5));
  EXPECT_EQ(*bytes, (Bytes{0x02, 0x09, 0xA0, 0x02, 0x01, 0x18, 0xB2, 0x03}));
}

TEST(Protocol, EncodeResponseRejectsLongPayload) {
  auto r = encode_response(ResponseFrame::reply(9, CommandCode::StatusQuery, Bytes(17, 0x00)));
  ASSERT_FALSE(r);
  EXPECT_EQ(r.error(), Errc::payload_too_long);
  EXPECT_TRUE(encode_response(ResponseFrame::reply(9, CommandCode::StatusQuery, Bytes(16, 0x00))));
}

TEST(Protocol, ResponseRoundTripRandomized) {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 10000; ++i) {
    const auto dn = static_cast<std::uint8_t>(1 + rng() % 254);
    const auto code = kAllCommands[rng() % kAllCommands.size()];
    Bytes payload(rng() % (kMaxPayload + 1));
    for (auto& b : payload) b = static_cast<std::uint8_t>(rng());
    const auto resp = ResponseFrame::reply(dn, code, payload);

    auto bytes = encode_response(resp);
    ASSERT_TRUE(bytes);
    ASSERT_EQ(bytes->size(), kResponseOverhead + payload.size());
    EXPECT_EQ((*bytes)[bytes->size() - 2], xor_fold(*bytes, 1, bytes->size() - 3));
    auto back = decode_response(*bytes);
    ASSERT_TRUE(back);
    EXPECT_EQ(*back, resp);
  }
}

TEST(Protocol, DecodeResponseDetectsPayloadFlip) {
  std::mt19937_64 rng(3);
  int tested = 0;
  for (int i = 0; i < 5000; ++i) {
    Bytes payload(1 + rng() % kMaxPayload);
    for (auto& b : payload) b = static_cast<std::uint8_t>(rng());
    auto bytes = *encode_response(ResponseFrame::reply(12, CommandCode::ReadHumidity, payload));
    const std::size_t at = 4 + rng() % payload.size();
    const auto mask = static_cast<std::uint8_t>(1 + rng() % 255);
    bytes[at] ^= mask;
    // A single flipped byte always changes the fold; nothing to exclude here.
    ASSERT_NE(xor_fold(bytes, 1, bytes.size() - 3), bytes[bytes.size() - 2]);
    auto r = decode_response(bytes);
    ASSERT_FALSE(r);
    EXPECT_EQ(r.error(), Errc::checksum_mismatch);
    ++tested;
  }
  EXPECT_EQ(tested, 5000);
}

TEST(Protocol, DecodeResponseErrorKinds) {
  EXPECT_EQ(decode_response(Bytes{}).error(), Errc::bad_framing);
  EXPECT_EQ(decode_response(Bytes{0x55, 0x05, 0x81, 0x00, 0x84, 0x03}).error(), Errc::bad_framing);
  EXPECT_EQ(decode_response(Bytes{0x02, 0x05, 0x81, 0x00, 0x84}).error(), Errc::length_mismatch);
  EXPECT_EQ(decode_response(Bytes{0x02, 0x05, 0x81, 0x01, 0x84, 0x03}).error(), Errc::length_mismatch);
  EXPECT_EQ(decode_response(Bytes{0x02, 0x05, 0x81, 0x00, 0x84, 0x04}).error(), Errc::bad_framing);
  EXPECT_EQ(decode_response(Bytes{0x02, 0x05, 0x81, 0x00, 0x85, 0x03}).error(), Errc::checksum_mismatch);
  // Valid checksum, but the echo lacks the response flag.
  EXPECT_EQ(decode_response(Bytes{0x02, 0x05, 0x01, 0x00, 0x04, 0x03}).error(), Errc::bad_framing);
}

TEST(Protocol, ResyncScanExamples) {
  const Frame f1{9, CommandCode::StatusQuery};
  const Frame f2{0, CommandCode::PowerOn};

  Bytes junk_then_frame{0x99};
  auto e1 = *encode_command(f1);
  junk_then_frame.insert(junk_then_frame.end(), e1.begin(), e1.end());
  auto r = resync_scan(junk_then_frame);
  EXPECT_EQ(r.frames, (std::vector<ScannedFrame>{{1, f1}}));
  EXPECT_EQ(r.skipped, 1u);

  Bytes back_to_back = to_vec(e1);
  auto e2 = *encode_command(f2);
  back_to_back.insert(back_to_back.end(), e2.begin(), e2.end());
  r = resync_scan(back_to_back);
  EXPECT_EQ(r.frames, (std::vector<ScannedFrame>{{0, f1}, {4, f2}}));
  EXPECT_EQ(r.skipped, 0u);

  EXPECT_TRUE(resync_scan(Bytes{}).frames.empty());
}

TEST(Protocol, ResyncScanMatchesBruteForceOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    Bytes stream;
    const int pieces = 1 + static_cast<int>(rng() % 12);
    for (int p = 0; p < pieces; ++p) {
      if (rng() % 2) {
        const Frame f{static_cast<std::uint8_t>(rng() % 255), kAllCommands[rng() % 5]};
        auto b = *encode_command(f);
        stream.insert(stream.end(), b.begin(), b.end());
      } else {
        // Junk biased towards marker bytes so near-miss frames are common.
        const int n = 1 + static_cast<int>(rng() % 6);
        for (int i = 0; i < n; ++i) {
          const std::uint8_t pool[] = {0x02, 0x03, 0x01, 0x10, 0xFF, static_cast<std::uint8_t>(rng())};
          stream.push_back(pool[rng() % 6]);
        }
      }
    }
    const auto result = resync_scan(stream);
    EXPECT_EQ(result.frames, brute_force_scan(stream));
    EXPECT_EQ(result.skipped + 4 * result.frames.size(), stream.size());
    for (const auto& sf : result.frames) {
      EXPECT_TRUE(decode_command(std::span(stream).subspan(sf.offset, 4)));
    }
  }
}

TEST(Protocol, AssemblerExtractsResponsesFromNoise) {
  ResponseAssembler a;
  const auto good = *encode_response(ResponseFrame::reply(4, CommandCode::StatusQuery, {0x01}));
  Bytes stream{0xFF, 0xFF, 0x13};
  stream.insert(stream.end(), good.begin(), good.end());
  for (auto b : stream) a.push(b);
  auto r = a.next();
  ASSERT_TRUE(r.has_value());
  ASSERT_TRUE(*r);
  EXPECT_EQ((*r)->device_number, 4);
  EXPECT_EQ((*r)->payload, Bytes{0x01});
  EXPECT_FALSE(a.next().has_value());
  EXPECT_EQ(a.skipped(), 3u);
}

TEST(Protocol, AssemblerReportsCorruptionThenRecovers) {
  ResponseAssembler a;
  auto bad = *encode_response(ResponseFrame::reply(4, CommandCode::StatusQuery, {0x01}));
  bad[4] ^= 0x40;
  const auto good = *encode_response(ResponseFrame::reply(6, CommandCode::PowerOff));
  for (auto b : bad) a.push(b);
  for (auto b : good) a.push(b);

  std::vector<Errc> errors;
  std::vector<ResponseFrame> frames;
  while (auto r = a.next()) {
    if (*r) {
      frames.push_back(r->value());
    } else {
      errors.push_back(r->error());
    }
  }
  ASSERT_FALSE(errors.empty());
  EXPECT_EQ(errors.front(), Errc::checksum_mismatch);
  ASSERT_EQ(frames.size(), 1u);
  EXPECT_EQ(frames[0].device_number, 6);
}
