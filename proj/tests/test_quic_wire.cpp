#include <gtest/gtest.h>

#include <random>

#include "qasm/datagram.hpp"
#include "qasm/quic_wire.hpp"

using namespace qasm;

namespace {

Bytes hex(std::string_view s) {
  std::string clean;
  for (char c : s)
    if (c != ' ') clean.push_back(c);
  return from_hex(clean);
}

ConnectionId cid(std::string_view h) { return ConnectionId::from_hex(h); }

DecodeErrc error_of(auto&& fn) {
  try {
    fn();
  } catch (const DecodeError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no DecodeError raised";
  return DecodeErrc::InvalidField;
}

}  // namespace

TEST(ConnectionIdTest, AcceptsZeroToTwentyBytes) {
  Bytes raw(20, 0xab);
  EXPECT_EQ(ConnectionId(raw).size(), 20u);
  EXPECT_TRUE(ConnectionId().empty());
  Bytes big(21, 0);
  EXPECT_EQ(error_of([&] { ConnectionId{big}; }), DecodeErrc::InvalidCidLength);
}

TEST(ConnectionIdTest, EqualityAndHashAreByteExact) {
  EXPECT_EQ(cid("fa12ab"), cid("FA12AB"));
  EXPECT_NE(cid("fa12ab"), cid("fa12ac"));
  EXPECT_NE(cid("00"), cid("0000"));
  EXPECT_EQ(std::hash<ConnectionId>{}(cid("fa12ab")), std::hash<ConnectionId>{}(cid("fa12ab")));
  EXPECT_EQ(cid("fa12ab").hex(), "fa12ab");
}

TEST(QuicWireTest, EncodeLongHeaderLayout) {
  EXPECT_EQ(quic::encode_long_header(1, cid("fa12ab"), ConnectionId{}, {}), hex("C0 00000001 03 FA12AB 00"));
  EXPECT_EQ(quic::encode_long_header(1, ConnectionId{}, ConnectionId{}, {}), hex("C0 00000001 00 00"));
  EXPECT_EQ(quic::encode_long_header(0xdeadbeef, cid("01"), cid("0203"), hex("ff")),
            hex("C0 DEADBEEF 01 01 02 0203 FF"));
}

TEST(QuicWireTest, DecodeLongHeaderExample) {
  auto h = quic::decode_long_header(hex("C0 00000001 03 FA12AB 00"));
  EXPECT_EQ(h.form, quic::HeaderForm::Long);
  EXPECT_EQ(h.version, 1u);
  EXPECT_EQ(h.dcid, cid("fa12ab"));
  EXPECT_TRUE(h.scid.empty());
  EXPECT_TRUE(h.payload.empty());
}

TEST(QuicWireTest, DecodeLongHeaderErrors) {
  Bytes too_long = hex("C0 00000001 15");
  too_long.resize(too_long.size() + 21, 0x11);
  too_long.push_back(0);
  EXPECT_EQ(error_of([&] { quic::decode_long_header(too_long); }), DecodeErrc::InvalidCidLength);
  EXPECT_EQ(error_of([&] { quic::decode_long_header(hex("40 FA12AB")); }), DecodeErrc::NotLongHeader);
  EXPECT_EQ(error_of([&] { quic::decode_long_header(hex("C0 00000001 05 FA12AB")); }), DecodeErrc::TruncatedPacket);
  EXPECT_EQ(error_of([&] { quic::decode_long_header(hex("C0 0000")); }), DecodeErrc::TruncatedPacket);
  EXPECT_EQ(error_of([&] { quic::decode_long_header(hex("C0 00000001 00")); }), DecodeErrc::TruncatedPacket);
  EXPECT_EQ(error_of([&] { quic::decode_long_header(Bytes{}); }), DecodeErrc::TruncatedPacket);
}

TEST(QuicWireTest, ShortHeaderUsesSuppliedLength) {
  auto h = quic::decode_short_header(hex("40 FA12AB 0102"), 3);
  EXPECT_EQ(h.form, quic::HeaderForm::Short);
  EXPECT_EQ(h.dcid, cid("fa12ab"));
  EXPECT_EQ(h.payload, hex("0102"));

  auto empty = quic::decode_short_header(hex("40 0102 03"), 0);
  EXPECT_TRUE(empty.dcid.empty());
  EXPECT_EQ(empty.payload, hex("010203"));

  EXPECT_EQ(quic::encode_short_header(cid("fa12ab"), hex("0102")), hex("40 FA12AB 0102"));
}

TEST(QuicWireTest, ShortHeaderErrors) {
  EXPECT_EQ(error_of([&] { quic::decode_short_header(hex("C0 FA12AB"), 3); }), DecodeErrc::NotShortHeader);
  EXPECT_EQ(error_of([&] { quic::decode_short_header(hex("00 FA12AB"), 3); }), DecodeErrc::NotShortHeader);
  EXPECT_EQ(error_of([&] { quic::decode_short_header(hex("40 FA"), 3); }), DecodeErrc::TruncatedPacket);
  EXPECT_EQ(error_of([&] { quic::decode_short_header(hex("40 FA12AB"), 21); }), DecodeErrc::InvalidCidLength);
}

TEST(QuicWireTest, WrongLengthHintGivesAnotherDcid) {
  Bytes pkt = quic::encode_short_header(cid("0102030405060708"), hex("aabbcc"));
  EXPECT_EQ(quic::decode_short_header(pkt, 8).dcid, cid("0102030405060708"));
  EXPECT_EQ(quic::decode_short_header(pkt, 4).dcid, cid("01020304"));
  EXPECT_EQ(quic::decode_short_header(pkt, 10).dcid, cid("0102030405060708aabb"));
}

TEST(QuicWireTest, PeekFormAndExtract) {
  EXPECT_EQ(quic::peek_form(hex("C0")), quic::HeaderForm::Long);
  EXPECT_EQ(quic::peek_form(hex("80")), quic::HeaderForm::Long);
  EXPECT_EQ(quic::peek_form(hex("41")), quic::HeaderForm::Short);
  EXPECT_FALSE(quic::peek_form(hex("3F")));
  EXPECT_FALSE(quic::peek_form(Bytes{}));

  EXPECT_EQ(quic::extract_dcid(hex("C0 00000001 03 FA12AB 00"), 8), cid("fa12ab"));
  EXPECT_EQ(quic::extract_dcid(hex("40 FA12AB 99"), 3), cid("fa12ab"));
  EXPECT_EQ(error_of([&] { quic::extract_dcid(hex("40 FA"), 3); }), DecodeErrc::TruncatedPacket);
  EXPECT_EQ(error_of([&] { quic::extract_dcid(hex("00 FA"), 1); }), DecodeErrc::NotShortHeader);
  EXPECT_EQ(error_of([&] { quic::extract_dcid(Bytes{}, 1); }), DecodeErrc::TruncatedPacket);
}

TEST(QuicWireTest, RandomHeadersRoundTripAndMatchHandLayout) {
  std::mt19937_64 rng(42);
  auto rand_bytes = [&](std::size_t n) {
    Bytes b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    return b;
  };
  for (int i = 0; i < 1000; ++i) {
    ConnectionId d(rand_bytes(rng() % 21));
    ConnectionId s(rand_bytes(rng() % 21));
    Bytes payload = rand_bytes(rng() % 64);
    auto version = static_cast<std::uint32_t>(rng());

    Bytes expected{0xC0, std::uint8_t(version >> 24), std::uint8_t(version >> 16), std::uint8_t(version >> 8),
                   std::uint8_t(version)};
    expected.push_back(static_cast<std::uint8_t>(d.size()));
    expected.insert(expected.end(), d.bytes().begin(), d.bytes().end());
    expected.push_back(static_cast<std::uint8_t>(s.size()));
    expected.insert(expected.end(), s.bytes().begin(), s.bytes().end());
    expected.insert(expected.end(), payload.begin(), payload.end());

    Bytes enc = quic::encode_long_header(version, d, s, payload);
    ASSERT_EQ(enc, expected);
    quic::QuicHeader h{quic::HeaderForm::Long, version, d, s, payload};
    ASSERT_EQ(quic::decode_long_header(enc), h);
    ASSERT_EQ(quic::encode(h), enc);

    Bytes sh = quic::encode_short_header(d, payload);
    quic::QuicHeader hs{quic::HeaderForm::Short, 0, d, ConnectionId{}, payload};
    ASSERT_EQ(quic::decode_short_header(sh, static_cast<std::uint8_t>(d.size())), hs);
  }
}

TEST(DatagramTest, BuildParseRoundTrip) {
  FiveTuple t{Protocol::Udp, Endpoint::parse("10.0.0.45:10001"), Endpoint::parse("93.184.216.34:443")};
  Bytes payload = hex("40 FA12AB 00");
  Bytes d = ip::build(t, payload);
  ASSERT_EQ(d.size(), 20u + 8u + payload.size());
  EXPECT_EQ(d[0], 0x45);
  EXPECT_EQ(d[9], 17);
  EXPECT_EQ(ip::ipv4_checksum(ByteView(d.data(), 20)), 0);
  auto v = ip::parse(d);
  EXPECT_EQ(v.tuple, t);
  EXPECT_EQ(Bytes(v.payload.begin(), v.payload.end()), payload);

  FiveTuple tcp{Protocol::Tcp, t.src, t.dst};
  EXPECT_EQ(ip::parse(ip::build(tcp, payload)).tuple, tcp);
  FiveTuple icmp{Protocol::Icmp, Endpoint{t.src.ip, 0}, Endpoint{t.dst.ip, 0}};
  EXPECT_EQ(ip::parse(ip::build(icmp, payload)).tuple, icmp);
}

TEST(DatagramTest, RewriteKeepsChecksumValid) {
  FiveTuple t{Protocol::Udp, Endpoint::parse("10.0.0.45:10001"), Endpoint::parse("93.184.216.34:443")};
  Bytes d = ip::build(t, hex("0102"));
  ip::rewrite_src(d, Endpoint::parse("65.12.81.14:19450"));
  auto v = ip::parse(d);
  EXPECT_EQ(v.tuple.src, Endpoint::parse("65.12.81.14:19450"));
  EXPECT_EQ(v.tuple.dst, t.dst);
  ip::rewrite_dst(d, Endpoint::parse("10.1.0.3:8443"));
  EXPECT_EQ(ip::parse(d).tuple.dst, Endpoint::parse("10.1.0.3:8443"));
  EXPECT_EQ(ip::build(FiveTuple{Protocol::Udp, Endpoint::parse("65.12.81.14:19450"), Endpoint::parse("10.1.0.3:8443")},
                      hex("0102")),
            d);
}

TEST(DatagramTest, RejectsMalformed) {
  FiveTuple t{Protocol::Udp, Endpoint::parse("10.0.0.1:1"), Endpoint::parse("10.0.0.2:2")};
  Bytes good = ip::build(t, hex("01"));
  EXPECT_EQ(error_of([&] { ip::parse(ByteView(good.data(), 10)); }), DecodeErrc::TruncatedPacket);
  Bytes bad_version = good;
  bad_version[0] = 0x46;
  EXPECT_EQ(error_of([&] { ip::parse(bad_version); }), DecodeErrc::InvalidField);
  Bytes bad_sum = good;
  bad_sum[12] ^= 1;
  EXPECT_EQ(error_of([&] { ip::parse(bad_sum); }), DecodeErrc::InvalidField);
  Bytes short_total = good;
  short_total.resize(25);
  EXPECT_EQ(error_of([&] { ip::parse(short_total); }), DecodeErrc::TruncatedPacket);
}

TEST(BytesTest, HexAndFnv) {
  EXPECT_EQ(to_hex(hex("00ff10")), "00ff10");
  EXPECT_THROW(from_hex("abc"), std::invalid_argument);
  EXPECT_THROW(from_hex("zz"), std::invalid_argument);
  // Published FNV-1a 64 test vectors.
  EXPECT_EQ(fnv1a64(Bytes{}), 0xcbf29ce484222325ULL);
  const std::string a = "a";
  EXPECT_EQ(fnv1a64(ByteView(reinterpret_cast<const std::uint8_t*>(a.data()), a.size())), 0xaf63dc4c8601ec8cULL);
  const std::string foobar = "foobar";
  EXPECT_EQ(fnv1a64(ByteView(reinterpret_cast<const std::uint8_t*>(foobar.data()), foobar.size())),
            0x85944171f73967e8ULL);
}
