#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <thread>

#include "qasm/agent_server.hpp"
#include "qasm/nat.hpp"
#include "qasm/udp_agent_link.hpp"

using namespace qasm;
using namespace std::chrono_literals;

namespace {

const Endpoint kServer{Ipv4Addr(203, 0, 113, 10), 443};

// Connection c of writer t: O-DCID {t, c, 0, ...}, migration m uses DCID
// {t, c, m, ...} from 10.t.c.m:1000. Readers recover the expected owner from
// the DCID bytes alone.
ConnectionId dcid_of(int t, int c, int m) {
  return ConnectionId(Bytes{std::uint8_t(t), std::uint8_t(c), std::uint8_t(m), 0xaa, 0xbb, 0xcc, 0xdd, 0xee});
}
Endpoint addr_of(int t, int c, int m) {
  return Endpoint{Ipv4Addr(10, std::uint8_t(t), std::uint8_t(c), std::uint8_t(m)), 1000};
}

template <typename Pred>
bool wait_for(Pred pred, std::chrono::milliseconds limit = 2000ms) {
  const auto until = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < until) {
    if (pred()) return true;
    std::this_thread::sleep_for(1ms);
  }
  return pred();
}

}  // namespace

TEST(ConcurrencyTest, AgentUpdatesAndQueriesFromManyThreads) {
  constexpr int kWriters = 4, kConns = 50, kMigrations = 40, kReaders = 4;
  TrackingAgent agent;
  std::atomic<bool> writers_done{false};
  std::atomic<int> wrong{0};
  std::atomic<std::uint64_t> hits{0};

  std::vector<std::thread> threads;
  for (int t = 0; t < kWriters; ++t)
    threads.emplace_back([&, t] {
      for (int m = 0; m <= kMigrations; ++m)
        for (int c = 0; c < kConns; ++c)
          agent.handle_client_update({dcid_of(t, c, m), dcid_of(t, c, 0), {Protocol::Udp, addr_of(t, c, m), kServer}});
    });
  for (int r = 0; r < kReaders; ++r)
    threads.emplace_back([&, r] {
      std::mt19937 rng(r);
      while (!writers_done.load()) {
        int t = int(rng() % kWriters), c = int(rng() % kConns), m = int(rng() % (kMigrations + 1));
        auto resp = agent.handle_query({dcid_of(t, c, m), Endpoint{}, kServer});
        if (!resp.info) continue;
        ++hits;
        if (resp.info->o_dcid != dcid_of(t, c, 0)) ++wrong;
        const auto& d = resp.info->dcids;
        if (std::find(d.begin(), d.end(), dcid_of(t, c, m)) == d.end()) ++wrong;
      }
    });
  for (int t = 0; t < kWriters; ++t) threads[t].join();
  writers_done = true;
  for (std::size_t i = kWriters; i < threads.size(); ++i) threads[i].join();

  EXPECT_EQ(wrong.load(), 0);
  EXPECT_GT(hits.load(), 0u);
  EXPECT_EQ(agent.table().size(), std::size_t(kWriters * kConns));
  EXPECT_EQ(agent.counters().updates, std::uint64_t(kWriters * kConns * (kMigrations + 1)));
  for (int t = 0; t < kWriters; ++t)
    for (int c = 0; c < kConns; ++c) {
      auto info = agent.handle_query({ConnectionId{}, addr_of(t, c, kMigrations), kServer}).info;
      ASSERT_TRUE(info);
      EXPECT_EQ(info->o_dcid, dcid_of(t, c, 0));
      EXPECT_EQ(info->dcids.size(), std::size_t(kMigrations + 1));
    }
}

TEST(ConcurrencyTest, CacheKeepsNewestPushUnderRacingDeliveries) {
  LocalDcidCache cache;
  constexpr int kConns = 20, kSeqs = 200;
  auto push = [](int c, int s) {
    wire::PushUpdate p;
    p.seq = std::uint32_t(s);
    p.info.o_dcid = dcid_of(0, c, 0);
    p.info.dcids = {dcid_of(0, c, 0), dcid_of(0, c, s % 250)};
    p.info.client_addrs = {addr_of(0, c, s % 250)};
    p.info.server = kServer;
    p.info.dcid_len = 8;
    return p;
  };
  std::atomic<bool> stop{false};
  std::atomic<int> bad{0};
  std::vector<std::thread> threads;
  // Two deliverers replay the same push stream; duplicates must be ignored.
  for (int w = 0; w < 2; ++w)
    threads.emplace_back([&] {
      for (int s = 1; s <= kSeqs; ++s)
        for (int c = 0; c < kConns; ++c) cache.apply_push(push(c, s));
    });
  threads.emplace_back([&] {
    Bytes payload(8, 0x11);
    while (!stop.load()) {
      for (int c = 0; c < kConns; ++c) {
        auto pkt = quic::encode_short_header(dcid_of(0, c, 0), payload);
        auto p = cache.probe(pkt, addr_of(0, c, 1), 8);
        if (p.hit && p.hit->o_dcid != dcid_of(0, c, 0)) ++bad;
      }
    }
  });
  threads[0].join();
  threads[1].join();
  stop = true;
  threads[2].join();
  EXPECT_EQ(bad.load(), 0);
  for (int c = 0; c < kConns; ++c) {
    EXPECT_FALSE(cache.apply_push(push(c, kSeqs)));
    EXPECT_EQ(cache.find_addr(addr_of(0, c, kSeqs % 250))->o_dcid, dcid_of(0, c, 0));
  }
}

TEST(ConcurrencyTest, ParallelLinksQueryOneAgentServer) {
  AgentServer server;
  UdpSocket client = UdpSocket::bind(Endpoint{Ipv4Addr(127, 0, 0, 1), 0});
  constexpr int kConns = 30;
  for (int c = 0; c < kConns; ++c)
    client.send_to(wire::encode(wire::ClientUpdate{dcid_of(1, c, 0), dcid_of(1, c, 0),
                                                   {Protocol::Udp, addr_of(1, c, 0), kServer}}),
                   server.client_endpoint());
  ASSERT_TRUE(wait_for([&] { return server.agent().table().size() == kConns; }));

  constexpr int kLinks = 4;
  std::atomic<int> wrong{0};
  std::vector<std::unique_ptr<UdpAgentLink>> links;
  for (int i = 0; i < kLinks; ++i) links.push_back(std::make_unique<UdpAgentLink>(server.middlebox_endpoint(), 500ms));
  std::vector<std::thread> threads;
  for (int i = 0; i < kLinks; ++i)
    threads.emplace_back([&, i] {
      for (int round = 0; round < 5; ++round)
        for (int c = 0; c < kConns; ++c) {
          auto info = links[i]->query({dcid_of(1, c, 0), addr_of(1, c, 0), kServer});
          if (!info || info->o_dcid != dcid_of(1, c, 0)) ++wrong;
        }
    });
  for (auto& t : threads) t.join();
  EXPECT_EQ(wrong.load(), 0);
  EXPECT_EQ(server.agent().counters().query_hits, std::uint64_t(kLinks * 5 * kConns));
  for (auto& l : links) EXPECT_EQ(l->timeouts(), 0u);
  server.stop();
}

TEST(ConcurrencyTest, ProactiveNatReceivesPushesWhileForwarding) {
  AgentServer server;
  UdpAgentLink link(server.middlebox_endpoint());
  NatConfig cfg;
  cfg.quic.mode = MiddleboxMode::Proactive;
  cfg.quic.agent = &link;
  Nat nat(cfg);
  link.start([&nat](const wire::PushUpdate& p) { nat.on_push(p); });
  UdpSocket client = UdpSocket::bind(Endpoint{Ipv4Addr(127, 0, 0, 1), 0});
  auto update = [&](int m) {
    client.send_to(wire::encode(wire::ClientUpdate{dcid_of(2, 0, m), dcid_of(2, 0, 0),
                                                   {Protocol::Udp, addr_of(2, 0, m), kServer}}),
                   server.client_endpoint());
  };
  const Bytes payload(16, 0x42);

  update(0);
  ASSERT_TRUE(wait_for([&] { return server.agent().table().size() == 1; }));
  auto first = ip::build({Protocol::Udp, addr_of(2, 0, 0), kServer},
                         quic::encode_long_header(quic::kVersion1, dcid_of(2, 0, 0), ConnectionId{}, payload));
  ASSERT_TRUE(forwarded(nat.process(first, Direction::Outbound, steady_now()).action));
  ASSERT_TRUE(wait_for([&] { return link.pushes_received() >= 1; }));

  // Keep forwarding on this thread while pushes land on the link thread.
  constexpr int kMigrations = 50;
  for (int m = 1; m <= kMigrations; ++m) {
    update(m);
    for (int k = 0; k < 20; ++k)
      nat.process(ip::build({Protocol::Udp, addr_of(2, 0, m - 1), kServer},
                            quic::encode_short_header(dcid_of(2, 0, m - 1), payload)),
                  Direction::Outbound, steady_now());
    ASSERT_TRUE(wait_for([&] { return link.pushes_received() >= std::uint64_t(m + 1); })) << "push " << m;
    auto pkt = ip::build({Protocol::Udp, addr_of(2, 0, m), kServer}, quic::encode_short_header(dcid_of(2, 0, m), payload));
    auto out = nat.process(pkt, Direction::Outbound, steady_now());
    ASSERT_TRUE(forwarded(out.action));
    EXPECT_EQ(ip::parse(std::get<Forward>(out.action).bytes).tuple.src, (Endpoint{Ipv4Addr(65, 12, 81, 14), 19450}));
  }
  EXPECT_EQ(nat.table_size(), 1u);
  const NatBinding* b = nat.binding_for_connection(dcid_of(2, 0, 0));
  ASSERT_NE(b, nullptr);
  EXPECT_EQ(b->private_endpoints.size(), std::size_t(kMigrations + 1));
  link.stop();
  server.stop();
}
