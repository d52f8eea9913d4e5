#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "meshmon/agent.hpp"
#include "testutil.hpp"

using namespace meshmon;
using meshmon::agent::Agent;

namespace {

TestSpec latency_spec(int packets, SimTime interval_ms = 100) {
    TestSpec s;
    s.name = "lat";
    s.tool = Tool::latency;
    s.packet_count = packets;
    s.packet_interval_ms = interval_ms;
    s.payload_size = 64;
    s.repeat_interval_s = packets * interval_ms / 1000 + 60;
    return s;
}

TestSpec throughput_spec(SimTime duration_s = 10) {
    TestSpec s;
    s.name = "tput";
    s.tool = Tool::throughput;
    s.duration_s = duration_s;
    s.payload_size = 131072;
    s.repeat_interval_s = duration_s + 3600;
    return s;
}

}  // namespace

TEST_CASE("latency test on a clean fixed-delay chain") {
    auto topo = testutil::topo3();
    Agent agent("a", "A", topo.seed);
    auto sample = agent.run_latency_test(latency_spec(100), "c", "C", topo, 0);
    CHECK(sample.packets_sent == 100);
    CHECK(sample.packets_lost == 0);
    CHECK(sample.delay_min_ms == Catch::Approx(12.0));
    CHECK(sample.delay_median_ms == Catch::Approx(12.0));
    CHECK(sample.delay_p95_ms == Catch::Approx(12.0));
}

TEST_CASE("latency loss fraction matches the analytic product over two lossy links") {
    std::mt19937_64 seed_rng(23);
    testutil::ChainParams params;
    params.hops = 2;
    params.loss = 0.01;
    auto chain = testutil::make_chain(seed_rng, params);
    Agent agent("src", chain.src, chain.topo.seed);
    auto spec = latency_spec(10000, 10);
    auto sample = agent.run_latency_test(spec, "dst", chain.dst, chain.topo, 0);
    double expected_loss = 1.0 - 0.99 * 0.99;  // 0.0199
    CHECK(sample.loss_fraction() == Catch::Approx(expected_loss).margin(0.004));
    CHECK(sample.packets_sent == 10000);
    CHECK(sample.packets_lost >= 0);
}

TEST_CASE("latency test with total loss has no delay fields") {
    std::mt19937_64 seed_rng(29);
    testutil::ChainParams params;
    params.hops = 2;
    params.loss = 1.0;
    auto chain = testutil::make_chain(seed_rng, params);
    Agent agent("src", chain.src, chain.topo.seed);
    auto sample = agent.run_latency_test(latency_spec(50), "dst", chain.dst, chain.topo, 0);
    CHECK(sample.packets_lost == 50);
    CHECK_FALSE(sample.delay_min_ms.has_value());
    CHECK_FALSE(sample.delay_median_ms.has_value());
    CHECK_FALSE(sample.delay_p95_ms.has_value());
}

TEST_CASE("latency test rejects zero packets") {
    auto topo = testutil::topo3();
    Agent agent("a", "A", topo.seed);
    auto spec = latency_spec(100);
    spec.packet_count = 0;
    REQUIRE_THROWS_AS(agent.run_latency_test(spec, "c", "C", topo, 0), ConfigError);
}

TEST_CASE("delay quantiles equal the sort-based oracle") {
    std::mt19937_64 seed_rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        testutil::ChainParams params;
        params.hops = 3;
        params.jitter_hi = 10.0;
        auto chain = testutil::make_chain(seed_rng, params);
        int packets = 1 + static_cast<int>(seed_rng() % 400);

        // Replay the identical probe stream with the agent's rng derivation
        // and collect raw delays as the oracle input.
        Rng rng(chain.topo.seed ^ fnv64("src"));
        std::vector<double> delays;
        for (int i = 0; i < packets; ++i) {
            auto out = netsim::send_probe(chain.topo, chain.src, chain.dst, 64, 64, false, rng,
                                          static_cast<SimTime>(i) * 100);
            if (out.delivered) delays.push_back(*out.one_way_delay_ms);
        }
        REQUIRE_FALSE(delays.empty());

        Agent agent("src", chain.src, chain.topo.seed);
        auto sample = agent.run_latency_test(latency_spec(packets), "dst", chain.dst, chain.topo, 0);
        CHECK(*sample.delay_min_ms == testutil::oracle_quantile(delays, 0.0));
        CHECK(*sample.delay_median_ms == testutil::oracle_quantile(delays, 0.5));
        CHECK(*sample.delay_p95_ms == testutil::oracle_quantile(delays, 0.95));
        // Loss accounting: delivered + lost = sent.
        CHECK(delays.size() + static_cast<std::size_t>(sample.packets_lost) ==
              static_cast<std::size_t>(sample.packets_sent));
    }
}

TEST_CASE("throughput hits the bottleneck bandwidth when lossless") {
    auto topo = netsim::build_topology(
        "node A\nnode B\nnode C\n"
        "link A B latency_ms=1 bandwidth_mbps=1000\n"
        "link B C latency_ms=1 bandwidth_mbps=100\n"
        "route A C = A,B,C\n");
    Agent agent("a", "A", topo.seed);
    auto res = agent.run_throughput_test(throughput_spec(), "c", "C", topo, 0);
    CHECK(res.achieved_mbps == Catch::Approx(100.0));
    CHECK(res.retransmits == 0);
    // lossless AIMD: one additive increase per delivered segment
    long segments = static_cast<long>(100.0 * 1e6 / 8.0 * 10 / 131072);
    CHECK(res.congestion_window_bytes == (1 + segments) * 131072);
}

TEST_CASE("throughput under loss matches the fluid-model oracle") {
    auto topo = netsim::build_topology(
        "node A\nnode B\nnode C\n"
        "link A B latency_ms=1 bandwidth_mbps=1000 loss=0.02\n"
        "link B C latency_ms=1 bandwidth_mbps=100\n"
        "route A C = A,B,C\n");
    Agent agent("a", "A", topo.seed);
    auto spec = throughput_spec(30);
    auto res = agent.run_throughput_test(spec, "c", "C", topo, 0);

    long segments = static_cast<long>(100.0 * 1e6 / 8.0 * 30 / 131072);
    double sigma = testutil::binomial_3sigma(0.02, static_cast<double>(segments));
    CHECK(static_cast<double>(res.retransmits) / static_cast<double>(segments) ==
          Catch::Approx(0.02).margin(sigma));
    CHECK(res.achieved_mbps == Catch::Approx(98.0).margin(100.0 * sigma));
    CHECK(res.achieved_mbps <= 100.0);
}

TEST_CASE("throughput rejects zero duration") {
    auto topo = testutil::topo3();
    Agent agent("a", "A", topo.seed);
    auto spec = throughput_spec();
    spec.duration_s = 0;
    REQUIRE_THROWS_AS(agent.run_throughput_test(spec, "c", "C", topo, 0), ConfigError);
}

TEST_CASE("throughput never exceeds the bottleneck across random topologies") {
    std::mt19937_64 seed_rng(37);
    for (int trial = 0; trial < 20; ++trial) {
        testutil::ChainParams params;
        params.hops = 2 + static_cast<int>(seed_rng() % 3);
        params.loss = (trial % 3) * 0.05;
        params.bandwidth = 50.0 + static_cast<double>(seed_rng() % 950);
        auto chain = testutil::make_chain(seed_rng, params);
        Agent agent("src", chain.src, chain.topo.seed);
        auto res = agent.run_throughput_test(throughput_spec(5), "dst", chain.dst, chain.topo, 0);
        double bottleneck = netsim::path_bottleneck_mbps(chain.topo, chain.src, chain.dst, 0);
        CHECK(res.achieved_mbps <= bottleneck);
        if (params.loss == 0.0) CHECK(res.achieved_mbps == Catch::Approx(bottleneck));
    }
}

TEST_CASE("path trace walks the chain and finds the path mtu") {
    auto topo = testutil::topo3();  // MTUs 9000 then 1500
    Agent agent("a", "A", topo.seed);
    auto pm = agent.run_path_trace("c", "C", topo, 0, 30);
    REQUIRE(pm.destination_reached);
    REQUIRE(pm.hops.size() == 2);
    CHECK(pm.hops[0].node == "B");
    CHECK(pm.hops[1].node == "C");
    CHECK(pm.hops[0].rtt_ms == Catch::Approx(10.0));
    CHECK(pm.hops[1].rtt_ms == Catch::Approx(24.0));
    REQUIRE(pm.path_mtu.has_value());
    CHECK(*pm.path_mtu == 1500);
}

TEST_CASE("path trace with max_ttl 1 on a two-hop route is incomplete") {
    auto topo = testutil::topo3();
    Agent agent("a", "A", topo.seed);
    auto pm = agent.run_path_trace("c", "C", topo, 0, 1);
    CHECK_FALSE(pm.destination_reached);
    REQUIRE(pm.hops.size() == 1);
    CHECK(pm.hops[0].node == "B");
    CHECK_FALSE(pm.path_mtu.has_value());
}

TEST_CASE("path trace follows an injected route change") {
    auto topo = netsim::build_topology(
        "node A\nnode B\nnode C\nnode D\n"
        "link A B latency_ms=1\nlink B C latency_ms=1\n"
        "link A D latency_ms=2\nlink D C latency_ms=2\n"
        "route A C = A,B,C\n");
    auto changed = netsim::inject_route_change(topo, "A", "C", {"A", "D", "C"}, 100);
    Agent agent("a", "A", topo.seed);
    auto before = agent.run_path_trace("c", "C", changed, 50, 10);
    auto after = agent.run_path_trace("c", "C", changed, 100, 10);
    REQUIRE(before.destination_reached);
    REQUIRE(after.destination_reached);
    CHECK(before.hops[0].node == "B");
    CHECK(after.hops[0].node == "D");
}

TEST_CASE("path mtu agrees with the topology oracle over randomized topologies") {
    std::mt19937_64 seed_rng(41);
    for (int trial = 0; trial < 100; ++trial) {
        testutil::ChainParams params;
        params.hops = 2 + static_cast<int>(seed_rng() % 5);
        params.loss = (trial % 4 == 0) ? 0.05 : 0.0;
        auto chain = testutil::make_chain(seed_rng, params);
        Agent agent("src", chain.src, chain.topo.seed);
        auto pm = agent.run_path_trace("dst", chain.dst, chain.topo, 0, 64);
        REQUIRE(pm.destination_reached);
        REQUIRE(pm.path_mtu.has_value());
        CHECK(*pm.path_mtu == netsim::path_min_mtu(chain.topo, chain.src, chain.dst, 0));
    }
}

TEST_CASE("archive is idempotent and lists records in stored order") {
    auto topo = testutil::topo3();
    Agent agent("a", "A", topo.seed);
    LatencySample ls;
    ls.src = "a";
    ls.dst = "c";
    ls.start_time = 100;
    ls.packets_sent = 10;

    auto id1 = agent.archive_measurement("c", 100, 150, ls);
    auto id2 = agent.archive_measurement("c", 100, 160, ls);  // identical payload
    CHECK(id1 == id2);
    CHECK(agent.archive().size() == 1);

    ls.start_time = 200;
    agent.archive_measurement("c", 200, 250, ls);
    ls.start_time = 300;
    agent.archive_measurement("c", 300, 350, ls);

    auto all = agent.archive().list_since(0);
    REQUIRE(all.size() == 3);
    CHECK(all[0].stored_at == 150);
    CHECK(all[1].stored_at == 250);
    CHECK(all[2].stored_at == 350);

    CHECK(agent.archive().list_since(250).size() == 2);
    CHECK(agent.archive().list_since(351).empty());
}

TEST_CASE("agent asserts the single-throughput-test contract") {
    auto topo = testutil::topo3();
    Agent agent("a", "A", topo.seed);
    agent.claim_throughput_slot(0, 30000);
    agent.claim_throughput_slot(30000, 60000);  // adjacent is fine
    REQUIRE_THROWS_AS(agent.claim_throughput_slot(15000, 45000), std::logic_error);
}
