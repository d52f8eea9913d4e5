// Acceptance suite: one test case per criterion, each printing a pass line.
// Every threshold is pinned here; nothing defers to later calibration.

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "meshmon/agent.hpp"
#include "meshmon/collector.hpp"
#include "meshmon/jobsingest.hpp"
#include "meshmon/matrix.hpp"
#include "meshmon/scenario.hpp"
#include "meshmon/store.hpp"
#include "testutil.hpp"

using namespace meshmon;
namespace fs = std::filesystem;

namespace {

void pass(int criterion, const char* name) {
    std::printf("ACCEPTANCE %2d %-28s PASS\n", criterion, name);
    std::fflush(stdout);
}

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / "meshmon_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p);
    out << content;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("criterion 1: latency loss oracle on lossy 3-link paths") {
    // Per-link loss 0.01 over 3 links: delivery 0.99^3, loss p = 1 - 0.99^3.
    const double p = 1.0 - 0.99 * 0.99 * 0.99;
    const int probes = 10000;
    const double bound = testutil::binomial_3sigma(p, probes);

    std::mt19937_64 seed_rng(10001);
    for (int topo_idx = 0; topo_idx < 100; ++topo_idx) {
        testutil::ChainParams params;
        params.hops = 3;
        params.loss = 0.01;
        params.jitter_hi = 2.0;
        auto chain = testutil::make_chain(seed_rng, params);

        TestSpec spec;
        spec.name = "lat";
        spec.tool = Tool::latency;
        spec.packet_count = probes;
        spec.packet_interval_ms = 1;
        spec.payload_size = 64;
        spec.repeat_interval_s = 60;

        agent::Agent agent("src", chain.src, chain.topo.seed);
        auto sample = agent.run_latency_test(spec, "dst", chain.dst, chain.topo, 0);
        REQUIRE(sample.packets_sent == probes);
        REQUIRE_THAT(sample.loss_fraction(), Catch::Matchers::WithinAbs(p, bound));
    }
    pass(1, "loss-oracle");
}

TEST_CASE("criterion 2: path mtu equals the configured route minimum") {
    std::mt19937_64 seed_rng(10002);
    for (int topo_idx = 0; topo_idx < 100; ++topo_idx) {
        testutil::ChainParams params;
        params.hops = 2 + static_cast<int>(seed_rng() % 5);
        params.loss = (topo_idx % 3 == 0) ? 0.08 : 0.0;  // noisy probes must not mislead
        params.jitter_hi = 3.0;
        auto chain = testutil::make_chain(seed_rng, params);
        agent::Agent agent("src", chain.src, chain.topo.seed);
        auto pm = agent.run_path_trace("dst", chain.dst, chain.topo, 0, 64);
        REQUIRE(pm.destination_reached);
        REQUIRE(pm.path_mtu.has_value());
        REQUIRE(*pm.path_mtu == netsim::path_min_mtu(chain.topo, chain.src, chain.dst, 0));
    }
    pass(2, "path-mtu-oracle");
}

TEST_CASE("criterion 3: route change detection matches the injection timeline") {
    // Four-node topology with three distinct A->C routes; traces every 120s.
    const char* topo_text = R"(
seed 555
node A
node B
node C
node D
link A B latency_ms=4
link B C latency_ms=4
link A D latency_ms=6
link D C latency_ms=6
link A C latency_ms=15
route A C = A,B,C
)";
    const char* mesh_text =
        "host a node=A\nhost c node=C\n"
        "spec trc tool=trace max_ttl=16 repeat_s=120\n"
        "mesh m kind=disjoint pairs=a:c specs=trc\n";
    const std::vector<std::vector<std::string>> route_pool = {
        {"A", "B", "C"}, {"A", "D", "C"}, {"A", "C"}};

    std::mt19937_64 rng(10003);
    auto dir = fresh_dir("criterion3");
    write_file(dir / "topo.txt", topo_text);
    write_file(dir / "mesh.txt", mesh_text);

    for (int scenario_idx = 0; scenario_idx < 50; ++scenario_idx) {
        int n_changes = static_cast<int>(rng() % 4);  // 0..3
        std::string body = "topology topo.txt\nmesh mesh.txt\npoll_period_s 60\n";
        // Changes land between trace occurrences, 360s apart, so complete
        // traces bracket every change.
        std::vector<std::size_t> injected;
        std::size_t current = 0;
        std::vector<SimTime> change_times;
        for (int c = 0; c < n_changes; ++c) {
            std::size_t next = (current + 1 + rng() % (route_pool.size() - 1)) % route_pool.size();
            SimTime at_s = 180 + 360 * c;
            std::string via;
            for (const auto& n : route_pool[next]) via += (via.empty() ? "" : ",") + n;
            body += "fault route_change A C via=" + via + " at_s=" + std::to_string(at_s) + "\n";
            injected.push_back(next);
            change_times.push_back(at_s * 1000);
            current = next;
        }
        write_file(dir / "scenario.txt", body);

        scenario::Runner runner(scenario::load_scenario(dir / "scenario.txt"), "");
        auto summary = runner.run(2400 * 1000);

        std::vector<const analytics::Alert*> events;
        for (const auto& a : summary.alerts)
            if (a.kind == analytics::AlertKind::route_change) events.push_back(&a);

        REQUIRE(events.size() == static_cast<std::size_t>(n_changes));
        std::size_t prev = 0;
        for (int c = 0; c < n_changes; ++c) {
            // The event is stamped at the first trace on the new route:
            // the next 120s occurrence after the change.
            SimTime expect_at = ((change_times[c] + 119999) / 120000) * 120000;
            REQUIRE(events[c]->raised_at == expect_at);
            std::string old_hops, new_hops;
            for (std::size_t h = 1; h < route_pool[prev].size(); ++h)
                old_hops += (old_hops.empty() ? "" : ",") + route_pool[prev][h];
            for (std::size_t h = 1; h < route_pool[injected[c]].size(); ++h)
                new_hops += (new_hops.empty() ? "" : ",") + route_pool[injected[c]][h];
            std::string line = events[c]->to_line();
            REQUIRE(line.find("old_hops=" + old_hops) != std::string::npos);
            REQUIRE(line.find("new_hops=" + new_hops) != std::string::npos);
            prev = injected[c];
        }
    }
    pass(3, "route-change-detection");
}

TEST_CASE("criterion 4: duplicate polls and a subscriber restart keep exactly-once effect") {
    std::mt19937_64 rng(10004);
    for (int trial = 0; trial < 10; ++trial) {
        auto topo = testutil::topo3();
        agent::Agent agent("a", "A", topo.seed);
        const int distinct = 200 + static_cast<int>(rng() % 300);
        for (int i = 0; i < distinct; ++i) {
            LatencySample ls;
            ls.src = "a";
            ls.dst = "c";
            ls.start_time = i * 100;
            ls.packets_sent = 10;
            agent.archive_measurement("c", ls.start_time, ls.start_time + 50, ls);
        }

        collector::Bus bus;
        store::LongTermStore st;
        std::size_t crash_at = 50 + rng() % static_cast<std::size_t>(distinct);
        std::size_t received = 0, applied = 0;
        collector::Bus::ReplayCursor acked;
        auto deliver = [&](const MeasurementEnvelope& env) {
            if (received >= crash_at) return;  // subscriber has crashed
            st.append(env);
            ++received;
            ++applied;
            if (applied % 5 == 0) acked["latency"] = applied;
        };
        auto sub = bus.subscribe({"latency"}, deliver);

        // Poll with forced duplicates: the cursor is randomly rewound so
        // overlapping batches get re-published.
        agent::InProcessEndpoint endpoint(agent);
        collector::PollCursor cursor{"a", 0};
        SimTime poll_time = 0;
        while (cursor.last_seen < (distinct - 1) * 100 + 50) {
            auto result = collector::poll_agent(cursor, endpoint, poll_time);
            poll_time += 60000;
            for (const auto& env : result.envelopes) bus.publish(env);
            if (rng() % 3 == 0 && cursor.last_seen > 0)
                cursor.last_seen -= static_cast<SimTime>(rng() % cursor.last_seen);
        }

        // Restart: resubscribe with the acknowledged replay cursor.
        bus.unsubscribe(sub);
        received = 0;
        crash_at = static_cast<std::size_t>(-1);
        bus.subscribe({"latency"}, deliver, acked);

        REQUIRE(st.cardinality() == static_cast<std::size_t>(distinct));
    }
    pass(4, "pipeline-exactly-once");
}

TEST_CASE("criterion 5: scheduler produces no per-host throughput overlap") {
    std::mt19937_64 rng(10005);
    for (int trial = 0; trial < 20; ++trial) {
        int hosts = 2 + static_cast<int>(rng() % 5);
        SimTime duration = 5 + static_cast<SimTime>(rng() % 26);
        SimTime repeat = 2 * hosts * duration * (2 + static_cast<SimTime>(rng() % 4));
        std::string text;
        std::string members;
        for (int i = 0; i < hosts; ++i) {
            std::string id = "h" + std::to_string(i);
            text += "host " + id + " node=N" + std::to_string(i) + "\n";
            members += (i ? "," : "") + id;
        }
        text += "spec t tool=throughput duration_s=" + std::to_string(duration) +
                " repeat_s=" + std::to_string(repeat) + "\n";
        text += "mesh m kind=full_mesh members=" + members + " specs=t\n";
        auto cfg = meshconfig::load_mesh_config(text);
        auto schedule = meshconfig::build_schedule(cfg);

        // Brute-force interval scan over one hyperperiod.
        struct Interval {
            std::string host;
            SimTime lo, hi;
        };
        std::vector<Interval> intervals;
        for (const auto& e : schedule) {
            REQUIRE(e.tool == Tool::throughput);
            for (SimTime occ = e.first_start_ms; occ < repeat * 1000; occ += e.repeat_ms) {
                intervals.push_back({e.src, occ, occ + e.duration_ms});
                intervals.push_back({e.dst, occ, occ + e.duration_ms});
            }
        }
        for (std::size_t i = 0; i < intervals.size(); ++i)
            for (std::size_t j = i + 1; j < intervals.size(); ++j) {
                bool overlap = intervals[i].host == intervals[j].host &&
                               intervals[i].lo < intervals[j].hi &&
                               intervals[j].lo < intervals[i].hi;
                REQUIRE_FALSE(overlap);
            }
    }

    // The constructed infeasible case: per-host demand exceeds the period.
    auto cfg = meshconfig::load_mesh_config(
        "host a node=A\nhost b node=B\nhost c node=C\n"
        "spec t tool=throughput duration_s=30 repeat_s=60\n"
        "mesh m kind=full_mesh members=a,b,c specs=t\n");
    REQUIRE_THROWS_AS(meshconfig::build_schedule(cfg), ScheduleError);
    pass(5, "scheduler-no-overlap");
}

TEST_CASE("criterion 6: retention window and long-term superset hold throughout a run") {
    auto dir = fresh_dir("criterion6");
    write_file(dir / "topo.txt", R"(
seed 66
node A
node B
link A B latency_ms=3
link B A latency_ms=3
route A B = A,B
route B A = B,A
)");
    write_file(dir / "mesh.txt",
               "host a node=A\nhost b node=B\n"
               "spec lat tool=latency packets=10 interval_ms=20 repeat_s=60\n"
               "mesh m kind=full_mesh members=a,b specs=lat\n");
    write_file(dir / "scenario.txt",
               "topology topo.txt\nmesh mesh.txt\npoll_period_s 60\nshort_window_s 600\n");

    scenario::Runner runner(scenario::load_scenario(dir / "scenario.txt"), "");
    int checks = 0;
    runner.set_post_poll_hook([&](SimTime now) {
        store::QueryFilter all;
        auto short_rows = runner.short_store().query(all);
        std::set<std::string> long_ids;
        for (const auto& e : runner.long_store().query(all)) long_ids.insert(e.id);
        for (const auto& e : short_rows) {
            REQUIRE(e.start_time >= now - 600 * 1000);  // window correctness
            REQUIRE(long_ids.count(e.id) == 1);         // superset
        }
        ++checks;
    });
    auto summary = runner.run(7200 * 1000);
    REQUIRE(checks == 120);
    REQUIRE(summary.envelopes_long > summary.envelopes_short);  // pruning really happened
    pass(6, "retention");
}

TEST_CASE("criterion 7: anomaly rules fire exactly as specified") {
    // {0.001 x 20, then 0.05} with abs threshold 0.02: exactly one critical.
    std::vector<LatencySample> series;
    for (int i = 0; i < 20; ++i) {
        LatencySample ls;
        ls.src = "a";
        ls.dst = "b";
        ls.start_time = i * 1000;
        ls.packets_sent = 1000;
        ls.packets_lost = 1;  // 0.001
        series.push_back(ls);
    }
    LatencySample bad = series.back();
    bad.start_time = 20000;
    bad.packets_lost = 50;  // 0.05
    series.push_back(bad);

    int criticals = 0, warns = 0;
    for (std::size_t i = 0; i < series.size(); ++i) {
        std::vector<LatencySample> window(series.begin(), series.begin() + static_cast<std::ptrdiff_t>(i));
        auto alert = analytics::detect_loss_anomaly(series[i], analytics::loss_baseline(window), 0.02);
        if (!alert) continue;
        if (alert->severity == analytics::Severity::critical) ++criticals;
        else ++warns;
    }
    REQUIRE(criticals == 1);
    REQUIRE(warns == 0);

    // Clean series: zero alerts.
    for (auto& s : series) s.packets_lost = 0;
    for (std::size_t i = 0; i < series.size(); ++i) {
        std::vector<LatencySample> window(series.begin(), series.begin() + static_cast<std::ptrdiff_t>(i));
        REQUIRE_FALSE(analytics::detect_loss_anomaly(series[i], analytics::loss_baseline(window), 0.02)
                          .has_value());
    }

    // Median/MAD against the sort-based oracle on 1000 random series.
    std::mt19937_64 rng(10007);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> values;
        int n = 5 + static_cast<int>(rng() % 60);
        for (int i = 0; i < n; ++i) values.push_back(static_cast<double>(rng() % 100000) / 3137.0);
        auto stats = analytics::baseline_stats(values);
        REQUIRE(stats.has_value());
        REQUIRE(stats->median == testutil::oracle_median(values));
        REQUIRE(stats->mad == testutil::oracle_mad(values));
    }
    pass(7, "anomaly-rules");
}

TEST_CASE("criterion 8: job ingestion round-trips and aggregates exactly") {
    std::mt19937_64 rng(10008);

    // Geo table: a coarse /8 layer with finer /16 and /24 entries on top.
    std::string geo_csv;
    for (int i = 0; i < 20; ++i)
        geo_csv += std::to_string(10 + i) + ".0.0.0/8,region8_" + std::to_string(i) + "," +
                   std::to_string(30 + i) + ".5,-90.25\n";
    for (int i = 0; i < 40; ++i)
        geo_csv += std::to_string(10 + i % 20) + "." + std::to_string(i) + ".0.0/16,region16_" +
                   std::to_string(i) + ",41.0,-87.5\n";
    for (int i = 0; i < 40; ++i)
        geo_csv += std::to_string(10 + i % 20) + "." + std::to_string(i) + "." +
                   std::to_string(i % 256) + ".0/24,region24_" + std::to_string(i) + ",42.0,-88.0\n";
    auto table = jobsingest::GeoTable::from_csv(geo_csv);

    // Streaming-sum oracle accumulated while generating, before any parsing.
    std::map<std::string, std::uint64_t> oracle_bytes;
    std::map<std::string, std::uint64_t> oracle_count;
    std::vector<std::string> lines;
    lines.reserve(100000);
    std::vector<jobsingest::JobTransferRecord> parsed;
    parsed.reserve(100000);

    for (int i = 0; i < 100000; ++i) {
        std::uint32_t addr = (static_cast<std::uint32_t>(rng() % 40 + 5) << 24) |
                             static_cast<std::uint32_t>(rng() & 0xffffff);
        std::string ip = std::to_string(addr >> 24) + "." + std::to_string((addr >> 16) & 255) +
                         "." + std::to_string((addr >> 8) & 255) + "." + std::to_string(addr & 255);
        std::uint64_t bytes = rng() % 2000000000ULL;
        double duration = static_cast<double>(1 + rng() % 100000) / 8.0;  // exact binary fractions
        int day = static_cast<int>(rng() % 28) + 1;
        std::string line = "ts=2020-01-" + std::string(day < 10 ? "0" : "") +
                           std::to_string(day) + "T12:34:56Z submit=submit" +
                           std::to_string(rng() % 5) + ".example.org worker=" + ip +
                           " bytes=" + std::to_string(bytes) + " lost_pkts=" +
                           std::to_string(rng() % 100) + " reorders=" + std::to_string(rng() % 20) +
                           " duration_s=" + format_shortest(duration);
        lines.push_back(line);

        const jobsingest::GeoEntry* hit = nullptr;
        {
            // Brute-force scan as the oracle's locator.
            for (const auto& e : table.entries()) {
                std::uint32_t mask = e.prefix_len == 0 ? 0 : ~0u << (32 - e.prefix_len);
                if ((addr & mask) != (e.prefix & mask)) continue;
                if (!hit || e.prefix_len > hit->prefix_len) hit = &e;
            }
        }
        std::string group = hit ? hit->region : jobsingest::kUnlocatedGroup;
        oracle_bytes[group] += bytes;
        oracle_count[group] += 1;
    }

    for (const auto& line : lines) {
        auto rec = jobsingest::parse_line(line);
        REQUIRE(jobsingest::serialize(rec) == line);  // round trip
        jobsingest::geo_annotate(rec, table);
        parsed.push_back(std::move(rec));
    }

    auto rows = jobsingest::aggregate_bytes_by_destination(parsed, jobsingest::GroupBy::region);
    REQUIRE(rows.size() == oracle_bytes.size());
    for (const auto& row : rows) {
        REQUIRE(oracle_bytes.at(row.group) == row.total_bytes);
        REQUIRE(oracle_count.at(row.group) == row.record_count);
    }

    // Longest-prefix equivalence on 10^4 fresh random addresses.
    for (int i = 0; i < 10000; ++i) {
        std::uint32_t addr = static_cast<std::uint32_t>(rng());
        const jobsingest::GeoEntry* got = table.lookup(addr);
        const jobsingest::GeoEntry* expect = nullptr;
        for (const auto& e : table.entries()) {
            std::uint32_t mask = e.prefix_len == 0 ? 0 : ~0u << (32 - e.prefix_len);
            if ((addr & mask) != (e.prefix & mask)) continue;
            if (!expect || e.prefix_len > expect->prefix_len) expect = &e;
        }
        REQUIRE((got == nullptr) == (expect == nullptr));
        if (got) REQUIRE(got->cidr == expect->cidr);
    }
    pass(8, "job-ingestion");
}

TEST_CASE("criterion 9: identical runs produce byte-identical logs") {
    auto dir = fresh_dir("criterion9");
    write_file(dir / "topo.txt", R"(
seed 99
node A
node B
node C
link A B latency_ms=5 jitter_ms=2 loss=0.002 bandwidth_mbps=100
link B A latency_ms=5 jitter_ms=2 loss=0.002 bandwidth_mbps=100
link A C latency_ms=8 jitter_ms=1 bandwidth_mbps=200
link C A latency_ms=8 jitter_ms=1 bandwidth_mbps=200
link B C latency_ms=6 bandwidth_mbps=150
link C B latency_ms=6 bandwidth_mbps=150
route A B = A,B
route B A = B,A
route A C = A,C
route C A = C,A
route B C = B,C
route C B = C,B
)");
    write_file(dir / "mesh.txt", R"(
host a node=A
host b node=B
host c node=C
spec lat tool=latency packets=50 interval_ms=20 repeat_s=60
spec tput tool=throughput duration_s=10 repeat_s=600
spec trc tool=trace max_ttl=16 repeat_s=120
mesh all kind=full_mesh members=a,b,c specs=lat,tput,trc
)");
    write_file(dir / "scenario.txt",
               "topology topo.txt\nmesh mesh.txt\npoll_period_s 60\nexpected_mtu 1500\n"
               "fault link_loss A B loss=0.08 at_s=1500\n");

    auto sc = scenario::load_scenario(dir / "scenario.txt");
    for (const char* out : {"run1", "run2"}) {
        scenario::Runner runner(scenario::load_scenario(dir / "scenario.txt"),
                                (dir / out).string());
        runner.run(3000 * 1000);
    }
    REQUIRE(slurp(dir / "run1/short_term.log") == slurp(dir / "run2/short_term.log"));
    REQUIRE(slurp(dir / "run1/long_term.log") == slurp(dir / "run2/long_term.log"));
    REQUIRE(slurp(dir / "run1/alerts.log") == slurp(dir / "run2/alerts.log"));
    REQUIRE_FALSE(slurp(dir / "run1/long_term.log").empty());
    REQUIRE_FALSE(slurp(dir / "run1/alerts.log").empty());
    pass(9, "determinism");
}

TEST_CASE("criterion 10: soft failure scenario ends with one alert per fault and a crit cell") {
    auto dir = fresh_dir("criterion10");
    write_file(dir / "topo.txt", R"(
seed 1010
node A
node B
node C
link A B latency_ms=5 bandwidth_mbps=100 mtu=1500
link B A latency_ms=5 bandwidth_mbps=100 mtu=1500
link A C latency_ms=8 bandwidth_mbps=200 mtu=1500
link C A latency_ms=8 bandwidth_mbps=200 mtu=1500
link B C latency_ms=6 bandwidth_mbps=150 mtu=1500
link C B latency_ms=6 bandwidth_mbps=150 mtu=1500
route A B = A,B
route B A = B,A
route A C = A,C
route C A = C,A
route B C = B,C
route C B = C,B
)");
    write_file(dir / "mesh.txt", R"(
host a node=A
host b node=B
host c node=C
spec lat tool=latency packets=100 interval_ms=10 repeat_s=60
spec tput tool=throughput duration_s=10 repeat_s=600
mesh all kind=full_mesh members=a,b,c specs=lat,tput
)");
    write_file(dir / "scenario.txt",
               "topology topo.txt\nmesh mesh.txt\npoll_period_s 60\n"
               "fault link_bandwidth A B mbps=10 at_s=4000\n"
               "fault link_loss A B loss=0.10 at_s=4000\n");

    scenario::Runner runner(scenario::load_scenario(dir / "scenario.txt"),
                            (dir / "out").string());
    auto summary = runner.run(7200 * 1000);

    int degradations = 0, loss_criticals = 0, others = 0;
    for (const auto& a : summary.alerts) {
        if (a.kind == analytics::AlertKind::throughput_degradation) {
            ++degradations;
            REQUIRE(a.subject == "a->b");
        } else if (a.kind == analytics::AlertKind::loss_anomaly) {
            ++loss_criticals;
            REQUIRE(a.severity == analytics::Severity::critical);
            REQUIRE(a.subject == "a->b");
        } else {
            ++others;
        }
    }
    REQUIRE(degradations == 1);
    REQUIRE(loss_criticals == 1);
    REQUIRE(others == 0);

    auto sc = scenario::load_scenario(dir / "scenario.txt");
    auto cells = matrix::compute_matrix(runner.long_store(), sc.mesh, runner.schedule(),
                                        MetricKind::latency, sc.analytics, 7200 * 1000);
    for (const auto& cell : cells) {
        if (cell.src == "a" && cell.dst == "b")
            REQUIRE(cell.status == matrix::CellStatus::crit);
        else
            REQUIRE(cell.status == matrix::CellStatus::ok);
    }
    pass(10, "soft-failure-story");
}
