#pragma once

#include <algorithm>
#include <cmath>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "meshmon/envelope.hpp"
#include "meshmon/hash.hpp"
#include "meshmon/measurements.hpp"
#include "meshmon/netsim.hpp"

namespace meshmon::agent {

// Nearest-rank quantile: the ceil(p*n)-th order statistic, 1-indexed.
inline double nearest_rank(const std::vector<double>& sorted, double p) {
    std::size_t n = sorted.size();
    std::size_t rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
    if (rank < 1) rank = 1;
    if (rank > n) rank = n;
    return sorted[rank - 1];
}

// Descending path-MTU probe ladder: jumbo sizes in 1000-byte steps down to
// 2000, then the common Ethernet ladder in 100-byte steps down to 600, then
// the IPv4 minimum.
inline const std::vector<int>& mtu_ladder() {
    static const std::vector<int> ladder = {9000, 8000, 7000, 6000, 5000, 4000, 3000,
                                            2000, 1500, 1400, 1300, 1200, 1100, 1000,
                                            900,  800,  700,  600,  576};
    return ladder;
}

// Local measurement archive: content-addressed, idempotent on identical
// payloads, safe for concurrent append and read.
class Archive {
  public:
    // Returns true when the envelope was new, false for a duplicate payload.
    bool store(const MeasurementEnvelope& env) {
        std::lock_guard lock(mu_);
        if (by_id_.count(env.id)) return false;
        by_id_.emplace(env.id, records_.size());
        records_.push_back(env);
        return true;
    }

    std::vector<MeasurementEnvelope> list_since(SimTime t) const {
        std::lock_guard lock(mu_);
        std::vector<MeasurementEnvelope> out;
        for (const auto& r : records_)
            if (r.stored_at >= t) out.push_back(r);
        return out;
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return records_.size();
    }

    std::optional<SimTime> latest_stored_at() const {
        std::lock_guard lock(mu_);
        std::optional<SimTime> latest;
        for (const auto& r : records_)
            if (!latest || r.stored_at > *latest) latest = r.stored_at;
        return latest;
    }

  private:
    mutable std::mutex mu_;
    std::vector<MeasurementEnvelope> records_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

// One measurement host. Runs latency/loss, throughput and path tests against
// the simulated network and archives the results. The RNG stream is derived
// from the topology seed and the host id, so outcomes do not depend on how
// tests interleave across agents.
class Agent {
  public:
    static constexpr int kProbeTtl = 64;
    static constexpr int kTraceRetries = 5;
    static constexpr int kMtuProbeRetries = 16;

    Agent(std::string host_id, std::string node_id, std::uint64_t topo_seed)
        : host_(std::move(host_id)),
          node_(std::move(node_id)),
          rng_(topo_seed ^ fnv64(host_)) {}

    const std::string& host_id() const { return host_; }
    const std::string& node_id() const { return node_; }
    Archive& archive() { return archive_; }
    const Archive& archive() const { return archive_; }

    LatencySample run_latency_test(const TestSpec& spec, const std::string& dst_host,
                                   const std::string& dst_node,
                                   const netsim::TopologySpec& topo, SimTime start) {
        if (spec.tool != Tool::latency) throw ConfigError("spec " + spec.name + " is not a latency spec");
        if (spec.packet_count <= 0) throw ConfigError("latency test with zero packets rejected");

        LatencySample sample;
        sample.src = host_;
        sample.dst = dst_host;
        sample.start_time = start;
        sample.packets_sent = spec.packet_count;

        std::vector<double> delays;
        delays.reserve(static_cast<std::size_t>(spec.packet_count));
        for (int i = 0; i < spec.packet_count; ++i) {
            SimTime t = start + static_cast<SimTime>(i) * spec.packet_interval_ms;
            auto out = netsim::send_probe(topo, node_, dst_node, spec.payload_size, kProbeTtl,
                                          false, rng_, t);
            if (out.delivered) delays.push_back(*out.one_way_delay_ms);
        }
        sample.packets_lost = spec.packet_count - static_cast<int>(delays.size());
        if (!delays.empty()) {
            std::sort(delays.begin(), delays.end());
            sample.delay_min_ms = delays.front();
            sample.delay_median_ms = nearest_rank(delays, 0.50);
            sample.delay_p95_ms = nearest_rank(delays, 0.95);
        }
        return sample;
    }

    // Fluid throughput model: the bottleneck link rate carries segment-sized
    // units for the test duration; each segment is dropped with the
    // end-to-end loss probability of the route at its send time. The
    // congestion window follows the documented toy AIMD: +1 segment per
    // delivered segment, halve on loss, floor 1.
    ThroughputResult run_throughput_test(const TestSpec& spec, const std::string& dst_host,
                                         const std::string& dst_node,
                                         const netsim::TopologySpec& topo, SimTime start) {
        if (spec.tool != Tool::throughput)
            throw ConfigError("spec " + spec.name + " is not a throughput spec");
        if (spec.duration_s <= 0) throw ConfigError("throughput test with zero duration rejected");

        ThroughputResult res;
        res.src = host_;
        res.dst = dst_host;
        res.start_time = start;

        double bottleneck = netsim::path_bottleneck_mbps(topo, node_, dst_node, start);
        double total_bytes = bottleneck * 1e6 / 8.0 * static_cast<double>(spec.duration_s);
        long segments = std::max(1L, static_cast<long>(total_bytes / spec.payload_size));
        SimTime duration_ms = spec.duration_s * 1000;

        long delivered = 0;
        long cwnd = 1;
        for (long i = 0; i < segments; ++i) {
            SimTime t = start + duration_ms * i / segments;
            double p_drop = 1.0 - netsim::path_delivery_prob(topo, node_, dst_node, t);
            if (rng_.chance(p_drop)) {
                ++res.retransmits;
                cwnd = std::max(1L, cwnd / 2);
            } else {
                ++delivered;
                ++cwnd;
            }
        }
        res.achieved_mbps = bottleneck * static_cast<double>(delivered) / static_cast<double>(segments);
        res.congestion_window_bytes = cwnd * spec.payload_size;
        return res;
    }

    // tracepath-style probing: walk the route with increasing ttl, then
    // discover the path MTU from the descending candidate ladder. Probes
    // eaten by random loss are retried a bounded number of times; if a hop
    // never answers the trace is reported incomplete rather than guessed at.
    PathMeasurement run_path_trace(const std::string& dst_host, const std::string& dst_node,
                                   const netsim::TopologySpec& topo, SimTime start,
                                   int max_ttl) {
        if (max_ttl < 1) throw ConfigError("trace max_ttl must be >= 1");

        PathMeasurement pm;
        pm.src = host_;
        pm.dst = dst_host;
        pm.start_time = start;

        for (int ttl = 1; ttl <= max_ttl && !pm.destination_reached; ++ttl) {
            bool answered = false;
            for (int attempt = 0; attempt < kTraceRetries && !answered; ++attempt) {
                auto out = netsim::send_probe(topo, node_, dst_node, 64, ttl, false, rng_, start);
                if (out.delivered) {
                    pm.hops.push_back({dst_node, 2.0 * *out.one_way_delay_ms});
                    pm.destination_reached = true;
                    answered = true;
                } else if (out.drop_reason == netsim::DropReason::ttl_expired) {
                    pm.hops.push_back({*out.expired_at, 2.0 * *out.expiry_delay_ms});
                    answered = true;
                }
            }
            if (!answered) return pm;  // incomplete: a hop never answered
        }
        if (!pm.destination_reached) return pm;  // max_ttl too small

        for (int size : mtu_ladder()) {
            for (int attempt = 0; attempt < kMtuProbeRetries; ++attempt) {
                auto out = netsim::send_probe(topo, node_, dst_node, size, 255, true, rng_, start);
                if (out.delivered) {
                    pm.path_mtu = size;
                    return pm;
                }
                if (out.drop_reason == netsim::DropReason::mtu_exceeded) break;
            }
        }
        // Every ladder size was lost to noise; report the trace as failed
        // rather than claim a reached destination without an MTU.
        pm.destination_reached = false;
        return pm;
    }

    // The scheduler guarantees a host is in at most one throughput test at a
    // time; the agent asserts it. Claims cover [start, end) for this host as
    // source or destination.
    void claim_throughput_slot(SimTime start, SimTime end) {
        std::lock_guard lock(mu_);
        for (const auto& [s, e] : throughput_busy_)
            if (start < e && s < end)
                throw std::logic_error("agent " + host_ + ": overlapping throughput tests [" +
                                       std::to_string(s) + "," + std::to_string(e) + ") and [" +
                                       std::to_string(start) + "," + std::to_string(end) + ")");
        throughput_busy_.emplace_back(start, end);
    }

    // Wraps a measurement in an envelope and archives it. Returns the stored
    // (or previously stored) envelope id.
    std::string archive_measurement(const std::string& dst_host, SimTime start,
                                    SimTime stored_at, Measurement m) {
        auto env = make_envelope(host_, dst_host, host_, start, stored_at, stored_at, std::move(m));
        archive_.store(env);
        return env.id;
    }

  private:
    std::string host_;
    std::string node_;
    Rng rng_;
    Archive archive_;
    std::mutex mu_;
    std::vector<std::pair<SimTime, SimTime>> throughput_busy_;
};

}  // namespace meshmon::agent
