#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "meshmon/common.hpp"

namespace meshmon {

enum class Tool { latency, throughput, trace };

inline const char* to_string(Tool t) {
    switch (t) {
        case Tool::latency: return "latency";
        case Tool::throughput: return "throughput";
        case Tool::trace: return "trace";
    }
    return "latency";
}

inline Tool tool_from_string(std::string_view s) {
    if (s == "latency") return Tool::latency;
    if (s == "throughput") return Tool::throughput;
    if (s == "trace") return Tool::trace;
    throw ConfigError("unknown tool '" + std::string(s) + "'");
}

// A named test parameterization. Tool-specific fields are populated exactly
// for their tool; validate() enforces that and the cadence bound.
struct TestSpec {
    std::string name;
    Tool tool = Tool::latency;
    int packet_count = 0;        // latency
    SimTime packet_interval_ms = 0;  // latency
    SimTime duration_s = 0;      // throughput
    int max_ttl = 0;             // trace
    int payload_size = 64;
    SimTime repeat_interval_s = 60;
    int params_version = 1;

    // Nominal occupancy of one occurrence in simulated milliseconds.
    SimTime nominal_duration_ms() const {
        switch (tool) {
            case Tool::latency: return static_cast<SimTime>(packet_count) * packet_interval_ms;
            case Tool::throughput: return duration_s * 1000;
            case Tool::trace: return 1000;
        }
        return 0;
    }

    void validate() const {
        const std::string where = "spec " + name;
        if (payload_size <= 0) throw ConfigError(where + ": payload must be > 0");
        if (repeat_interval_s <= 0) throw ConfigError(where + ": repeat_s must be > 0");
        switch (tool) {
            case Tool::latency:
                if (packet_count <= 0) throw ConfigError(where + ": packets must be > 0");
                if (packet_interval_ms <= 0) throw ConfigError(where + ": interval_ms must be > 0");
                if (duration_s != 0 || max_ttl != 0)
                    throw ConfigError(where + ": duration_s/max_ttl not valid for latency");
                break;
            case Tool::throughput:
                if (duration_s <= 0) throw ConfigError(where + ": duration_s must be > 0");
                if (packet_count != 0 || packet_interval_ms != 0 || max_ttl != 0)
                    throw ConfigError(where + ": packets/interval_ms/max_ttl not valid for throughput");
                break;
            case Tool::trace:
                if (max_ttl < 1) throw ConfigError(where + ": max_ttl must be >= 1");
                if (packet_count != 0 || packet_interval_ms != 0 || duration_s != 0)
                    throw ConfigError(where + ": packets/interval_ms/duration_s not valid for trace");
                break;
        }
        if (repeat_interval_s * 1000 <= nominal_duration_ms())
            throw ConfigError(where + ": repeat_s must exceed the test duration");
    }
};

enum class MetricKind { latency, throughput, path };

inline const char* to_string(MetricKind k) {
    switch (k) {
        case MetricKind::latency: return "latency";
        case MetricKind::throughput: return "throughput";
        case MetricKind::path: return "path";
    }
    return "latency";
}

inline MetricKind metric_kind_from_string(std::string_view s) {
    if (s == "latency") return MetricKind::latency;
    if (s == "throughput") return MetricKind::throughput;
    if (s == "path") return MetricKind::path;
    throw ConfigError("unknown metric kind '" + std::string(s) + "'");
}

// One OWAMP-style one-way probe stream. Delay quantiles are nearest-rank and
// absent when every packet was lost.
struct LatencySample {
    std::string src;
    std::string dst;
    SimTime start_time = 0;
    int packets_sent = 0;
    int packets_lost = 0;
    std::optional<double> delay_min_ms;
    std::optional<double> delay_median_ms;
    std::optional<double> delay_p95_ms;

    double loss_fraction() const {
        return packets_sent == 0 ? 0.0
                                 : static_cast<double>(packets_lost) / packets_sent;
    }
};

struct ThroughputResult {
    std::string src;
    std::string dst;
    SimTime start_time = 0;
    double achieved_mbps = 0.0;
    long retransmits = 0;
    long congestion_window_bytes = 0;
};

struct PathHop {
    std::string node;
    double rtt_ms = 0.0;

    bool operator==(const PathHop&) const = default;
};

struct PathMeasurement {
    std::string src;
    std::string dst;
    SimTime start_time = 0;
    std::vector<PathHop> hops;
    bool destination_reached = false;
    std::optional<int> path_mtu;  // present iff destination_reached
};

using Measurement = std::variant<LatencySample, ThroughputResult, PathMeasurement>;

inline MetricKind kind_of(const Measurement& m) {
    if (std::holds_alternative<LatencySample>(m)) return MetricKind::latency;
    if (std::holds_alternative<ThroughputResult>(m)) return MetricKind::throughput;
    return MetricKind::path;
}

}  // namespace meshmon
