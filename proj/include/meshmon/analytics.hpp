#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "meshmon/common.hpp"
#include "meshmon/hash.hpp"
#include "meshmon/measurements.hpp"

namespace meshmon::analytics {

// Canonical identity of a traced path: a content hash of the ordered hop
// node-id sequence. RTTs and timestamps do not participate.
struct PathSignature {
    std::string signature;
    std::vector<std::string> hop_list;

    bool operator==(const PathSignature& o) const { return signature == o.signature; }
};

inline PathSignature path_signature(const PathMeasurement& pm) {
    if (pm.hops.empty()) throw ConfigError("path_signature: empty hop list");
    PathSignature sig;
    std::string joined;
    for (const auto& hop : pm.hops) {
        if (!joined.empty()) joined += ',';
        joined += hop.node;
        sig.hop_list.push_back(hop.node);
    }
    sig.signature = fnv128_hex(joined);
    return sig;
}

enum class AlertKind {
    route_change,
    mtu_violation,
    loss_anomaly,
    throughput_degradation,
    stale_agent,
};

inline const char* to_string(AlertKind k) {
    switch (k) {
        case AlertKind::route_change: return "route_change";
        case AlertKind::mtu_violation: return "mtu_violation";
        case AlertKind::loss_anomaly: return "loss_anomaly";
        case AlertKind::throughput_degradation: return "throughput_degradation";
        case AlertKind::stale_agent: return "stale_agent";
    }
    return "route_change";
}

inline AlertKind alert_kind_from_string(std::string_view s) {
    if (s == "route_change") return AlertKind::route_change;
    if (s == "mtu_violation") return AlertKind::mtu_violation;
    if (s == "loss_anomaly") return AlertKind::loss_anomaly;
    if (s == "throughput_degradation") return AlertKind::throughput_degradation;
    if (s == "stale_agent") return AlertKind::stale_agent;
    throw ConfigError("unknown alert kind '" + std::string(s) + "'");
}

enum class Severity { warn, critical };

inline const char* to_string(Severity s) {
    return s == Severity::warn ? "warn" : "critical";
}

struct Alert {
    AlertKind kind = AlertKind::loss_anomaly;
    Severity severity = Severity::warn;
    std::string subject;  // "src->dst" or a host id
    std::vector<std::pair<std::string, std::string>> evidence;  // includes the crossed threshold
    SimTime raised_at = 0;

    // Fixed line format: t=<ms> kind=<k> severity=<s> subject=<subj> <evidence...>
    std::string to_line() const {
        std::string out = "t=" + std::to_string(raised_at);
        out += " kind=";
        out += to_string(kind);
        out += " severity=";
        out += to_string(severity);
        out += " subject=" + subject;
        for (const auto& [k, v] : evidence) out += " " + k + "=" + v;
        return out;
    }
};

struct RouteChangeEvent {
    SimTime time = 0;  // start_time of the first measurement on the new path
    PathSignature old_path;
    PathSignature new_path;
};

struct RouteChangeReport {
    std::vector<RouteChangeEvent> events;
    int incomplete_traces = 0;  // excluded from comparison, kept as evidence
};

// Adjacent-sample comparison over complete traces only; traces that never
// reached the destination cannot witness a route and are skipped.
inline RouteChangeReport detect_route_changes(const std::vector<PathMeasurement>& series) {
    RouteChangeReport report;
    const PathMeasurement* prev = nullptr;
    for (const auto& pm : series) {
        if (!pm.destination_reached) {
            ++report.incomplete_traces;
            continue;
        }
        if (prev) {
            PathSignature a = path_signature(*prev);
            PathSignature b = path_signature(pm);
            if (!(a == b)) report.events.push_back({pm.start_time, std::move(a), std::move(b)});
        }
        prev = &pm;
    }
    return report;
}

struct PathGroup {
    PathSignature signature;
    int count = 0;
    SimTime first_seen = 0;
    SimTime last_seen = 0;
};

// Distinct paths seen for a pair within [t0, t1), most used first.
inline std::vector<PathGroup> distinct_paths(const std::vector<PathMeasurement>& series,
                                             SimTime t0, SimTime t1) {
    std::map<std::string, PathGroup> groups;
    for (const auto& pm : series) {
        if (!pm.destination_reached) continue;
        if (pm.start_time < t0 || pm.start_time >= t1) continue;
        PathSignature sig = path_signature(pm);
        auto [it, inserted] = groups.try_emplace(sig.signature);
        if (inserted) {
            it->second.signature = std::move(sig);
            it->second.first_seen = pm.start_time;
            it->second.last_seen = pm.start_time;
        }
        ++it->second.count;
        it->second.first_seen = std::min(it->second.first_seen, pm.start_time);
        it->second.last_seen = std::max(it->second.last_seen, pm.start_time);
    }
    std::vector<PathGroup> out;
    for (auto& [_, g] : groups) out.push_back(std::move(g));
    std::sort(out.begin(), out.end(), [](const PathGroup& a, const PathGroup& b) {
        if (a.count != b.count) return a.count > b.count;
        return a.first_seen < b.first_seen;
    });
    return out;
}

inline std::optional<Alert> check_path_mtu(const PathMeasurement& pm, int expected_mtu) {
    if (!pm.destination_reached || !pm.path_mtu) return std::nullopt;
    if (*pm.path_mtu >= expected_mtu) return std::nullopt;
    Alert alert;
    alert.kind = AlertKind::mtu_violation;
    alert.severity = Severity::warn;
    alert.subject = pm.src + "->" + pm.dst;
    alert.raised_at = pm.start_time;
    std::string hops;
    for (const auto& h : pm.hops) {
        if (!hops.empty()) hops += ',';
        hops += h.node;
    }
    alert.evidence = {{"path_mtu", std::to_string(*pm.path_mtu)},
                      {"expected", std::to_string(expected_mtu)},
                      {"hops", hops}};
    return alert;
}

// Median and median absolute deviation, nearest-rank definition (the
// ceil(n/2)-th order statistic). Defined for windows of at least 5 samples.
struct BaselineStats {
    std::size_t n = 0;
    double median = 0.0;
    double mad = 0.0;
};

inline double nearest_rank_median(std::vector<double> values) {
    std::size_t n = values.size();
    std::size_t rank = (n + 1) / 2;  // ceil(n/2), 1-indexed
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1),
                     values.end());
    return values[rank - 1];
}

inline std::optional<BaselineStats> baseline_stats(const std::vector<double>& window) {
    if (window.size() < 5) return std::nullopt;
    BaselineStats stats;
    stats.n = window.size();
    stats.median = nearest_rank_median(window);
    std::vector<double> deviations;
    deviations.reserve(window.size());
    for (double v : window) deviations.push_back(std::fabs(v - stats.median));
    stats.mad = nearest_rank_median(std::move(deviations));
    return stats;
}

inline std::optional<BaselineStats> loss_baseline(const std::vector<LatencySample>& series) {
    std::vector<double> fractions;
    fractions.reserve(series.size());
    for (const auto& s : series) fractions.push_back(s.loss_fraction());
    return baseline_stats(fractions);
}

// Two-rule loss check. The absolute rule needs no baseline: loss at or above
// abs_threshold is critical. Below it, a baseline of >= 5 samples enables the
// statistical rule: loss above median + 5*MAD warns.
inline std::optional<Alert> detect_loss_anomaly(const LatencySample& sample,
                                                const std::optional<BaselineStats>& baseline,
                                                double abs_threshold,
                                                double mad_multiplier = 5.0) {
    const double f = sample.loss_fraction();
    Alert alert;
    alert.kind = AlertKind::loss_anomaly;
    alert.subject = sample.src + "->" + sample.dst;
    alert.raised_at = sample.start_time;
    if (f >= abs_threshold) {
        alert.severity = Severity::critical;
        alert.evidence = {{"loss", format_fixed(f, 4)},
                          {"abs_threshold", format_fixed(abs_threshold, 4)},
                          {"sent", std::to_string(sample.packets_sent)},
                          {"lost", std::to_string(sample.packets_lost)}};
        return alert;
    }
    if (baseline && f > baseline->median + mad_multiplier * baseline->mad) {
        alert.severity = Severity::warn;
        alert.evidence = {{"loss", format_fixed(f, 4)},
                          {"median", format_fixed(baseline->median, 4)},
                          {"mad", format_fixed(baseline->mad, 4)},
                          {"stat_threshold",
                           format_fixed(baseline->median + mad_multiplier * baseline->mad, 4)},
                          {"abs_threshold", format_fixed(abs_threshold, 4)},
                          {"window", std::to_string(baseline->n)}};
        return alert;
    }
    return std::nullopt;
}

// Latest result against the median of the preceding window: a drop below
// (1 - rel_drop) of the baseline is a degradation.
inline std::optional<Alert> detect_throughput_degradation(
    const std::vector<ThroughputResult>& series, double rel_drop) {
    if (series.size() < 6) return std::nullopt;  // 5-sample baseline + the latest
    std::vector<double> window;
    window.reserve(series.size() - 1);
    for (std::size_t i = 0; i + 1 < series.size(); ++i) window.push_back(series[i].achieved_mbps);
    auto baseline = baseline_stats(window);
    if (!baseline) return std::nullopt;
    const ThroughputResult& latest = series.back();
    const double threshold = (1.0 - rel_drop) * baseline->median;
    if (latest.achieved_mbps >= threshold) return std::nullopt;
    Alert alert;
    alert.kind = AlertKind::throughput_degradation;
    alert.severity = Severity::critical;
    alert.subject = latest.src + "->" + latest.dst;
    alert.raised_at = latest.start_time;
    alert.evidence = {{"mbps", format_ms(latest.achieved_mbps)},
                      {"baseline_median", format_ms(baseline->median)},
                      {"threshold", format_ms(threshold)},
                      {"rel_drop", format_fixed(rel_drop, 4)},
                      {"window", std::to_string(baseline->n)}};
    return alert;
}

// Freshness: an agent is stale when it has been silent for more than k times
// its shortest test cadence; an agent that never reported is stale with an
// infinite lag sentinel.
inline std::vector<Alert> check_agent_freshness(
    const std::map<std::string, std::optional<SimTime>>& latest_stored_per_agent, SimTime now,
    double k, const std::map<std::string, SimTime>& shortest_repeat_ms) {
    std::vector<Alert> alerts;
    for (const auto& [agent, latest] : latest_stored_per_agent) {
        SimTime repeat = 0;
        if (auto it = shortest_repeat_ms.find(agent); it != shortest_repeat_ms.end())
            repeat = it->second;
        const double allowed = k * static_cast<double>(repeat);
        bool stale = false;
        std::string lag_text;
        if (!latest) {
            stale = true;
            lag_text = "inf";
        } else {
            const double lag = static_cast<double>(now - *latest);
            if (repeat > 0 && lag > allowed) stale = true;
            lag_text = std::to_string(now - *latest);
        }
        if (!stale) continue;
        Alert alert;
        alert.kind = AlertKind::stale_agent;
        alert.severity = Severity::warn;
        alert.subject = agent;
        alert.raised_at = now;
        alert.evidence = {{"lag_ms", lag_text},
                          {"allowed_ms", format_fixed(allowed, 0)},
                          {"k", format_fixed(k, 1)},
                          {"shortest_repeat_ms", std::to_string(repeat)}};
        alerts.push_back(std::move(alert));
    }
    return alerts;
}

// Alert log line parsing, for the CLI's alert listing.
struct ParsedAlert {
    SimTime raised_at = 0;
    std::string kind;
    std::string severity;
    std::string subject;
    std::string line;
};

inline ParsedAlert parse_alert_line(const std::string& line) {
    ParsedAlert out;
    out.line = line;
    for (const auto& tok : split_ws(line)) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        std::string key = tok.substr(0, eq);
        std::string val = tok.substr(eq + 1);
        if (key == "t") out.raised_at = parse_int(val, "t");
        else if (key == "kind") out.kind = val;
        else if (key == "severity") out.severity = val;
        else if (key == "subject") out.subject = val;
    }
    if (out.kind.empty()) throw ProtocolError("alert line missing kind: " + line);
    return out;
}

}  // namespace meshmon::analytics
