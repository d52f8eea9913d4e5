#pragma once

#include <map>
#include <string>
#include <vector>

#include "meshmon/common.hpp"
#include "meshmon/hash.hpp"
#include "meshmon/measurements.hpp"

namespace meshmon {

// The universal unit flowing agent -> collector -> bus -> stores. The wire
// format is one line per envelope, space-separated key=value pairs in fixed
// order (see docs/formats.md); it doubles as the agent API response format
// and the store log format, so it is covered by golden tests.
struct MeasurementEnvelope {
    std::string id;  // 32 hex chars, dedup key of the payload
    MetricKind kind = MetricKind::latency;
    std::string src;
    std::string dst;
    std::string agent;
    SimTime start_time = 0;
    SimTime stored_at = 0;     // when the agent archived it
    SimTime collected_at = 0;  // when the pipeline last ingested it; excluded from id
    Measurement payload;
};

namespace detail {

inline void append_payload_fields(std::string& out, const Measurement& m) {
    if (const auto* ls = std::get_if<LatencySample>(&m)) {
        out += " sent=" + std::to_string(ls->packets_sent);
        out += " lost=" + std::to_string(ls->packets_lost);
        if (ls->delay_min_ms) {
            out += " min=" + format_ms(*ls->delay_min_ms);
            out += " median=" + format_ms(*ls->delay_median_ms);
            out += " p95=" + format_ms(*ls->delay_p95_ms);
        }
    } else if (const auto* tr = std::get_if<ThroughputResult>(&m)) {
        out += " mbps=" + format_ms(tr->achieved_mbps);
        out += " retrans=" + std::to_string(tr->retransmits);
        out += " cwnd=" + std::to_string(tr->congestion_window_bytes);
    } else if (const auto* pm = std::get_if<PathMeasurement>(&m)) {
        out += " reached=";
        out += pm->destination_reached ? '1' : '0';
        out += " hops=";
        for (std::size_t i = 0; i < pm->hops.size(); ++i) {
            if (i) out += ',';
            out += pm->hops[i].node + ':' + format_ms(pm->hops[i].rtt_ms);
        }
        if (pm->destination_reached && pm->path_mtu)
            out += " mtu=" + std::to_string(*pm->path_mtu);
    }
}

}  // namespace detail

// Canonical serialization of the measurement itself: metric kind, endpoint
// pair, start time and the metric fields. Envelope metadata (agent, archive
// and collection timestamps) is excluded so re-collection never changes the
// identity.
inline std::string canonical_payload(MetricKind kind, const std::string& src,
                                     const std::string& dst, SimTime start_time,
                                     const Measurement& payload) {
    std::string out = "kind=";
    out += to_string(kind);
    out += " src=" + src + " dst=" + dst + " start=" + std::to_string(start_time);
    detail::append_payload_fields(out, payload);
    return out;
}

inline std::string dedup_key(MetricKind kind, const std::string& src, const std::string& dst,
                             SimTime start_time, const Measurement& payload) {
    return fnv128_hex(canonical_payload(kind, src, dst, start_time, payload));
}

inline MeasurementEnvelope make_envelope(const std::string& src, const std::string& dst,
                                         const std::string& agent, SimTime start_time,
                                         SimTime stored_at, SimTime collected_at,
                                         Measurement payload) {
    MeasurementEnvelope env;
    env.kind = kind_of(payload);
    env.src = src;
    env.dst = dst;
    env.agent = agent;
    env.start_time = start_time;
    env.stored_at = stored_at;
    env.collected_at = collected_at;
    env.payload = std::move(payload);
    env.id = dedup_key(env.kind, src, dst, start_time, env.payload);
    return env;
}

inline std::string to_wire_line(const MeasurementEnvelope& env) {
    std::string out = "id=" + env.id;
    out += " kind=";
    out += to_string(env.kind);
    out += " src=" + env.src + " dst=" + env.dst + " agent=" + env.agent;
    out += " start=" + std::to_string(env.start_time);
    out += " stored=" + std::to_string(env.stored_at);
    out += " collected=" + std::to_string(env.collected_at);
    detail::append_payload_fields(out, env.payload);
    return out;
}

inline MeasurementEnvelope parse_wire_line(std::string_view line) {
    std::map<std::string, std::string> kv;
    for (const auto& tok : split_ws(line)) {
        auto eq = tok.find('=');
        if (eq == std::string::npos)
            throw ProtocolError("envelope line: expected key=value, got '" + tok + "'");
        if (!kv.emplace(tok.substr(0, eq), tok.substr(eq + 1)).second)
            throw ProtocolError("envelope line: duplicate key '" + tok.substr(0, eq) + "'");
    }
    auto need = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end())
            throw ProtocolError(std::string("envelope line: missing key '") + key + "'");
        return it->second;
    };
    auto have = [&](const char* key) { return kv.count(key) != 0; };

    MeasurementEnvelope env;
    env.id = need("id");
    env.kind = metric_kind_from_string(need("kind"));
    env.src = need("src");
    env.dst = need("dst");
    env.agent = need("agent");
    env.start_time = parse_int(need("start"), "start");
    env.stored_at = parse_int(need("stored"), "stored");
    env.collected_at = parse_int(need("collected"), "collected");

    switch (env.kind) {
        case MetricKind::latency: {
            LatencySample ls;
            ls.src = env.src;
            ls.dst = env.dst;
            ls.start_time = env.start_time;
            ls.packets_sent = static_cast<int>(parse_int(need("sent"), "sent"));
            ls.packets_lost = static_cast<int>(parse_int(need("lost"), "lost"));
            if (have("min")) {
                ls.delay_min_ms = parse_double(need("min"), "min");
                ls.delay_median_ms = parse_double(need("median"), "median");
                ls.delay_p95_ms = parse_double(need("p95"), "p95");
            }
            env.payload = std::move(ls);
            break;
        }
        case MetricKind::throughput: {
            ThroughputResult tr;
            tr.src = env.src;
            tr.dst = env.dst;
            tr.start_time = env.start_time;
            tr.achieved_mbps = parse_double(need("mbps"), "mbps");
            tr.retransmits = parse_int(need("retrans"), "retrans");
            tr.congestion_window_bytes = parse_int(need("cwnd"), "cwnd");
            env.payload = std::move(tr);
            break;
        }
        case MetricKind::path: {
            PathMeasurement pm;
            pm.src = env.src;
            pm.dst = env.dst;
            pm.start_time = env.start_time;
            pm.destination_reached = need("reached") == "1";
            for (const auto& hop : split(need("hops"), ',')) {
                if (hop.empty()) continue;
                auto colon = hop.rfind(':');
                if (colon == std::string::npos)
                    throw ProtocolError("envelope line: malformed hop '" + hop + "'");
                pm.hops.push_back(
                    {hop.substr(0, colon), parse_double(hop.substr(colon + 1), "hop rtt")});
            }
            if (pm.destination_reached)
                pm.path_mtu = static_cast<int>(parse_int(need("mtu"), "mtu"));
            env.payload = std::move(pm);
            break;
        }
    }

    // The id is content-derived; a mismatch means the line was corrupted.
    std::string expect = dedup_key(env.kind, env.src, env.dst, env.start_time, env.payload);
    if (expect != env.id)
        throw ProtocolError("envelope line: id mismatch (corrupt record " + env.id + ")");
    return env;
}

}  // namespace meshmon
