#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "meshmon/common.hpp"
#include "meshmon/rng.hpp"

namespace meshmon::netsim {

constexpr int kMinMtu = 576;

// One direction of a link. The reverse direction is a separate LinkSpec so
// asymmetric routes and asymmetric faults are representable.
struct LinkSpec {
    std::string from;
    std::string to;
    double base_latency_ms = 0.0;
    double jitter_max_ms = 0.0;
    double loss_prob = 0.0;
    double bandwidth_mbps = 1000.0;
    int mtu = 1500;
};

enum class DropReason { none, random_loss, mtu_exceeded, ttl_expired };

inline const char* to_string(DropReason r) {
    switch (r) {
        case DropReason::none: return "none";
        case DropReason::random_loss: return "random_loss";
        case DropReason::mtu_exceeded: return "mtu_exceeded";
        case DropReason::ttl_expired: return "ttl_expired";
    }
    return "none";
}

struct ProbeOutcome {
    bool delivered = false;
    std::optional<double> one_way_delay_ms;  // present iff delivered
    int hop_count = 0;                       // links traversed before the outcome
    DropReason drop_reason = DropReason::none;
    std::optional<std::string> fragmentation_needed_at;  // node before the too-small link
    std::optional<std::string> expired_at;               // node where the ttl ran out
    std::optional<double> expiry_delay_ms;               // one-way delay up to expired_at
};

// Time-stepped overrides applied on top of the configured value. Sorted by
// effective-from time; the entry with the largest time <= t wins.
template <typename V>
using Timeline = std::vector<std::pair<SimTime, V>>;

template <typename V>
inline const V* timeline_at(const Timeline<V>& tl, SimTime t) {
    const V* hit = nullptr;
    for (const auto& [from, v] : tl) {
        if (from <= t) hit = &v;
        else break;
    }
    return hit;
}

using NodePair = std::pair<std::string, std::string>;

// Immutable once built; every injection returns an updated copy.
struct TopologySpec {
    std::set<std::string> nodes;
    std::vector<LinkSpec> links;
    std::map<NodePair, std::vector<std::string>> routes;
    std::uint64_t seed = 0;

    std::map<NodePair, Timeline<double>> loss_overrides;
    std::map<NodePair, Timeline<double>> bandwidth_overrides;
    std::map<NodePair, Timeline<std::vector<std::string>>> route_overrides;

    const LinkSpec* find_link(const std::string& from, const std::string& to) const {
        for (const auto& l : links)
            if (l.from == from && l.to == to) return &l;
        return nullptr;
    }
};

inline std::string pair_name(const std::string& a, const std::string& b) {
    return a + "->" + b;
}

inline void validate_route(const TopologySpec& topo, const std::string& src,
                           const std::string& dst, const std::vector<std::string>& route) {
    const std::string name = "route (" + src + "," + dst + ")";
    if (route.size() < 2) throw ConfigError(name + ": needs at least two nodes");
    if (route.front() != src) throw ConfigError(name + ": must start at " + src);
    if (route.back() != dst) throw ConfigError(name + ": must end at " + dst);
    std::set<std::string> seen;
    for (const auto& n : route) {
        if (!topo.nodes.count(n)) throw ConfigError(name + ": unknown node " + n);
        if (!seen.insert(n).second) throw ConfigError(name + ": repeated node " + n);
    }
    for (std::size_t i = 0; i + 1 < route.size(); ++i) {
        if (!topo.find_link(route[i], route[i + 1]))
            throw ConfigError(name + ": no link " + pair_name(route[i], route[i + 1]));
    }
}

inline void validate_topology(const TopologySpec& topo) {
    if (topo.nodes.empty()) throw ConfigError("topology: empty node set");
    std::set<NodePair> seen_links;
    for (const auto& l : topo.links) {
        const std::string name = "link " + pair_name(l.from, l.to);
        if (!topo.nodes.count(l.from)) throw ConfigError(name + ": unknown node " + l.from);
        if (!topo.nodes.count(l.to)) throw ConfigError(name + ": unknown node " + l.to);
        if (l.from == l.to) throw ConfigError(name + ": self loop");
        if (!seen_links.insert({l.from, l.to}).second) throw ConfigError(name + ": duplicate");
        if (l.base_latency_ms < 0) throw ConfigError(name + ": latency_ms must be >= 0");
        if (l.jitter_max_ms < 0) throw ConfigError(name + ": jitter_ms must be >= 0");
        if (l.loss_prob < 0 || l.loss_prob > 1) throw ConfigError(name + ": loss must be in [0,1]");
        if (l.bandwidth_mbps <= 0) throw ConfigError(name + ": bandwidth_mbps must be > 0");
        if (l.mtu < kMinMtu) throw ConfigError(name + ": mtu must be >= 576");
    }
    for (const auto& [key, route] : topo.routes) validate_route(topo, key.first, key.second, route);
}

// Topology document grammar (see docs/formats.md):
//   seed <uint64>
//   node <id>
//   link <from> <to> latency_ms=<num> [jitter_ms=<num>] [loss=<num>]
//        [bandwidth_mbps=<num>] [mtu=<int>]
//   route <src> <dst> = <n1>,<n2>,...
// '#' starts a comment; blank lines are ignored.
inline TopologySpec build_topology(const std::string& text) {
    TopologySpec topo;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string_view line = trim(raw);
        if (auto hash = line.find('#'); hash != std::string_view::npos)
            line = trim(line.substr(0, hash));
        if (line.empty()) continue;
        auto tok = split_ws(line);
        const std::string where = "topology line " + std::to_string(lineno);
        try {
            if (tok[0] == "seed") {
                if (tok.size() != 2) throw ConfigError("seed takes one value");
                topo.seed = parse_uint(tok[1], "seed");
            } else if (tok[0] == "node") {
                if (tok.size() != 2) throw ConfigError("node takes one id");
                if (!topo.nodes.insert(tok[1]).second)
                    throw ConfigError("duplicate node " + tok[1]);
            } else if (tok[0] == "link") {
                if (tok.size() < 4) throw ConfigError("link needs <from> <to> latency_ms=...");
                LinkSpec l;
                l.from = tok[1];
                l.to = tok[2];
                bool have_latency = false;
                for (std::size_t i = 3; i < tok.size(); ++i) {
                    auto eq = tok[i].find('=');
                    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + tok[i] + "'");
                    std::string key = tok[i].substr(0, eq);
                    std::string val = tok[i].substr(eq + 1);
                    if (key == "latency_ms") { l.base_latency_ms = parse_double(val, key); have_latency = true; }
                    else if (key == "jitter_ms") l.jitter_max_ms = parse_double(val, key);
                    else if (key == "loss") l.loss_prob = parse_double(val, key);
                    else if (key == "bandwidth_mbps") l.bandwidth_mbps = parse_double(val, key);
                    else if (key == "mtu") l.mtu = static_cast<int>(parse_int(val, key));
                    else throw ConfigError("unknown link attribute '" + key + "'");
                }
                if (!have_latency) throw ConfigError("link " + pair_name(l.from, l.to) + ": latency_ms is required");
                topo.links.push_back(std::move(l));
            } else if (tok[0] == "route") {
                if (tok.size() != 5 || tok[3] != "=")
                    throw ConfigError("route syntax: route <src> <dst> = <n1>,<n2>,...");
                NodePair key{tok[1], tok[2]};
                if (topo.routes.count(key))
                    throw ConfigError("duplicate route (" + tok[1] + "," + tok[2] + ")");
                auto hops = split(tok[4], ',');
                topo.routes[key] = std::vector<std::string>(hops.begin(), hops.end());
            } else {
                throw ConfigError("unknown directive '" + tok[0] + "'");
            }
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }
    validate_topology(topo);
    return topo;
}

inline const std::vector<std::string>& route_lookup(const TopologySpec& topo,
                                                    const std::string& src,
                                                    const std::string& dst,
                                                    SimTime at_time) {
    auto ov = topo.route_overrides.find({src, dst});
    if (ov != topo.route_overrides.end()) {
        if (const auto* r = timeline_at(ov->second, at_time)) return *r;
    }
    auto it = topo.routes.find({src, dst});
    if (it == topo.routes.end())
        throw NoRouteError("no route configured for (" + src + "," + dst + ")");
    return it->second;
}

// Effective link parameters at time t, with any injected overrides applied.
inline LinkSpec link_at(const TopologySpec& topo, const std::string& from,
                        const std::string& to, SimTime t) {
    const LinkSpec* base = topo.find_link(from, to);
    if (!base) throw NoRouteError("unknown link " + pair_name(from, to));
    LinkSpec l = *base;
    if (auto it = topo.loss_overrides.find({from, to}); it != topo.loss_overrides.end())
        if (const double* v = timeline_at(it->second, t)) l.loss_prob = *v;
    if (auto it = topo.bandwidth_overrides.find({from, to}); it != topo.bandwidth_overrides.end())
        if (const double* v = timeline_at(it->second, t)) l.bandwidth_mbps = *v;
    return l;
}

inline ProbeOutcome send_probe(const TopologySpec& topo, const std::string& src,
                               const std::string& dst, int size_bytes, int ttl,
                               bool dont_fragment, Rng& rng, SimTime at_time) {
    if (size_bytes <= 0) throw ConfigError("probe size must be > 0");
    if (ttl < 1) throw ConfigError("probe ttl must be >= 1");
    const auto& route = route_lookup(topo, src, dst, at_time);

    ProbeOutcome out;
    double delay = 0.0;
    for (std::size_t i = 0; i + 1 < route.size(); ++i) {
        LinkSpec link = link_at(topo, route[i], route[i + 1], at_time);
        if (dont_fragment && size_bytes > link.mtu) {
            out.drop_reason = DropReason::mtu_exceeded;
            out.fragmentation_needed_at = route[i];
            return out;
        }
        if (rng.chance(link.loss_prob)) {
            out.drop_reason = DropReason::random_loss;
            return out;
        }
        delay += link.base_latency_ms;
        if (link.jitter_max_ms > 0) delay += rng.uniform(link.jitter_max_ms);
        ++out.hop_count;
        if (route[i + 1] == dst) {
            out.delivered = true;
            out.one_way_delay_ms = delay;
            return out;
        }
        if (out.hop_count == ttl) {
            out.drop_reason = DropReason::ttl_expired;
            out.expired_at = route[i + 1];
            out.expiry_delay_ms = delay;
            return out;
        }
    }
    throw NoRouteError("route for (" + src + "," + dst + ") does not reach " + dst);
}

inline TopologySpec inject_route_change(const TopologySpec& topo, const std::string& src,
                                        const std::string& dst,
                                        std::vector<std::string> new_route, SimTime at_time) {
    validate_route(topo, src, dst, new_route);
    if (!topo.routes.count({src, dst}))
        throw NoRouteError("no route configured for (" + src + "," + dst + ")");
    TopologySpec next = topo;
    auto& tl = next.route_overrides[{src, dst}];
    tl.emplace_back(at_time, std::move(new_route));
    std::stable_sort(tl.begin(), tl.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    return next;
}

inline TopologySpec inject_link_degradation(const TopologySpec& topo, const std::string& from,
                                            const std::string& to, double loss_prob,
                                            SimTime at_time) {
    if (!topo.find_link(from, to)) throw NoRouteError("unknown link " + pair_name(from, to));
    if (loss_prob < 0 || loss_prob > 1)
        throw ConfigError("loss must be in [0,1] for link " + pair_name(from, to));
    TopologySpec next = topo;
    auto& tl = next.loss_overrides[{from, to}];
    tl.emplace_back(at_time, loss_prob);
    std::stable_sort(tl.begin(), tl.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    return next;
}

inline TopologySpec inject_link_bandwidth(const TopologySpec& topo, const std::string& from,
                                          const std::string& to, double bandwidth_mbps,
                                          SimTime at_time) {
    if (!topo.find_link(from, to)) throw NoRouteError("unknown link " + pair_name(from, to));
    if (bandwidth_mbps <= 0)
        throw ConfigError("bandwidth_mbps must be > 0 for link " + pair_name(from, to));
    TopologySpec next = topo;
    auto& tl = next.bandwidth_overrides[{from, to}];
    tl.emplace_back(at_time, bandwidth_mbps);
    std::stable_sort(tl.begin(), tl.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    return next;
}

// Analytic oracles over the active route. These are what the measurement
// tools must agree with.
inline int path_min_mtu(const TopologySpec& topo, const std::string& src,
                        const std::string& dst, SimTime t) {
    const auto& route = route_lookup(topo, src, dst, t);
    int mtu = std::numeric_limits<int>::max();
    for (std::size_t i = 0; i + 1 < route.size(); ++i)
        mtu = std::min(mtu, link_at(topo, route[i], route[i + 1], t).mtu);
    return mtu;
}

inline double path_bottleneck_mbps(const TopologySpec& topo, const std::string& src,
                                   const std::string& dst, SimTime t) {
    const auto& route = route_lookup(topo, src, dst, t);
    double bw = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < route.size(); ++i)
        bw = std::min(bw, link_at(topo, route[i], route[i + 1], t).bandwidth_mbps);
    return bw;
}

inline double path_delivery_prob(const TopologySpec& topo, const std::string& src,
                                 const std::string& dst, SimTime t) {
    const auto& route = route_lookup(topo, src, dst, t);
    double p = 1.0;
    for (std::size_t i = 0; i + 1 < route.size(); ++i)
        p *= 1.0 - link_at(topo, route[i], route[i + 1], t).loss_prob;
    return p;
}

inline double path_base_delay_ms(const TopologySpec& topo, const std::string& src,
                                 const std::string& dst, SimTime t) {
    const auto& route = route_lookup(topo, src, dst, t);
    double d = 0.0;
    for (std::size_t i = 0; i + 1 < route.size(); ++i)
        d += link_at(topo, route[i], route[i + 1], t).base_latency_ms;
    return d;
}

inline double path_max_delay_ms(const TopologySpec& topo, const std::string& src,
                                const std::string& dst, SimTime t) {
    const auto& route = route_lookup(topo, src, dst, t);
    double d = 0.0;
    for (std::size_t i = 0; i + 1 < route.size(); ++i) {
        LinkSpec l = link_at(topo, route[i], route[i + 1], t);
        d += l.base_latency_ms + l.jitter_max_ms;
    }
    return d;
}

}  // namespace meshmon::netsim
