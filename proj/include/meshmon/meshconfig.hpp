#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "meshmon/common.hpp"
#include "meshmon/measurements.hpp"

namespace meshmon::meshconfig {

struct HostRecord {
    std::string id;
    std::string node;  // simulated node this host sits on
    std::string site;
    std::string segment;  // LHCOPN | LHCONE | other tag
    double latitude = 0.0;
    double longitude = 0.0;
};

enum class MeshKind { full_mesh, disjoint };

struct MeshDefinition {
    std::string name;
    MeshKind kind = MeshKind::full_mesh;
    std::vector<std::string> members;                          // full_mesh
    std::vector<std::pair<std::string, std::string>> pairs;    // disjoint
    std::vector<std::string> spec_names;
};

struct MeshConfig {
    std::vector<HostRecord> hosts;  // declaration order
    std::vector<TestSpec> specs;
    std::vector<MeshDefinition> meshes;

    const HostRecord* find_host(const std::string& id) const {
        for (const auto& h : hosts)
            if (h.id == id) return &h;
        return nullptr;
    }

    const TestSpec* find_spec(const std::string& name) const {
        for (const auto& s : specs)
            if (s.name == name) return &s;
        return nullptr;
    }
};

// Mesh configuration grammar (docs/formats.md):
//   host <id> node=<node> [site=<s>] [segment=<tag>] [lat=<deg>] [lon=<deg>]
//   spec <name> tool=latency packets=<n> interval_ms=<ms> [payload=<bytes>] repeat_s=<s> [v=<int>]
//   spec <name> tool=throughput duration_s=<s> [payload=<bytes>] repeat_s=<s> [v=<int>]
//   spec <name> tool=trace max_ttl=<n> [payload=<bytes>] repeat_s=<s> [v=<int>]
//   mesh <name> kind=full_mesh members=<a,b,...> specs=<s1,s2,...>
//   mesh <name> kind=disjoint pairs=<a:b,c:d,...> specs=<s1,...>
inline MeshConfig parse_mesh_config(const std::string& text) {
    MeshConfig cfg;
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
        const std::string where = "mesh config line " + std::to_string(lineno);
        try {
            auto kv_of = [&](std::size_t first) {
                std::map<std::string, std::string> kv;
                for (std::size_t i = first; i < tok.size(); ++i) {
                    auto eq = tok[i].find('=');
                    if (eq == std::string::npos)
                        throw ConfigError("expected key=value, got '" + tok[i] + "'");
                    kv[tok[i].substr(0, eq)] = tok[i].substr(eq + 1);
                }
                return kv;
            };
            if (tok[0] == "host") {
                if (tok.size() < 3) throw ConfigError("host needs <id> node=<node>");
                HostRecord h;
                h.id = tok[1];
                auto kv = kv_of(2);
                for (const auto& [k, v] : kv) {
                    if (k == "node") h.node = v;
                    else if (k == "site") h.site = v;
                    else if (k == "segment") h.segment = v;
                    else if (k == "lat") h.latitude = parse_double(v, k);
                    else if (k == "lon") h.longitude = parse_double(v, k);
                    else throw ConfigError("unknown host attribute '" + k + "'");
                }
                if (h.node.empty()) throw ConfigError("host " + h.id + ": node= is required");
                cfg.hosts.push_back(std::move(h));
            } else if (tok[0] == "spec") {
                if (tok.size() < 3) throw ConfigError("spec needs <name> tool=...");
                TestSpec s;
                s.name = tok[1];
                auto kv = kv_of(2);
                for (const auto& [k, v] : kv) {
                    if (k == "tool") s.tool = tool_from_string(v);
                    else if (k == "packets") s.packet_count = static_cast<int>(parse_int(v, k));
                    else if (k == "interval_ms") s.packet_interval_ms = parse_int(v, k);
                    else if (k == "duration_s") s.duration_s = parse_int(v, k);
                    else if (k == "max_ttl") s.max_ttl = static_cast<int>(parse_int(v, k));
                    else if (k == "payload") s.payload_size = static_cast<int>(parse_int(v, k));
                    else if (k == "repeat_s") s.repeat_interval_s = parse_int(v, k);
                    else if (k == "v") s.params_version = static_cast<int>(parse_int(v, k));
                    else throw ConfigError("unknown spec attribute '" + k + "'");
                }
                s.validate();
                cfg.specs.push_back(std::move(s));
            } else if (tok[0] == "mesh") {
                if (tok.size() < 3) throw ConfigError("mesh needs <name> and attributes");
                MeshDefinition m;
                m.name = tok[1];
                auto kv = kv_of(2);
                for (const auto& [k, v] : kv) {
                    if (k == "kind") {
                        if (v == "full_mesh") m.kind = MeshKind::full_mesh;
                        else if (v == "disjoint") m.kind = MeshKind::disjoint;
                        else throw ConfigError("unknown mesh kind '" + v + "'");
                    } else if (k == "members") {
                        m.members = split(v, ',');
                    } else if (k == "pairs") {
                        for (const auto& p : split(v, ',')) {
                            auto colon = p.find(':');
                            if (colon == std::string::npos)
                                throw ConfigError("pair '" + p + "' must be src:dst");
                            m.pairs.emplace_back(p.substr(0, colon), p.substr(colon + 1));
                        }
                    } else if (k == "specs") {
                        m.spec_names = split(v, ',');
                    } else {
                        throw ConfigError("unknown mesh attribute '" + k + "'");
                    }
                }
                cfg.meshes.push_back(std::move(m));
            } else {
                throw ConfigError("unknown directive '" + tok[0] + "'");
            }
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }
    return cfg;
}

// Referential integrity over a parsed config: unique host ids, every mesh
// member declared, every spec reference resolvable.
inline void validate_config(const MeshConfig& cfg) {
    std::set<std::string> host_ids;
    for (const auto& h : cfg.hosts)
        if (!host_ids.insert(h.id).second) throw ConfigError("duplicate host id " + h.id);
    std::set<std::string> spec_names;
    for (const auto& s : cfg.specs)
        if (!spec_names.insert(s.name).second) throw ConfigError("duplicate spec " + s.name);

    for (const auto& m : cfg.meshes) {
        const std::string where = "mesh " + m.name;
        if (m.spec_names.empty()) throw ConfigError(where + ": no specs listed");
        for (const auto& sn : m.spec_names)
            if (!spec_names.count(sn)) throw ConfigError(where + ": unknown spec " + sn);
        if (m.kind == MeshKind::full_mesh) {
            if (m.members.size() < 2) throw ConfigError(where + ": needs at least 2 members");
            for (const auto& h : m.members)
                if (!host_ids.count(h)) throw ConfigError(where + ": unknown host " + h);
        } else {
            if (m.pairs.empty()) throw ConfigError(where + ": no pairs listed");
            for (const auto& [a, b] : m.pairs) {
                if (!host_ids.count(a)) throw ConfigError(where + ": unknown host " + a);
                if (!host_ids.count(b)) throw ConfigError(where + ": unknown host " + b);
                if (a == b) throw ConfigError(where + ": pair " + a + ":" + b + " is a self test");
            }
        }
    }
}

inline MeshConfig load_mesh_config(const std::string& text) {
    MeshConfig cfg = parse_mesh_config(text);
    validate_config(cfg);
    return cfg;
}

// full_mesh of n members expands to all n(n-1) ordered pairs; both directions
// matter because routes may be asymmetric.
inline std::vector<std::pair<std::string, std::string>> expand_mesh(const MeshDefinition& mesh) {
    std::vector<std::pair<std::string, std::string>> out;
    if (mesh.kind == MeshKind::disjoint) return mesh.pairs;
    for (const auto& src : mesh.members)
        for (const auto& dst : mesh.members)
            if (src != dst) out.emplace_back(src, dst);
    return out;
}

struct ScheduleEntry {
    std::string src;
    std::string dst;
    std::string spec_name;
    Tool tool = Tool::latency;
    SimTime first_start_ms = 0;
    SimTime repeat_ms = 0;
    SimTime duration_ms = 0;  // nominal occupancy of one occurrence
};

struct WorkItem {
    std::string src;
    std::string dst;
    const TestSpec* spec = nullptr;
};

namespace detail {

inline SimTime lcm_ms(SimTime a, SimTime b) {
    __int128 g = std::gcd(a, b);
    __int128 l = static_cast<__int128>(a) / g * b;
    if (l > static_cast<__int128>(1) << 50)
        throw ScheduleError("schedule hyperperiod too large to verify");
    return static_cast<SimTime>(l);
}

struct HostTimeline {
    std::vector<std::pair<SimTime, SimTime>> busy;  // [start, end)

    bool free_for(SimTime start, SimTime end) const {
        for (const auto& [s, e] : busy)
            if (start < e && s < end) return false;
        return true;
    }

    void occupy(SimTime start, SimTime end) { busy.emplace_back(start, end); }
};

}  // namespace detail

// Deterministic schedule construction. Latency and trace entries start
// immediately with per-pair phase offsets spreading probe load inside each
// spec group. Throughput entries are placed greedy first-fit on per-host busy
// timelines over one hyperperiod so no host is ever in two overlapping
// throughput occurrences; when a host's total busy time cannot fit its repeat
// interval the schedule is infeasible.
inline std::vector<ScheduleEntry> build_schedule(const std::vector<WorkItem>& items) {
    std::vector<ScheduleEntry> schedule;

    // Phase-offset entries, grouped by spec in input order.
    std::map<std::string, std::vector<const WorkItem*>> light_groups;
    std::vector<const WorkItem*> heavy;
    for (const auto& item : items) {
        if (item.spec->tool == Tool::throughput) heavy.push_back(&item);
        else light_groups[item.spec->name].push_back(&item);
    }
    for (auto& [spec_name, group] : light_groups) {
        const SimTime repeat_ms = group.front()->spec->repeat_interval_s * 1000;
        for (std::size_t idx = 0; idx < group.size(); ++idx) {
            const WorkItem& it = *group[idx];
            schedule.push_back({it.src, it.dst, it.spec->name, it.spec->tool,
                                static_cast<SimTime>(idx) * repeat_ms /
                                    static_cast<SimTime>(group.size()),
                                repeat_ms, it.spec->nominal_duration_ms()});
        }
    }

    if (!heavy.empty()) {
        std::sort(heavy.begin(), heavy.end(), [](const WorkItem* a, const WorkItem* b) {
            return std::tie(a->src, a->dst, a->spec->name) <
                   std::tie(b->src, b->dst, b->spec->name);
        });
        SimTime hyper = 1;
        for (const WorkItem* it : heavy)
            hyper = detail::lcm_ms(hyper, it->spec->repeat_interval_s * 1000);

        // Busy-time bound: a host with more committed throughput time than
        // the hyperperiod can never be scheduled without overlap.
        std::map<std::string, SimTime> committed;
        for (const WorkItem* it : heavy) {
            SimTime occurrences = hyper / (it->spec->repeat_interval_s * 1000);
            SimTime busy = occurrences * it->spec->duration_s * 1000;
            committed[it->src] += busy;
            committed[it->dst] += busy;
        }
        for (const auto& [host, busy] : committed)
            if (busy > hyper)
                throw ScheduleError("infeasible schedule: host " + host +
                                    " needs " + std::to_string(busy / 1000) +
                                    "s of throughput time per " + std::to_string(hyper / 1000) +
                                    "s hyperperiod");

        std::map<std::string, detail::HostTimeline> timelines;
        for (const WorkItem* it : heavy) {
            const SimTime repeat_ms = it->spec->repeat_interval_s * 1000;
            const SimTime duration_ms = it->spec->duration_s * 1000;
            auto& src_tl = timelines[it->src];
            auto& dst_tl = timelines[it->dst];
            bool placed = false;
            for (SimTime offset = 0; offset + duration_ms <= repeat_ms && !placed;
                 offset += 1000) {
                bool fits = true;
                for (SimTime occ = offset; occ < hyper && fits; occ += repeat_ms)
                    fits = src_tl.free_for(occ, occ + duration_ms) &&
                           dst_tl.free_for(occ, occ + duration_ms);
                if (!fits) continue;
                for (SimTime occ = offset; occ < hyper; occ += repeat_ms) {
                    src_tl.occupy(occ, occ + duration_ms);
                    dst_tl.occupy(occ, occ + duration_ms);
                }
                schedule.push_back({it->src, it->dst, it->spec->name, Tool::throughput,
                                    offset, repeat_ms, duration_ms});
                placed = true;
            }
            if (!placed)
                throw ScheduleError("infeasible schedule: no conflict-free slot for throughput " +
                                    it->src + "->" + it->dst + " (" + it->spec->name + ")");
        }
    }

    std::sort(schedule.begin(), schedule.end(), [](const auto& a, const auto& b) {
        return std::tie(a.spec_name, a.src, a.dst) < std::tie(b.spec_name, b.src, b.dst);
    });
    return schedule;
}

// Expands every mesh in the config and schedules the union. A (src,dst,spec)
// triple listed by several meshes is scheduled once.
inline std::vector<ScheduleEntry> build_schedule(const MeshConfig& cfg) {
    std::vector<WorkItem> items;
    std::set<std::tuple<std::string, std::string, std::string>> seen;
    for (const auto& mesh : cfg.meshes) {
        auto pairs = expand_mesh(mesh);
        for (const auto& spec_name : mesh.spec_names) {
            const TestSpec* spec = cfg.find_spec(spec_name);
            if (!spec) throw ConfigError("mesh " + mesh.name + ": unknown spec " + spec_name);
            for (const auto& [src, dst] : pairs)
                if (seen.insert({src, dst, spec_name}).second) items.push_back({src, dst, spec});
        }
    }
    return build_schedule(items);
}

struct DueOccurrence {
    const ScheduleEntry* entry = nullptr;
    SimTime at = 0;
};

// Occurrences of the arithmetic progressions falling in [now, now+horizon).
inline std::vector<DueOccurrence> next_due(const std::vector<ScheduleEntry>& schedule,
                                           SimTime now, SimTime horizon_ms) {
    if (horizon_ms <= 0) throw ConfigError("next_due horizon must be > 0");
    std::vector<DueOccurrence> due;
    for (const auto& entry : schedule) {
        SimTime k = 0;
        if (now > entry.first_start_ms)
            k = (now - entry.first_start_ms + entry.repeat_ms - 1) / entry.repeat_ms;
        for (SimTime occ = entry.first_start_ms + k * entry.repeat_ms; occ < now + horizon_ms;
             occ += entry.repeat_ms)
            due.push_back({&entry, occ});
    }
    std::sort(due.begin(), due.end(), [](const DueOccurrence& a, const DueOccurrence& b) {
        return std::tie(a.at, a.entry->src, a.entry->dst, a.entry->spec_name) <
               std::tie(b.at, b.entry->src, b.entry->dst, b.entry->spec_name);
    });
    return due;
}

}  // namespace meshmon::meshconfig
