#pragma once

#include <ctime>
#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "meshmon/common.hpp"

namespace meshmon::jobsingest {

struct GeoAnnotation {
    std::string region;
    double latitude = 0.0;
    double longitude = 0.0;
    std::string matched_prefix;  // the winning CIDR, for worker_prefix grouping
};

// One parsed job file-transfer TCP-statistics record.
struct JobTransferRecord {
    std::int64_t timestamp_ms = 0;
    std::string submit_host;
    std::string worker_addr;
    std::uint32_t worker_ip = 0;
    std::uint64_t bytes = 0;
    std::int64_t lost_pkts = 0;
    std::int64_t reorders = 0;
    double duration_s = 0.0;
    std::optional<GeoAnnotation> geo;
};

inline std::uint32_t parse_ipv4(const std::string& s, const std::string& what) {
    auto parts = split(s, '.');
    if (parts.size() != 4) throw ConfigError(what + ": invalid IPv4 address '" + s + "'");
    std::uint32_t addr = 0;
    for (const auto& p : parts) {
        if (p.empty() || p.size() > 3)
            throw ConfigError(what + ": invalid IPv4 address '" + s + "'");
        std::int64_t octet = parse_int(p, what);
        if (octet < 0 || octet > 255)
            throw ConfigError(what + ": invalid IPv4 address '" + s + "'");
        addr = (addr << 8) | static_cast<std::uint32_t>(octet);
    }
    return addr;
}

inline std::int64_t parse_iso8601_utc_ms(const std::string& s) {
    std::tm tm{};
    int y, mo, d, h, mi, sec;
    char z;
    if (std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%c", &y, &mo, &d, &h, &mi, &sec, &z) != 7 ||
        z != 'Z')
        throw ConfigError("ts: expected YYYY-MM-DDThh:mm:ssZ, got '" + s + "'");
    tm.tm_year = y - 1900;
    tm.tm_mon = mo - 1;
    tm.tm_mday = d;
    tm.tm_hour = h;
    tm.tm_min = mi;
    tm.tm_sec = sec;
    std::time_t t = timegm(&tm);
    return static_cast<std::int64_t>(t) * 1000;
}

inline std::string format_iso8601_utc(std::int64_t ms) {
    std::time_t t = ms / 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Job log line grammar: space-separated key=value with required keys
//   ts submit worker bytes lost_pkts reorders duration_s
// Unknown keys are ignored (counted via *unknown_keys when given); a missing
// required key or a negative count is an error naming the field.
inline JobTransferRecord parse_line(const std::string& line, int* unknown_keys = nullptr) {
    std::map<std::string, std::string> kv;
    for (const auto& tok : split_ws(line)) {
        auto eq = tok.find('=');
        if (eq == std::string::npos)
            throw ConfigError("expected key=value, got '" + tok + "'");
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    static const char* required[] = {"ts",        "submit",   "worker",
                                     "bytes",     "lost_pkts", "reorders",
                                     "duration_s"};
    for (const char* key : required)
        if (!kv.count(key)) throw ConfigError(std::string("missing required key ") + key);
    for (const auto& [k, v] : kv) {
        bool known = false;
        for (const char* key : required) known = known || k == key;
        if (!known && unknown_keys) ++*unknown_keys;
    }

    JobTransferRecord rec;
    rec.timestamp_ms = parse_iso8601_utc_ms(kv["ts"]);
    rec.submit_host = kv["submit"];
    rec.worker_addr = kv["worker"];
    rec.worker_ip = parse_ipv4(rec.worker_addr, "worker");
    std::int64_t bytes = parse_int(kv["bytes"], "bytes");
    if (bytes < 0) throw ConfigError("bytes: must be >= 0, got " + kv["bytes"]);
    rec.bytes = static_cast<std::uint64_t>(bytes);
    rec.lost_pkts = parse_int(kv["lost_pkts"], "lost_pkts");
    if (rec.lost_pkts < 0) throw ConfigError("lost_pkts: must be >= 0, got " + kv["lost_pkts"]);
    rec.reorders = parse_int(kv["reorders"], "reorders");
    if (rec.reorders < 0) throw ConfigError("reorders: must be >= 0, got " + kv["reorders"]);
    rec.duration_s = parse_double(kv["duration_s"], "duration_s");
    if (!(rec.duration_s > 0)) throw ConfigError("duration_s: must be > 0, got " + kv["duration_s"]);
    return rec;
}

// Canonical serialization: required keys in fixed order, duration in shortest
// round-trip decimal form. serialize(parse_line(l)) == l for canonical lines.
inline std::string serialize(const JobTransferRecord& rec) {
    std::string out = "ts=" + format_iso8601_utc(rec.timestamp_ms);
    out += " submit=" + rec.submit_host;
    out += " worker=" + rec.worker_addr;
    out += " bytes=" + std::to_string(rec.bytes);
    out += " lost_pkts=" + std::to_string(rec.lost_pkts);
    out += " reorders=" + std::to_string(rec.reorders);
    out += " duration_s=" + format_shortest(rec.duration_s);
    return out;
}

struct GeoEntry {
    std::uint32_t prefix = 0;  // network-order bits, host byte order value
    int prefix_len = 0;        // 0..32
    std::string cidr;          // original "a.b.c.d/len" spelling
    std::string region;
    double latitude = 0.0;
    double longitude = 0.0;
};

inline GeoEntry parse_geo_entry(const std::string& csv_line) {
    auto fields = split(csv_line, ',');
    if (fields.size() != 4)
        throw ConfigError("geo entry needs prefix,region,lat,lon: '" + csv_line + "'");
    GeoEntry e;
    e.cidr = std::string(trim(fields[0]));
    auto slash = e.cidr.find('/');
    if (slash == std::string::npos) throw ConfigError("geo prefix missing /len: '" + e.cidr + "'");
    e.prefix = parse_ipv4(e.cidr.substr(0, slash), "geo prefix");
    e.prefix_len = static_cast<int>(parse_int(e.cidr.substr(slash + 1), "geo prefix length"));
    if (e.prefix_len < 0 || e.prefix_len > 32)
        throw ConfigError("geo prefix length out of range: '" + e.cidr + "'");
    // Normalize: zero the host bits so equality checks are well defined.
    if (e.prefix_len < 32) e.prefix &= ~((1u << (32 - e.prefix_len)) - 1u);
    e.region = std::string(trim(fields[1]));
    e.latitude = parse_double(std::string(trim(fields[2])), "geo lat");
    e.longitude = parse_double(std::string(trim(fields[3])), "geo lon");
    return e;
}

// Longest-prefix-match table over a binary trie on address bits.
class GeoTable {
  public:
    void add(GeoEntry entry) {
        std::size_t node = 0;
        for (int bit = 0; bit < entry.prefix_len; ++bit) {
            int b = (entry.prefix >> (31 - bit)) & 1;
            std::size_t child = nodes_[node].child[b];
            if (child == 0) {
                child = nodes_.size();
                nodes_.emplace_back();
                nodes_[node].child[b] = child;
            }
            node = child;
        }
        if (nodes_[node].entry != kNoEntry)
            throw ConfigError("duplicate geo prefix " + entry.cidr);
        nodes_[node].entry = entries_.size();
        entries_.push_back(std::move(entry));
    }

    static GeoTable from_csv(const std::string& text) {
        GeoTable table;
        std::size_t pos = 0;
        int lineno = 0;
        while (pos <= text.size()) {
            std::size_t nl = text.find('\n', pos);
            std::string line = text.substr(pos, nl == std::string::npos ? nl : nl - pos);
            pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
            ++lineno;
            auto stripped = trim(line);
            if (stripped.empty() || stripped.front() == '#') continue;
            try {
                table.add(parse_geo_entry(std::string(stripped)));
            } catch (const ConfigError& e) {
                throw ConfigError("geo table line " + std::to_string(lineno) + ": " + e.what());
            }
        }
        return table;
    }

    // Deepest entry on the trie walk wins: longest matching prefix.
    const GeoEntry* lookup(std::uint32_t addr) const {
        const GeoEntry* best = nullptr;
        std::size_t node = 0;
        if (nodes_[0].entry != kNoEntry) best = &entries_[nodes_[0].entry];
        for (int bit = 0; bit < 32; ++bit) {
            int b = (addr >> (31 - bit)) & 1;
            std::size_t child = nodes_[node].child[b];
            if (child == 0) break;
            node = child;
            if (nodes_[node].entry != kNoEntry) best = &entries_[nodes_[node].entry];
        }
        return best;
    }

    const std::vector<GeoEntry>& entries() const { return entries_; }

  private:
    static constexpr std::size_t kNoEntry = static_cast<std::size_t>(-1);
    struct Node {
        std::size_t child[2] = {0, 0};
        std::size_t entry = kNoEntry;
    };
    std::vector<Node> nodes_{1};
    std::vector<GeoEntry> entries_;
};

inline void geo_annotate(JobTransferRecord& rec, const GeoTable& table) {
    const GeoEntry* hit = table.lookup(rec.worker_ip);
    if (!hit) {
        rec.geo.reset();
        return;
    }
    rec.geo = GeoAnnotation{hit->region, hit->latitude, hit->longitude, hit->cidr};
}

enum class GroupBy { region, worker_prefix };

struct AggregateRow {
    std::string group;
    std::uint64_t total_bytes = 0;
    std::uint64_t record_count = 0;
};

constexpr const char* kUnlocatedGroup = "unlocated";

// Exact integer byte totals per group, unlocated records pooled under the
// reserved key, largest totals first.
inline std::vector<AggregateRow> aggregate_bytes_by_destination(
    const std::vector<JobTransferRecord>& records, GroupBy group_by) {
    std::map<std::string, AggregateRow> groups;
    for (const auto& rec : records) {
        std::string key = kUnlocatedGroup;
        if (rec.geo)
            key = group_by == GroupBy::region ? rec.geo->region : rec.geo->matched_prefix;
        auto& row = groups[key];
        row.group = key;
        row.total_bytes += rec.bytes;
        row.record_count += 1;
    }
    std::vector<AggregateRow> out;
    for (auto& [_, row] : groups) out.push_back(std::move(row));
    std::sort(out.begin(), out.end(), [](const AggregateRow& a, const AggregateRow& b) {
        if (a.total_bytes != b.total_bytes) return a.total_bytes > b.total_bytes;
        return a.group < b.group;
    });
    return out;
}

}  // namespace meshmon::jobsingest
