#pragma once

#include <algorithm>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "meshmon/envelope.hpp"
#include "meshmon/hash.hpp"

namespace meshmon::store {

enum class AppendOutcome { accepted, duplicate };

struct QueryFilter {
    std::optional<std::string> src;
    std::optional<std::string> dst;
    std::optional<MetricKind> kind;
    SimTime t0 = 0;
    SimTime t1 = std::numeric_limits<SimTime>::max();

    void validate() const {
        if (t0 > t1) throw ConfigError("query filter: t0 must be <= t1");
    }

    bool matches(const MeasurementEnvelope& env) const {
        if (src && env.src != *src) return false;
        if (dst && env.dst != *dst) return false;
        if (kind && env.kind != *kind) return false;
        return env.start_time >= t0 && env.start_time < t1;
    }
};

// Append log + in-memory index. Appends are idempotent by envelope id and
// serialized internally; queries see a point-in-time view. When a log path is
// set, every accepted append writes one wire line (the log records history;
// prune only changes the queryable view).
class StoreBase {
  public:
    StoreBase() = default;

    void open_log(const std::string& path) {
        std::lock_guard lock(mu_);
        log_.open(path, std::ios::out | std::ios::trunc | std::ios::binary);
        if (!log_) throw IoError("cannot open store log " + path);
        log_path_ = path;
    }

    AppendOutcome append(const MeasurementEnvelope& env) {
        std::lock_guard lock(mu_);
        if (by_id_.count(env.id)) return AppendOutcome::duplicate;
        by_id_.emplace(env.id, rows_.size());
        rows_.push_back(env);
        ++accepted_;
        if (log_.is_open()) {
            log_ << to_wire_line(env) << '\n';
            log_.flush();
            if (!log_) throw IoError("store log write failed: " + log_path_);
        }
        return AppendOutcome::accepted;
    }

    std::vector<MeasurementEnvelope> query(const QueryFilter& f) const {
        f.validate();
        std::lock_guard lock(mu_);
        std::vector<MeasurementEnvelope> out;
        for (const auto& env : rows_)
            if (!env.id.empty() && f.matches(env)) out.push_back(env);
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
            return a.start_time != b.start_time ? a.start_time < b.start_time : a.id < b.id;
        });
        return out;
    }

    std::size_t cardinality() const {
        std::lock_guard lock(mu_);
        return by_id_.size();
    }

    std::size_t accepted_count() const {
        std::lock_guard lock(mu_);
        return accepted_;
    }

    std::optional<SimTime> latest_stored_for_agent(const std::string& agent) const {
        std::lock_guard lock(mu_);
        std::optional<SimTime> latest;
        for (const auto& env : rows_)
            if (!env.id.empty() && env.agent == agent && (!latest || env.stored_at > *latest))
                latest = env.stored_at;
        return latest;
    }

    // Latest pipeline activity; the CLI uses it as "now" when no flag is given.
    std::optional<SimTime> latest_collected_at() const {
        std::lock_guard lock(mu_);
        std::optional<SimTime> latest;
        for (const auto& env : rows_)
            if (!env.id.empty() && (!latest || env.collected_at > *latest))
                latest = env.collected_at;
        return latest;
    }

  protected:
    // Removes rows failing keep(); returns how many went away.
    template <typename Keep>
    std::size_t remove_if_not(Keep keep) {
        std::lock_guard lock(mu_);
        std::size_t removed = 0;
        for (auto& env : rows_) {
            if (env.id.empty() || keep(env)) continue;
            by_id_.erase(env.id);
            env.id.clear();  // tombstone; rows_ keeps append order stable
            ++removed;
        }
        pruned_ += removed;
        return removed;
    }

    mutable std::mutex mu_;
    std::vector<MeasurementEnvelope> rows_;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::size_t accepted_ = 0;
    std::size_t pruned_ = 0;
    std::ofstream log_;
    std::string log_path_;

  public:
    std::size_t pruned_count() const {
        std::lock_guard lock(mu_);
        return pruned_;
    }
};

// Windowed store: keeps the trailing retention window of measurement start
// times; prune drops everything older.
class ShortTermStore : public StoreBase {
  public:
    explicit ShortTermStore(SimTime window_ms) : window_ms_(window_ms) {
        if (window_ms <= 0) throw ConfigError("short-term window must be > 0");
    }

    SimTime window_ms() const { return window_ms_; }

    std::size_t prune(SimTime now) {
        SimTime cutoff = now - window_ms_;
        return remove_if_not([cutoff](const MeasurementEnvelope& e) {
            return e.start_time >= cutoff;
        });
    }

  private:
    SimTime window_ms_;
};

struct SnapshotManifest {
    std::size_t count = 0;
    std::string checksum;  // fnv128 over the record lines
};

// Unbounded archive. No prune exists on this type; the snapshot round-trips
// through an empty store with a checksummed manifest.
class LongTermStore : public StoreBase {
  public:
    SnapshotManifest export_snapshot(const std::string& path) const {
        std::lock_guard lock(mu_);
        std::ofstream out(path, std::ios::out | std::ios::trunc | std::ios::binary);
        if (!out) throw IoError("cannot open snapshot " + path);
        std::string body;
        std::size_t count = 0;
        for (const auto& env : rows_) {
            if (env.id.empty()) continue;
            body += to_wire_line(env);
            body += '\n';
            ++count;
        }
        SnapshotManifest manifest{count, fnv128_hex(body)};
        out << body;
        out << "manifest count=" << manifest.count << " checksum=" << manifest.checksum << '\n';
        if (!out) throw IoError("snapshot write failed: " + path);
        return manifest;
    }

    // Fills an empty store from a snapshot, verifying the manifest first.
    static void import_snapshot(const std::string& path, LongTermStore& into) {
        std::ifstream in(path, std::ios::in | std::ios::binary);
        if (!in) throw IoError("cannot open snapshot " + path);
        std::vector<std::string> lines;
        std::string line;
        while (std::getline(in, line)) lines.push_back(line);
        if (lines.empty()) throw IoError("snapshot " + path + " has no manifest");
        auto manifest_toks = split_ws(lines.back());
        if (manifest_toks.size() != 3 || manifest_toks[0] != "manifest")
            throw IoError("snapshot " + path + " has no manifest");
        std::size_t count = parse_uint(manifest_toks[1].substr(manifest_toks[1].find('=') + 1), "count");
        std::string checksum = manifest_toks[2].substr(manifest_toks[2].find('=') + 1);

        std::string body;
        for (std::size_t i = 0; i + 1 < lines.size(); ++i) {
            body += lines[i];
            body += '\n';
        }
        if (lines.size() - 1 != count)
            throw IoError("snapshot " + path + ": manifest count mismatch");
        if (fnv128_hex(body) != checksum)
            throw IoError("snapshot " + path + ": checksum mismatch");

        for (std::size_t i = 0; i + 1 < lines.size(); ++i) into.append(parse_wire_line(lines[i]));
    }
};

// Rebuilds a store's queryable state from an append log (one wire line per
// record). Used by the CLI to query a finished run.
template <typename Store>
inline void load_log(Store& store, const std::string& path) {
    std::ifstream in(path, std::ios::in | std::ios::binary);
    if (!in) throw IoError("cannot open store log " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            store.append(parse_wire_line(line));
        } catch (const std::runtime_error& e) {
            throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

}  // namespace meshmon::store
