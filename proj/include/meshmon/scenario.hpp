#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "meshmon/agent.hpp"
#include "meshmon/agent_api.hpp"
#include "meshmon/analytics.hpp"
#include "meshmon/collector.hpp"
#include "meshmon/meshconfig.hpp"
#include "meshmon/netsim.hpp"
#include "meshmon/store.hpp"

namespace meshmon::scenario {

struct FaultEvent {
    enum class Kind { route_change, link_loss, link_bandwidth, agent_halt };
    Kind kind = Kind::link_loss;
    SimTime at_ms = 0;
    std::string a;  // route src node / link from node / halted host
    std::string b;  // route dst node / link to node
    std::vector<std::string> route;
    double value = 0.0;  // loss fraction or bandwidth
};

// Thresholds shared by the runner, the alert rules and the matrix renderer;
// one config section, never duplicated.
struct AnalyticsConfig {
    double loss_abs_threshold = 0.02;
    double loss_mad_multiplier = 5.0;
    double throughput_rel_drop = 0.5;
    double freshness_k = 3.0;
    std::optional<int> expected_mtu;
    int baseline_window = 20;
};

struct Scenario {
    netsim::TopologySpec topology;
    meshconfig::MeshConfig mesh;
    SimTime poll_period_ms = 60000;
    SimTime short_window_ms = 15552000000;  // six 30-day months of simulated time
    AnalyticsConfig analytics;
    std::vector<FaultEvent> faults;
};

// Scenario document grammar (docs/formats.md):
//   topology <path>            mesh <path>
//   poll_period_s <int>        short_window_s <int>
//   loss_abs_threshold <f>     loss_mad_multiplier <f>
//   throughput_rel_drop <f>    freshness_k <f>
//   expected_mtu <int>         baseline_window <int>
//   fault route_change <src_node> <dst_node> via=<n1,n2,...> at_s=<t>
//   fault link_loss <from> <to> loss=<f> at_s=<t>
//   fault link_bandwidth <from> <to> mbps=<f> at_s=<t>
//   fault agent_halt <host> at_s=<t>
inline Scenario parse_scenario(const std::string& text, const std::filesystem::path& base_dir) {
    auto read_file = [&](const std::string& rel) {
        std::filesystem::path p = base_dir / rel;
        std::ifstream in(p);
        if (!in) throw IoError("cannot open " + p.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };

    Scenario sc;
    bool have_topology = false, have_mesh = false;
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
        const std::string where = "scenario line " + std::to_string(lineno);
        try {
            if (tok[0] == "topology" && tok.size() == 2) {
                sc.topology = netsim::build_topology(read_file(tok[1]));
                have_topology = true;
            } else if (tok[0] == "mesh" && tok.size() == 2) {
                sc.mesh = meshconfig::load_mesh_config(read_file(tok[1]));
                have_mesh = true;
            } else if (tok[0] == "poll_period_s" && tok.size() == 2) {
                sc.poll_period_ms = parse_int(tok[1], tok[0]) * 1000;
            } else if (tok[0] == "short_window_s" && tok.size() == 2) {
                sc.short_window_ms = parse_int(tok[1], tok[0]) * 1000;
            } else if (tok[0] == "loss_abs_threshold" && tok.size() == 2) {
                sc.analytics.loss_abs_threshold = parse_double(tok[1], tok[0]);
            } else if (tok[0] == "loss_mad_multiplier" && tok.size() == 2) {
                sc.analytics.loss_mad_multiplier = parse_double(tok[1], tok[0]);
            } else if (tok[0] == "throughput_rel_drop" && tok.size() == 2) {
                sc.analytics.throughput_rel_drop = parse_double(tok[1], tok[0]);
            } else if (tok[0] == "freshness_k" && tok.size() == 2) {
                sc.analytics.freshness_k = parse_double(tok[1], tok[0]);
            } else if (tok[0] == "expected_mtu" && tok.size() == 2) {
                sc.analytics.expected_mtu = static_cast<int>(parse_int(tok[1], tok[0]));
            } else if (tok[0] == "baseline_window" && tok.size() == 2) {
                sc.analytics.baseline_window = static_cast<int>(parse_int(tok[1], tok[0]));
            } else if (tok[0] == "fault") {
                if (tok.size() < 3) throw ConfigError("fault needs a kind and arguments");
                FaultEvent f;
                auto kv_arg = [&](const std::string& t, const char* key) -> std::string {
                    std::string prefix = std::string(key) + "=";
                    if (t.rfind(prefix, 0) != 0)
                        throw ConfigError("expected " + prefix + "..., got '" + t + "'");
                    return t.substr(prefix.size());
                };
                if (tok[1] == "route_change" && tok.size() == 6) {
                    f.kind = FaultEvent::Kind::route_change;
                    f.a = tok[2];
                    f.b = tok[3];
                    f.route = split(kv_arg(tok[4], "via"), ',');
                    f.at_ms = parse_int(kv_arg(tok[5], "at_s"), "at_s") * 1000;
                } else if (tok[1] == "link_loss" && tok.size() == 6) {
                    f.kind = FaultEvent::Kind::link_loss;
                    f.a = tok[2];
                    f.b = tok[3];
                    f.value = parse_double(kv_arg(tok[4], "loss"), "loss");
                    f.at_ms = parse_int(kv_arg(tok[5], "at_s"), "at_s") * 1000;
                } else if (tok[1] == "link_bandwidth" && tok.size() == 6) {
                    f.kind = FaultEvent::Kind::link_bandwidth;
                    f.a = tok[2];
                    f.b = tok[3];
                    f.value = parse_double(kv_arg(tok[4], "mbps"), "mbps");
                    f.at_ms = parse_int(kv_arg(tok[5], "at_s"), "at_s") * 1000;
                } else if (tok[1] == "agent_halt" && tok.size() == 4) {
                    f.kind = FaultEvent::Kind::agent_halt;
                    f.a = tok[2];
                    f.at_ms = parse_int(kv_arg(tok[3], "at_s"), "at_s") * 1000;
                } else {
                    throw ConfigError("unknown fault '" + tok[1] + "' or wrong argument count");
                }
                sc.faults.push_back(std::move(f));
            } else {
                throw ConfigError("unknown directive '" + tok[0] + "'");
            }
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }
    if (!have_topology) throw ConfigError("scenario: topology <path> is required");
    if (!have_mesh) throw ConfigError("scenario: mesh <path> is required");

    // Hosts must sit on nodes that exist at scenario start.
    for (const auto& h : sc.mesh.hosts)
        if (!sc.topology.nodes.count(h.node))
            throw ConfigError("host " + h.id + ": node " + h.node + " not in topology");
    return sc;
}

inline Scenario load_scenario(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open scenario " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str(), file.parent_path());
}

struct RunSummary {
    std::size_t envelopes_long = 0;
    std::size_t envelopes_short = 0;
    std::size_t polls = 0;
    std::size_t poll_errors = 0;
    int malformed_skipped = 0;
    std::vector<analytics::Alert> alerts;
};

// Shortest own-test cadence per source host, the freshness yardstick.
inline std::map<std::string, SimTime> shortest_repeat_by_host(
    const std::vector<meshconfig::ScheduleEntry>& schedule) {
    std::map<std::string, SimTime> out;
    for (const auto& e : schedule) {
        auto [it, inserted] = out.try_emplace(e.src, e.repeat_ms);
        if (!inserted) it->second = std::min(it->second, e.repeat_ms);
    }
    return out;
}

// Single-process deterministic pipeline: simulated time advances through an
// event queue (faults, test starts, archive completions, collector polls);
// identical scenarios produce byte-identical store and alert logs.
class Runner {
  public:
    Runner(Scenario sc, std::string out_dir = "")
        : sc_(std::move(sc)),
          topo_(sc_.topology),
          short_store_(sc_.short_window_ms),
          schedule_(meshconfig::build_schedule(sc_.mesh)) {
        if (!out_dir.empty()) {
            std::filesystem::create_directories(out_dir);
            short_store_.open_log(out_dir + "/short_term.log");
            long_store_.open_log(out_dir + "/long_term.log");
            alert_log_.open(out_dir + "/alerts.log", std::ios::out | std::ios::trunc);
            if (!alert_log_) throw IoError("cannot open " + out_dir + "/alerts.log");
        }
        for (const auto& h : sc_.mesh.hosts)
            agents_.emplace(h.id, std::make_unique<agent::Agent>(h.id, h.node, topo_.seed));
        bus_.subscribe({"latency", "throughput", "path"},
                       [this](const MeasurementEnvelope& env) {
                           short_store_.append(env);
                           long_store_.append(env);
                       });
        for (const auto& h : sc_.mesh.hosts) cursors_[h.id] = {h.id, 0};
    }

    RunSummary run(SimTime duration_ms) {
        build_events(duration_ms);
        while (!events_.empty()) {
            Event ev = events_.top();
            events_.pop();
            switch (ev.type) {
                case EventType::fault: apply_fault(sc_.faults[ev.index]); break;
                case EventType::archive: deliver_archive(ev.index); break;
                case EventType::test: run_test(ev); break;
                case EventType::poll: run_poll(ev.time); break;
            }
        }
        RunSummary summary;
        summary.envelopes_long = long_store_.cardinality();
        summary.envelopes_short = short_store_.cardinality();
        summary.polls = polls_;
        summary.poll_errors = poll_errors_;
        summary.malformed_skipped = malformed_;
        summary.alerts = alerts_;
        return summary;
    }

    const store::ShortTermStore& short_store() const { return short_store_; }
    const store::LongTermStore& long_store() const { return long_store_; }
    store::LongTermStore& long_store() { return long_store_; }
    const std::vector<analytics::Alert>& alerts() const { return alerts_; }
    const std::vector<meshconfig::ScheduleEntry>& schedule() const { return schedule_; }
    agent::Agent& agent_for(const std::string& host) { return *agents_.at(host); }

    // Invoked after every completed poll cycle; lets callers observe the
    // pipeline mid-run (per-poll invariant checks, progress reporting).
    void set_post_poll_hook(std::function<void(SimTime)> hook) { post_poll_ = std::move(hook); }

  private:
    enum class EventType { fault = 0, archive = 1, test = 2, poll = 3 };

    struct Event {
        SimTime time = 0;
        EventType type = EventType::test;
        std::size_t index = 0;  // fault index / pending-archive index / schedule index
        std::uint64_t seq = 0;  // insertion order breaks remaining ties

        bool operator>(const Event& o) const {
            if (time != o.time) return time > o.time;
            if (type != o.type) return static_cast<int>(type) > static_cast<int>(o.type);
            return seq > o.seq;
        }
    };

    struct PendingArchive {
        std::string src_host;
        std::string dst_host;
        SimTime start = 0;
        SimTime stored_at = 0;
        Measurement measurement;
    };

    struct PairState {
        std::size_t latency_seen = 0;
        int loss_level = 0;  // 0 none, 1 warn, 2 critical
        std::size_t throughput_seen = 0;
        bool degraded = false;
        std::size_t route_events_emitted = 0;
        std::size_t complete_traces_seen = 0;
        bool mtu_violated = false;
    };

    void build_events(SimTime duration_ms) {
        std::uint64_t seq = 0;
        for (std::size_t i = 0; i < sc_.faults.size(); ++i)
            if (sc_.faults[i].at_ms < duration_ms)
                events_.push({sc_.faults[i].at_ms, EventType::fault, i, seq++});
        // next_due is already deterministic; occurrence order becomes seq order.
        for (const auto& due : meshconfig::next_due(schedule_, 0, duration_ms)) {
            std::size_t idx = static_cast<std::size_t>(due.entry - schedule_.data());
            events_.push({due.at, EventType::test, idx, seq++});
        }
        for (SimTime t = sc_.poll_period_ms; t <= duration_ms; t += sc_.poll_period_ms)
            events_.push({t, EventType::poll, 0, seq++});
        archive_seq_base_ = seq;
    }

    void apply_fault(const FaultEvent& f) {
        switch (f.kind) {
            case FaultEvent::Kind::route_change:
                topo_ = netsim::inject_route_change(topo_, f.a, f.b, f.route, f.at_ms);
                break;
            case FaultEvent::Kind::link_loss:
                topo_ = netsim::inject_link_degradation(topo_, f.a, f.b, f.value, f.at_ms);
                break;
            case FaultEvent::Kind::link_bandwidth:
                topo_ = netsim::inject_link_bandwidth(topo_, f.a, f.b, f.value, f.at_ms);
                break;
            case FaultEvent::Kind::agent_halt:
                halted_.insert(f.a);
                break;
        }
    }

    void run_test(const Event& ev) {
        const auto& entry = schedule_[ev.index];
        if (halted_.count(entry.src) || halted_.count(entry.dst)) return;
        const TestSpec* spec = sc_.mesh.find_spec(entry.spec_name);
        const auto* src_host = sc_.mesh.find_host(entry.src);
        const auto* dst_host = sc_.mesh.find_host(entry.dst);
        agent::Agent& src_agent = *agents_.at(entry.src);
        const SimTime t = ev.time;

        Measurement m;
        switch (spec->tool) {
            case Tool::latency:
                m = src_agent.run_latency_test(*spec, dst_host->id, dst_host->node, topo_, t);
                break;
            case Tool::throughput: {
                SimTime end = t + spec->duration_s * 1000;
                src_agent.claim_throughput_slot(t, end);
                agents_.at(entry.dst)->claim_throughput_slot(t, end);
                m = src_agent.run_throughput_test(*spec, dst_host->id, dst_host->node, topo_, t);
                break;
            }
            case Tool::trace:
                m = src_agent.run_path_trace(dst_host->id, dst_host->node, topo_, t,
                                             spec->max_ttl);
                break;
        }
        (void)src_host;
        SimTime stored_at = t + spec->nominal_duration_ms();
        pending_.push_back({entry.src, dst_host->id, t, stored_at, std::move(m)});
        events_.push({stored_at, EventType::archive, pending_.size() - 1,
                      archive_seq_base_ + pending_.size()});
    }

    void deliver_archive(std::size_t index) {
        PendingArchive& p = pending_[index];
        agents_.at(p.src_host)->archive_measurement(p.dst_host, p.start, p.stored_at,
                                                    std::move(p.measurement));
    }

    void run_poll(SimTime now) {
        ++polls_;
        for (auto& [host, cursor] : cursors_) {
            if (halted_.count(host)) {
                ++poll_errors_;  // a halted toolkit is unreachable
                continue;
            }
            agent::InProcessEndpoint endpoint(*agents_.at(host));
            try {
                auto result = collector::poll_agent(cursor, endpoint, now);
                malformed_ += result.malformed_skipped;
                for (const auto& env : result.envelopes) bus_.publish(env);
            } catch (const IoError&) {
                ++poll_errors_;
            }
        }
        short_store_.prune(now);
        evaluate_analytics(now);
        evaluate_freshness(now);
        if (post_poll_) post_poll_(now);
    }

    template <typename Payload>
    std::vector<Payload> series_for(const std::string& src, const std::string& dst,
                                    MetricKind kind) const {
        store::QueryFilter f;
        f.src = src;
        f.dst = dst;
        f.kind = kind;
        std::vector<Payload> out;
        for (const auto& env : short_store_.query(f)) out.push_back(std::get<Payload>(env.payload));
        return out;
    }

    void emit(analytics::Alert alert) {
        if (alert_log_.is_open()) {
            alert_log_ << alert.to_line() << '\n';
            alert_log_.flush();
        }
        alerts_.push_back(std::move(alert));
    }

    void evaluate_analytics(SimTime now) {
        (void)now;
        std::set<std::pair<std::string, std::string>> pairs;
        for (const auto& e : schedule_) pairs.insert({e.src, e.dst});
        const auto& cfg = sc_.analytics;

        for (const auto& [src, dst] : pairs) {
            PairState& state = pair_state_[{src, dst}];

            // Loss: evaluate each newly stored sample against the window of
            // samples before it; alert on level transitions only, so a
            // persistent fault raises one alert, not one per sample.
            auto latency = series_for<LatencySample>(src, dst, MetricKind::latency);
            for (std::size_t i = state.latency_seen; i < latency.size(); ++i) {
                std::size_t w0 = i > static_cast<std::size_t>(cfg.baseline_window)
                                     ? i - static_cast<std::size_t>(cfg.baseline_window)
                                     : 0;
                std::vector<LatencySample> window(latency.begin() + static_cast<std::ptrdiff_t>(w0),
                                                  latency.begin() + static_cast<std::ptrdiff_t>(i));
                auto baseline = analytics::loss_baseline(window);
                auto alert = analytics::detect_loss_anomaly(latency[i], baseline,
                                                            cfg.loss_abs_threshold,
                                                            cfg.loss_mad_multiplier);
                int level = !alert ? 0 : (alert->severity == analytics::Severity::critical ? 2 : 1);
                if (level != 0 && level != state.loss_level) emit(*alert);
                state.loss_level = level;
            }
            state.latency_seen = latency.size();

            // Throughput: latest against the median of its trailing window.
            auto throughput = series_for<ThroughputResult>(src, dst, MetricKind::throughput);
            for (std::size_t i = state.throughput_seen; i < throughput.size(); ++i) {
                std::size_t w0 = i > static_cast<std::size_t>(cfg.baseline_window)
                                     ? i - static_cast<std::size_t>(cfg.baseline_window)
                                     : 0;
                std::vector<ThroughputResult> window(
                    throughput.begin() + static_cast<std::ptrdiff_t>(w0),
                    throughput.begin() + static_cast<std::ptrdiff_t>(i + 1));
                auto alert = analytics::detect_throughput_degradation(window,
                                                                      cfg.throughput_rel_drop);
                bool degraded = alert.has_value();
                if (degraded && !state.degraded) emit(*alert);
                state.degraded = degraded;
            }
            state.throughput_seen = throughput.size();

            // Paths: route changes plus the MTU compliance check.
            auto paths = series_for<PathMeasurement>(src, dst, MetricKind::path);
            auto report = analytics::detect_route_changes(paths);
            for (std::size_t i = state.route_events_emitted; i < report.events.size(); ++i) {
                const auto& event = report.events[i];
                analytics::Alert alert;
                alert.kind = analytics::AlertKind::route_change;
                alert.severity = analytics::Severity::warn;
                alert.subject = src + "->" + dst;
                alert.raised_at = event.time;
                std::string old_hops, new_hops;
                for (const auto& h : event.old_path.hop_list)
                    old_hops += (old_hops.empty() ? "" : ",") + h;
                for (const auto& h : event.new_path.hop_list)
                    new_hops += (new_hops.empty() ? "" : ",") + h;
                alert.evidence = {{"old", event.old_path.signature},
                                  {"new", event.new_path.signature},
                                  {"old_hops", old_hops},
                                  {"new_hops", new_hops},
                                  {"incomplete", std::to_string(report.incomplete_traces)}};
                emit(std::move(alert));
            }
            state.route_events_emitted = std::max(state.route_events_emitted, report.events.size());

            if (cfg.expected_mtu) {
                std::size_t complete_seen = 0;
                for (const auto& pm : paths) {
                    if (!pm.destination_reached) continue;
                    ++complete_seen;
                    if (complete_seen <= state.complete_traces_seen) continue;
                    auto alert = analytics::check_path_mtu(pm, *cfg.expected_mtu);
                    bool violated = alert.has_value();
                    if (violated && !state.mtu_violated) emit(*alert);
                    state.mtu_violated = violated;
                }
                state.complete_traces_seen = complete_seen;
            }
        }
    }

    void evaluate_freshness(SimTime now) {
        auto shortest = shortest_repeat_by_host(schedule_);
        std::map<std::string, std::optional<SimTime>> latest;
        for (const auto& [host, repeat] : shortest) {
            // Grace period: an agent is only judged once its first results
            // could plausibly have been collected.
            if (static_cast<double>(now) <= sc_.analytics.freshness_k * static_cast<double>(repeat))
                continue;
            latest[host] = long_store_.latest_stored_for_agent(host);
        }
        auto alerts = analytics::check_agent_freshness(latest, now, sc_.analytics.freshness_k,
                                                       shortest);
        std::set<std::string> stale_now;
        for (auto& alert : alerts) {
            stale_now.insert(alert.subject);
            if (!stale_agents_.count(alert.subject)) emit(std::move(alert));
        }
        stale_agents_ = std::move(stale_now);
    }

    Scenario sc_;
    netsim::TopologySpec topo_;
    store::ShortTermStore short_store_;
    store::LongTermStore long_store_;
    std::vector<meshconfig::ScheduleEntry> schedule_;
    std::map<std::string, std::unique_ptr<agent::Agent>> agents_;
    std::map<std::string, collector::PollCursor> cursors_;
    collector::Bus bus_;
    std::set<std::string> halted_;
    std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
    std::vector<PendingArchive> pending_;
    std::uint64_t archive_seq_base_ = 0;
    std::map<std::pair<std::string, std::string>, PairState> pair_state_;
    std::set<std::string> stale_agents_;
    std::vector<analytics::Alert> alerts_;
    std::function<void(SimTime)> post_poll_;
    std::ofstream alert_log_;
    std::size_t polls_ = 0;
    std::size_t poll_errors_ = 0;
    int malformed_ = 0;
};

}  // namespace meshmon::scenario
