#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "meshmon/agent_api.hpp"
#include "meshmon/envelope.hpp"

namespace meshmon::collector {

struct PollCursor {
    std::string agent;
    SimTime last_seen = 0;
};

struct PollResult {
    std::vector<MeasurementEnvelope> envelopes;
    int malformed_skipped = 0;
};

// Downloads recent records from one agent. At-least-once: the cursor advances
// to the max stored_at seen, so the boundary record is re-delivered on the
// next poll; downstream dedup absorbs it. An unreachable agent throws IoError
// and leaves the cursor untouched. Malformed records are skipped and counted.
inline PollResult poll_agent(PollCursor& cursor, agent::AgentEndpoint& endpoint, SimTime now) {
    auto lines = endpoint.list_since(cursor.last_seen);
    PollResult result;
    SimTime max_seen = cursor.last_seen;
    for (const auto& line : lines) {
        try {
            MeasurementEnvelope env = parse_wire_line(line);
            if (env.stored_at > max_seen) max_seen = env.stored_at;
            env.collected_at = now;
            result.envelopes.push_back(std::move(env));
        } catch (const ProtocolError&) {
            ++result.malformed_skipped;
        } catch (const ConfigError&) {
            ++result.malformed_skipped;
        }
    }
    cursor.last_seen = max_seen;
    return result;
}

// Topic-based in-process message bus with a retained per-topic log. Topics
// are metric kinds. Delivery is at-least-once: a subscriber that restarts
// resubscribes with its replay cursor and re-receives anything it had not
// acknowledged. Per-topic order from a single publisher is preserved.
class Bus {
  public:
    using Callback = std::function<void(const MeasurementEnvelope&)>;
    using SubscriptionId = int;

    // Per-topic replay position: next retained index to deliver.
    using ReplayCursor = std::map<std::string, std::size_t>;

    SubscriptionId subscribe(std::set<std::string> topics, Callback cb,
                             const ReplayCursor& replay_from = {}) {
        std::lock_guard lock(mu_);
        SubscriptionId id = next_id_++;
        Subscriber sub{std::move(topics), std::move(cb)};
        // Replay retained envelopes the subscriber has not acknowledged yet.
        for (const auto& topic : sub.topics) {
            auto it = retained_.find(topic);
            if (it == retained_.end()) continue;
            std::size_t from = 0;
            if (auto rc = replay_from.find(topic); rc != replay_from.end()) from = rc->second;
            for (std::size_t i = from; i < it->second.size(); ++i) sub.callback(it->second[i]);
        }
        subscribers_.emplace(id, std::move(sub));
        return id;
    }

    void unsubscribe(SubscriptionId id) {
        std::lock_guard lock(mu_);
        subscribers_.erase(id);
    }

    void publish(const MeasurementEnvelope& env) {
        std::lock_guard lock(mu_);
        if (!running_) throw IoError("bus is stopped");
        const std::string topic = to_string(env.kind);
        retained_[topic].push_back(env);
        for (auto& [id, sub] : subscribers_)
            if (sub.topics.count(topic)) sub.callback(env);
    }

    // Number of retained envelopes per topic; a subscriber acknowledging up
    // to here replays nothing on restart.
    ReplayCursor head_cursor() const {
        std::lock_guard lock(mu_);
        ReplayCursor c;
        for (const auto& [topic, log] : retained_) c[topic] = log.size();
        return c;
    }

    void stop() {
        std::lock_guard lock(mu_);
        running_ = false;
    }

    bool running() const {
        std::lock_guard lock(mu_);
        return running_;
    }

  private:
    struct Subscriber {
        std::set<std::string> topics;
        Callback callback;
    };

    mutable std::mutex mu_;
    bool running_ = true;
    SubscriptionId next_id_ = 1;
    std::map<std::string, std::vector<MeasurementEnvelope>> retained_;
    std::map<SubscriptionId, Subscriber> subscribers_;
};

}  // namespace meshmon::collector
