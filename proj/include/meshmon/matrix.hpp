#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "meshmon/analytics.hpp"
#include "meshmon/meshconfig.hpp"
#include "meshmon/scenario.hpp"
#include "meshmon/store.hpp"

namespace meshmon::matrix {

enum class CellStatus { ok, warn, crit, stale, nodata };

inline char status_char(CellStatus s) {
    switch (s) {
        case CellStatus::ok: return '.';
        case CellStatus::warn: return 'w';
        case CellStatus::crit: return 'C';
        case CellStatus::stale: return 's';
        case CellStatus::nodata: return '-';
    }
    return '-';
}

inline const char* status_name(CellStatus s) {
    switch (s) {
        case CellStatus::ok: return "ok";
        case CellStatus::warn: return "warn";
        case CellStatus::crit: return "crit";
        case CellStatus::stale: return "stale";
        case CellStatus::nodata: return "nodata";
    }
    return "nodata";
}

struct MatrixCell {
    std::string src;
    std::string dst;
    CellStatus status = CellStatus::nodata;
    std::string latest_value;  // metric units; empty when no data
};

// Cell statuses are derived purely from the shared analytics thresholds and
// the freshness rule; the renderers below only map them to text or markup.
template <typename Store>
inline std::vector<MatrixCell> compute_matrix(const Store& st,
                                              const meshconfig::MeshConfig& cfg,
                                              const std::vector<meshconfig::ScheduleEntry>& schedule,
                                              MetricKind kind,
                                              const scenario::AnalyticsConfig& acfg, SimTime now) {
    auto shortest = scenario::shortest_repeat_by_host(schedule);
    std::map<std::string, bool> stale;
    for (const auto& h : cfg.hosts) {
        bool is_stale = false;
        auto it = shortest.find(h.id);
        if (it != shortest.end() &&
            static_cast<double>(now) > acfg.freshness_k * static_cast<double>(it->second)) {
            auto latest = st.latest_stored_for_agent(h.id);
            is_stale = !latest || static_cast<double>(now - *latest) >
                                      acfg.freshness_k * static_cast<double>(it->second);
        }
        stale[h.id] = is_stale;
    }

    std::vector<MatrixCell> cells;
    for (const auto& src : cfg.hosts) {
        for (const auto& dst : cfg.hosts) {
            if (src.id == dst.id) continue;
            MatrixCell cell;
            cell.src = src.id;
            cell.dst = dst.id;
            if (stale[src.id] || stale[dst.id]) {
                cell.status = CellStatus::stale;
                cells.push_back(std::move(cell));
                continue;
            }
            store::QueryFilter f;
            f.src = src.id;
            f.dst = dst.id;
            f.kind = kind;
            auto series = st.query(f);
            if (series.empty()) {
                cells.push_back(std::move(cell));
                continue;
            }
            switch (kind) {
                case MetricKind::latency: {
                    std::vector<LatencySample> samples;
                    for (const auto& env : series)
                        samples.push_back(std::get<LatencySample>(env.payload));
                    const LatencySample& latest = samples.back();
                    std::vector<LatencySample> window(
                        samples.begin() +
                            (samples.size() > static_cast<std::size_t>(acfg.baseline_window) + 1
                                 ? samples.size() - acfg.baseline_window - 1
                                 : 0),
                        samples.end() - 1);
                    auto alert = analytics::detect_loss_anomaly(
                        latest, analytics::loss_baseline(window), acfg.loss_abs_threshold,
                        acfg.loss_mad_multiplier);
                    cell.status = !alert ? CellStatus::ok
                                  : alert->severity == analytics::Severity::critical
                                      ? CellStatus::crit
                                      : CellStatus::warn;
                    cell.latest_value = "loss=" + format_fixed(latest.loss_fraction(), 4);
                    break;
                }
                case MetricKind::throughput: {
                    std::vector<ThroughputResult> results;
                    for (const auto& env : series)
                        results.push_back(std::get<ThroughputResult>(env.payload));
                    std::size_t w0 = results.size() > static_cast<std::size_t>(acfg.baseline_window) + 1
                                         ? results.size() - acfg.baseline_window - 1
                                         : 0;
                    std::vector<ThroughputResult> window(results.begin() + static_cast<std::ptrdiff_t>(w0),
                                                         results.end());
                    auto alert =
                        analytics::detect_throughput_degradation(window, acfg.throughput_rel_drop);
                    cell.status = alert ? CellStatus::crit : CellStatus::ok;
                    cell.latest_value = "mbps=" + format_ms(results.back().achieved_mbps);
                    break;
                }
                case MetricKind::path: {
                    cell.status = CellStatus::ok;
                    for (auto it = series.rbegin(); it != series.rend(); ++it) {
                        const auto& pm = std::get<PathMeasurement>(it->payload);
                        if (!pm.destination_reached) continue;
                        cell.latest_value = "mtu=" + std::to_string(pm.path_mtu.value_or(0));
                        if (acfg.expected_mtu && analytics::check_path_mtu(pm, *acfg.expected_mtu))
                            cell.status = CellStatus::warn;
                        break;
                    }
                    if (cell.latest_value.empty()) cell.status = CellStatus::nodata;
                    break;
                }
            }
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

// Fixed single-character status codes, one row per src host.
inline std::string render_text(const std::vector<MatrixCell>& cells,
                               const meshconfig::MeshConfig& cfg, MetricKind kind) {
    std::size_t width = 1;
    for (const auto& h : cfg.hosts) width = std::max(width, h.id.size());
    std::map<std::pair<std::string, std::string>, const MatrixCell*> by_pair;
    for (const auto& c : cells) by_pair[{c.src, c.dst}] = &c;

    std::string out = "matrix kind=";
    out += to_string(kind);
    out += " (.=ok w=warn C=crit s=stale -=nodata)\n";
    out += std::string(width, ' ');
    for (const auto& dst : cfg.hosts) {
        out += ' ';
        out += std::string(width - dst.id.size(), ' ') + dst.id;
    }
    out += '\n';
    for (const auto& src : cfg.hosts) {
        out += std::string(width - src.id.size(), ' ') + src.id;
        for (const auto& dst : cfg.hosts) {
            out += ' ';
            std::string c(width, ' ');
            if (src.id == dst.id) {
                c[width - 1] = ' ';
            } else {
                c[width - 1] = status_char(by_pair.at({src.id, dst.id})->status);
            }
            out += c;
        }
        out += '\n';
    }
    return out;
}

// Self-contained static page; each cell carries its status as a CSS class and
// shows the latest value.
inline std::string render_html(const std::vector<MatrixCell>& cells,
                               const meshconfig::MeshConfig& cfg, MetricKind kind, SimTime now) {
    std::map<std::pair<std::string, std::string>, const MatrixCell*> by_pair;
    for (const auto& c : cells) by_pair[{c.src, c.dst}] = &c;

    std::string html =
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\n"
        "<title>mesh status</title>\n<style>\n"
        "body{font-family:sans-serif}\n"
        "table{border-collapse:collapse}\n"
        "td,th{border:1px solid #999;padding:4px 8px;text-align:center}\n"
        "td.ok{background:#b6e3b6}\ntd.warn{background:#f5e26b}\n"
        "td.crit{background:#e78787}\ntd.stale{background:#c9c9c9}\n"
        "td.nodata{background:#f3f3f3;color:#888}\ntd.self{background:#fff}\n"
        "</style></head><body>\n";
    html += "<h1>measurement matrix: ";
    html += to_string(kind);
    html += "</h1>\n<p>simulated time " + std::to_string(now) + " ms; rows are sources, columns destinations</p>\n";
    html += "<table>\n<tr><th></th>";
    for (const auto& dst : cfg.hosts) html += "<th>" + dst.id + "</th>";
    html += "</tr>\n";
    for (const auto& src : cfg.hosts) {
        html += "<tr><th>" + src.id + "</th>";
        for (const auto& dst : cfg.hosts) {
            if (src.id == dst.id) {
                html += "<td class=\"self\"></td>";
                continue;
            }
            const MatrixCell* cell = by_pair.at({src.id, dst.id});
            html += "<td class=\"";
            html += status_name(cell->status);
            html += "\">";
            html += cell->latest_value.empty() ? std::string(status_name(cell->status))
                                               : cell->latest_value;
            html += "</td>";
        }
        html += "</tr>\n";
    }
    html += "</table>\n</body></html>\n";
    return html;
}

}  // namespace meshmon::matrix
