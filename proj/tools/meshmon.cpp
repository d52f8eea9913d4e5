// meshmon: run simulated measurement-mesh scenarios and inspect the results.
//
// Commands: run, query, alerts, matrix, paths, jobs. Exit codes: 0 success,
// 1 runtime error, 2 usage error. Formats are documented in docs/formats.md.

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "meshmon/jobsingest.hpp"
#include "meshmon/matrix.hpp"
#include "meshmon/scenario.hpp"
#include "meshmon/store.hpp"

namespace {

using namespace meshmon;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void load_store_into(store::LongTermStore& st, const std::string& dir,
                     const std::string& which) {
    if (which != "short" && which != "long")
        throw UsageError("--store must be 'short' or 'long'");
    store::load_log(st, dir + "/" + which + "_term.log");
}

store::QueryFilter make_filter(const std::string& src, const std::string& dst,
                               const std::string& kind, std::int64_t t0,
                               std::optional<std::int64_t> t1) {
    store::QueryFilter f;
    if (!src.empty()) f.src = src;
    if (!dst.empty()) f.dst = dst;
    if (!kind.empty()) {
        try {
            f.kind = metric_kind_from_string(kind);
        } catch (const ConfigError& e) {
            throw UsageError(e.what());
        }
    }
    f.t0 = t0;
    if (t1) f.t1 = *t1;
    if (f.t0 > f.t1) throw UsageError("--t0 must be <= --t1");
    return f;
}

int cmd_run(const std::string& scenario_file, std::int64_t duration_s, const std::string& out) {
    auto sc = scenario::load_scenario(scenario_file);
    scenario::Runner runner(std::move(sc), out);
    auto summary = runner.run(duration_s * 1000);
    std::cout << "run complete: " << summary.envelopes_long << " measurements, "
              << summary.polls << " polls, " << summary.alerts.size() << " alerts";
    if (summary.poll_errors) std::cout << ", " << summary.poll_errors << " unreachable polls";
    if (summary.malformed_skipped)
        std::cout << ", " << summary.malformed_skipped << " malformed records skipped";
    std::cout << "\nlogs written to " << out << "/{short_term,long_term,alerts}.log\n";
    return 0;
}

int cmd_query(const std::string& dir, const std::string& which, const store::QueryFilter& f) {
    store::LongTermStore st;
    load_store_into(st, dir, which);
    for (const auto& env : st.query(f)) std::cout << to_wire_line(env) << '\n';
    return 0;
}

int cmd_alerts(const std::string& dir, std::int64_t since, const std::string& kind) {
    std::ifstream in(dir + "/alerts.log");
    if (!in) throw IoError("cannot open " + dir + "/alerts.log");
    std::vector<analytics::ParsedAlert> alerts;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        alerts.push_back(analytics::parse_alert_line(line));
    }
    std::stable_sort(alerts.begin(), alerts.end(),
                     [](const auto& a, const auto& b) { return a.raised_at < b.raised_at; });
    for (const auto& a : alerts) {
        if (a.raised_at < since) continue;
        if (!kind.empty() && a.kind != kind) continue;
        std::cout << a.line << '\n';
    }
    return 0;
}

int cmd_matrix(const std::string& scenario_file, const std::string& dir,
               const std::string& which, const std::string& kind_name,
               const std::string& html_out, std::optional<std::int64_t> now_flag) {
    auto sc = scenario::load_scenario(scenario_file);
    store::LongTermStore st;
    load_store_into(st, dir, which);
    MetricKind kind;
    try {
        kind = metric_kind_from_string(kind_name);
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    auto schedule = meshconfig::build_schedule(sc.mesh);
    SimTime now = now_flag ? *now_flag : st.latest_collected_at().value_or(0);
    auto cells = matrix::compute_matrix(st, sc.mesh, schedule, kind, sc.analytics, now);
    std::cout << matrix::render_text(cells, sc.mesh, kind);
    if (!html_out.empty()) {
        std::ofstream out(html_out, std::ios::trunc);
        if (!out) throw IoError("cannot write " + html_out);
        out << matrix::render_html(cells, sc.mesh, kind, now);
        std::cout << "html written to " << html_out << '\n';
    }
    return 0;
}

int cmd_paths(const std::string& dir, const std::string& which, const std::string& src,
              const std::string& dst, std::int64_t t0, std::optional<std::int64_t> t1) {
    store::LongTermStore st;
    load_store_into(st, dir, which);
    store::QueryFilter f;
    f.src = src;
    f.dst = dst;
    f.kind = MetricKind::path;
    std::vector<PathMeasurement> series;
    for (const auto& env : st.query(f))
        series.push_back(std::get<PathMeasurement>(env.payload));
    auto groups = analytics::distinct_paths(series, t0,
                                            t1 ? *t1 : std::numeric_limits<SimTime>::max());
    if (groups.empty()) {
        std::cout << "no data for " << src << "->" << dst << '\n';
        return 0;
    }
    std::cout << "paths " << src << "->" << dst << ": " << groups.size() << " distinct\n";
    for (const auto& g : groups) {
        std::cout << "signature " << g.signature.signature << "\n  hops ";
        for (std::size_t i = 0; i < g.signature.hop_list.size(); ++i)
            std::cout << (i ? "," : "") << g.signature.hop_list[i];
        std::cout << "\n  count " << g.count << " first_seen " << g.first_seen << " last_seen "
                  << g.last_seen << '\n';
    }
    return 0;
}

int cmd_jobs(const std::string& log_file, const std::string& geo_file,
             const std::string& group_by, bool points, bool strict) {
    if (group_by != "region" && group_by != "worker_prefix")
        throw UsageError("--group-by must be 'region' or 'worker_prefix'");
    std::ifstream geo_in(geo_file);
    if (!geo_in) throw IoError("cannot open geo table " + geo_file);
    std::string geo_text((std::istreambuf_iterator<char>(geo_in)),
                         std::istreambuf_iterator<char>());
    auto table = jobsingest::GeoTable::from_csv(geo_text);

    std::ifstream in(log_file);
    if (!in) throw IoError("cannot open job log " + log_file);
    std::vector<jobsingest::JobTransferRecord> records;
    std::string line;
    int lineno = 0, skipped = 0, unknown_keys = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            auto rec = jobsingest::parse_line(line, &unknown_keys);
            jobsingest::geo_annotate(rec, table);
            records.push_back(std::move(rec));
        } catch (const ConfigError& e) {
            if (strict)
                throw IoError(log_file + ":" + std::to_string(lineno) + ": " + e.what());
            std::cerr << log_file << ":" << lineno << ": skipped: " << e.what() << '\n';
            ++skipped;
        }
    }
    if (skipped) std::cerr << skipped << " lines skipped\n";
    if (unknown_keys) std::cerr << unknown_keys << " unknown keys ignored\n";

    auto rows = jobsingest::aggregate_bytes_by_destination(
        records, group_by == "region" ? jobsingest::GroupBy::region
                                      : jobsingest::GroupBy::worker_prefix);
    for (const auto& row : rows)
        std::cout << row.group << '\t' << row.total_bytes << '\t' << row.record_count << '\n';

    if (points) {
        // One located point per matched geo entry: lat, lon, bytes, count, region.
        std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> by_prefix;
        std::map<std::string, const jobsingest::GeoAnnotation*> annotation;
        for (const auto& rec : records) {
            if (!rec.geo) continue;
            auto& [bytes, count] = by_prefix[rec.geo->matched_prefix];
            bytes += rec.bytes;
            count += 1;
            annotation[rec.geo->matched_prefix] = &*rec.geo;
        }
        for (const auto& [prefix, totals] : by_prefix) {
            const auto* geo = annotation[prefix];
            std::cout << "point\t" << format_fixed(geo->latitude, 4) << '\t'
                      << format_fixed(geo->longitude, 4) << '\t' << totals.first << '\t'
                      << totals.second << '\t' << geo->region << '\n';
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"simulated mesh network monitoring: agents, pipeline, analytics"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "run a scenario end to end");
    std::string scenario_file, out_dir = "out";
    std::int64_t duration_s = 3600;
    run->add_option("--scenario", scenario_file, "scenario file")->required();
    run->add_option("--duration-s", duration_s, "simulated duration in seconds");
    run->add_option("--out", out_dir, "output directory for store and alert logs");

    auto* query = app.add_subcommand("query", "print stored envelopes in wire format");
    std::string q_dir, q_store = "long", q_src, q_dst, q_kind;
    std::int64_t q_t0 = 0;
    std::optional<std::int64_t> q_t1;
    query->add_option("--dir", q_dir, "run output directory")->required();
    query->add_option("--store", q_store, "short|long (default long)");
    query->add_option("--src", q_src, "source host filter");
    query->add_option("--dst", q_dst, "destination host filter");
    query->add_option("--kind", q_kind, "latency|throughput|path");
    query->add_option("--t0", q_t0, "range start (inclusive, ms)");
    query->add_option("--t1", q_t1, "range end (exclusive, ms)");

    auto* alerts = app.add_subcommand("alerts", "list alerts chronologically");
    std::string a_dir, a_kind;
    std::int64_t a_since = 0;
    alerts->add_option("--dir", a_dir, "run output directory")->required();
    alerts->add_option("--since", a_since, "only alerts raised at or after this time (ms)");
    alerts->add_option("--kind", a_kind, "filter by alert kind");

    auto* matrix_cmd = app.add_subcommand("matrix", "render the mesh status matrix");
    std::string m_scenario, m_dir, m_store = "long", m_kind = "latency", m_html;
    std::optional<std::int64_t> m_now;
    matrix_cmd->add_option("--scenario", m_scenario, "scenario file (hosts + thresholds)")->required();
    matrix_cmd->add_option("--dir", m_dir, "run output directory")->required();
    matrix_cmd->add_option("--store", m_store, "short|long (default long)");
    matrix_cmd->add_option("--kind", m_kind, "latency|throughput|path");
    matrix_cmd->add_option("--html", m_html, "also write a static html page here");
    matrix_cmd->add_option("--now", m_now, "evaluation time (ms); default latest collection");

    auto* paths = app.add_subcommand("paths", "distinct traced paths for a pair");
    std::string p_dir, p_store = "long", p_src, p_dst;
    std::int64_t p_t0 = 0;
    std::optional<std::int64_t> p_t1;
    paths->add_option("--dir", p_dir, "run output directory")->required();
    paths->add_option("--store", p_store, "short|long (default long)");
    paths->add_option("--src", p_src, "source host")->required();
    paths->add_option("--dst", p_dst, "destination host")->required();
    paths->add_option("--t0", p_t0, "window start (ms)");
    paths->add_option("--t1", p_t1, "window end (ms)");

    auto* jobs = app.add_subcommand("jobs", "aggregate job transfer statistics");
    std::string j_log, j_geo, j_group = "region";
    bool j_points = false, j_strict = false;
    jobs->add_option("--log", j_log, "job transfer log file")->required();
    jobs->add_option("--geo", j_geo, "geo table csv")->required();
    jobs->add_option("--group-by", j_group, "region|worker_prefix");
    jobs->add_flag("--points", j_points, "also print located points");
    jobs->add_flag("--strict", j_strict, "fail on the first malformed line");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) return cmd_run(scenario_file, duration_s, out_dir);
        if (query->parsed())
            return cmd_query(q_dir, q_store, make_filter(q_src, q_dst, q_kind, q_t0, q_t1));
        if (alerts->parsed()) return cmd_alerts(a_dir, a_since, a_kind);
        if (matrix_cmd->parsed())
            return cmd_matrix(m_scenario, m_dir, m_store, m_kind, m_html, m_now);
        if (paths->parsed()) return cmd_paths(p_dir, p_store, p_src, p_dst, p_t0, p_t1);
        if (jobs->parsed()) return cmd_jobs(j_log, j_geo, j_group, j_points, j_strict);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
