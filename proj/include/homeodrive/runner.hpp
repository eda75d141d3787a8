#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "homeodrive/agent.hpp"
#include "homeodrive/ledger.hpp"
#include "homeodrive/mesh.hpp"
#include "homeodrive/scenario_io.hpp"
#include "homeodrive/world.hpp"

namespace homeo {

struct RunOptions {
    std::optional<std::uint64_t> seed;    // overrides the scenario seed
    bool self_check = false;
    bool mesh_enabled = false;
    bool planner_enabled = true;
    bool record_traces = true;
    bool dump_fields = false;
    std::optional<int> force_branch;
    std::optional<RiskTable> table;       // defaults to the seeded table
};

struct EgoReport {
    std::string id;
    double final_aggregate = 1.0;
    bool destination_reached = false;
    double trip_time = -1.0;
    double energy_consumed = 0.0;
    int caution_ticks = 0;
    bool disabled = false;
    HomeostasisState homeostasis;
};

struct RunReport {
    std::string scenario_id;
    std::uint64_t seed = 0;
    std::int64_t ticks = 0;
    double duration = 0.0;
    int incidents = 0;          // damaging collisions
    int collisions_total = 0;   // including zero-damage contacts
    std::vector<EgoReport> egos;
    double mean_trip_time = 0.0;
    double energy_consumed = 0.0;
    int caution_ticks = 0;
    std::size_t violations = 0;
};

/// One damaging or zero-damage collision with its estimator context.
struct CrashRecord {
    std::string ego;
    CollisionEvent event;
    DamageVector damage;
    std::vector<PatternKey> keys;   // all keys observed pre-impact
    std::optional<PatternKey> primary_key;   // nearest pre-impact pattern
    double realized_loss = 0.0;
};

struct RunResult {
    RunReport report;
    std::string trace_csv;
    std::string event_csv;
    std::string mesh_csv;
    std::vector<AuditViolation> violations;
    std::vector<CrashRecord> crashes;
    std::vector<IncidentRecord> incidents;
    std::map<std::string, Reputation> reputations;
    std::map<std::string, std::string> field_dumps;    // ego id -> binary frames
    std::map<std::string, std::vector<TraceRow>> traces;
    std::map<std::string, RiskTable> final_tables;
};

inline nlohmann::ordered_json report_to_json(const RunReport& r) {
    nlohmann::ordered_json j;
    j["scenario"] = r.scenario_id;
    j["seed"] = r.seed;
    j["ticks"] = r.ticks;
    j["duration_s"] = r.duration;
    j["incidents"] = r.incidents;
    j["collisions_total"] = r.collisions_total;
    j["mean_trip_time_s"] = r.mean_trip_time;
    j["energy_consumed"] = r.energy_consumed;
    j["caution_ticks"] = r.caution_ticks;
    j["violations"] = r.violations;
    nlohmann::ordered_json egos = nlohmann::ordered_json::array();
    for (const EgoReport& e : r.egos) {
        nlohmann::ordered_json je;
        je["id"] = e.id;
        je["final_aggregate"] = e.final_aggregate;
        je["destination_reached"] = e.destination_reached;
        je["trip_time_s"] = e.trip_time;
        je["energy_consumed"] = e.energy_consumed;
        je["caution_ticks"] = e.caution_ticks;
        je["disabled"] = e.disabled;
        je["body"] = e.homeostasis.body;
        je["wheels"] = e.homeostasis.wheels;
        je["engine"] = e.homeostasis.engine;
        je["battery_actual"] = e.homeostasis.battery_actual;
        je["battery_virtual"] = e.homeostasis.battery_virtual;
        je["credits"] = e.homeostasis.credits;
        je["passenger_health"] = e.homeostasis.passenger_health;
        egos.push_back(je);
    }
    j["egos"] = egos;
    return j;
}

/// Full deterministic simulation of one scenario (single ego or fleet).
inline RunResult run_scenario(const LoadedScenario& loaded, const RunOptions& opts) {
    const Scenario& sc = loaded.scenario;
    const SimConfig& cfg = loaded.config;
    const std::uint64_t seed = opts.seed.value_or(sc.seed);

    WorldState world = WorldState::create(sc, seed, cfg);
    RiskTable initial_table = opts.table.value_or(RiskTable::seeded());

    AgentOptions aopts;
    aopts.self_check = opts.self_check;
    aopts.force_branch = opts.force_branch;
    aopts.planner_enabled = opts.planner_enabled;
    aopts.record_traces = opts.record_traces;

    std::vector<Agent> agents;
    agents.reserve(sc.ego_starts.size());
    for (const EgoStart& start : sc.ego_starts)
        agents.emplace_back(start, sc, cfg, initial_table, aopts);

    MeshNetwork mesh(cfg.mesh, seed);
    std::map<std::string, Reputation> reputations;

    RunResult result;
    std::ostringstream event_csv;
    event_csv << "tick,ego_id,entity_kind,impact_speed,impact_bearing,decel_peak\n";
    std::map<std::string, std::ostringstream> dumps;

    const auto ticks = static_cast<std::int64_t>(std::llround(sc.duration / cfg.tick_s));
    for (std::int64_t i = 0; i < ticks; ++i) {
        const std::int64_t now = world.tick();

        if (opts.mesh_enabled) {
            std::vector<std::pair<std::string, Vec2>> peers;
            for (const Agent& a : agents) peers.emplace_back(a.id(), world.ego(a.id()).position);
            for (const Delivery& d : mesh.step(now, peers)) {
                for (Agent& a : agents)
                    if (a.id() == d.receiver) a.deliver(d, reputations[d.msg.sender].score());
            }
        }

        for (Agent& a : agents) world.set_control(a.id(), a.plan_tick(world));

        if (opts.mesh_enabled) {
            for (Agent& a : agents) {
                if (auto msg = a.make_broadcast(world))
                    mesh.send(*msg, world.ego(a.id()).position, a.id(), now);
            }
        }

        std::vector<CollisionEvent> events = world.step(cfg.tick_s);
        for (const CollisionEvent& ev : events) {
            event_csv << event_csv_row(ev) << '\n';
            ++result.report.collisions_total;
            for (Agent& a : agents) {
                if (a.id() != ev.ego_id) continue;
                DamageVector dv = a.on_collision(ev, world);
                CrashRecord rec;
                rec.ego = a.id();
                rec.event = ev;
                rec.damage = dv;
                rec.keys = a.last_crash_keys();
                rec.primary_key = a.last_crash_primary_key();
                rec.realized_loss = a.last_crash_loss();
                if (!dv.zero()) ++result.report.incidents;
                result.crashes.push_back(std::move(rec));
            }
        }

        for (Agent& a : agents) {
            for (const MaturedScore& s : a.take_matured_scores()) {
                Reputation& rep = reputations[s.sender];
                if (s.outcome == ScoreOutcome::reward) ++rep.rewards;
                if (s.outcome == ScoreOutcome::penalty) ++rep.penalties;
                mesh.log().push_back({s.tick, s.sender, s.receiver, s.msg_id,
                                      s.outcome == ScoreOutcome::reward
                                          ? "reward"
                                          : (s.outcome == ScoreOutcome::penalty ? "penalty"
                                                                                : "neutral")});
            }
            if (opts.dump_fields) field_io::write_frame(dumps[a.id()], a.control_field());
        }
    }

    // reports
    RunReport& rep = result.report;
    rep.scenario_id = sc.id;
    rep.seed = seed;
    rep.ticks = ticks;
    rep.duration = sc.duration;
    double trip_sum = 0.0;
    int arrived = 0;
    std::ostringstream trace_csv;
    trace_csv << trace_csv_header() << '\n';
    for (Agent& a : agents) {
        EgoReport e;
        e.id = a.id();
        e.final_aggregate = aggregate(a.homeostasis());
        e.destination_reached = a.destination_reached();
        e.trip_time = a.arrival_time();
        e.energy_consumed = a.energy_consumed();
        e.caution_ticks = a.caution_ticks();
        e.disabled = a.disabled();
        e.homeostasis = a.homeostasis();
        rep.egos.push_back(e);
        rep.energy_consumed += e.energy_consumed;
        rep.caution_ticks += e.caution_ticks;
        if (e.destination_reached) {
            trip_sum += e.trip_time;
            ++arrived;
        }
        for (const TraceRow& row : a.traces()) trace_csv << trace_csv_row(row) << '\n';
        result.violations.insert(result.violations.end(), a.violations().begin(),
                                 a.violations().end());
        result.incidents.insert(result.incidents.end(), a.incidents().begin(),
                                a.incidents().end());
        result.traces[a.id()] = a.traces();
        result.final_tables.emplace(a.id(), a.table());
    }
    rep.mean_trip_time = arrived > 0 ? trip_sum / arrived : 0.0;
    rep.violations = result.violations.size();
    result.trace_csv = trace_csv.str();
    result.event_csv = event_csv.str();
    std::ostringstream mesh_csv;
    mesh_csv << "tick,sender,receiver,msg_id,outcome\n";
    for (const MeshLogRow& row : mesh.log()) mesh_csv << mesh_log_csv_row(row) << '\n';
    result.mesh_csv = mesh_csv.str();
    result.reputations = reputations;
    for (auto& [ego, os] : dumps) result.field_dumps[ego] = os.str();
    return result;
}

// ---------------------------------------------------------------------------
// Calibration campaigns

/// Run one crash scenario with avoidance disabled; the first collision is
/// the observation. Returns nullopt when the scenario never collides.
inline std::optional<CrashObservation> run_crash_scenario(const LoadedScenario& loaded,
                                                          const RiskTable& table,
                                                          std::uint64_t seed) {
    RunOptions opts;
    opts.seed = seed;
    opts.planner_enabled = false;
    opts.record_traces = false;
    opts.table = table;
    RunResult r = run_scenario(loaded, opts);
    for (const CrashRecord& c : r.crashes) {
        CrashObservation obs;
        obs.keys = c.keys;
        obs.realized_loss = c.realized_loss;
        return obs;
    }
    return std::nullopt;
}

/// Suite executor for the regression gate: runs each scenario with the
/// candidate table, counts damaging incidents and measures predicted-vs-
/// realized error over the crashes that occur.
inline auto make_suite_runner(const std::vector<LoadedScenario>& suite, std::uint64_t seed,
                              bool self_check = false) {
    return [suite, seed, self_check](const RiskTable& table) {
        SuiteStats stats;
        double err_sum = 0.0;
        int err_n = 0;
        for (const LoadedScenario& ls : suite) {
            RunOptions opts;
            opts.seed = seed;
            opts.table = table;
            opts.record_traces = false;
            opts.self_check = self_check;
            RunResult r;
            try {
                r = run_scenario(ls, opts);
            } catch (const std::exception& e) {
                stats.ok = false;
                stats.error = ls.scenario.id + ": " + e.what();
                return stats;
            }
            stats.incidents += r.report.incidents;
            for (const CrashRecord& c : r.crashes) {
                if (c.damage.zero() || !c.primary_key) continue;
                double predicted = 1.0 - table.estimate(*c.primary_key);
                err_sum += std::abs(predicted - c.realized_loss);
                ++err_n;
            }
            stats.scenario_rows.push_back(ls.scenario.id + ": incidents=" +
                                          std::to_string(r.report.incidents));
        }
        if (err_n > 0) stats.calibration_mae = err_sum / err_n;
        stats.ok = true;
        return stats;
    };
}

} // namespace homeo
