#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "homeodrive/action_lang.hpp"
#include "homeodrive/config.hpp"
#include "homeodrive/homeostasis.hpp"
#include "homeodrive/ledger.hpp"
#include "homeodrive/mesh.hpp"
#include "homeodrive/planner.hpp"
#include "homeodrive/risk_field.hpp"
#include "homeodrive/risk_table.hpp"
#include "homeodrive/scenario_io.hpp"
#include "homeodrive/world.hpp"

namespace homeo {

/// One self-check violation found while running in audit mode.
struct AuditViolation {
    std::int64_t tick = 0;
    std::string ego;
    std::string rule;
    std::string detail;
};

struct TraceRow {
    std::int64_t tick = 0;
    std::string ego;
    double aggregate = 1.0;
    HomeostasisState homeostasis;
    int active_branch = 0;
    std::vector<double> likelihoods;
    bool caution = false;
    double target_speed_kph = 0.0;
    double steer_deg = 0.0;
    double min_forward_safety = 1.0;
    std::string verdict;   // maintenance verdict if not ok
};

inline std::string trace_csv_header() {
    return "tick,ego,aggregate,body,wheels,engine,battery_actual,battery_virtual,credits,"
           "passenger_health,active_branch,likelihoods,caution,target_speed_kph,steer_deg,"
           "min_forward_safety,verdict";
}

inline std::string trace_csv_row(const TraceRow& r) {
    char buf[512];
    std::string lik;
    for (std::size_t i = 0; i < r.likelihoods.size(); ++i) {
        char lb[32];
        std::snprintf(lb, sizeof lb, "%.6f", r.likelihoods[i]);
        if (i) lik += '|';
        lik += lb;
    }
    std::snprintf(buf, sizeof buf,
                  "%lld,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%d,%s,%d,%.6f,%.6f,%.6f,%s",
                  static_cast<long long>(r.tick), r.ego.c_str(), r.aggregate, r.homeostasis.body,
                  r.homeostasis.wheels, r.homeostasis.engine, r.homeostasis.battery_actual,
                  r.homeostasis.battery_virtual, r.homeostasis.credits,
                  r.homeostasis.passenger_health, r.active_branch, lik.c_str(),
                  r.caution ? 1 : 0, r.target_speed_kph, r.steer_deg, r.min_forward_safety,
                  r.verdict.c_str());
    return buf;
}

/// Scored mesh outcome surfaced to the fleet runner.
struct MaturedScore {
    std::string sender;
    std::string receiver;
    MsgId msg_id{};
    ScoreOutcome outcome = ScoreOutcome::neutral;
    std::int64_t tick = 0;
};

struct AgentOptions {
    bool self_check = false;
    std::optional<int> force_branch;      // testing hook: pin the active branch
    bool planner_enabled = true;          // calibration campaigns disable avoidance
    bool record_traces = true;
};

/// The per-ego agent: risk-field pipeline, branching planner, homeostasis
/// bookkeeping and mesh participation, advanced once per 50 ms tick.
class Agent {
  public:
    Agent(const EgoStart& start, const Scenario& scenario, const SimConfig& cfg,
          RiskTable table, const AgentOptions& opts)
        : id_(start.id),
          cfg_(cfg),
          opts_(opts),
          table_(std::move(table)),
          own_field_(cfg.field),
          mesh_layer_(cfg.field),
          scenario_(&scenario) {
        homeostasis_.passenger_onboard = start.passenger;
        homeostasis_.battery_actual = start.battery_actual;
        homeostasis_.battery_virtual = start.battery_actual;
        goals_.destination = start.destination;
        goals_.speed_limit_kph = scenario.speed_limit_kph;
        noise_sender_ = start.broadcast_noise;

        route_from(start.position, start.destination, std::nullopt);
        double trip_cost = start.trip_cost.value_or(route_length(start.position) *
                                                    cfg_.energy.drain_per_meter);
        trip_cost_ = trip_cost;
        try {
            homeostasis_ = encode_destination(homeostasis_, trip_cost, cfg_.homeostasis.premium);
        } catch (const InsufficientCharge&) {
            // refusing the trip maps to the auto-disable verdict
            disabled_ = true;
            last_verdict_ = "auto_disable(insufficient_charge)";
        }
    }

    const std::string& id() const { return id_; }
    const HomeostasisState& homeostasis() const { return homeostasis_; }
    const RiskTable& table() const { return table_; }
    RiskTable& table() { return table_; }
    const RiskField& control_field() const { return control_field_; }
    const RiskField& own_field() const { return own_field_; }
    const std::set<PatternKey>& encountered_keys() const { return encountered_; }
    bool destination_reached() const { return destination_reached_; }
    double arrival_time() const { return arrival_time_; }
    double energy_consumed() const { return energy_consumed_; }
    int caution_ticks() const { return caution_ticks_; }
    bool disabled() const { return disabled_; }
    const std::vector<TraceRow>& traces() const { return traces_; }
    const std::vector<AuditViolation>& violations() const { return violations_; }
    const std::vector<TimelineBranch>& branches() const { return branches_; }
    const std::vector<IncidentRecord>& incidents() const { return incidents_; }

    void deliver(const Delivery& d, int sender_reputation) {
        pending_deliveries_.push_back({d, sender_reputation});
    }

    /// The 50 ms agent loop: sense -> project -> rate-actualize -> smooth ->
    /// human override -> mesh fusion -> branch update -> execute -> arbitrate
    /// -> hierarchy floor. Returns the control to apply this tick.
    EgoControl plan_tick(const WorldState& world) {
        const FieldConfig& fcfg = cfg_.field;
        const PlannerConfig& pcfg = cfg_.planner;
        const std::int64_t tick = world.tick();
        const EgoState& me = world.ego(id_);

        SensorSnapshot snap = world.sense(id_, homeostasis_.passenger_onboard);
        note_keys(snap);

        RiskField raw = project_raw(snap, table_, fcfg);
        RiskField actualized = rate_actualize(window_, raw, fcfg, cfg_.tick_s);
        window_.push_back(RawFrame::of(raw));
        while (window_.size() > 20) window_.pop_front();
        RiskField smoothed = smooth(own_field_, actualized, fcfg, cfg_.tick_s);
        own_field_ = human_override(smoothed, snap, snap.ego_speed, table_, fcfg);
        own_field_.tick = tick;

        fuse_mesh(snap, tick);

        // routing
        advance_route(me.position);
        double goal_bearing = bearing_to_target(me);

        // branch maintenance
        if (opts_.planner_enabled) {
            if (branches_.empty() ||
                tick - branches_.front().created_tick >= pcfg.regen_ticks) {
                regenerate_branches(snap, goal_bearing);
            }
            update_likelihoods(branches_, per_bin_min(control_field_), tick, pcfg, cfg_.tick_s);
            select_branch(snap);
        }

        // execute the active sentence
        ControlOutput sentence_cmd;
        sentence_cmd.active_branch = active_branch_.value_or(0);
        bool steering_locked = false;
        if (opts_.planner_enabled && !branches_.empty()) {
            lang::ExecContext ctx;
            ctx.field = &control_field_;
            ctx.snapshot = &snap;
            double elapsed =
                static_cast<double>(tick - branches_.front().created_tick) * cfg_.tick_s;
            ctx.elapsed_s = elapsed;
            lang::StepResult exec = executor_for(active_branch_.value_or(0)).step(elapsed, ctx);
            sentence_cmd.target_speed_kph = exec.target_speed_kph;
            sentence_cmd.steer_deg = exec.steer_deg;
            sentence_cmd.reverse = exec.reverse;
            steering_locked = exec.steering_locked;
            if (exec.fired_alert) alert_requested_ = true;
            if (exec.fired_reroute) handle_reroute(*exec.fired_reroute, me.position);
        } else {
            // calibration mode: fixed cruise, no avoidance
            sentence_cmd.target_speed_kph = goals_.speed_limit_kph;
        }

        // Route following: plain driving tracks the goal bearing unless a
        // Turn/Reverse command owns the wheel.
        if (!steering_locked && !sentence_cmd.reverse)
            sentence_cmd.steer_deg =
                std::clamp(rad2deg(goal_bearing), -cfg_.vehicle.max_steer_deg,
                           cfg_.vehicle.max_steer_deg);

        HeadingChoice hint = min_risk_heading(control_field_, goal_bearing);
        ControlOutput out =
            opts_.planner_enabled ? arbitrate(hint, sentence_cmd, pcfg) : sentence_cmd;

        // goal caps: speed limit, outer-band caution, disable verdict
        out.target_speed_kph = std::min(out.target_speed_kph, goals_.speed_limit_kph);
        // hazards relayed by peers live in the mesh layer; a dangerous outer
        // aggregate there slows the car before its own sensors can confirm
        double outer_min = std::min(mesh_layer_.outer(Band::ground).safety,
                                    mesh_layer_.outer(Band::car_level).safety);
        if (opts_.planner_enabled && outer_min < pcfg.outer_caution_threshold) {
            double cap = goals_.speed_limit_kph * std::max(outer_min, 0.3);
            if (out.target_speed_kph > cap) {
                out.target_speed_kph = cap;
                out.caution_flag = true;
            }
        }
        if (destination_reached_ || disabled_) {
            out.target_speed_kph = 0.0;
            out.steer_deg = 0.0;
        }

        // Lexicographic safety floor: no goal pressure may steer the 1-tick
        // projection into a near-certain-loss cell.
        if (opts_.planner_enabled &&
            projected_corridor_min(control_field_, me.speed, out, cfg_.vehicle, cfg_.tick_s,
                                   pcfg.solid_block_threshold) <= pcfg.danger_floor) {
            ControlOutput braking;
            braking.active_branch = out.active_branch;
            braking.caution_flag = true;
            braking.target_speed_kph = 0.0;
            braking.steer_deg = std::clamp(rad2deg(hint.heading), -cfg_.vehicle.max_steer_deg,
                                           cfg_.vehicle.max_steer_deg);
            if (projected_corridor_min(control_field_, me.speed, braking, cfg_.vehicle,
                                       cfg_.tick_s, pcfg.solid_block_threshold) <=
                pcfg.danger_floor)
                braking.steer_deg = 0.0;   // no safe corridor: straight-line stop
            out = braking;
        }

        homeostasis_bookkeeping(world, me, out);
        if (opts_.self_check) audit(world, me, snap, out);
        record_trace(tick, out);
        record_incident_context(snap, tick);
        last_output_ = out;
        if (out.caution_flag) ++caution_ticks_;

        EgoControl control;
        control.target_speed_mps = kph2mps(out.target_speed_kph);
        control.steer_deg = out.steer_deg;
        control.reverse = out.reverse;
        return control;
    }

    /// Broadcast decision for this tick (fleet mode). Noise fixtures emit
    /// fabricated hazards; honest agents share their significant dangers.
    std::optional<HazardMessage> make_broadcast(const WorldState& world) {
        const EgoState& me = world.ego(id_);
        Pose pose{me.position, me.heading, me.speed};
        if (noise_sender_) {
            HazardMessage msg;
            msg.msg_id = make_msg_id(id_, world.tick(), 0x6e6f6973);
            msg.sender = id_;
            msg.sent_tick = world.tick();
            msg.sender_pose = pose;
            msg.intent_heading = me.heading;
            msg.intent_speed = me.speed;
            msg.ttl_hops = static_cast<std::uint8_t>(cfg_.mesh.ttl_hops);
            Hazard fake;
            fake.world_position = me.position + unit(me.heading + 0.5) * 40.0;
            fake.safety = 0.01;
            fake.kind = ObservableKind::large_object;
            fake.bands = kGroundBit | kCarBit;
            msg.hazards.push_back(fake);
            return msg;
        }
        auto msg = broadcast(id_, pose, me.heading, me.speed, own_field_, cfg_.mesh, world.tick());
        alert_requested_ = false;
        return msg;
    }

    /// Crash bookkeeping; returns the realized damage for logging.
    DamageVector on_collision(const CollisionEvent& event, const WorldState& world) {
        double before = aggregate(homeostasis_);
        DamageVector dv = realize_damage(event, homeostasis_.passenger_onboard, cfg_.damage);
        homeostasis_ = apply_damage(homeostasis_, dv);
        double after = aggregate(homeostasis_);
        last_crash_keys_ = keys_for_entity(event.entity_id);
        last_crash_primary_ = std::nullopt;
        for (auto it = incident_window_.rbegin(); it != incident_window_.rend(); ++it) {
            for (const Detection& d : it->detections)
                if (d.entity_id == event.entity_id) {
                    last_crash_primary_ =
                        PatternKey{d.kind, speed_bucket(d.radial_speed), distance_bucket(d.distance)};
                    break;
                }
            if (last_crash_primary_) break;
        }
        last_crash_loss_ = before - after;
        if (!dv.zero()) maybe_record_incident(event, dv, before, after, world);
        return dv;
    }

    const std::vector<PatternKey>& last_crash_keys() const { return last_crash_keys_; }
    std::optional<PatternKey> last_crash_primary_key() const { return last_crash_primary_; }
    double last_crash_loss() const { return last_crash_loss_; }

    std::vector<MaturedScore> take_matured_scores() { return std::move(matured_); }

    std::string active_metadata() const { return active_metadata_; }

  private:
    // -- routing -------------------------------------------------------------

    void route_from(Vec2 position, const std::string& destination,
                    std::optional<std::pair<std::string, std::string>> banned) {
        const WaypointGraph& g = scenario_->waypoint_graph;
        std::string start = g.nearest_node(position);
        route_ = g.shortest_path(start, destination, banned);
        route_index_ = route_.size() > 1 ? 1 : 0;
    }

    double route_length(Vec2 from) const {
        const WaypointGraph& g = scenario_->waypoint_graph;
        double len = 0.0;
        Vec2 prev = from;
        for (std::size_t i = route_index_; i < route_.size(); ++i) {
            Vec2 p = g.nodes.at(route_[i]);
            len += (p - prev).norm();
            prev = p;
        }
        return len;
    }

    void advance_route(Vec2 position) {
        const WaypointGraph& g = scenario_->waypoint_graph;
        while (route_index_ + 1 < route_.size() &&
               (g.nodes.at(route_[route_index_]) - position).norm() <
                   cfg_.vehicle.arrival_radius_m + 1.0)
            ++route_index_;
    }

    double bearing_to_target(const EgoState& me) const {
        if (route_.empty()) return 0.0;
        const WaypointGraph& g = scenario_->waypoint_graph;
        Vec2 target = g.nodes.at(route_[std::min(route_index_, route_.size() - 1)]);
        Vec2 rel = target - me.position;
        if (rel.norm() < 1e-9) return 0.0;
        return wrap_angle(rel.bearing() - me.heading);
    }

    void handle_reroute(const lang::Reroute& r, Vec2 position) {
        if (route_index_ == 0 || route_.empty()) return;
        if (r.alternate) {
            // drop the edge currently being traversed and replan
            std::pair<std::string, std::string> banned{route_[route_index_ - 1],
                                                       route_[std::min(route_index_,
                                                                        route_.size() - 1)]};
            route_from(position, goals_.destination, banned);
        } else if (scenario_->waypoint_graph.nodes.count(r.node)) {
            route_from(position, r.node, std::nullopt);
        }
    }

    // -- pipeline helpers ----------------------------------------------------

    void note_keys(const SensorSnapshot& snap) {
        for (const Detection& d : snap.detections)
            encountered_.insert(
                PatternKey{d.kind, speed_bucket(d.radial_speed), distance_bucket(d.distance)});
    }

    std::vector<PatternKey> keys_for_entity(const std::string& entity_id) const {
        std::vector<PatternKey> keys;
        for (const SensorSnapshot& s : incident_window_) {
            if (incident_window_.back().tick - s.tick > 20) continue;   // trailing 1 s
            for (const Detection& d : s.detections) {
                if (d.entity_id != entity_id) continue;
                PatternKey k{d.kind, speed_bucket(d.radial_speed), distance_bucket(d.distance)};
                if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
            }
        }
        return keys;
    }

    void fuse_mesh(const SensorSnapshot& snap, std::int64_t tick) {
        const double decay = cfg_.field.recovery_rate * cfg_.tick_s;
        auto& layer = mesh_layer_.mutable_safety();
        for (double& v : layer)
            if (v < 1.0) v = std::min(1.0, v + decay);
        for (int b = 0; b < kBands; ++b) {
            auto& cell = mesh_layer_.outer(static_cast<Band>(b));
            if (cell.safety < 1.0) cell.safety = std::min(1.0, cell.safety + decay);
        }

        Pose pose{snap.ego_position, snap.ego_heading, snap.ego_speed};
        for (auto& [delivery, reputation] : pending_deliveries_) {
            FieldDelta delta = reinterpret(delivery.msg, pose, mesh_layer_, reputation, cfg_.mesh,
                                           cfg_.field);
            apply_delta(mesh_layer_, delta);
            pending_scores_.push_back(
                start_scoring(delivery.msg, id_, pose, own_field_, tick, cfg_.mesh));
        }
        pending_deliveries_.clear();

        for (PendingScore& p : pending_scores_) update_confirmation(p, pose, own_field_, cfg_.mesh);
        const auto horizon_ticks =
            static_cast<std::int64_t>(cfg_.mesh.score_horizon_s / cfg_.tick_s);
        std::vector<PendingScore> keep;
        for (PendingScore& p : pending_scores_) {
            if (tick - p.delivered_tick >= horizon_ticks || p.confirmed) {
                matured_.push_back({p.sender, p.receiver, p.msg_id, score_message(p), tick});
            } else {
                keep.push_back(std::move(p));
            }
        }
        pending_scores_ = std::move(keep);

        control_field_ = own_field_;
        const auto& mesh_safety = mesh_layer_.raw_safety();
        auto& ctrl = control_field_.mutable_safety();
        auto& tags = control_field_.mutable_tags();
        for (std::size_t i = 0; i < ctrl.size(); ++i)
            if (mesh_safety[i] < ctrl[i]) {
                ctrl[i] = mesh_safety[i];
                tags[i] = mesh_layer_.kind_tag_at(i);
            }
        for (int b = 0; b < kBands; ++b) {
            Band band = static_cast<Band>(b);
            control_field_.outer(band).safety =
                std::min(control_field_.outer(band).safety, mesh_layer_.outer(band).safety);
        }
        control_field_.tick = tick;
    }

    void regenerate_branches(const SensorSnapshot& snap, double goal_bearing) {
        branches_ = generate_branches(control_field_, snap, goals_, table_, cfg_.field,
                                      cfg_.planner, goal_bearing, cfg_.planner.branch_count);
        executors_.clear();
        double entry_kph = mps2kph(snap.ego_speed);
        for (const TimelineBranch& b : branches_)
            executors_.emplace(b.id, lang::SentenceExecutor(b.sentence, entry_kph,
                                                            cfg_.vehicle.max_steer_deg,
                                                            cfg_.planner.turn_rate_deg_s));
    }

    lang::SentenceExecutor& executor_for(int id) {
        auto it = executors_.find(id);
        if (it == executors_.end())
            it = executors_.emplace(id, lang::SentenceExecutor(lang::Sentence{}, 0.0)).first;
        return it->second;
    }

    double projected_branch_injury(const TimelineBranch& b, double entry_speed_kph) const {
        lang::ExecContext ctx;   // kinematics only
        double v = kph2mps(entry_speed_kph);
        double worst = 0.0;
        for (double t = 0.0; t <= 3.0; t += cfg_.tick_s) {
            lang::StepResult r = lang::step_execute(b.sentence, t, ctx, entry_speed_kph,
                                                    cfg_.vehicle.max_steer_deg,
                                                    cfg_.planner.turn_rate_deg_s);
            double target = kph2mps(r.target_speed_kph);
            double v1 = target > v ? std::min(target, v + cfg_.vehicle.accel_limit * cfg_.tick_s)
                                   : std::max(target, v - cfg_.vehicle.brake_limit * cfg_.tick_s);
            double a_long = (v1 - v) / cfg_.tick_s;
            double a_lat =
                v1 * (v1 / cfg_.vehicle.wheelbase_m * std::tan(deg2rad(r.steer_deg)));
            double decel = std::hypot(a_long, a_lat);
            worst = std::max(worst, clamp01((decel - cfg_.damage.injury_comfort_decel) /
                                            cfg_.damage.injury_decel_span));
            v = v1;
        }
        return worst;
    }

    void select_branch(const SensorSnapshot& snap) {
        if (branches_.empty()) return;
        if (opts_.force_branch) {
            active_branch_ = *opts_.force_branch;
            return;
        }
        if (homeostasis_.passenger_onboard) {
            // passenger mode: projected injury outranks likelihood
            double entry_kph = mps2kph(snap.ego_speed);
            std::vector<double> injury(branches_.size());
            double best = 1.0;
            for (std::size_t i = 0; i < branches_.size(); ++i) {
                injury[i] = projected_branch_injury(branches_[i], entry_kph);
                best = std::min(best, injury[i]);
            }
            std::vector<TimelineBranch> safe;
            for (std::size_t i = 0; i < branches_.size(); ++i)
                if (injury[i] <= best + cfg_.planner.injury_filter_margin)
                    safe.push_back(branches_[i]);
            if (!safe.empty()) {
                bool prev_safe = false;
                for (const TimelineBranch& b : safe)
                    if (active_branch_ && b.id == *active_branch_) prev_safe = true;
                active_branch_ = select_active(safe, prev_safe ? active_branch_ : std::nullopt,
                                               cfg_.planner.hysteresis);
                return;
            }
        }
        active_branch_ = select_active(branches_, active_branch_, cfg_.planner.hysteresis);
    }

    // -- homeostasis & bookkeeping --------------------------------------------

    void homeostasis_bookkeeping(const WorldState& world, const EgoState& me,
                                 const ControlOutput& out) {
        (void)out;
        double drain = me.speed * cfg_.tick_s * cfg_.energy.drain_per_meter +
                       cfg_.energy.idle_drain_per_s * cfg_.tick_s;
        homeostasis_ = drain_battery(homeostasis_, drain);
        energy_consumed_ += drain;

        if (!destination_reached_ && !route_.empty()) {
            Vec2 dest = scenario_->waypoint_graph.nodes.at(route_.back());
            if (route_[route_.size() - 1] == goals_.destination &&
                (dest - me.position).norm() <= cfg_.vehicle.arrival_radius_m) {
                destination_reached_ = true;
                arrival_time_ = world.now();
                homeostasis_ = award_credits(homeostasis_, trip_cost_, cfg_.homeostasis.premium);
            }
        }
        for (const EntityState& e : world.entities()) {
            if (e.def.kind != EntityKind::charging_station || !e.active) continue;
            bool at_station = (e.position - me.position).norm() <= e.def.extent + 1.5;
            if (at_station && !at_station_ && homeostasis_.credits > 0.0)
                homeostasis_ = redeem_at_station(homeostasis_);
            at_station_ = at_station;
        }

        MaintenanceDecision verdict = maintenance_check(homeostasis_, cfg_.homeostasis);
        switch (verdict.verdict) {
            case MaintenanceDecision::Verdict::auto_disable:
                disabled_ = true;
                last_verdict_ = "auto_disable(" + verdict.component + ")";
                break;
            case MaintenanceDecision::Verdict::auto_repair_route:
                last_verdict_ = "auto_repair_route(" + verdict.component + ")";
                break;
            default:
                last_verdict_.clear();
                break;
        }
    }

    // -- incident recording ----------------------------------------------------

    void record_incident_context(const SensorSnapshot& snap, std::int64_t tick) {
        incident_window_.push_back(snap);
        // 12 s of snapshots satisfies the 10-20 s window requirement
        while (!incident_window_.empty() &&
               tick - incident_window_.front().tick > static_cast<std::int64_t>(12.0 / cfg_.tick_s))
            incident_window_.pop_front();
        if (tick % 20 == 0) {
            std::ostringstream frame;
            field_io::write_frame(frame, control_field_);
            std::string str = frame.str();
            incident_frames_.emplace_back(tick,
                                          std::vector<std::uint8_t>(str.begin(), str.end()));
            while (!incident_frames_.empty() &&
                   tick - incident_frames_.front().first >
                       static_cast<std::int64_t>(12.0 / cfg_.tick_s))
                incident_frames_.pop_front();
            active_metadata_ = lang::render(generate_metadata(control_field_));
            metadata_history_.emplace_back(tick, active_metadata_);
            while (!metadata_history_.empty() &&
                   tick - metadata_history_.front().first >
                       static_cast<std::int64_t>(12.0 / cfg_.tick_s))
                metadata_history_.pop_front();
        }
    }

    void maybe_record_incident(const CollisionEvent& event, const DamageVector& dv, double before,
                               double after, const WorldState& world) {
        if (incident_window_.empty()) return;
        double span = static_cast<double>(incident_window_.back().tick -
                                          incident_window_.front().tick) *
                      cfg_.tick_s;
        if (span < 10.0) return;   // not enough context for a valid record
        IncidentRecord rec;
        rec.record_id = id_ + "-t" + std::to_string(event.tick);
        rec.car_id = id_;
        rec.profile = scenario_->profile;
        rec.window.assign(incident_window_.begin(), incident_window_.end());
        for (const auto& [t, frame] : incident_frames_) rec.field_frames.push_back(frame);
        for (const auto& [t, meta] : metadata_history_) rec.active_sentences.push_back(meta);
        rec.outcome = dv;
        rec.aggregate_before = before;
        rec.aggregate_after = after;
        rec.unavoidable = !feasible_safe_heading_exists(control_field_, world.ego(id_).speed,
                                                        cfg_.vehicle, cfg_.planner, cfg_.tick_s);
        incidents_.push_back(std::move(rec));
    }

    // -- audit & trace ---------------------------------------------------------

    void audit(const WorldState& world, const EgoState& me, const SensorSnapshot& snap,
               const ControlOutput& out) {
        const std::int64_t tick = world.tick();
        auto violation = [&](const std::string& rule, const std::string& detail) {
            violations_.push_back({tick, id_, rule, detail});
        };

        const auto& safety = control_field_.raw_safety();
        for (double v : safety)
            if (v < 0.01 - 1e-12 || v > 1.0 + 1e-12) {
                violation("field_clamp", "cell safety " + std::to_string(v));
                break;
            }

        if (!branches_.empty()) {
            double sum = 0.0;
            for (const TimelineBranch& b : branches_) sum += b.likelihood;
            if (std::abs(sum - 1.0) > 1e-9)
                violation("likelihood_norm", "sum " + std::to_string(sum));
        }

        if (homeostasis_.battery_virtual > homeostasis_.battery_actual + 1e-12)
            violation("battery_virtual", "virtual exceeds actual");

        bool alternative = feasible_safe_heading_exists(control_field_, me.speed, cfg_.vehicle,
                                                        cfg_.planner, cfg_.tick_s);
        double corridor = projected_corridor_min(control_field_, me.speed, out, cfg_.vehicle,
                                                 cfg_.tick_s, cfg_.planner.solid_block_threshold);
        if (corridor <= cfg_.planner.danger_floor && alternative)
            violation("danger_floor", "projection entered " + std::to_string(corridor) +
                                          " despite feasible alternative");

        // human rules
        HumanFootprint fp = human_footprint(control_field_, snap);
        bool threat = snap.ego_speed > cfg_.field.human_threat_threshold_mps;
        if (!threat) {
            for (std::size_t i : fp.cells)
                if (control_field_.safety_at(i) <= 0.0101) {
                    violation("human_calm", "human cell at 0.01 below speed threshold");
                    break;
                }
        } else if (alternative && !fp.cells.empty()) {
            // does the emitted control's projection enter a human 0.01 cell?
            double target = kph2mps(out.target_speed_kph);
            double v1 = target > me.speed
                            ? std::min(target, me.speed + cfg_.vehicle.accel_limit * cfg_.tick_s)
                            : std::max(target, me.speed - cfg_.vehicle.brake_limit * cfg_.tick_s);
            if (v1 > 1e-9) {
                double steer = std::clamp(out.steer_deg, -cfg_.vehicle.max_steer_deg,
                                          cfg_.vehicle.max_steer_deg);
                double yaw = v1 / cfg_.vehicle.wheelbase_m * std::tan(deg2rad(steer)) * cfg_.tick_s;
                double reach = v1 * cfg_.tick_s + v1 * v1 / (2.0 * cfg_.vehicle.brake_limit);
                int bin = control_field_.bin_of(yaw);
                int last_shell = std::min(control_field_.shells() - 1,
                                          static_cast<int>(reach / FieldConfig::shell_spacing_m));
                for (int shell = 0; shell <= last_shell; ++shell) {
                    for (Band band : {Band::ground, Band::car_level}) {
                        std::size_t idx = control_field_.index(band, shell, bin);
                        bool is_human =
                            control_field_.kind_tag_at(idx) ==
                            static_cast<std::uint8_t>(ObservableKind::human);
                        if (is_human && control_field_.safety_at(idx) <= 0.0101) {
                            violation("human_dominance",
                                      "projection entered human 0.01 cell with alternative");
                            shell = last_shell + 1;
                            break;
                        }
                    }
                }
            }
        }
    }

    void record_trace(std::int64_t tick, const ControlOutput& out) {
        if (!opts_.record_traces) return;
        TraceRow row;
        row.tick = tick;
        row.ego = id_;
        row.aggregate = aggregate(homeostasis_);
        row.homeostasis = homeostasis_;
        row.active_branch = out.active_branch;
        for (const TimelineBranch& b : branches_) row.likelihoods.push_back(b.likelihood);
        row.caution = out.caution_flag;
        row.target_speed_kph = out.target_speed_kph;
        row.steer_deg = out.steer_deg;
        double fwd = 1.0;
        double cone = deg2rad(15.0);
        for (int bin = 0; bin < control_field_.bins(); ++bin) {
            if (std::abs(control_field_.bin_center(bin)) > cone) continue;
            for (int shell = 0; shell < control_field_.shells(); ++shell) {
                fwd = std::min(fwd, control_field_.safety(Band::ground, shell, bin));
                fwd = std::min(fwd, control_field_.safety(Band::car_level, shell, bin));
            }
        }
        row.min_forward_safety = fwd;
        row.verdict = last_verdict_;
        traces_.push_back(std::move(row));
    }

    std::string id_;
    SimConfig cfg_;
    AgentOptions opts_;
    RiskTable table_;
    HomeostasisState homeostasis_;
    GoalSet goals_;
    std::deque<RawFrame> window_;
    RiskField own_field_;
    RiskField mesh_layer_;
    RiskField control_field_;
    const Scenario* scenario_;

    std::vector<std::string> route_;
    std::size_t route_index_ = 0;
    double trip_cost_ = 0.0;
    bool destination_reached_ = false;
    double arrival_time_ = -1.0;
    bool at_station_ = false;
    bool disabled_ = false;
    std::string last_verdict_;

    std::vector<TimelineBranch> branches_;
    std::map<int, lang::SentenceExecutor> executors_;
    std::optional<int> active_branch_;
    ControlOutput last_output_;

    std::vector<std::pair<Delivery, int>> pending_deliveries_;
    std::vector<PendingScore> pending_scores_;
    std::vector<MaturedScore> matured_;
    bool noise_sender_ = false;
    bool alert_requested_ = false;

    std::set<PatternKey> encountered_;
    std::deque<SensorSnapshot> incident_window_;
    std::deque<std::pair<std::int64_t, std::vector<std::uint8_t>>> incident_frames_;
    std::deque<std::pair<std::int64_t, std::string>> metadata_history_;
    std::string active_metadata_;
    std::vector<IncidentRecord> incidents_;
    std::vector<PatternKey> last_crash_keys_;
    std::optional<PatternKey> last_crash_primary_;
    double last_crash_loss_ = 0.0;

    std::vector<TraceRow> traces_;
    std::vector<AuditViolation> violations_;
    double energy_consumed_ = 0.0;
    int caution_ticks_ = 0;
};

} // namespace homeo
