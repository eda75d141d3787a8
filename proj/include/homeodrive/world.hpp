#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "homeodrive/config.hpp"
#include "homeodrive/geometry.hpp"
#include "homeodrive/homeostasis.hpp"
#include "homeodrive/observables.hpp"
#include "homeodrive/rng.hpp"

namespace homeo {

enum class EntityKind : std::uint8_t {
    pedestrian = 0,
    vehicle,
    debris_light,   // plastic bag, newspaper, ball: never damages
    debris_heavy,   // rock, branch, fallen tree
    wall,
    charging_station,
    destination_marker,
};

inline std::string_view to_string(EntityKind k) {
    switch (k) {
        case EntityKind::pedestrian: return "pedestrian";
        case EntityKind::vehicle: return "vehicle";
        case EntityKind::debris_light: return "debris_light";
        case EntityKind::debris_heavy: return "debris_heavy";
        case EntityKind::wall: return "wall";
        case EntityKind::charging_station: return "charging_station";
        case EntityKind::destination_marker: return "destination_marker";
    }
    return "?";
}

inline std::optional<EntityKind> entity_kind_from_string(std::string_view s) {
    for (int i = 0; i <= static_cast<int>(EntityKind::destination_marker); ++i) {
        auto k = static_cast<EntityKind>(i);
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

/// How the sensor classifies each entity kind.
inline ObservableKind observable_of(EntityKind k) {
    switch (k) {
        case EntityKind::pedestrian: return ObservableKind::human;
        case EntityKind::vehicle: return ObservableKind::vehicle_like;
        case EntityKind::debris_light: return ObservableKind::small_object;
        case EntityKind::debris_heavy: return ObservableKind::large_object;
        case EntityKind::wall: return ObservableKind::structure;
        case EntityKind::charging_station: return ObservableKind::station;
        case EntityKind::destination_marker: return ObservableKind::marker;
    }
    return ObservableKind::large_object;
}

inline BandMask default_bands(EntityKind k) {
    switch (k) {
        case EntityKind::pedestrian: return kGroundBit | kCarBit;
        case EntityKind::vehicle: return kGroundBit | kCarBit;
        case EntityKind::debris_light: return kGroundBit;
        case EntityKind::debris_heavy: return kGroundBit;
        case EntityKind::wall: return kAllBands;
        case EntityKind::charging_station: return kGroundBit | kCarBit;
        case EntityKind::destination_marker: return kGroundBit;
    }
    return kGroundBit;
}

/// Solid kinds stop the ego on contact; the rest are driven over or through.
inline bool is_blocking(EntityKind k) {
    return k == EntityKind::wall || k == EntityKind::vehicle ||
           k == EntityKind::charging_station;
}

struct Entity {
    std::string id;
    EntityKind kind = EntityKind::wall;
    Vec2 position;
    Vec2 velocity;                 // used when no waypoints are scripted
    double extent = 0.5;           // radius, m
    BandMask bands = kGroundBit;
    std::vector<Vec2> waypoints;   // scripted path; empty = stationary/ballistic
    double speed = 0.0;            // m/s along waypoints
    double depart_time = 0.0;      // stationary until then
    double depart_jitter_s = 0.0;  // uniform jitter added from the scenario seed
};

struct EgoStart {
    std::string id;
    Vec2 position;
    double heading = 0.0;
    std::string destination;       // waypoint node id
    bool passenger = false;
    double battery_actual = 1.0;
    std::optional<double> trip_cost;   // defaults to path length * drain rate
    bool broadcast_noise = false;      // fault-injection fixture for mesh scoring
};

struct WaypointGraph {
    std::map<std::string, Vec2> nodes;
    std::vector<std::pair<std::string, std::string>> edges;   // traversable both ways

    double edge_length(const std::pair<std::string, std::string>& e) const {
        return (nodes.at(e.first) - nodes.at(e.second)).norm();
    }

    std::map<std::string, std::vector<std::string>> adjacency() const {
        std::map<std::string, std::vector<std::string>> adj;
        for (const auto& [a, b] : edges) {
            adj[a].push_back(b);
            adj[b].push_back(a);
        }
        return adj;
    }

    /// Dijkstra; returns node sequence including both endpoints, empty if
    /// unreachable. `banned` excludes one directed edge (used by Reroute).
    std::vector<std::string> shortest_path(
        const std::string& from, const std::string& to,
        std::optional<std::pair<std::string, std::string>> banned = std::nullopt) const {
        if (!nodes.count(from) || !nodes.count(to)) return {};
        auto adj = adjacency();
        std::map<std::string, double> dist;
        std::map<std::string, std::string> prev;
        using Item = std::pair<double, std::string>;
        std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
        dist[from] = 0.0;
        pq.push({0.0, from});
        while (!pq.empty()) {
            auto [d, u] = pq.top();
            pq.pop();
            if (d > dist[u]) continue;
            if (u == to) break;
            auto it = adj.find(u);
            if (it == adj.end()) continue;
            for (const std::string& v : it->second) {
                if (banned && ((banned->first == u && banned->second == v) ||
                               (banned->first == v && banned->second == u)))
                    continue;
                double nd = d + (nodes.at(u) - nodes.at(v)).norm();
                auto dit = dist.find(v);
                if (dit == dist.end() || nd < dit->second - 1e-12) {
                    dist[v] = nd;
                    prev[v] = u;
                    pq.push({nd, v});
                }
            }
        }
        if (!dist.count(to)) return {};
        std::vector<std::string> path{to};
        while (path.back() != from) path.push_back(prev.at(path.back()));
        std::reverse(path.begin(), path.end());
        return path;
    }

    std::string nearest_node(Vec2 p) const {
        std::string best;
        double best_d = 0.0;
        for (const auto& [id, pos] : nodes) {
            double d = (pos - p).norm();
            if (best.empty() || d < best_d) {
                best = id;
                best_d = d;
            }
        }
        return best;
    }
};

enum class EnvironmentProfile : std::uint8_t { urban = 0, suburban, rural, highway };

inline std::string_view to_string(EnvironmentProfile p) {
    switch (p) {
        case EnvironmentProfile::urban: return "urban";
        case EnvironmentProfile::suburban: return "suburban";
        case EnvironmentProfile::rural: return "rural";
        case EnvironmentProfile::highway: return "highway";
    }
    return "?";
}

inline std::optional<EnvironmentProfile> profile_from_string(std::string_view s) {
    for (int i = 0; i <= static_cast<int>(EnvironmentProfile::highway); ++i) {
        auto p = static_cast<EnvironmentProfile>(i);
        if (to_string(p) == s) return p;
    }
    return std::nullopt;
}

struct Rect {
    Vec2 min;
    Vec2 max;
    bool contains(Vec2 p) const {
        return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y;
    }
    Vec2 clamp(Vec2 p) const {
        return {std::clamp(p.x, min.x, max.x), std::clamp(p.y, min.y, max.y)};
    }
};

struct SpawnEvent {
    double time = 0.0;
    Entity entity;
};

struct Scenario {
    std::string id;
    Rect map_bounds{{0, 0}, {100, 100}};
    std::vector<Entity> static_entities;
    std::vector<SpawnEvent> spawn_events;   // sorted by time
    std::vector<EgoStart> ego_starts;
    WaypointGraph waypoint_graph;
    std::uint64_t seed = 0;
    double duration = 30.0;
    double speed_limit_kph = 50.0;
    EnvironmentProfile profile = EnvironmentProfile::urban;
};

// ---------------------------------------------------------------------------
// Live state

struct EntityState {
    Entity def;
    Vec2 position;
    Vec2 velocity;
    std::size_t waypoint_index = 0;
    double depart_time = 0.0;   // jitter already applied
    bool active = true;
};

/// Control applied to an ego for one tick.
struct EgoControl {
    double target_speed_mps = 0.0;
    double steer_deg = 0.0;
    bool reverse = false;
};

struct EgoState {
    std::string id;
    Vec2 position;
    double heading = 0.0;
    double speed = 0.0;          // m/s, magnitude
    bool reversing = false;
    EgoControl control;
    double accel_long = 0.0;     // last tick, m/s^2
    double accel_lat = 0.0;
    std::set<std::string> contacts;   // entity/ego ids currently overlapping
    bool disabled = false;            // stopped by maintenance auto-disable
};

struct CollisionEvent {
    std::int64_t tick = 0;
    std::string ego_id;
    EntityKind entity_kind = EntityKind::wall;
    std::string entity_id;
    double impact_speed = 0.0;       // relative speed at contact, m/s
    double impact_bearing = 0.0;     // rad, ego frame
    double ego_deceleration_peak = 0.0;   // m/s^2 over the event
};

struct Detection {
    ObservableKind kind = ObservableKind::large_object;
    double bearing = 0.0;            // rad, ego frame, [-pi, pi)
    double distance = 0.0;           // m, center-to-center
    double radial_speed = 0.0;       // m/s, negative = approaching
    BandMask bands = kGroundBit;
    double angular_halfwidth = 0.0;  // rad, from the entity's extent
    std::string entity_id;           // provenance, not part of the pattern
};

struct SensorSnapshot {
    std::int64_t tick = 0;
    Vec2 ego_position;
    double ego_heading = 0.0;
    double ego_speed = 0.0;          // m/s
    std::vector<Detection> detections;
    bool passenger_onboard = false;
};

/// Jittered departure times for every entity (static first, then spawned),
/// drawn from the scenario's child seed. One draw per entity keeps the
/// stream stable regardless of which entities carry jitter; tests recompute
/// commitment times with this.
inline std::vector<double> entity_depart_times(const Scenario& sc, std::uint64_t master_seed) {
    Rng rng(child_seed(master_seed, "spawn"));
    std::vector<double> out;
    auto add = [&](const Entity& e) {
        double u = rng.next_double();
        out.push_back(e.depart_time + (e.depart_jitter_s > 0 ? u * e.depart_jitter_s : 0.0));
    };
    for (const Entity& e : sc.static_entities) add(e);
    for (const SpawnEvent& ev : sc.spawn_events) add(ev.entity);
    return out;
}

class WorldState {
  public:
    WorldState() = default;

    /// Builds the initial state; depart-time jitter comes from the scenario
    /// child seed via entity_depart_times.
    static WorldState create(const Scenario& scenario, std::uint64_t master_seed,
                             const SimConfig& cfg = {}) {
        WorldState w;
        w.scenario_ = scenario;
        w.cfg_ = cfg;
        std::vector<double> departs = entity_depart_times(scenario, master_seed);
        std::size_t next = 0;
        auto init_entity = [&](const Entity& e) {
            EntityState s;
            s.def = e;
            s.position = e.position;
            s.velocity = e.velocity;
            s.depart_time = departs[next++];
            return s;
        };
        for (const Entity& e : scenario.static_entities) w.entities_.push_back(init_entity(e));
        for (const SpawnEvent& ev : scenario.spawn_events) {
            EntityState s = init_entity(ev.entity);
            s.active = false;
            w.pending_.push_back({ev.time, w.entities_.size()});
            w.entities_.push_back(s);
        }
        for (const EgoStart& start : scenario.ego_starts) {
            EgoState ego;
            ego.id = start.id;
            ego.position = start.position;
            ego.heading = start.heading;
            w.egos_.push_back(ego);
        }
        return w;
    }

    std::int64_t tick() const { return tick_; }
    double now() const { return static_cast<double>(tick_) * cfg_.tick_s; }
    const Scenario& scenario() const { return scenario_; }
    const SimConfig& config() const { return cfg_; }
    const std::vector<EntityState>& entities() const { return entities_; }
    const std::vector<EgoState>& egos() const { return egos_; }

    EgoState& ego(const std::string& id) {
        for (EgoState& e : egos_)
            if (e.id == id) return e;
        throw std::out_of_range("unknown ego id: " + id);
    }
    const EgoState& ego(const std::string& id) const {
        return const_cast<WorldState*>(this)->ego(id);
    }

    void set_control(const std::string& ego_id, const EgoControl& c) { ego(ego_id).control = c; }

    /// Advance one tick: spawns, scripted entities, ego kinematics, then
    /// collision detection against egos. Deterministic; entities clamp at
    /// map bounds.
    std::vector<CollisionEvent> step(double dt) {
        ++tick_;
        const double now_s = now();
        for (auto& [t, idx] : pending_)
            if (!entities_[idx].active && t <= now_s) entities_[idx].active = true;

        for (EntityState& e : entities_) {
            if (!e.active) continue;
            step_entity(e, now_s, dt);
            e.position = scenario_.map_bounds.clamp(e.position);
        }
        for (EgoState& ego : egos_) {
            step_ego(ego, dt);
            ego.position = scenario_.map_bounds.clamp(ego.position);
        }
        return detect_collisions(dt);
    }

    /// Synthetic sensing for one ego: one detection per entity (and per
    /// other ego, seen as vehicle_like) within range.
    SensorSnapshot sense(const std::string& ego_id, bool passenger_onboard = false) const {
        const EgoState& me = ego(ego_id);
        SensorSnapshot snap;
        snap.tick = tick_;
        snap.ego_position = me.position;
        snap.ego_heading = me.heading;
        snap.ego_speed = me.speed;
        snap.passenger_onboard = passenger_onboard;
        auto add = [&](const std::string& id, ObservableKind kind, Vec2 pos, Vec2 vel,
                       double extent, BandMask bands) {
            Vec2 rel = pos - me.position;
            double dist = rel.norm();
            if (dist > cfg_.vehicle.sensor_range_m || dist == 0.0) return;
            Detection d;
            d.kind = kind;
            d.bearing = wrap_angle(rel.bearing() - me.heading);
            d.distance = dist;
            Vec2 my_vel = unit(me.heading) * (me.reversing ? -me.speed : me.speed);
            Vec2 rel_vel = vel - my_vel;
            d.radial_speed = rel.dot(rel_vel) / dist;   // negative = approaching
            d.bands = bands;
            d.angular_halfwidth = std::asin(std::min(1.0, extent / dist));
            d.entity_id = id;
            snap.detections.push_back(d);
        };
        for (const EntityState& e : entities_) {
            if (!e.active) continue;
            add(e.def.id, observable_of(e.def.kind), e.position, e.velocity, e.def.extent,
                e.def.bands);
        }
        for (const EgoState& other : egos_) {
            if (other.id == ego_id) continue;
            Vec2 vel = unit(other.heading) * (other.reversing ? -other.speed : other.speed);
            add(other.id, ObservableKind::vehicle_like, other.position, vel,
                cfg_.vehicle.extent_m, kGroundBit | kCarBit);
        }
        return snap;
    }

  private:
    void step_entity(EntityState& e, double now_s, double dt) {
        if (now_s < e.depart_time) return;
        if (!e.def.waypoints.empty()) {
            double budget = e.def.speed * dt;
            while (budget > 0 && e.waypoint_index < e.def.waypoints.size()) {
                Vec2 target = e.def.waypoints[e.waypoint_index];
                Vec2 delta = target - e.position;
                double d = delta.norm();
                if (d <= budget) {
                    e.position = target;
                    budget -= d;
                    ++e.waypoint_index;
                } else {
                    e.position = e.position + delta * (budget / d);
                    budget = 0;
                }
            }
            if (e.waypoint_index < e.def.waypoints.size()) {
                Vec2 delta = e.def.waypoints[e.waypoint_index] - e.position;
                double d = delta.norm();
                e.velocity = d > 1e-9 ? delta * (e.def.speed / d) : Vec2{};
            } else {
                e.velocity = {};
            }
        } else {
            e.position = e.position + e.velocity * dt;
        }
    }

    void step_ego(EgoState& ego, double dt) {
        const VehicleConfig& vc = cfg_.vehicle;
        double prev_speed = ego.speed;
        double target = std::max(0.0, ego.control.target_speed_mps);
        if (ego.disabled) target = 0.0;

        // Direction changes only happen through zero speed.
        if (ego.control.reverse != ego.reversing && ego.speed > 1e-9) target = 0.0;
        if (ego.control.reverse != ego.reversing && ego.speed <= 1e-9)
            ego.reversing = ego.control.reverse;

        if (target > ego.speed)
            ego.speed = std::min(target, ego.speed + vc.accel_limit * dt);
        else
            ego.speed = std::max(target, ego.speed - vc.brake_limit * dt);

        double steer = std::clamp(ego.control.steer_deg, -vc.max_steer_deg, vc.max_steer_deg);
        double yaw_rate = 0.0;
        if (ego.speed > 1e-9) {
            double signed_speed = ego.reversing ? -ego.speed : ego.speed;
            yaw_rate = signed_speed / vc.wheelbase_m * std::tan(deg2rad(steer));
            ego.heading = wrap_angle(ego.heading + yaw_rate * dt);
            ego.position = ego.position + unit(ego.heading) * (signed_speed * dt);
        }
        ego.accel_long = (ego.speed - prev_speed) / dt;
        ego.accel_lat = ego.speed * yaw_rate;
    }

    std::vector<CollisionEvent> detect_collisions(double dt) {
        std::vector<CollisionEvent> events;
        for (EgoState& ego : egos_) {
            std::set<std::string> current;
            auto check = [&](const std::string& other_id, EntityKind kind, Vec2 pos, Vec2 vel,
                             double extent) {
                if (kind == EntityKind::destination_marker) return;   // non-physical
                Vec2 rel = pos - ego.position;
                double overlap = cfg_.vehicle.extent_m + extent - rel.norm();
                if (overlap <= 0.0) return;
                current.insert(other_id);
                if (ego.contacts.count(other_id)) return;   // still the same contact episode
                Vec2 my_vel = unit(ego.heading) * (ego.reversing ? -ego.speed : ego.speed);
                CollisionEvent ev;
                ev.tick = tick_;
                ev.ego_id = ego.id;
                ev.entity_kind = kind;
                ev.entity_id = other_id;
                ev.impact_speed = (vel - my_vel).norm();
                ev.impact_bearing = wrap_angle(rel.bearing() - ego.heading);
                if (is_blocking(kind)) {
                    ev.ego_deceleration_peak =
                        ev.impact_speed * ev.impact_speed / (2.0 * cfg_.damage.crush_distance_m);
                    // The body crumples against the obstacle and the ego stops there.
                    ego.speed = 0.0;
                    double push = overlap + 1e-6;
                    double d = rel.norm();
                    if (d > 1e-9) ego.position = ego.position - rel * (push / d);
                } else {
                    ev.ego_deceleration_peak = std::hypot(ego.accel_long, ego.accel_lat);
                }
                events.push_back(ev);
            };
            for (const EntityState& e : entities_) {
                if (!e.active) continue;
                check(e.def.id, e.def.kind, e.position, e.velocity, e.def.extent);
            }
            for (const EgoState& other : egos_) {
                if (other.id == ego.id) continue;
                Vec2 vel = unit(other.heading) * (other.reversing ? -other.speed : other.speed);
                check(other.id, EntityKind::vehicle, other.position, vel, cfg_.vehicle.extent_m);
            }
            ego.contacts = std::move(current);
        }
        (void)dt;
        return events;
    }

    Scenario scenario_;
    SimConfig cfg_;
    std::int64_t tick_ = 0;
    std::vector<EntityState> entities_;
    std::vector<std::pair<double, std::size_t>> pending_;   // spawn time -> entity index
    std::vector<EgoState> egos_;
};

/// Damage realization rules. debris_light never damages anything; humans
/// above the threat threshold cost near-total body health; solid obstacles
/// follow the quadratic speed law.
inline DamageVector realize_damage(const CollisionEvent& event, bool passenger_onboard,
                                   const DamageConfig& cfg = {}) {
    DamageVector dv;
    switch (event.entity_kind) {
        case EntityKind::debris_light:
        case EntityKind::destination_marker:
            return dv;
        case EntityKind::pedestrian:
            if (event.impact_speed > cfg.human_threat_threshold_mps) {
                dv.body = cfg.human_body_damage;
            } else {
                double ratio = event.impact_speed / cfg.full_damage_speed_mps;
                dv.body = std::min(1.0, ratio * ratio);
            }
            break;
        default: {
            double ratio = event.impact_speed / cfg.full_damage_speed_mps;
            dv.body = std::min(1.0, ratio * ratio);
            if (std::abs(event.impact_bearing) > cfg.side_bearing_rad)
                dv.wheels = cfg.wheels_fraction * dv.body;
            break;
        }
    }
    if (passenger_onboard)
        dv.passenger_injury =
            clamp01((event.ego_deceleration_peak - cfg.injury_comfort_decel) / cfg.injury_decel_span);
    return dv;
}

/// Event log line: tick,ego_id,entity_kind,impact_speed,impact_bearing,decel_peak
inline std::string event_csv_row(const CollisionEvent& ev) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld,%s,%s,%.6f,%.6f,%.6f",
                  static_cast<long long>(ev.tick), ev.ego_id.c_str(),
                  std::string(to_string(ev.entity_kind)).c_str(), ev.impact_speed,
                  ev.impact_bearing, ev.ego_deceleration_peak);
    return buf;
}

} // namespace homeo
