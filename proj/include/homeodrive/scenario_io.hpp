#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "homeodrive/config.hpp"
#include "homeodrive/world.hpp"

namespace homeo {

struct ScenarioError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

using nlohmann::json;

inline Vec2 parse_vec2(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw ScenarioError(where + ": expected [x, y]");
    return {j[0].get<double>(), j[1].get<double>()};
}

inline BandMask parse_bands(const json& j, const std::string& where) {
    BandMask mask = 0;
    if (!j.is_array()) throw ScenarioError(where + ": expected array of band names");
    for (const auto& b : j) {
        std::string name = b.get<std::string>();
        if (name == "ground")
            mask |= kGroundBit;
        else if (name == "car_level")
            mask |= kCarBit;
        else if (name == "above")
            mask |= kAboveBit;
        else
            throw ScenarioError(where + ": unknown band '" + name + "'");
    }
    return mask;
}

inline Entity parse_entity(const json& j, const std::string& where) {
    Entity e;
    if (!j.contains("id")) throw ScenarioError(where + ".id: missing");
    e.id = j.at("id").get<std::string>();
    std::string kind = j.value("kind", "");
    auto k = entity_kind_from_string(kind);
    if (!k) throw ScenarioError(where + ".kind: unknown kind '" + kind + "'");
    e.kind = *k;
    e.position = parse_vec2(j.at("position"), where + ".position");
    if (j.contains("velocity")) e.velocity = parse_vec2(j.at("velocity"), where + ".velocity");
    e.extent = j.value("extent", 0.5);
    if (e.extent <= 0) throw ScenarioError(where + ".extent: must be > 0");
    e.bands = j.contains("bands") ? parse_bands(j.at("bands"), where + ".bands")
                                  : default_bands(e.kind);
    if (e.kind == EntityKind::pedestrian) e.bands |= kGroundBit | kCarBit;
    if (j.contains("waypoints"))
        for (std::size_t i = 0; i < j.at("waypoints").size(); ++i)
            e.waypoints.push_back(parse_vec2(j.at("waypoints")[i],
                                             where + ".waypoints[" + std::to_string(i) + "]"));
    e.speed = j.value("speed", 0.0);
    e.depart_time = j.value("depart_time", 0.0);
    e.depart_jitter_s = j.value("depart_jitter_s", 0.0);
    return e;
}

/// Partial overrides for SimConfig; only listed keys change.
inline void patch_config(SimConfig& cfg, const json& j) {
    auto num = [&](const json& section, const char* key, double& out) {
        if (section.contains(key)) out = section.at(key).get<double>();
    };
    auto inum = [&](const json& section, const char* key, int& out) {
        if (section.contains(key)) out = section.at(key).get<int>();
    };
    if (j.contains("field")) {
        const json& f = j.at("field");
        inum(f, "angular_bins", cfg.field.angular_bins);
        inum(f, "radial_shells", cfg.field.radial_shells);
        inum(f, "confirmation_ticks", cfg.field.confirmation_ticks);
        num(f, "projection_horizon_s", cfg.field.projection_horizon_s);
        num(f, "recovery_rate", cfg.field.recovery_rate);
        num(f, "rate_gain", cfg.field.rate_gain);
        num(f, "outer_fold_per_m", cfg.field.outer_fold_per_m);
        num(f, "human_calm_safety", cfg.field.human_calm_safety);
        num(f, "human_threat_threshold_mps", cfg.field.human_threat_threshold_mps);
        if (cfg.field.angular_bins < 8) throw ScenarioError("config.field.angular_bins: minimum 8");
        if (cfg.field.angular_bins > 14400)
            throw ScenarioError("config.field.angular_bins: maximum 14400");
        if (cfg.field.radial_shells < 2)
            throw ScenarioError("config.field.radial_shells: minimum 2");
    }
    if (j.contains("vehicle")) {
        const json& v = j.at("vehicle");
        num(v, "extent_m", cfg.vehicle.extent_m);
        num(v, "wheelbase_m", cfg.vehicle.wheelbase_m);
        num(v, "max_steer_deg", cfg.vehicle.max_steer_deg);
        num(v, "accel_limit", cfg.vehicle.accel_limit);
        num(v, "brake_limit", cfg.vehicle.brake_limit);
        num(v, "sensor_range_m", cfg.vehicle.sensor_range_m);
        num(v, "arrival_radius_m", cfg.vehicle.arrival_radius_m);
    }
    if (j.contains("damage")) {
        const json& d = j.at("damage");
        num(d, "full_damage_speed_mps", cfg.damage.full_damage_speed_mps);
        num(d, "human_body_damage", cfg.damage.human_body_damage);
        num(d, "human_threat_threshold_mps", cfg.damage.human_threat_threshold_mps);
        num(d, "injury_comfort_decel", cfg.damage.injury_comfort_decel);
        num(d, "injury_decel_span", cfg.damage.injury_decel_span);
        num(d, "crush_distance_m", cfg.damage.crush_distance_m);
    }
    if (j.contains("planner")) {
        const json& p = j.at("planner");
        num(p, "beta", cfg.planner.beta);
        num(p, "hysteresis", cfg.planner.hysteresis);
        inum(p, "regen_ticks", cfg.planner.regen_ticks);
        num(p, "danger_floor", cfg.planner.danger_floor);
        num(p, "caution_scale_threshold", cfg.planner.caution_scale_threshold);
        num(p, "outer_caution_threshold", cfg.planner.outer_caution_threshold);
        num(p, "pessimistic_approach_mps", cfg.planner.pessimistic_approach_mps);
        inum(p, "branch_count", cfg.planner.branch_count);
    }
    if (j.contains("mesh")) {
        const json& m = j.at("mesh");
        num(m, "range_m", cfg.mesh.range_m);
        num(m, "loss_probability", cfg.mesh.loss_probability);
        inum(m, "latency_ticks", cfg.mesh.latency_ticks);
        inum(m, "ttl_hops", cfg.mesh.ttl_hops);
        num(m, "hazard_threshold", cfg.mesh.hazard_threshold);
        inum(m, "hazard_cap", cfg.mesh.hazard_cap);
        num(m, "novelty_threshold", cfg.mesh.novelty_threshold);
        num(m, "confirm_threshold", cfg.mesh.confirm_threshold);
        num(m, "score_horizon_s", cfg.mesh.score_horizon_s);
        if (cfg.mesh.loss_probability < 0 || cfg.mesh.loss_probability > 1)
            throw ScenarioError("config.mesh.loss_probability: must be in [0,1]");
    }
    if (j.contains("energy")) {
        const json& e = j.at("energy");
        num(e, "drain_per_meter", cfg.energy.drain_per_meter);
        num(e, "idle_drain_per_s", cfg.energy.idle_drain_per_s);
    }
    if (j.contains("homeostasis")) {
        const json& h = j.at("homeostasis");
        num(h, "disable_threshold", cfg.homeostasis.disable_threshold);
        num(h, "repair_band_low", cfg.homeostasis.repair_band_low);
        num(h, "repair_band_high", cfg.homeostasis.repair_band_high);
        num(h, "premium", cfg.homeostasis.premium);
    }
    if (j.contains("ledger")) {
        const json& l = j.at("ledger");
        num(l, "mae_worsen_limit", cfg.ledger.mae_worsen_limit);
        inum(l, "relevance_threshold", cfg.ledger.relevance_threshold);
    }
}

} // namespace detail

struct LoadedScenario {
    Scenario scenario;
    SimConfig config;   // defaults + scenario "config" patch
};

/// Parse and fully validate a scenario document. Every invariant from the
/// schema is enforced here; errors name the offending field.
inline LoadedScenario load_scenario_text(const std::string& text,
                                         const SimConfig& base_cfg = {}) {
    using nlohmann::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ScenarioError(std::string("scenario parse error: ") + e.what());
    }
    if (j.value("schema", 0) != 1) throw ScenarioError("schema: expected 1");

    LoadedScenario out;
    out.config = base_cfg;
    if (j.contains("config")) detail::patch_config(out.config, j.at("config"));

    Scenario& s = out.scenario;
    s.id = j.value("id", "");
    if (s.id.empty()) throw ScenarioError("id: missing");
    if (!j.contains("map_bounds")) throw ScenarioError("map_bounds: missing");
    s.map_bounds.min = detail::parse_vec2(j.at("map_bounds").at("min"), "map_bounds.min");
    s.map_bounds.max = detail::parse_vec2(j.at("map_bounds").at("max"), "map_bounds.max");
    if (s.map_bounds.max.x <= s.map_bounds.min.x || s.map_bounds.max.y <= s.map_bounds.min.y)
        throw ScenarioError("map_bounds: max must exceed min");
    s.duration = j.value("duration", 30.0);
    if (s.duration <= 0) throw ScenarioError("duration: must be > 0");
    s.seed = j.value("seed", 0);
    s.speed_limit_kph = j.value("speed_limit_kph", 50.0);
    if (j.contains("profile")) {
        auto p = profile_from_string(j.at("profile").get<std::string>());
        if (!p) throw ScenarioError("profile: unknown value");
        s.profile = *p;
    }

    std::set<std::string> ids;
    auto check_id = [&](const std::string& id, const std::string& where) {
        if (!ids.insert(id).second)
            throw ScenarioError(where + ": duplicate entity id '" + id + "'");
    };
    if (j.contains("entities"))
        for (std::size_t i = 0; i < j.at("entities").size(); ++i) {
            std::string where = "entities[" + std::to_string(i) + "]";
            Entity e = detail::parse_entity(j.at("entities")[i], where);
            check_id(e.id, where);
            if (!s.map_bounds.contains(e.position))
                throw ScenarioError(where + ".position: outside map_bounds");
            s.static_entities.push_back(e);
        }
    if (j.contains("spawn_events")) {
        double prev = -1.0;
        for (std::size_t i = 0; i < j.at("spawn_events").size(); ++i) {
            std::string where = "spawn_events[" + std::to_string(i) + "]";
            const auto& ev = j.at("spawn_events")[i];
            SpawnEvent spawn;
            spawn.time = ev.value("time", -1.0);
            if (spawn.time < 0) throw ScenarioError(where + ".time: must be >= 0");
            if (spawn.time < prev) throw ScenarioError(where + ".time: not sorted");
            prev = spawn.time;
            spawn.entity = detail::parse_entity(ev.at("entity"), where + ".entity");
            check_id(spawn.entity.id, where + ".entity");
            if (!s.map_bounds.contains(spawn.entity.position))
                throw ScenarioError(where + ".entity.position: outside map_bounds");
            s.spawn_events.push_back(spawn);
        }
    }

    if (j.contains("waypoints")) {
        const auto& wp = j.at("waypoints");
        if (wp.contains("nodes"))
            for (const auto& [name, pos] : wp.at("nodes").items())
                s.waypoint_graph.nodes[name] =
                    detail::parse_vec2(pos, "waypoints.nodes." + name);
        if (wp.contains("edges"))
            for (std::size_t i = 0; i < wp.at("edges").size(); ++i) {
                const auto& e = wp.at("edges")[i];
                std::string where = "waypoints.edges[" + std::to_string(i) + "]";
                if (!e.is_array() || e.size() != 2)
                    throw ScenarioError(where + ": expected [from, to]");
                std::string a = e[0].get<std::string>();
                std::string b = e[1].get<std::string>();
                if (!s.waypoint_graph.nodes.count(a) || !s.waypoint_graph.nodes.count(b))
                    throw ScenarioError(where + ": edge references unknown node");
                s.waypoint_graph.edges.emplace_back(a, b);
            }
    }

    if (!j.contains("egos") || j.at("egos").empty()) throw ScenarioError("egos: at least one required");
    for (std::size_t i = 0; i < j.at("egos").size(); ++i) {
        std::string where = "egos[" + std::to_string(i) + "]";
        const auto& e = j.at("egos")[i];
        EgoStart ego;
        ego.id = e.value("id", "ego" + std::to_string(i));
        check_id(ego.id, where);
        ego.position = detail::parse_vec2(e.at("position"), where + ".position");
        if (!s.map_bounds.contains(ego.position))
            throw ScenarioError(where + ".position: outside map_bounds");
        ego.heading = e.value("heading", 0.0);
        ego.destination = e.value("destination", "");
        if (ego.destination.empty()) throw ScenarioError(where + ".destination: missing");
        if (!s.waypoint_graph.nodes.count(ego.destination))
            throw ScenarioError(where + ".destination: unknown waypoint '" + ego.destination + "'");
        ego.passenger = e.value("passenger", false);
        ego.battery_actual = e.value("battery", 1.0);
        if (e.contains("trip_cost")) ego.trip_cost = e.at("trip_cost").get<double>();
        ego.broadcast_noise = e.value("broadcast_noise", false);
        // Reachability: nearest node to the start must reach the destination.
        std::string start_node = s.waypoint_graph.nearest_node(ego.position);
        if (start_node.empty() ||
            s.waypoint_graph.shortest_path(start_node, ego.destination).empty())
            throw ScenarioError(where + ".destination: unreachable destination '" +
                                ego.destination + "'");
        s.ego_starts.push_back(ego);
    }
    return out;
}

inline LoadedScenario load_scenario_file(const std::string& path,
                                         const SimConfig& base_cfg = {}) {
    std::ifstream in(path);
    if (!in) throw ScenarioError("cannot open scenario file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return load_scenario_text(ss.str(), base_cfg);
}

/// CLI --config files reuse the scenario config-patch vocabulary.
inline SimConfig load_config_file(const std::string& path, const SimConfig& base = {}) {
    std::ifstream in(path);
    if (!in) throw ScenarioError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ScenarioError(std::string("config parse error: ") + e.what());
    }
    SimConfig cfg = base;
    detail::patch_config(cfg, j);
    return cfg;
}

} // namespace homeo
