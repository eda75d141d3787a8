#pragma once

#include <cstdint>

#include "homeodrive/geometry.hpp"
#include "homeodrive/homeostasis.hpp"

namespace homeo {

struct DamageConfig {
    double full_damage_speed_mps = 25.0;   // quadratic reference: body = (v/25)^2
    double human_body_damage = 0.98;       // near-total, above the threat threshold
    double human_threat_threshold_mps = 10.0 / 3.6;   // 10 kph
    double injury_comfort_decel = 8.0;     // m/s^2, below this no injury
    double injury_decel_span = 20.0;       // injury = (decel - comfort)/span
    double side_bearing_rad = 2.0 * kPi / 3.0;   // |bearing| beyond this scrapes wheels
    double wheels_fraction = 0.5;
    double crush_distance_m = 0.5;         // blocking impact decel = v^2/(2*crush)
};

struct VehicleConfig {
    double extent_m = 0.9;                 // ego collision radius
    double wheelbase_m = 2.5;
    double max_steer_deg = 35.0;
    double accel_limit = 3.0;              // m/s^2
    double brake_limit = 8.0;              // m/s^2
    double reverse_speed_kph = 5.0;
    double sensor_range_m = 60.0;
    double arrival_radius_m = 2.0;
};

struct FieldConfig {
    int angular_bins = 1440;               // paper-scale max 14400 stays configurable
    int radial_shells = 20;
    static constexpr double shell_spacing_m = 0.5;
    double projection_horizon_s = 1.0;     // tau_proj
    double recovery_rate = 0.2;            // alpha, safety/s
    int confirmation_ticks = 10;           // K
    double rate_gain = 1.0;                // lambda
    double outer_fold_per_m = 0.01;        // safety added per meter beyond coverage
    double human_calm_safety = 0.6;        // human cells below the speed threshold
    double human_threat_threshold_mps = 10.0 / 3.6;

    double coverage_m() const { return radial_shells * shell_spacing_m; }
};

struct PlannerConfig {
    double horizon_s = 10.0;
    int branch_count = 3;
    double beta = 10.0;                    // likelihood sharpness
    double hysteresis = 0.15;
    int regen_ticks = 20;                  // regenerate branches every 1 s
    double danger_floor = 0.05;            // hierarchy override threshold
    double solid_block_threshold = 0.55;   // solid-tagged cells at or below are uncrossable
    double caution_scale_threshold = 0.5;
    double agreement_speed_gap_kph = 5.0;
    double agreement_steer_gap_deg = 5.0;
    double pessimistic_approach_mps = 2.0; // assumed lateral speed of a committing hazard
    double outer_caution_threshold = 0.55; // mesh-relayed outer band below this caps speed
    double turn_rate_deg_s = 30.0;         // nominal yaw budget for Turn commands
    double injury_filter_margin = 0.05;    // passenger mode: branches within this of min injury
};

struct MeshConfig {
    double range_m = 100.0;
    double loss_probability = 0.05;
    int latency_ticks = 1;
    int ttl_hops = 2;
    double hazard_threshold = 0.3;         // cells at or below this are shared
    int hazard_cap = 32;
    double novelty_threshold = 0.5;
    double confirm_threshold = 0.3;
    double score_horizon_s = 10.0;
    double reputation_saturation = 10.0;   // w = clamp(0.5 + score/20, 0, 1)
};

struct EnergyConfig {
    double drain_per_meter = 0.0005;       // charge fraction per meter driven
    double idle_drain_per_s = 0.0001;
};

struct LedgerConfig {
    double mae_worsen_limit = 0.02;        // gate: candidate MAE may not worsen more
    int relevance_threshold = 2;
};

struct SimConfig {
    DamageConfig damage;
    VehicleConfig vehicle;
    FieldConfig field;
    PlannerConfig planner;
    MeshConfig mesh;
    EnergyConfig energy;
    HomeostasisConfig homeostasis;
    LedgerConfig ledger;
    double tick_s = kTickSeconds;
};

} // namespace homeo
