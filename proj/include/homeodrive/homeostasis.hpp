#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>

#include "homeodrive/geometry.hpp"

namespace homeo {

/// Per-crash damage deltas, all in [0,1].
struct DamageVector {
    double body = 0.0;
    double wheels = 0.0;
    double engine = 0.0;
    double battery = 0.0;
    double passenger_injury = 0.0;

    bool operator==(const DamageVector&) const = default;

    bool zero() const {
        return body == 0.0 && wheels == 0.0 && engine == 0.0 && battery == 0.0 &&
               passenger_injury == 0.0;
    }
};

struct ComponentWeights {
    double body = 0.35;
    double wheels = 0.25;
    double engine = 0.20;
    double battery = 0.20;
};

/// The vehicle's "self": component health, virtual battery and credits.
/// battery_virtual is the *perceived* charge: encoding a destination lowers
/// it by the projected trip cost so the deficit motivates the trip; it never
/// exceeds battery_actual.
struct HomeostasisState {
    double body = 1.0;
    double wheels = 1.0;
    double engine = 1.0;
    double battery_actual = 1.0;
    double battery_virtual = 1.0;
    double credits = 0.0;
    double passenger_health = 1.0;
    bool passenger_onboard = false;
    ComponentWeights weights;
};

struct MaintenanceDecision {
    enum class Verdict { ok, auto_disable, auto_repair_route };
    Verdict verdict = Verdict::ok;
    std::string component;   // which component crossed the threshold
    double value = 1.0;
};

struct HomeostasisConfig {
    double disable_threshold = 0.3;
    double repair_band_low = 0.3;
    double repair_band_high = 0.7;
    double premium = 0.05;
};

/// Weighted scalar well-being in [0,1]; 1 = pristine baseline. The battery
/// term uses the virtual charge so an encoded destination reads as a deficit.
/// With a passenger onboard the passenger term dominates via min.
inline double aggregate(const HomeostasisState& s) {
    const ComponentWeights& w = s.weights;
    double v = w.body * s.body + w.wheels * s.wheels + w.engine * s.engine +
               w.battery * s.battery_virtual;
    if (s.passenger_onboard) v = std::min(v, s.passenger_health);
    return clamp01(v);
}

inline HomeostasisState apply_damage(HomeostasisState s, const DamageVector& dv) {
    s.body = std::max(0.0, s.body - dv.body);
    s.wheels = std::max(0.0, s.wheels - dv.wheels);
    s.engine = std::max(0.0, s.engine - dv.engine);
    s.battery_actual = std::max(0.0, s.battery_actual - dv.battery);
    s.battery_virtual = std::min(s.battery_virtual, s.battery_actual);
    if (s.passenger_onboard)
        s.passenger_health = std::max(0.0, s.passenger_health - dv.passenger_injury);
    return s;
}

/// Energy spent while driving; the perceived charge only follows the real
/// one downward (there is no path that raises battery_virtual here).
inline HomeostasisState drain_battery(HomeostasisState s, double amount) {
    s.battery_actual = std::max(0.0, s.battery_actual - amount);
    s.battery_virtual = std::min(s.battery_virtual, s.battery_actual);
    return s;
}

struct InsufficientCharge : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Encode a trip: the virtual battery drops by cost + premium while the real
/// charge is untouched. Refuses (throws) when the reserve would not fit.
inline HomeostasisState encode_destination(HomeostasisState s, double trip_cost,
                                           double premium) {
    if (trip_cost + premium >= s.battery_actual)
        throw InsufficientCharge("insufficient charge for trip: need " +
                                 std::to_string(trip_cost + premium) + ", have " +
                                 std::to_string(s.battery_actual));
    s.battery_virtual = s.battery_actual - (trip_cost + premium);
    return s;
}

/// Arrival reward: credits for the encoded cost, virtual battery restored.
inline HomeostasisState award_credits(HomeostasisState s, double trip_cost,
                                      double premium) {
    s.credits += trip_cost + premium;
    s.battery_virtual = s.battery_actual;
    return s;
}

/// Convert accumulated credits to real charge (capped at full).
inline HomeostasisState redeem_at_station(HomeostasisState s) {
    s.battery_actual = std::min(1.0, s.battery_actual + s.credits);
    s.credits = 0.0;
    s.battery_virtual = s.battery_actual;
    return s;
}

inline MaintenanceDecision maintenance_check(const HomeostasisState& s,
                                             const HomeostasisConfig& cfg = {}) {
    // auto_disable takes precedence over repair routing.
    if (s.engine < cfg.disable_threshold)
        return {MaintenanceDecision::Verdict::auto_disable, "engine", s.engine};
    if (s.battery_actual < cfg.disable_threshold)
        return {MaintenanceDecision::Verdict::auto_disable, "battery", s.battery_actual};
    auto in_band = [&](double v) { return v > cfg.repair_band_low && v < cfg.repair_band_high; };
    if (in_band(s.body))
        return {MaintenanceDecision::Verdict::auto_repair_route, "body", s.body};
    if (in_band(s.wheels))
        return {MaintenanceDecision::Verdict::auto_repair_route, "wheels", s.wheels};
    return {};
}

} // namespace homeo
