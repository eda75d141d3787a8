#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "homeodrive/action_lang.hpp"
#include "homeodrive/config.hpp"
#include "homeodrive/geometry.hpp"
#include "homeodrive/risk_field.hpp"
#include "homeodrive/risk_table.hpp"
#include "homeodrive/world.hpp"

namespace homeo {

/// Mission goals; the homeostasis objective is lexicographically dominant
/// (enforced by the danger-floor override in the agent loop, not by weight
/// arithmetic).
struct GoalSet {
    std::string destination;
    double w_homeostasis = 1.0;
    double w_arrival = 0.5;
    double w_energy = 0.2;
    double w_trip_time = 0.2;
    double w_compliance = 0.5;
    double speed_limit_kph = 50.0;
};

struct ControlOutput {
    double target_speed_kph = 0.0;
    double steer_deg = 0.0;
    int active_branch = 0;
    bool caution_flag = false;
    bool reverse = false;
};

/// A candidate 10-second future: a sentence plus the per-second per-bin
/// minimum safety it expects to observe.
struct TimelineBranch {
    int id = 0;   // 0 optimistic, 1 pessimistic, 2.. avoidance
    lang::Sentence sentence;
    std::vector<std::vector<float>> predicted;   // [second][bin] min safety
    double likelihood = 0.0;
    std::int64_t created_tick = 0;
};

/// Per-bin worst ground/car-level safety; the comparable summary of a field.
inline std::vector<float> per_bin_min(const RiskField& field) {
    std::vector<float> out(static_cast<std::size_t>(field.bins()), 1.0f);
    for (int bin = 0; bin < field.bins(); ++bin) {
        double v = 1.0;
        for (int shell = 0; shell < field.shells(); ++shell) {
            v = std::min(v, field.safety(Band::ground, shell, bin));
            v = std::min(v, field.safety(Band::car_level, shell, bin));
        }
        out[bin] = static_cast<float>(v);
    }
    return out;
}

namespace detail {

enum class Outlook { clears, materializes, as_observed };

/// Predicted per-second summaries from extrapolation of the current
/// detections, biased by the branch's outlook: a materializing hazard moves
/// laterally onto the ego's forward axis (and proves worse than estimated),
/// a clearing hazard drifts off it (and fades), an as-observed hazard keeps
/// its line-of-sight motion. Smoothing persistence is modelled by a running
/// minimum.
inline std::vector<std::vector<float>> predict_summary(const SensorSnapshot& snap,
                                                       const RiskTable& table,
                                                       const FieldConfig& fcfg,
                                                       const PlannerConfig& pcfg,
                                                       Outlook outlook, int seconds) {
    RiskField geom(fcfg);   // geometry reference only
    std::vector<std::vector<float>> out(
        static_cast<std::size_t>(seconds),
        std::vector<float>(static_cast<std::size_t>(fcfg.angular_bins), 1.0f));

    for (const Detection& d : snap.detections) {
        PatternKey key{d.kind, speed_bucket(d.radial_speed), distance_bucket(d.distance)};
        float v = static_cast<float>(table.estimate(key));
        if (outlook == Outlook::materializes)
            v = static_cast<float>(std::max(0.01, static_cast<double>(v) - 0.3));
        if (v >= 0.999f) continue;
        Vec2 pos0 = unit(d.bearing) * d.distance;
        // only the line-of-sight velocity component is observable
        double vx = d.radial_speed * std::cos(d.bearing);
        double vy_los = d.radial_speed * std::sin(d.bearing);
        double sign0 = pos0.y >= 0 ? 1.0 : -1.0;
        double halfwidth_m = d.distance * std::sin(d.angular_halfwidth);

        for (int t = 0; t < seconds; ++t) {
            if (outlook == Outlook::clears && t > 2) break;
            double ts = static_cast<double>(t);
            Vec2 p;
            p.x = pos0.x + vx * ts;
            switch (outlook) {
                case Outlook::materializes:
                    // commits to the path: closes on the axis and stays there
                    p.y = sign0 * std::max(0.0, std::abs(pos0.y) -
                                                    pcfg.pessimistic_approach_mps * ts);
                    break;
                case Outlook::clears:
                    p.y = sign0 * (std::abs(pos0.y) + pcfg.pessimistic_approach_mps * ts);
                    break;
                case Outlook::as_observed:
                    p.y = pos0.y + vy_los * ts;
                    break;
            }
            double dist = p.norm();
            if (dist > fcfg.coverage_m() || dist < 1e-6) continue;
            double hw = std::asin(std::min(1.0, halfwidth_m / dist));
            BinSpan span = bin_span(geom, p.bearing(), hw);
            for_each_bin(geom, span, [&](int bin) {
                auto& cell = out[static_cast<std::size_t>(t)][static_cast<std::size_t>(bin)];
                cell = std::min(cell, v);
            });
        }
    }
    // temporal persistence: a bin stays as dark as it has been; cleared
    // hazards recover at the smoothing rate
    for (int t = 1; t < seconds; ++t)
        for (std::size_t b = 0; b < out[t].size(); ++b) {
            float held = out[t - 1][b];
            if (outlook == Outlook::clears)
                held = std::min(1.0f, held + static_cast<float>(fcfg.recovery_rate));
            out[t][b] = std::min(out[t][b], held);
        }
    return out;
}

} // namespace detail

/// Three fixed-role branches: optimistic (hazard clears), pessimistic
/// (hazard materializes; all-blocked degenerates to reverse + reroute) and
/// avoidance along the minimum-risk heading. Likelihoods start uniform.
inline std::vector<TimelineBranch> generate_branches(const RiskField& field,
                                                     const SensorSnapshot& snap,
                                                     const GoalSet& goals,
                                                     const RiskTable& table,
                                                     const FieldConfig& fcfg,
                                                     const PlannerConfig& pcfg,
                                                     double goal_bearing, int n = 3) {
    n = std::max(n, 3);
    const int seconds = static_cast<int>(pcfg.horizon_s);
    HeadingChoice hint = min_risk_heading(field, goal_bearing);
    std::vector<TimelineBranch> branches;

    auto parse = [&](const std::string& text) {
        lang::Sentence s = lang::parse(text);
        s.created_tick = snap.tick;
        return s;
    };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", v);
        return std::string(buf);
    };

    TimelineBranch optimistic;
    optimistic.id = 0;
    optimistic.sentence =
        parse("speed " + num(goals.speed_limit_kph) + "kph, drive " + num(pcfg.horizon_s) + "s");
    optimistic.predicted =
        detail::predict_summary(snap, table, fcfg, pcfg, detail::Outlook::clears, seconds);
    branches.push_back(std::move(optimistic));

    TimelineBranch pessimistic;
    pessimistic.id = 1;
    if (hint.speed_scale < 0.3) {
        // every corridor is blocked: retreat and reroute
        pessimistic.sentence = parse("reverse manoeuvre, reroute via alternate road, hold " +
                                     num(pcfg.horizon_s - lang::kReverseDurationS) + "s");
    } else {
        pessimistic.sentence = parse("brake steadily until speed is 0 over 3 seconds, hold " +
                                     num(pcfg.horizon_s - 3.0) + "s");
    }
    pessimistic.predicted =
        detail::predict_summary(snap, table, fcfg, pcfg, detail::Outlook::materializes, seconds);
    branches.push_back(std::move(pessimistic));

    auto observed =
        detail::predict_summary(snap, table, fcfg, pcfg, detail::Outlook::as_observed, seconds);
    for (int k = 2; k < n; ++k) {
        TimelineBranch avoid;
        avoid.id = k;
        double heading_deg = rad2deg(hint.heading) + (k - 2) * 15.0;
        double turn_s = std::abs(heading_deg) / pcfg.turn_rate_deg_s;
        avoid.sentence = parse("speed " + num(goals.speed_limit_kph * hint.speed_scale) +
                               "kph, turn " + num(std::clamp(heading_deg, -180.0, 180.0)) +
                               "deg, drive " + num(std::max(0.0, pcfg.horizon_s - turn_s)) + "s");
        avoid.predicted = observed;
        branches.push_back(std::move(avoid));
    }

    for (TimelineBranch& b : branches) {
        b.created_tick = snap.tick;
        b.likelihood = 1.0 / static_cast<double>(branches.size());
    }
    return branches;
}

/// Bayes-style reweighting: likelihood_i <- prior_i * exp(-beta * MSE) then
/// renormalize. The compared second is the branch's age in whole seconds.
inline void update_likelihoods(std::vector<TimelineBranch>& branches,
                               const std::vector<float>& observed_bin_min,
                               std::int64_t now_tick, const PlannerConfig& pcfg,
                               double tick_s = kTickSeconds) {
    if (branches.empty()) return;
    double total = 0.0;
    for (TimelineBranch& b : branches) {
        int sec = static_cast<int>(static_cast<double>(now_tick - b.created_tick) * tick_s);
        sec = std::clamp(sec, 0, static_cast<int>(b.predicted.size()) - 1);
        const auto& pred = b.predicted[sec];
        double mse = 0.0;
        std::size_t n = std::min(pred.size(), observed_bin_min.size());
        for (std::size_t i = 0; i < n; ++i) {
            double diff = static_cast<double>(pred[i]) - static_cast<double>(observed_bin_min[i]);
            mse += diff * diff;
        }
        if (n > 0) mse /= static_cast<double>(n);
        b.likelihood *= std::exp(-pcfg.beta * mse);
        total += b.likelihood;
    }
    if (total <= 0.0 || !std::isfinite(total)) {
        for (TimelineBranch& b : branches) b.likelihood = 1.0 / branches.size();
        return;
    }
    for (TimelineBranch& b : branches) b.likelihood /= total;
}

/// Switch away from the incumbent only on a decisive margin.
inline int select_active(const std::vector<TimelineBranch>& branches,
                         std::optional<int> prev_active, double hysteresis) {
    int best = branches.front().id;
    double best_l = branches.front().likelihood;
    for (const TimelineBranch& b : branches)
        if (b.likelihood > best_l + 1e-15) {
            best = b.id;
            best_l = b.likelihood;
        }
    if (!prev_active) return best;
    const TimelineBranch* prev = nullptr;
    for (const TimelineBranch& b : branches)
        if (b.id == *prev_active) prev = &b;
    if (!prev) return best;
    if (best != prev->id && best_l - prev->likelihood >= hysteresis) return best;
    return prev->id;
}

/// Reconcile the instinctive field layer with the linguistic layer.
/// Agreement passes the sentence through; danger under a proceeding
/// sentence scales its speed down and raises caution; otherwise the more
/// conservative sentence wins.
inline ControlOutput arbitrate(const HeadingChoice& field_hint, const ControlOutput& sentence_cmd,
                               const PlannerConfig& pcfg) {
    double field_speed = field_hint.speed_scale * sentence_cmd.target_speed_kph;
    double speed_gap = std::abs(sentence_cmd.target_speed_kph - field_speed);
    double steer_gap = std::abs(sentence_cmd.steer_deg - rad2deg(field_hint.heading));
    if (speed_gap <= pcfg.agreement_speed_gap_kph && steer_gap <= pcfg.agreement_steer_gap_deg)
        return sentence_cmd;
    if (field_hint.speed_scale < pcfg.caution_scale_threshold &&
        sentence_cmd.target_speed_kph > 0.0) {
        ControlOutput out = sentence_cmd;
        out.target_speed_kph = sentence_cmd.target_speed_kph * field_hint.speed_scale;
        out.caution_flag = true;
        return out;
    }
    return sentence_cmd;
}

/// Faithful counterpart of the reference metadata generator: slice the
/// forward-sector heatmap into horizon/interval segments; a segment mean
/// below 0.5 emits a braking clause, otherwise a maintain clause.
inline lang::Sentence generate_metadata(const RiskField& field, int horizon_s = 10,
                                        int interval_s = 1) {
    std::vector<double> flat = flatten_forward_sector(field);
    const double size = static_cast<double>(flat.size());
    lang::Sentence s;
    s.created_tick = field.tick;
    for (int t = 0; t < horizon_s; t += interval_s) {
        // int(t * size / horizon) truncation, matching the reference code
        auto lo = static_cast<long long>(static_cast<double>(t) * size / horizon_s);
        auto hi = static_cast<long long>(static_cast<double>(t + interval_s) * size / horizon_s);
        bool brake = false;
        if (hi > lo) {
            double sum = 0.0;
            for (long long i = lo; i < hi; ++i) sum += flat[static_cast<std::size_t>(i)];
            brake = sum / static_cast<double>(hi - lo) < 0.5;
        }
        if (brake)
            s.commands.emplace_back(
                lang::BrakeSteady{0.0, std::nullopt, static_cast<double>(interval_s * 5)});
        else
            s.commands.emplace_back(
                lang::DriveForward{static_cast<double>(interval_s), std::nullopt});
    }
    s.source_text = lang::render(s);
    return s;
}

// ---------------------------------------------------------------------------
// Hierarchy audit: the safety floor outranks every other goal.

inline bool solid_kind_tag(std::uint8_t tag) {
    return tag == static_cast<std::uint8_t>(ObservableKind::structure) ||
           tag == static_cast<std::uint8_t>(ObservableKind::vehicle_like) ||
           tag == static_cast<std::uint8_t>(ObservableKind::station);
}

/// Worst cell swept by committing to `control` for one tick and then braking
/// maximally: 1-tick displacement plus the stopping distance, along the
/// commanded bearing. Cells stamped by solid objects (structures, vehicles,
/// stations) at significant danger count as impassable outright: driving
/// into a known solid object is never a legal trade.
inline double projected_corridor_min(const RiskField& field, double ego_speed_mps,
                                     const ControlOutput& control, const VehicleConfig& vc,
                                     double tick_s = kTickSeconds,
                                     double solid_block_threshold = 0.55) {
    double target = kph2mps(control.target_speed_kph);
    double v1 = target > ego_speed_mps
                    ? std::min(target, ego_speed_mps + vc.accel_limit * tick_s)
                    : std::max(target, ego_speed_mps - vc.brake_limit * tick_s);
    if (v1 <= 1e-9) return 1.0;   // standing still enters nothing
    double steer = std::clamp(control.steer_deg, -vc.max_steer_deg, vc.max_steer_deg);
    double yaw = v1 / vc.wheelbase_m * std::tan(deg2rad(steer)) * tick_s;
    double bearing = control.reverse ? wrap_angle(kPi + yaw) : yaw;
    double reach = v1 * tick_s + v1 * v1 / (2.0 * vc.brake_limit);
    double worst = 1.0;
    int last_shell = std::min(field.shells() - 1,
                              static_cast<int>(reach / FieldConfig::shell_spacing_m));
    int bin = field.bin_of(bearing);
    for (int shell = 0; shell <= last_shell; ++shell) {
        for (Band band : {Band::ground, Band::car_level}) {
            double s = field.safety(band, shell, bin);
            if (s <= solid_block_threshold &&
                solid_kind_tag(field.kind_tag(band, shell, bin)))
                s = 0.0;
            worst = std::min(worst, s);
        }
    }
    return worst;
}

/// True when some full-braking heading keeps the swept corridor above the
/// danger floor.
inline bool feasible_safe_heading_exists(const RiskField& field, double ego_speed_mps,
                                         const VehicleConfig& vc, const PlannerConfig& pcfg,
                                         double tick_s = kTickSeconds) {
    for (int bin = 0; bin < field.bins(); ++bin) {
        ControlOutput c;
        c.target_speed_kph = 0.0;
        c.steer_deg = std::clamp(rad2deg(field.bin_center(bin)), -vc.max_steer_deg,
                                 vc.max_steer_deg);
        if (projected_corridor_min(field, ego_speed_mps, c, vc, tick_s,
                                   pcfg.solid_block_threshold) > pcfg.danger_floor)
            return true;
    }
    return false;
}

} // namespace homeo
