#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "homeodrive/geometry.hpp"
#include "homeodrive/observables.hpp"
#include "homeodrive/rng.hpp"

namespace homeo {

enum class SpeedBucket : std::uint8_t { receding = 0, statik, slow, med, fast };
inline constexpr int kSpeedBuckets = 5;

enum class DistanceBucket : std::uint8_t { lt2 = 0, lt5, lt10, ge10 };
inline constexpr int kDistanceBuckets = 4;

inline std::string_view to_string(SpeedBucket b) {
    switch (b) {
        case SpeedBucket::receding: return "receding";
        case SpeedBucket::statik: return "static";
        case SpeedBucket::slow: return "slow";
        case SpeedBucket::med: return "med";
        case SpeedBucket::fast: return "fast";
    }
    return "?";
}

inline std::string_view to_string(DistanceBucket b) {
    switch (b) {
        case DistanceBucket::lt2: return "lt2";
        case DistanceBucket::lt5: return "lt5";
        case DistanceBucket::lt10: return "lt10";
        case DistanceBucket::ge10: return "ge10";
    }
    return "?";
}

/// radial speed sign convention: negative = approaching. |v| <= 0.1 m/s
/// counts as static.
inline SpeedBucket speed_bucket(double radial_speed_mps) {
    if (radial_speed_mps > 0.1) return SpeedBucket::receding;
    if (radial_speed_mps >= -0.1) return SpeedBucket::statik;
    double approach = -radial_speed_mps;
    if (approach < 2.0) return SpeedBucket::slow;
    if (approach < 8.0) return SpeedBucket::med;
    return SpeedBucket::fast;
}

inline DistanceBucket distance_bucket(double distance_m) {
    if (distance_m < 2.0) return DistanceBucket::lt2;
    if (distance_m < 5.0) return DistanceBucket::lt5;
    if (distance_m < 10.0) return DistanceBucket::lt10;
    return DistanceBucket::ge10;
}

/// 7 kinds x 5 speed buckets x 4 distance buckets = 140 entries.
struct PatternKey {
    ObservableKind kind = ObservableKind::large_object;
    SpeedBucket speed = SpeedBucket::statik;
    DistanceBucket distance = DistanceBucket::ge10;

    auto operator<=>(const PatternKey&) const = default;

    int index() const {
        return (static_cast<int>(kind) * kSpeedBuckets + static_cast<int>(speed)) *
                   kDistanceBuckets +
               static_cast<int>(distance);
    }

    std::string to_text() const {
        std::string s{to_string(kind)};
        s += '/';
        s += to_string(speed);
        s += '/';
        s += to_string(distance);
        return s;
    }

    static std::optional<PatternKey> from_text(std::string_view text) {
        auto p1 = text.find('/');
        if (p1 == std::string_view::npos) return std::nullopt;
        auto p2 = text.find('/', p1 + 1);
        if (p2 == std::string_view::npos) return std::nullopt;
        auto kind = observable_from_string(text.substr(0, p1));
        if (!kind) return std::nullopt;
        PatternKey key;
        key.kind = *kind;
        std::string_view sp = text.substr(p1 + 1, p2 - p1 - 1);
        std::string_view ds = text.substr(p2 + 1);
        bool found = false;
        for (int i = 0; i < kSpeedBuckets; ++i)
            if (to_string(static_cast<SpeedBucket>(i)) == sp) {
                key.speed = static_cast<SpeedBucket>(i);
                found = true;
            }
        if (!found) return std::nullopt;
        found = false;
        for (int i = 0; i < kDistanceBuckets; ++i)
            if (to_string(static_cast<DistanceBucket>(i)) == ds) {
                key.distance = static_cast<DistanceBucket>(i);
                found = true;
            }
        if (!found) return std::nullopt;
        return key;
    }

    static PatternKey from_index(int idx) {
        PatternKey k;
        k.distance = static_cast<DistanceBucket>(idx % kDistanceBuckets);
        idx /= kDistanceBuckets;
        k.speed = static_cast<SpeedBucket>(idx % kSpeedBuckets);
        idx /= kSpeedBuckets;
        k.kind = static_cast<ObservableKind>(idx);
        return k;
    }
};

inline constexpr int kPatternKeySpace = kObservableKinds * kSpeedBuckets * kDistanceBuckets;

struct TableEntry {
    double safety = 0.5;
    std::uint64_t count = 0;
    double sum_realized = 0.0;
    bool human_sourced = false;

    bool operator==(const TableEntry&) const = default;
};

/// The learned pattern -> base-safety mapping, trained by deliberate
/// crashing. Lookups are pure; calibration returns an updated copy.
class RiskTable {
  public:
    /// Documented seed values. Unobserved keys fall back to 0.5.
    static RiskTable seeded() {
        RiskTable t;
        for (int s = 0; s < kSpeedBuckets; ++s)
            for (int d = 0; d < kDistanceBuckets; ++d) {
                t.set_default({ObservableKind::human, static_cast<SpeedBucket>(s),
                               static_cast<DistanceBucket>(d)},
                              0.01);
                t.set_default({ObservableKind::small_object, static_cast<SpeedBucket>(s),
                               static_cast<DistanceBucket>(d)},
                              0.95);
                t.set_default({ObservableKind::station, static_cast<SpeedBucket>(s),
                               static_cast<DistanceBucket>(d)},
                              1.0);
                t.set_default({ObservableKind::marker, static_cast<SpeedBucket>(s),
                               static_cast<DistanceBucket>(d)},
                              1.0);
            }
        t.set_default({ObservableKind::vehicle_like, SpeedBucket::med, DistanceBucket::lt5}, 0.3);
        t.set_default({ObservableKind::structure, SpeedBucket::statik, DistanceBucket::lt2}, 0.1);
        return t;
    }

    /// All keys at the 0.5 fallback; the starting point for calibration runs.
    static RiskTable untrained() { return RiskTable{}; }

    double estimate(const PatternKey& key) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? 0.5 : it->second.safety;
    }

    const TableEntry* entry(const PatternKey& key) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? nullptr : &it->second;
    }

    /// Running-mean update from one realized crash loss in [0,1].
    void calibrate_from_crash(const PatternKey& key, double realized_loss) {
        TableEntry& e = entries_[key];
        if (e.human_sourced) {
            // A correction pins the value until fresh evidence accumulates;
            // evidence restarts the running mean from scratch.
            e.human_sourced = false;
            e.count = 0;
            e.sum_realized = 0.0;
        }
        e.count += 1;
        e.sum_realized += realized_loss;
        e.safety = clamp_safety(1.0 - e.sum_realized / static_cast<double>(e.count));
    }

    /// Apply validated per-key overrides. Conflicting overrides within one
    /// record resolve last-write-wins; a warning per conflict is returned.
    std::vector<std::string> integrate_correction(
        const std::vector<std::pair<PatternKey, double>>& overrides) {
        std::vector<std::string> warnings;
        std::set<PatternKey> seen;
        for (const auto& [key, value] : overrides) {
            if (value < 0.01 || value > 1.0)
                throw std::out_of_range("risk override outside [0.01,1] for key " +
                                        key.to_text());
            if (!seen.insert(key).second)
                warnings.push_back("conflicting override for " + key.to_text() +
                                   "; last write wins");
            TableEntry& e = entries_[key];
            e.safety = value;
            e.human_sourced = true;
            e.count = 0;
            e.sum_realized = 0.0;
        }
        return warnings;
    }

    const std::map<PatternKey, TableEntry>& entries() const { return entries_; }

    bool operator==(const RiskTable&) const = default;

    /// Sorted textual persistence, diffable for golden tests.
    void save(std::ostream& os) const {
        os << "# risk-table v1\n";
        for (const auto& [key, e] : entries_) {
            os << key.to_text() << ' ' << format_double(e.safety) << ','
               << e.count << ',' << format_double(e.sum_realized);
            if (e.human_sourced) os << ",human";
            os << '\n';
        }
    }

    static RiskTable load(std::istream& is) {
        RiskTable t;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty() || line[0] == '#') continue;
            auto sp = line.find(' ');
            if (sp == std::string::npos)
                throw std::runtime_error("risk-table line " + std::to_string(lineno) +
                                         ": missing fields");
            auto key = PatternKey::from_text(line.substr(0, sp));
            if (!key)
                throw std::runtime_error("risk-table line " + std::to_string(lineno) +
                                         ": bad key '" + line.substr(0, sp) + "'");
            std::string rest = line.substr(sp + 1);
            std::replace(rest.begin(), rest.end(), ',', ' ');
            std::istringstream fields(rest);
            TableEntry e;
            std::string tag;
            if (!(fields >> e.safety >> e.count >> e.sum_realized))
                throw std::runtime_error("risk-table line " + std::to_string(lineno) +
                                         ": bad entry values");
            if (fields >> tag) e.human_sourced = (tag == "human");
            t.entries_[*key] = e;
        }
        return t;
    }

  private:
    void set_default(const PatternKey& key, double safety) {
        entries_[key] = TableEntry{safety, 0, 0.0, false};
    }

    // shortest representation that parses back to the same double
    static std::string format_double(double v) {
        char buf[64];
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
        (void)ec;
        return std::string(buf, p);
    }

    std::map<PatternKey, TableEntry> entries_;
};

/// Predicted-vs-realized match quality on a held-out crash set.
struct CalibrationReport {
    struct KeyRow {
        PatternKey key;
        double predicted_damage = 0.0;   // 1 - safety after training
        double mean_realized = 0.0;
        std::uint64_t n_heldout = 0;
        bool trained = false;            // key received at least one training update
    };
    std::vector<KeyRow> rows;            // sorted by key
    double mae = 0.0;                    // mean |predicted - realized| over trained rows
    std::optional<PatternKey> worst_key;
    std::uint64_t n_crashes = 0;         // total crashes observed (train + held-out)
    std::uint64_t n_scenarios_without_collision = 0;
};

/// One forced crash: the keys the collided entity was observed under during
/// the pre-impact window, and the aggregate homeostasis drop it caused.
struct CrashObservation {
    std::vector<PatternKey> keys;
    double realized_loss = 0.0;
};

/// Deterministic 80/20 split by scenario id hash.
inline bool is_heldout_scenario(const std::string& scenario_id) {
    return fnv1a(scenario_id) % 5 == 0;
}

/// Crash-calibration campaign over a scenario suite. Execution of each crash
/// scenario is injected so the campaign logic stays independent of the world
/// runner; `crash_fn` returns nullopt when a scenario produced no collision.
template <typename CrashFn>
std::pair<RiskTable, CalibrationReport> run_calibration_campaign(
    const std::vector<std::string>& scenario_ids, const RiskTable& table, CrashFn&& crash_fn) {
    RiskTable out = table;
    CalibrationReport report;
    struct Accum {
        double sum = 0.0;
        std::uint64_t n = 0;
    };
    std::map<PatternKey, Accum> heldout;

    for (const std::string& id : scenario_ids) {
        std::optional<CrashObservation> obs = crash_fn(id);
        if (!obs) {
            ++report.n_scenarios_without_collision;
            continue;
        }
        ++report.n_crashes;
        if (is_heldout_scenario(id)) {
            for (const PatternKey& k : obs->keys) {
                Accum& a = heldout[k];
                a.sum += obs->realized_loss;
                a.n += 1;
            }
        } else {
            for (const PatternKey& k : obs->keys) out.calibrate_from_crash(k, obs->realized_loss);
        }
    }

    double total_err = 0.0;
    std::uint64_t trained_rows = 0;
    double worst_err = -1.0;
    for (const auto& [key, acc] : heldout) {
        CalibrationReport::KeyRow row;
        row.key = key;
        row.predicted_damage = 1.0 - out.estimate(key);
        row.mean_realized = acc.sum / static_cast<double>(acc.n);
        row.n_heldout = acc.n;
        const TableEntry* e = out.entry(key);
        row.trained = e != nullptr && e->count > 0;
        if (row.trained) {
            double err = std::abs(row.predicted_damage - row.mean_realized);
            total_err += err;
            ++trained_rows;
            if (err > worst_err) {
                worst_err = err;
                report.worst_key = key;
            }
        }
        report.rows.push_back(row);
    }
    if (trained_rows > 0) report.mae = total_err / static_cast<double>(trained_rows);
    return {out, report};
}

} // namespace homeo
