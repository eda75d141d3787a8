#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "homeodrive/config.hpp"
#include "homeodrive/geometry.hpp"
#include "homeodrive/observables.hpp"
#include "homeodrive/risk_table.hpp"
#include "homeodrive/world.hpp"

namespace homeo {

inline constexpr std::uint8_t kNoKind = 0xff;

/// Stacked circular risk field: 3 height bands x radial shells x angular
/// bins, plus one aggregate outer cell per band for everything beyond radial
/// coverage. Safety values live in [0.01, 1]; 1 = completely safe.
class RiskField {
  public:
    struct OuterCell {
        double safety = 1.0;
        double rate = 0.0;
        std::uint32_t safe_ticks = 0;
    };

    RiskField() = default;
    explicit RiskField(const FieldConfig& cfg)
        : shells_(cfg.radial_shells),
          bins_(cfg.angular_bins),
          safety_(static_cast<std::size_t>(kBands) * shells_ * bins_, 1.0),
          rate_(safety_.size(), 0.0),
          safe_ticks_(safety_.size(), 0),
          kind_tag_(safety_.size(), kNoKind) {}

    int shells() const { return shells_; }
    int bins() const { return bins_; }
    std::int64_t tick = 0;

    bool same_geometry(const RiskField& o) const {
        return shells_ == o.shells_ && bins_ == o.bins_;
    }

    std::size_t index(Band band, int shell, int bin) const {
        return (static_cast<std::size_t>(band) * shells_ + shell) * bins_ + bin;
    }

    double safety(Band band, int shell, int bin) const { return safety_[index(band, shell, bin)]; }
    double rate(Band band, int shell, int bin) const { return rate_[index(band, shell, bin)]; }
    std::uint32_t safe_ticks(Band band, int shell, int bin) const {
        return safe_ticks_[index(band, shell, bin)];
    }
    std::uint8_t kind_tag(Band band, int shell, int bin) const {
        return kind_tag_[index(band, shell, bin)];
    }
    const OuterCell& outer(Band band) const { return outer_[static_cast<int>(band)]; }
    OuterCell& outer(Band band) { return outer_[static_cast<int>(band)]; }

    const std::vector<double>& raw_safety() const { return safety_; }
    double safety_at(std::size_t i) const { return safety_[i]; }
    std::uint32_t safe_ticks_at(std::size_t i) const { return safe_ticks_[i]; }
    std::uint8_t kind_tag_at(std::size_t i) const { return kind_tag_[i]; }

    void set_cell(Band band, int shell, int bin, double value) {
        safety_[index(band, shell, bin)] = clamp_safety(value);
    }

    /// min-merge a stamp into a cell; the winning stamp's kind is recorded.
    void darken(Band band, int shell, int bin, double value, std::uint8_t kind = kNoKind) {
        std::size_t i = index(band, shell, bin);
        value = clamp_safety(value);
        if (value < safety_[i]) {
            safety_[i] = value;
            kind_tag_[i] = kind;
        } else if (value == safety_[i] && kind_tag_[i] == kNoKind) {
            kind_tag_[i] = kind;
        }
    }

    void darken_outer(Band band, double value) {
        OuterCell& c = outer_[static_cast<int>(band)];
        c.safety = std::min(c.safety, clamp_safety(value));
    }

    int bin_of(double bearing) const {
        double a = wrap_angle(bearing);
        int b = static_cast<int>((a + kPi) / (2.0 * kPi) * bins_);
        return std::clamp(b, 0, bins_ - 1);
    }

    double bin_center(int bin) const { return -kPi + (bin + 0.5) * 2.0 * kPi / bins_; }

    /// -1 when the distance falls beyond radial coverage (outer aggregate).
    int shell_of(double distance) const {
        int s = static_cast<int>(distance / FieldConfig::shell_spacing_m);
        return s < shells_ ? std::max(0, s) : -1;
    }

    double shell_center(int shell) const { return (shell + 0.5) * FieldConfig::shell_spacing_m; }

    // Direct access used by the hot pipeline loops.
    std::vector<double>& mutable_safety() { return safety_; }
    std::vector<double>& mutable_rate() { return rate_; }
    std::vector<std::uint32_t>& mutable_ticks() { return safe_ticks_; }
    std::vector<std::uint8_t>& mutable_tags() { return kind_tag_; }

  private:
    int shells_ = 0;
    int bins_ = 0;
    std::vector<double> safety_;
    std::vector<double> rate_;
    std::vector<std::uint32_t> safe_ticks_;
    std::vector<std::uint8_t> kind_tag_;
    std::array<OuterCell, kBands> outer_{};
};

/// The angular bins a detection's extent covers.
struct BinSpan {
    int first = 0;   // inclusive, may wrap past bins-1
    int count = 1;
};

inline BinSpan bin_span(const RiskField& f, double bearing, double halfwidth) {
    int lo = f.bin_of(bearing - halfwidth);
    int hi = f.bin_of(bearing + halfwidth);
    int count = hi - lo;
    if (count < 0) count += f.bins();
    return {lo, count + 1};
}

template <typename Fn>
inline void for_each_bin(const RiskField& f, const BinSpan& span, Fn&& fn) {
    for (int i = 0; i < span.count; ++i) fn((span.first + i) % f.bins());
}

/// Data simplification: stamp every detection's base safety (from the
/// estimator) into the cells its mask/extent covers. Detections beyond
/// radial coverage fold into the outer aggregate with distance attenuation.
inline RiskField project_raw(const SensorSnapshot& snapshot, const RiskTable& table,
                             const FieldConfig& cfg) {
    RiskField field(cfg);
    field.tick = snapshot.tick;
    for (const Detection& d : snapshot.detections) {
        PatternKey key{d.kind, speed_bucket(d.radial_speed), distance_bucket(d.distance)};
        double base = table.estimate(key);
        int shell = field.shell_of(d.distance);
        BinSpan span = bin_span(field, d.bearing, d.angular_halfwidth);
        for (int b = 0; b < kBands; ++b) {
            Band band = static_cast<Band>(b);
            if (!mask_has(d.bands, band)) continue;
            if (shell >= 0) {
                for_each_bin(field, span, [&](int bin) {
                    field.darken(band, shell, bin, base, static_cast<std::uint8_t>(d.kind));
                });
            } else {
                double folded = clamp_safety(base + cfg.outer_fold_per_m *
                                                        (d.distance - cfg.coverage_m()));
                field.darken_outer(band, folded);
            }
        }
    }
    return field;
}

/// Compact per-frame snapshot kept in the trailing 1 s window.
struct RawFrame {
    std::vector<float> safety;
    std::array<float, kBands> outer{1.0f, 1.0f, 1.0f};

    static RawFrame of(const RiskField& f) {
        RawFrame r;
        r.safety.assign(f.raw_safety().begin(), f.raw_safety().end());
        for (int b = 0; b < kBands; ++b)
            r.outer[b] = static_cast<float>(f.outer(static_cast<Band>(b)).safety);
        return r;
    }
};

/// Trailing-window rate actualization: worsening cells are made more
/// dangerous now (least-squares slope over the 1 s window, projected
/// tau_proj ahead); improving cells are never made safer by rate.
inline RiskField rate_actualize(const std::deque<RawFrame>& window, const RiskField& current,
                                const FieldConfig& cfg, double dt = kTickSeconds) {
    RiskField out = current;
    std::size_t n = window.size() + 1;
    if (n < 2) return out;   // too short: rate = 0 pass-through

    // Least-squares slope with uniform spacing: slope = sum(w_i * y_i),
    // w_i = (x_i - xbar) / sum((x_i - xbar)^2), x_i = i * dt.
    std::vector<double> w(n);
    double xbar = 0.5 * static_cast<double>(n - 1) * dt;
    double sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double cx = static_cast<double>(i) * dt - xbar;
        w[i] = cx;
        sxx += cx * cx;
    }
    for (std::size_t i = 0; i < n; ++i) w[i] /= sxx;

    auto& safety = out.mutable_safety();
    auto& rate = out.mutable_rate();
    const std::size_t cells = safety.size();
    for (std::size_t c = 0; c < cells; ++c) {
        double slope = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i)
            slope += w[i] * static_cast<double>(window[i].safety[c]);
        slope += w[n - 1] * current.raw_safety()[c];
        rate[c] = slope;
        if (slope < 0.0)
            safety[c] = clamp_safety(current.raw_safety()[c] +
                                     cfg.rate_gain * slope * cfg.projection_horizon_s);
    }
    for (int b = 0; b < kBands; ++b) {
        double slope = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i)
            slope += w[i] * static_cast<double>(window[i].outer[b]);
        slope += w[n - 1] * current.outer(static_cast<Band>(b)).safety;
        auto& cell = out.outer(static_cast<Band>(b));
        cell.rate = slope;
        if (slope < 0.0)
            cell.safety = clamp_safety(current.outer(static_cast<Band>(b)).safety +
                                       cfg.rate_gain * slope * cfg.projection_horizon_s);
    }
    return out;
}

/// Asymmetric temporal smoothing: danger registers instantly, recovery is
/// gated on K consecutive improving ticks and then limited to alpha*dt per
/// tick, never exceeding the incoming value.
inline RiskField smooth(const RiskField& prev, const RiskField& incoming, const FieldConfig& cfg,
                        double dt = kTickSeconds) {
    if (!prev.same_geometry(incoming)) throw std::invalid_argument("smooth: geometry mismatch");
    RiskField out = incoming;
    auto& safety = out.mutable_safety();
    auto& ticks = out.mutable_ticks();
    auto& tags = out.mutable_tags();
    const double step = cfg.recovery_rate * dt;
    const auto K = static_cast<std::uint32_t>(cfg.confirmation_ticks);

    const std::size_t cells = safety.size();
    for (std::size_t c = 0; c < cells; ++c) {
        double p = prev.raw_safety()[c];
        double in = incoming.raw_safety()[c];
        if (in < p) {
            // instant danger; new contact episode resets the recovery gate
            safety[c] = in;
            ticks[c] = 0;
        } else if (in > p) {
            std::uint32_t t = prev.safe_ticks_at(c) + 1;
            ticks[c] = t;
            if (t >= K)
                safety[c] = std::min(p + step, in);
            else
                safety[c] = p;
            if (safety[c] < 1.0 && tags[c] == kNoKind) tags[c] = prev.kind_tag_at(c);
        } else {
            // equal: the threat is still being observed, no improvement signal
            safety[c] = p;
            ticks[c] = 0;
            if (tags[c] == kNoKind) tags[c] = prev.kind_tag_at(c);
        }
    }
    for (int b = 0; b < kBands; ++b) {
        const auto& p = prev.outer(static_cast<Band>(b));
        const auto& in = incoming.outer(static_cast<Band>(b));
        auto& cell = out.outer(static_cast<Band>(b));
        if (in.safety < p.safety) {
            cell.safety = in.safety;
            cell.safe_ticks = 0;
        } else if (in.safety > p.safety) {
            cell.safe_ticks = p.safe_ticks + 1;
            cell.safety = cell.safe_ticks >= K ? std::min(p.safety + step, in.safety) : p.safety;
        } else {
            cell.safety = p.safety;
            cell.safe_ticks = 0;
        }
    }
    return out;
}

/// Cells covered by human detections this tick, per band.
struct HumanFootprint {
    std::vector<std::size_t> cells;   // flat indices
};

inline HumanFootprint human_footprint(const RiskField& field, const SensorSnapshot& snapshot) {
    HumanFootprint fp;
    for (const Detection& d : snapshot.detections) {
        if (d.kind != ObservableKind::human) continue;
        int shell = field.shell_of(d.distance);
        if (shell < 0) continue;
        BinSpan span = bin_span(field, d.bearing, d.angular_halfwidth);
        for (int b = 0; b < kBands; ++b) {
            Band band = static_cast<Band>(b);
            if (!mask_has(d.bands, band)) continue;
            for_each_bin(field, span,
                         [&](int bin) { fp.cells.push_back(field.index(band, shell, bin)); });
        }
    }
    return fp;
}

/// Speed-dependent human rule: above the threat threshold human cells carry
/// the estimator's human value (0.01 with the seeded table); at or below it
/// humans cease to dominate and their cells are lifted to the calm value.
inline RiskField human_override(const RiskField& field, const SensorSnapshot& snapshot,
                                double ego_speed_mps, const RiskTable& table,
                                const FieldConfig& cfg) {
    RiskField out = field;
    bool threat = ego_speed_mps > cfg.human_threat_threshold_mps;
    for (const Detection& d : snapshot.detections) {
        if (d.kind != ObservableKind::human) continue;
        int shell = out.shell_of(d.distance);
        BinSpan span = bin_span(out, d.bearing, d.angular_halfwidth);
        PatternKey key{d.kind, speed_bucket(d.radial_speed), distance_bucket(d.distance)};
        double value = threat ? table.estimate(key) : cfg.human_calm_safety;
        for (int b = 0; b < kBands; ++b) {
            Band band = static_cast<Band>(b);
            if (!mask_has(d.bands, band)) continue;
            if (shell < 0) {
                if (threat)
                    out.darken_outer(band, clamp_safety(value + cfg.outer_fold_per_m *
                                                                    (d.distance - cfg.coverage_m())));
                continue;
            }
            for_each_bin(out, span, [&](int bin) {
                std::size_t i = out.index(band, shell, bin);
                auto& cells = out.mutable_safety();
                if (threat) {
                    if (value < cells[i]) cells[i] = clamp_safety(value);
                } else {
                    if (cells[i] < value) cells[i] = value;
                }
                out.mutable_tags()[i] = static_cast<std::uint8_t>(ObservableKind::human);
            });
        }
    }
    return out;
}

struct HeadingChoice {
    double heading = 0.0;      // rad, ego frame (bin center)
    double speed_scale = 1.0;  // the chosen corridor's minimum safety
    int bin = 0;
};

/// Score each bearing by the worst ground/car-level cell along it; pick the
/// safest corridor, ties broken toward the goal bearing, then by bin index.
inline HeadingChoice min_risk_heading(const RiskField& field, double goal_bearing) {
    HeadingChoice best;
    double best_score = -1.0;
    double best_goal_dist = 0.0;
    for (int bin = 0; bin < field.bins(); ++bin) {
        double score = 1.0;
        for (int shell = 0; shell < field.shells(); ++shell) {
            score = std::min(score, field.safety(Band::ground, shell, bin));
            score = std::min(score, field.safety(Band::car_level, shell, bin));
        }
        double goal_dist = std::abs(angle_diff(field.bin_center(bin), goal_bearing));
        if (score > best_score ||
            (score == best_score && goal_dist < best_goal_dist - 1e-12)) {
            best_score = score;
            best_goal_dist = goal_dist;
            best.bin = bin;
        }
    }
    best.heading = field.bin_center(best.bin);
    best.speed_scale = best_score;
    return best;
}

/// Forward-sector cells flattened in documented order (shell-major, then
/// band ground/car_level, then ascending bin within +-45 degrees). This is
/// the array the metadata generator slices.
inline std::vector<double> flatten_forward_sector(const RiskField& field,
                                                  double half_angle = kPi / 4.0) {
    std::vector<int> sector_bins;
    for (int bin = 0; bin < field.bins(); ++bin)
        if (std::abs(field.bin_center(bin)) <= half_angle) sector_bins.push_back(bin);
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(field.shells()) * 2 * sector_bins.size());
    for (int shell = 0; shell < field.shells(); ++shell)
        for (Band band : {Band::ground, Band::car_level})
            for (int bin : sector_bins) flat.push_back(field.safety(band, shell, bin));
    return flat;
}

// ---------------------------------------------------------------------------
// Field dump formats

namespace field_io {

inline constexpr char kMagic[4] = {'H', 'D', 'F', '1'};

template <typename T>
void put(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i)
        buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return static_cast<T>(v);
}

inline std::uint16_t to_fixed(double safety) {
    return static_cast<std::uint16_t>(std::lround(safety * 10000.0));
}
inline double from_fixed(std::uint16_t v) { return v / 10000.0; }

/// One binary frame: header (tick, bands, shells, bins) then row-major
/// 16-bit fixed-point safety values, then one outer value per band.
inline void write_frame(std::ostream& os, const RiskField& f) {
    os.write(kMagic, 4);
    put<std::uint64_t>(os, static_cast<std::uint64_t>(f.tick));
    put<std::uint32_t>(os, kBands);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(f.shells()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(f.bins()));
    for (double v : f.raw_safety()) put<std::uint16_t>(os, to_fixed(v));
    for (int b = 0; b < kBands; ++b)
        put<std::uint16_t>(os, to_fixed(f.outer(static_cast<Band>(b)).safety));
}

struct Frame {
    std::int64_t tick = 0;
    int shells = 0;
    int bins = 0;
    std::vector<double> safety;             // band-major
    std::array<double, kBands> outer{1, 1, 1};
};

inline bool read_frame(std::istream& is, Frame& out) {
    char magic[4];
    if (!is.read(magic, 4)) return false;
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("field dump: bad frame magic");
    out.tick = static_cast<std::int64_t>(get<std::uint64_t>(is));
    std::uint32_t bands = get<std::uint32_t>(is);
    if (bands != kBands) throw std::runtime_error("field dump: unexpected band count");
    out.shells = static_cast<int>(get<std::uint32_t>(is));
    out.bins = static_cast<int>(get<std::uint32_t>(is));
    std::size_t n = static_cast<std::size_t>(kBands) * out.shells * out.bins;
    out.safety.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.safety[i] = from_fixed(get<std::uint16_t>(is));
    for (int b = 0; b < kBands; ++b) out.outer[b] = from_fixed(get<std::uint16_t>(is));
    if (!is) throw std::runtime_error("field dump: truncated frame");
    return true;
}

/// Lossless textual dump for debugging: one line per (band, shell).
inline void write_frame_text(std::ostream& os, const RiskField& f) {
    os << "frame tick=" << f.tick << " bands=" << kBands << " shells=" << f.shells()
       << " bins=" << f.bins() << "\n";
    char buf[32];
    for (int b = 0; b < kBands; ++b) {
        for (int shell = 0; shell < f.shells(); ++shell) {
            os << b << ',' << shell;
            for (int bin = 0; bin < f.bins(); ++bin) {
                std::snprintf(buf, sizeof buf, "%.17g",
                              f.safety(static_cast<Band>(b), shell, bin));
                os << ',' << buf;
            }
            os << '\n';
        }
        std::snprintf(buf, sizeof buf, "%.17g", f.outer(static_cast<Band>(b)).safety);
        os << b << ",outer," << buf << '\n';
    }
}

} // namespace field_io

} // namespace homeo
