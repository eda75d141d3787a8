#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace homeo {

/// What the sensor reports an entity as. The car never learns "pedestrian" or
/// "wall"; it sees one of these pattern classes.
enum class ObservableKind : std::uint8_t {
    human = 0,
    vehicle_like,
    small_object,
    large_object,
    structure,
    station,
    marker,
};
inline constexpr int kObservableKinds = 7;

inline std::string_view to_string(ObservableKind k) {
    switch (k) {
        case ObservableKind::human: return "human";
        case ObservableKind::vehicle_like: return "vehicle_like";
        case ObservableKind::small_object: return "small_object";
        case ObservableKind::large_object: return "large_object";
        case ObservableKind::structure: return "structure";
        case ObservableKind::station: return "station";
        case ObservableKind::marker: return "marker";
    }
    return "?";
}

inline std::optional<ObservableKind> observable_from_string(std::string_view s) {
    for (int i = 0; i < kObservableKinds; ++i) {
        auto k = static_cast<ObservableKind>(i);
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

/// Height bands of the stacked field: ground/road level, car level, above.
enum class Band : std::uint8_t { ground = 0, car_level = 1, above = 2 };
inline constexpr int kBands = 3;

/// Bitmask over Band.
using BandMask = std::uint8_t;
inline constexpr BandMask band_bit(Band b) { return static_cast<BandMask>(1u << static_cast<int>(b)); }
inline constexpr BandMask kGroundBit = band_bit(Band::ground);
inline constexpr BandMask kCarBit = band_bit(Band::car_level);
inline constexpr BandMask kAboveBit = band_bit(Band::above);
inline constexpr BandMask kAllBands = kGroundBit | kCarBit | kAboveBit;

inline bool mask_has(BandMask m, Band b) { return (m & band_bit(b)) != 0; }

inline std::string mask_to_string(BandMask m) {
    std::string out;
    auto add = [&](const char* name) {
        if (!out.empty()) out += '+';
        out += name;
    };
    if (mask_has(m, Band::ground)) add("ground");
    if (mask_has(m, Band::car_level)) add("car_level");
    if (mask_has(m, Band::above)) add("above");
    return out;
}

} // namespace homeo
