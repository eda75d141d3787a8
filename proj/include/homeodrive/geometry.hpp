#pragma once

#include <algorithm>
#include <cmath>

namespace homeo {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTickSeconds = 0.05;

constexpr double deg2rad(double d) { return d * kPi / 180.0; }
constexpr double rad2deg(double r) { return r * 180.0 / kPi; }
constexpr double kph2mps(double kph) { return kph / 3.6; }
constexpr double mps2kph(double mps) { return mps * 3.6; }

/// Wrap an angle into [-pi, pi).
inline double wrap_angle(double a) {
    a = std::fmod(a + kPi, 2.0 * kPi);
    if (a < 0) a += 2.0 * kPi;
    return a - kPi;
}

/// Signed smallest rotation taking `from` to `to`, in [-pi, pi).
inline double angle_diff(double to, double from) { return wrap_angle(to - from); }

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    bool operator==(const Vec2&) const = default;

    double norm() const { return std::hypot(x, y); }
    double dot(Vec2 o) const { return x * o.x + y * o.y; }
    double bearing() const { return std::atan2(y, x); }
};

inline Vec2 unit(double heading) { return {std::cos(heading), std::sin(heading)}; }

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

/// Safety values live in [0.01, 1] everywhere in the field pipeline.
inline double clamp_safety(double v) { return std::clamp(v, 0.01, 1.0); }

} // namespace homeo
