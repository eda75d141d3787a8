#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <vector>

#include "homeodrive/geometry.hpp"
#include "homeodrive/risk_field.hpp"

namespace homeo {

/// Render one field frame to a PPM image: green = 1, red = 0.01, bands
/// collapsed by minimum, shell rings drawn at the 0.5 m scale, the outer
/// aggregate as the margin ring.
inline void render_frame_ppm(std::ostream& os, const field_io::Frame& frame,
                             int px_per_m = 16) {
    const double coverage = frame.shells * FieldConfig::shell_spacing_m;
    const double outer_margin = 1.5;   // meters of ring for the outer aggregate
    const int radius_px = static_cast<int>((coverage + outer_margin) * px_per_m);
    const int size = 2 * radius_px + 1;

    auto cell = [&](int band, int shell, int bin) {
        return frame.safety[(static_cast<std::size_t>(band) * frame.shells + shell) * frame.bins +
                            bin];
    };

    os << "P6\n" << size << ' ' << size << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(size) * 3);
    for (int py = 0; py < size; ++py) {
        for (int px = 0; px < size; ++px) {
            double x = static_cast<double>(px - radius_px) / px_per_m;
            double y = static_cast<double>(radius_px - py) / px_per_m;   // +y up
            double dist = std::hypot(x, y);
            unsigned char r = 245, g = 245, b = 245;   // background
            if (dist <= coverage + outer_margin) {
                double v;
                if (dist < coverage) {
                    int shell = std::min(frame.shells - 1,
                                         static_cast<int>(dist / FieldConfig::shell_spacing_m));
                    double bearing = std::atan2(y, x);
                    int bin = static_cast<int>((bearing + kPi) / (2.0 * kPi) * frame.bins);
                    bin = std::clamp(bin, 0, frame.bins - 1);
                    v = std::min({cell(0, shell, bin), cell(1, shell, bin), cell(2, shell, bin)});
                } else {
                    v = std::min({frame.outer[0], frame.outer[1], frame.outer[2]});
                }
                double t = (v - 0.01) / 0.99;
                t = std::clamp(t, 0.0, 1.0);
                r = static_cast<unsigned char>(std::lround(220.0 * (1.0 - t) + 25.0));
                g = static_cast<unsigned char>(std::lround(205.0 * t + 30.0));
                b = 40;
                // shell rings at 0.5 m spacing
                double mod = std::fmod(dist, FieldConfig::shell_spacing_m);
                double ring_w = 0.75 / px_per_m;
                if (dist <= coverage &&
                    (mod < ring_w || FieldConfig::shell_spacing_m - mod < ring_w)) {
                    r = static_cast<unsigned char>(r * 2 / 3);
                    g = static_cast<unsigned char>(g * 2 / 3);
                    b = static_cast<unsigned char>(b * 2 / 3);
                }
            }
            row[static_cast<std::size_t>(px) * 3] = r;
            row[static_cast<std::size_t>(px) * 3 + 1] = g;
            row[static_cast<std::size_t>(px) * 3 + 2] = b;
        }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
}

} // namespace homeo
