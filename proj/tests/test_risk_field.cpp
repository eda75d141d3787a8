#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "homeodrive/risk_field.hpp"
#include "homeodrive/rng.hpp"

using namespace homeo;

namespace {

FieldConfig small_cfg() {
    FieldConfig cfg;
    cfg.angular_bins = 360;
    cfg.radial_shells = 20;
    return cfg;
}

Detection make_det(ObservableKind kind, double bearing, double distance, double radial = 0.0,
                   BandMask bands = kGroundBit | kCarBit, double halfwidth = 0.05) {
    Detection d;
    d.kind = kind;
    d.bearing = bearing;
    d.distance = distance;
    d.radial_speed = radial;
    d.bands = bands;
    d.angular_halfwidth = halfwidth;
    return d;
}

} // namespace

TEST_CASE("fresh field is all safe") {
    RiskField f(small_cfg());
    for (double v : f.raw_safety()) REQUIRE(v == 1.0);
    for (int b = 0; b < kBands; ++b) CHECK(f.outer(static_cast<Band>(b)).safety == 1.0);
    // 3 bands x shells rings plus 3 aggregates
    CHECK(kBands * f.shells() + 3 == 63);
}

TEST_CASE("project_raw stamps detections into covered cells") {
    FieldConfig cfg = small_cfg();
    RiskTable table = RiskTable::seeded();

    SECTION("empty snapshot gives the all-safe field") {
        SensorSnapshot snap;
        RiskField f = project_raw(snap, table, cfg);
        for (double v : f.raw_safety()) REQUIRE(v == 1.0);
    }
    SECTION("vehicle at 4.2 m lands in shell 8 at the seeded value") {
        SensorSnapshot snap;
        snap.detections.push_back(
            make_det(ObservableKind::vehicle_like, 0.0, 4.2, -3.0));   // med approach
        RiskField f = project_raw(snap, table, cfg);
        int bin = f.bin_of(0.0);
        CHECK(f.safety(Band::car_level, 8, bin) == Catch::Approx(0.3));
        CHECK(f.safety(Band::ground, 8, bin) == Catch::Approx(0.3));
        CHECK(f.safety(Band::above, 8, bin) == 1.0);
        CHECK(f.safety(Band::car_level, 7, bin) == 1.0);
        CHECK(f.kind_tag(Band::car_level, 8, bin) ==
              static_cast<std::uint8_t>(ObservableKind::vehicle_like));
    }
    SECTION("beyond coverage folds into the outer aggregate, attenuated") {
        SensorSnapshot snap;
        snap.detections.push_back(make_det(ObservableKind::large_object, 0.2, 30.0));
        RiskField f = project_raw(snap, table, cfg);
        // estimator default 0.5 + 0.01/m * (30 - 10) = 0.7
        CHECK(f.outer(Band::ground).safety == Catch::Approx(0.7));
        CHECK(f.outer(Band::car_level).safety == Catch::Approx(0.7));
        for (double v : f.raw_safety()) REQUIRE(v == 1.0);
    }
    SECTION("angular extent spans multiple bins") {
        SensorSnapshot snap;
        snap.detections.push_back(
            make_det(ObservableKind::structure, 0.0, 3.0, 0.0, kAllBands, deg2rad(5.0)));
        RiskField f = project_raw(snap, table, cfg);
        int center = f.bin_of(0.0);
        int off = f.bin_of(deg2rad(4.0));
        CHECK(f.safety(Band::ground, 6, center) < 1.0);
        CHECK(f.safety(Band::ground, 6, off) < 1.0);
        CHECK(f.safety(Band::ground, 6, f.bin_of(deg2rad(20.0))) == 1.0);
    }
}

TEST_CASE("rate actualization projects worsening trends") {
    FieldConfig cfg = small_cfg();
    RiskTable table = RiskTable::seeded();
    auto make_uniform = [&](double value) {
        RiskField f(cfg);
        for (double& v : f.mutable_safety()) v = value;
        return f;
    };

    SECTION("constant history passes through") {
        std::deque<RawFrame> window;
        for (int i = 0; i < 20; ++i) window.push_back(RawFrame::of(make_uniform(0.5)));
        RiskField out = rate_actualize(window, make_uniform(0.5), cfg);
        CHECK(out.safety(Band::ground, 0, 0) == Catch::Approx(0.5));
        CHECK(out.rate(Band::ground, 0, 0) == Catch::Approx(0.0).margin(1e-9));
    }
    SECTION("a linear fall from 0.9 to 0.5 over 1 s actualizes to 0.1") {
        // independent least-squares oracle over the same series
        std::deque<RawFrame> window;
        int n = 21;
        for (int i = 0; i < n - 1; ++i)
            window.push_back(RawFrame::of(make_uniform(0.9 - 0.4 * i / (n - 1.0))));
        RiskField current = make_uniform(0.5);
        RiskField out = rate_actualize(window, current, cfg);

        double sx = 0, sy = 0, sxy = 0, sxx = 0;
        for (int i = 0; i < n; ++i) {
            double x = i * 0.05;
            double y = 0.9 - 0.4 * i / (n - 1.0);
            sx += x;
            sy += y;
            sxy += x * y;
            sxx += x * x;
        }
        double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        CHECK(slope == Catch::Approx(-0.4));
        CHECK(out.rate(Band::ground, 3, 17) == Catch::Approx(-0.4));
        CHECK(out.safety(Band::ground, 3, 17) == Catch::Approx(0.1));
    }
    SECTION("improving cells are not made safer") {
        std::deque<RawFrame> window;
        int n = 21;
        for (int i = 0; i < n - 1; ++i)
            window.push_back(RawFrame::of(make_uniform(0.2 + 0.6 * i / (n - 1.0))));
        RiskField out = rate_actualize(window, make_uniform(0.8), cfg);
        CHECK(out.safety(Band::ground, 5, 5) == Catch::Approx(0.8));
        CHECK(out.rate(Band::ground, 5, 5) > 0.0);
    }
    SECTION("short window passes through with zero rate") {
        std::deque<RawFrame> window;
        RiskField out = rate_actualize(window, make_uniform(0.4), cfg);
        CHECK(out.safety(Band::ground, 1, 1) == Catch::Approx(0.4));
        CHECK(out.rate(Band::ground, 1, 1) == 0.0);
    }
    SECTION("rate never raises a cell above its raw value") {
        Rng rng(77);
        std::deque<RawFrame> window;
        for (int i = 0; i < 20; ++i) {
            RiskField f(cfg);
            for (double& v : f.mutable_safety()) v = clamp_safety(rng.next_double());
            window.push_back(RawFrame::of(f));
        }
        RiskField current(cfg);
        for (double& v : current.mutable_safety()) v = clamp_safety(rng.next_double());
        RiskField out = rate_actualize(window, current, cfg);
        for (std::size_t i = 0; i < out.raw_safety().size(); ++i) {
            REQUIRE(out.raw_safety()[i] <= current.raw_safety()[i] + 1e-12);
            REQUIRE(out.raw_safety()[i] >= 0.01 - 1e-12);
        }
    }
    (void)table;
}

TEST_CASE("smoothing: instant danger, gated recovery") {
    FieldConfig cfg = small_cfg();
    RiskField prev(cfg);
    RiskField incoming(cfg);

    SECTION("danger registers instantly") {
        incoming.set_cell(Band::ground, 2, 10, 0.2);
        RiskField out = smooth(prev, incoming, cfg);
        CHECK(out.safety(Band::ground, 2, 10) == Catch::Approx(0.2));
        CHECK(out.safe_ticks(Band::ground, 2, 10) == 0);
    }
    SECTION("recovery waits K ticks then rises by alpha*dt") {
        RiskField state(cfg);
        state.set_cell(Band::ground, 2, 10, 0.2);
        RiskField clear(cfg);   // incoming all 1.0
        for (int tick = 1; tick <= 9; ++tick) {
            state = smooth(state, clear, cfg);
            REQUIRE(state.safety(Band::ground, 2, 10) == Catch::Approx(0.2));
        }
        state = smooth(state, clear, cfg);   // tick 10: gate opens
        CHECK(state.safety(Band::ground, 2, 10) == Catch::Approx(0.21));
        state = smooth(state, clear, cfg);
        CHECK(state.safety(Band::ground, 2, 10) == Catch::Approx(0.22));
    }
    SECTION("reappearing threat resets the counter") {
        RiskField state(cfg);
        state.set_cell(Band::ground, 2, 10, 0.2);
        RiskField clear(cfg);
        for (int tick = 1; tick <= 8; ++tick) state = smooth(state, clear, cfg);
        RiskField threat(cfg);
        threat.set_cell(Band::ground, 2, 10, 0.2);
        state = smooth(state, threat, cfg);   // still there
        CHECK(state.safe_ticks(Band::ground, 2, 10) == 0);
        for (int tick = 1; tick <= 9; ++tick) {
            state = smooth(state, clear, cfg);
            REQUIRE(state.safety(Band::ground, 2, 10) == Catch::Approx(0.2));
        }
    }
    SECTION("recovery never exceeds the incoming value") {
        RiskField state(cfg);
        state.set_cell(Band::ground, 2, 10, 0.595);
        RiskField partial(cfg);
        partial.set_cell(Band::ground, 2, 10, 0.6);
        for (int tick = 0; tick < 30; ++tick) {
            state = smooth(state, partial, cfg);
            REQUIRE(state.safety(Band::ground, 2, 10) <= 0.6 + 1e-12);
        }
        CHECK(state.safety(Band::ground, 2, 10) == Catch::Approx(0.6));
    }
    SECTION("geometry mismatch throws") {
        FieldConfig other = cfg;
        other.angular_bins = 180;
        RiskField small(other);
        CHECK_THROWS_AS(smooth(prev, small, cfg), std::invalid_argument);
    }
}

TEST_CASE("human override follows the speed threshold") {
    FieldConfig cfg = small_cfg();
    RiskTable table = RiskTable::seeded();
    SensorSnapshot snap;
    snap.detections.push_back(make_det(ObservableKind::human, 0.0, 5.0, 0.0));
    RiskField base = project_raw(snap, table, cfg);
    int bin = base.bin_of(0.0);
    REQUIRE(base.safety(Band::ground, 10, bin) == Catch::Approx(0.01));

    SECTION("above the threshold humans dominate at the table value") {
        RiskField out = human_override(base, snap, kph2mps(30), table, cfg);
        CHECK(out.safety(Band::ground, 10, bin) == Catch::Approx(0.01));
        CHECK(out.kind_tag(Band::ground, 10, bin) ==
              static_cast<std::uint8_t>(ObservableKind::human));
    }
    SECTION("at or below the threshold humans take the calm value") {
        RiskField out = human_override(base, snap, kph2mps(8), table, cfg);
        CHECK(out.safety(Band::ground, 10, bin) == Catch::Approx(0.6));
    }
    SECTION("no humans leaves the field untouched") {
        SensorSnapshot other;
        other.detections.push_back(make_det(ObservableKind::structure, 0.5, 3.0));
        RiskField f = project_raw(other, table, cfg);
        RiskField out = human_override(f, other, kph2mps(30), table, cfg);
        CHECK(out.raw_safety() == f.raw_safety());
    }
}

TEST_CASE("min risk heading picks the safest corridor, goal-tie-broken") {
    FieldConfig cfg = small_cfg();

    SECTION("unobstructed field heads to the goal") {
        RiskField f(cfg);
        HeadingChoice h = min_risk_heading(f, 0.0);
        CHECK(std::abs(h.heading) < deg2rad(1.0));
        CHECK(h.speed_scale == Catch::Approx(1.0));
    }
    SECTION("only two clear corridors: the goal-closer one wins") {
        RiskField f(cfg);
        int clear_pos = f.bin_of(deg2rad(20.0));
        int clear_neg = f.bin_of(deg2rad(-20.0));
        for (int bin = 0; bin < f.bins(); ++bin) {
            if (bin == clear_pos || bin == clear_neg) continue;
            f.set_cell(Band::ground, 5, bin, 0.01);
        }
        HeadingChoice h = min_risk_heading(f, deg2rad(5.0));
        CHECK(h.bin == clear_pos);
        CHECK(h.speed_scale == Catch::Approx(1.0));

        // exhaustive scoring oracle
        int best_bin = 0;
        double best_score = -1, best_dist = 1e9;
        for (int bin = 0; bin < f.bins(); ++bin) {
            double score = 1.0;
            for (int shell = 0; shell < f.shells(); ++shell)
                score = std::min({score, f.safety(Band::ground, shell, bin),
                                  f.safety(Band::car_level, shell, bin)});
            double dist = std::abs(angle_diff(f.bin_center(bin), deg2rad(5.0)));
            if (score > best_score || (score == best_score && dist < best_dist)) {
                best_score = score;
                best_dist = dist;
                best_bin = bin;
            }
        }
        CHECK(h.bin == best_bin);
    }
    SECTION("uniform field ties everywhere toward the goal") {
        RiskField f(cfg);
        for (double& v : f.mutable_safety()) v = 0.5;
        HeadingChoice h = min_risk_heading(f, deg2rad(33.0));
        CHECK(h.speed_scale == Catch::Approx(0.5));
        CHECK(std::abs(angle_diff(h.heading, deg2rad(33.0))) < deg2rad(1.0));
    }
}

TEST_CASE("pipeline keeps every value in the safety range and is deterministic") {
    FieldConfig cfg = small_cfg();
    RiskTable table = RiskTable::seeded();
    Rng rng(123);
    RiskField state(cfg);
    std::deque<RawFrame> window;
    for (int tick = 0; tick < 60; ++tick) {
        SensorSnapshot snap;
        snap.tick = tick;
        int n = static_cast<int>(rng.next_below(6));
        for (int i = 0; i < n; ++i) {
            auto kind = static_cast<ObservableKind>(rng.next_below(kObservableKinds));
            snap.detections.push_back(make_det(kind, rng.uniform(-kPi, kPi),
                                               rng.uniform(0.5, 40.0), rng.uniform(-12.0, 3.0),
                                               kGroundBit | kCarBit,
                                               rng.uniform(0.01, 0.3)));
        }
        RiskField raw = project_raw(snap, table, cfg);
        RiskField actual = rate_actualize(window, raw, cfg);
        window.push_back(RawFrame::of(raw));
        if (window.size() > 20) window.pop_front();
        state = smooth(state, actual, cfg);
        state = human_override(state, snap, rng.uniform(0, 15), table, cfg);
        for (double v : state.raw_safety()) {
            REQUIRE(v >= 0.01 - 1e-12);
            REQUIRE(v <= 1.0 + 1e-12);
        }
    }

    // bit-exact determinism over the same snapshot window
    SensorSnapshot snap;
    snap.detections.push_back(make_det(ObservableKind::structure, 0.3, 6.0, -4.0));
    RiskField a = project_raw(snap, table, cfg);
    RiskField b = project_raw(snap, table, cfg);
    CHECK(a.raw_safety() == b.raw_safety());
}

TEST_CASE("field dump round-trips through the binary format") {
    FieldConfig cfg;
    cfg.angular_bins = 16;
    cfg.radial_shells = 4;
    RiskField f(cfg);
    f.tick = 42;
    Rng rng(9);
    for (double& v : f.mutable_safety()) v = clamp_safety(rng.next_double());
    f.outer(Band::ground).safety = 0.25;

    std::stringstream ss;
    field_io::write_frame(ss, f);
    field_io::write_frame(ss, f);   // two frames in one stream

    field_io::Frame frame;
    REQUIRE(field_io::read_frame(ss, frame));
    CHECK(frame.tick == 42);
    CHECK(frame.shells == 4);
    CHECK(frame.bins == 16);
    for (std::size_t i = 0; i < frame.safety.size(); ++i)
        REQUIRE(frame.safety[i] == Catch::Approx(f.raw_safety()[i]).margin(5e-5));
    CHECK(frame.outer[0] == Catch::Approx(0.25).margin(5e-5));
    REQUIRE(field_io::read_frame(ss, frame));
    CHECK(!field_io::read_frame(ss, frame));

    std::ostringstream text;
    field_io::write_frame_text(text, f);
    CHECK(text.str().find("frame tick=42") != std::string::npos);
}
