#include <catch2/catch_amalgamated.hpp>

#include "homeodrive/homeostasis.hpp"
#include "homeodrive/rng.hpp"

using namespace homeo;

TEST_CASE("aggregate baseline and weighted sums") {
    HomeostasisState s;
    CHECK(aggregate(s) == Catch::Approx(1.0));

    s.body = 0.0;   // 0.25 + 0.20 + 0.20 with default weights
    CHECK(aggregate(s) == Catch::Approx(0.65));

    HomeostasisState p;
    p.passenger_onboard = true;
    p.passenger_health = 0.4;
    CHECK(aggregate(p) == Catch::Approx(0.4));
}

TEST_CASE("aggregate uses the virtual battery term") {
    HomeostasisState s;
    s = encode_destination(s, 0.30, 0.05);
    CHECK(s.battery_virtual == Catch::Approx(0.65));
    CHECK(s.battery_actual == Catch::Approx(1.0));
    CHECK(aggregate(s) == Catch::Approx(0.35 + 0.25 + 0.20 + 0.20 * 0.65));
}

TEST_CASE("apply_damage clamps and re-clamps the virtual battery") {
    HomeostasisState s;
    SECTION("zero damage is identity") {
        HomeostasisState out = apply_damage(s, {});
        CHECK(out.body == s.body);
        CHECK(out.battery_actual == s.battery_actual);
    }
    SECTION("body floors at zero") {
        s.body = 0.9;
        DamageVector dv;
        dv.body = 0.98;
        CHECK(apply_damage(s, dv).body == Catch::Approx(0.0));
    }
    SECTION("battery damage drags the virtual value down") {
        s.battery_actual = 0.5;
        s.battery_virtual = 0.45;
        DamageVector dv;
        dv.battery = 0.2;
        HomeostasisState out = apply_damage(s, dv);
        CHECK(out.battery_actual == Catch::Approx(0.3));
        CHECK(out.battery_virtual == Catch::Approx(0.3));
    }
}

TEST_CASE("encode_destination reserves cost plus premium") {
    HomeostasisState s;
    SECTION("standard trip") {
        HomeostasisState out = encode_destination(s, 0.30, 0.05);
        CHECK(out.battery_virtual == Catch::Approx(0.65));
    }
    SECTION("zero-cost trip still reserves the premium") {
        HomeostasisState out = encode_destination(s, 0.0, 0.05);
        CHECK(out.battery_virtual == Catch::Approx(s.battery_actual - 0.05));
    }
    SECTION("insufficient charge refuses the trip") {
        s.battery_actual = 0.2;
        s.battery_virtual = 0.2;
        CHECK_THROWS_AS(encode_destination(s, 0.3, 0.05), InsufficientCharge);
    }
}

TEST_CASE("award and redeem close the credit loop") {
    HomeostasisState s;
    s = encode_destination(s, 0.30, 0.05);
    s = award_credits(s, 0.30, 0.05);
    CHECK(s.credits == Catch::Approx(0.35));
    CHECK(s.battery_virtual == Catch::Approx(s.battery_actual));

    SECTION("consecutive trips accumulate") {
        HomeostasisState t = award_credits(s, 0.1, 0.05);
        CHECK(t.credits == Catch::Approx(0.5));
    }
    SECTION("redeem caps at full charge and consumes credits") {
        s.battery_actual = 0.7;
        s.battery_virtual = 0.7;
        s.credits = 0.9;
        HomeostasisState out = redeem_at_station(s);
        CHECK(out.battery_actual == Catch::Approx(1.0));
        CHECK(out.credits == Catch::Approx(0.0));
        CHECK(out.battery_virtual == Catch::Approx(1.0));
    }
    SECTION("redeem with no credits is a no-op on charge") {
        s.credits = 0.0;
        HomeostasisState out = redeem_at_station(s);
        CHECK(out.battery_actual == Catch::Approx(s.battery_actual));
    }
}

TEST_CASE("maintenance thresholds") {
    HomeostasisState s;
    CHECK(maintenance_check(s).verdict == MaintenanceDecision::Verdict::ok);

    s.engine = 0.2;
    auto d = maintenance_check(s);
    CHECK(d.verdict == MaintenanceDecision::Verdict::auto_disable);
    CHECK(d.component == "engine");

    HomeostasisState r;
    r.wheels = 0.5;
    r.engine = 0.9;
    auto d2 = maintenance_check(r);
    CHECK(d2.verdict == MaintenanceDecision::Verdict::auto_repair_route);
    CHECK(d2.component == "wheels");

    // disable outranks repair routing
    HomeostasisState both;
    both.engine = 0.1;
    both.body = 0.5;
    CHECK(maintenance_check(both).verdict == MaintenanceDecision::Verdict::auto_disable);
}

TEST_CASE("aggregate is monotone in every health field") {
    Rng rng(42);
    for (int i = 0; i < 500; ++i) {
        HomeostasisState s;
        s.body = rng.next_double();
        s.wheels = rng.next_double();
        s.engine = rng.next_double();
        s.battery_actual = rng.next_double();
        s.battery_virtual = s.battery_actual * rng.next_double();
        s.passenger_onboard = rng.next_double() < 0.5;
        s.passenger_health = rng.next_double();
        double base = aggregate(s);
        auto raised = [&](auto field) {
            HomeostasisState t = s;
            field(t);
            return aggregate(t);
        };
        CHECK(raised([](HomeostasisState& t) { t.body = std::min(1.0, t.body + 0.1); }) >= base);
        CHECK(raised([](HomeostasisState& t) { t.wheels = std::min(1.0, t.wheels + 0.1); }) >= base);
        CHECK(raised([](HomeostasisState& t) { t.engine = std::min(1.0, t.engine + 0.1); }) >= base);
        CHECK(raised([](HomeostasisState& t) {
                  t.battery_virtual = std::min(t.battery_actual, t.battery_virtual + 0.1);
              }) >= base);
        CHECK(raised([](HomeostasisState& t) {
                  t.passenger_health = std::min(1.0, t.passenger_health + 0.1);
              }) >= base);
    }
}

TEST_CASE("credit conservation across a full trip") {
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        double cost = rng.uniform(0.05, 0.4);
        double premium = 0.05;
        double consumed = rng.uniform(0.0, cost);
        HomeostasisState s;
        double before = s.battery_actual;
        s = encode_destination(s, cost, premium);
        s = drain_battery(s, consumed);
        s = award_credits(s, cost, premium);
        s = redeem_at_station(s);
        CHECK(s.battery_actual >= before - consumed - 1e-12);
    }
}

TEST_CASE("no operation trades structural health for charge") {
    // every op that raises battery_virtual must leave body and wheels alone
    Rng rng(99);
    for (int i = 0; i < 300; ++i) {
        HomeostasisState s;
        s.body = rng.next_double();
        s.wheels = rng.next_double();
        s.battery_actual = rng.uniform(0.5, 1.0);
        s.battery_virtual = s.battery_actual * rng.next_double();
        s.credits = rng.uniform(0.0, 0.5);

        auto check_op = [&](HomeostasisState out) {
            if (out.battery_virtual > s.battery_virtual + 1e-12) {
                CHECK(out.body >= s.body - 1e-12);
                CHECK(out.wheels >= s.wheels - 1e-12);
            }
        };
        check_op(award_credits(s, 0.1, 0.05));
        check_op(redeem_at_station(s));
        DamageVector dv;
        dv.body = rng.next_double() * 0.5;
        dv.wheels = rng.next_double() * 0.5;
        check_op(apply_damage(s, dv));
        check_op(drain_battery(s, rng.next_double() * 0.2));
    }
}

TEST_CASE("battery_virtual never exceeds battery_actual") {
    Rng rng(4242);
    for (int i = 0; i < 300; ++i) {
        HomeostasisState s;
        for (int step = 0; step < 20; ++step) {
            switch (rng.next_below(5)) {
                case 0: {
                    DamageVector dv;
                    dv.battery = rng.next_double() * 0.3;
                    dv.body = rng.next_double() * 0.3;
                    s = apply_damage(s, dv);
                    break;
                }
                case 1:
                    try {
                        s = encode_destination(s, rng.next_double() * 0.5, 0.05);
                    } catch (const InsufficientCharge&) {
                    }
                    break;
                case 2: s = award_credits(s, rng.next_double() * 0.3, 0.05); break;
                case 3: s = redeem_at_station(s); break;
                case 4: s = drain_battery(s, rng.next_double() * 0.1); break;
            }
            REQUIRE(s.battery_virtual <= s.battery_actual + 1e-12);
        }
    }
}
