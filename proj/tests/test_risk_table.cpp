#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "homeodrive/risk_table.hpp"

using namespace homeo;

TEST_CASE("bucketing boundaries") {
    CHECK(speed_bucket(0.5) == SpeedBucket::receding);
    CHECK(speed_bucket(0.05) == SpeedBucket::statik);
    CHECK(speed_bucket(-0.05) == SpeedBucket::statik);
    CHECK(speed_bucket(-1.9) == SpeedBucket::slow);
    CHECK(speed_bucket(-2.0) == SpeedBucket::med);
    CHECK(speed_bucket(-7.9) == SpeedBucket::med);
    CHECK(speed_bucket(-8.0) == SpeedBucket::fast);

    CHECK(distance_bucket(1.99) == DistanceBucket::lt2);
    CHECK(distance_bucket(2.0) == DistanceBucket::lt5);
    CHECK(distance_bucket(9.99) == DistanceBucket::lt10);
    CHECK(distance_bucket(10.0) == DistanceBucket::ge10);

    CHECK(kPatternKeySpace == 140);
}

TEST_CASE("seeded defaults") {
    RiskTable t = RiskTable::seeded();
    CHECK(t.estimate({ObservableKind::vehicle_like, SpeedBucket::med, DistanceBucket::lt5}) ==
          Catch::Approx(0.3));
    CHECK(t.estimate({ObservableKind::small_object, SpeedBucket::fast, DistanceBucket::lt2}) ==
          Catch::Approx(0.95));
    CHECK(t.estimate({ObservableKind::human, SpeedBucket::slow, DistanceBucket::lt10}) ==
          Catch::Approx(0.01));
    CHECK(t.estimate({ObservableKind::structure, SpeedBucket::statik, DistanceBucket::lt2}) ==
          Catch::Approx(0.1));
    CHECK(t.estimate({ObservableKind::station, SpeedBucket::receding, DistanceBucket::ge10}) ==
          Catch::Approx(1.0));
    CHECK(t.estimate({ObservableKind::marker, SpeedBucket::statik, DistanceBucket::lt5}) ==
          Catch::Approx(1.0));
    // unseeded key falls back to 0.5
    CHECK(t.estimate({ObservableKind::large_object, SpeedBucket::med, DistanceBucket::lt5}) ==
          Catch::Approx(0.5));
}

TEST_CASE("estimate is a pure lookup") {
    RiskTable t;
    std::size_t before = t.entries().size();
    t.estimate({ObservableKind::structure, SpeedBucket::fast, DistanceBucket::lt2});
    t.estimate({ObservableKind::structure, SpeedBucket::fast, DistanceBucket::lt2});
    CHECK(t.entries().size() == before);
}

TEST_CASE("calibration running mean") {
    PatternKey key{ObservableKind::structure, SpeedBucket::fast, DistanceBucket::lt2};
    RiskTable t;
    SECTION("zero losses converge to full safety") {
        t.calibrate_from_crash(key, 0.0);
        t.calibrate_from_crash(key, 0.0);
        CHECK(t.estimate(key) == Catch::Approx(1.0));
    }
    SECTION("running mean of {0.9, 0.7} gives safety 0.2") {
        t.calibrate_from_crash(key, 0.9);
        t.calibrate_from_crash(key, 0.7);
        CHECK(t.estimate(key) == Catch::Approx(0.2));
    }
    SECTION("total loss clamps at the floor") {
        t.calibrate_from_crash(key, 1.0);
        CHECK(t.estimate(key) == Catch::Approx(0.01));
    }
}

TEST_CASE("calibration converges to one minus the mean loss") {
    Rng rng(31);
    for (double mu : {0.1, 0.4, 0.75}) {
        RiskTable t;
        PatternKey key{ObservableKind::large_object, SpeedBucket::med, DistanceBucket::lt5};
        for (int i = 0; i < 100; ++i) {
            double loss = std::clamp(mu + rng.uniform(-0.1, 0.1), 0.0, 1.0);
            t.calibrate_from_crash(key, loss);
        }
        CHECK(t.estimate(key) == Catch::Approx(1.0 - mu).margin(0.05));
    }
}

TEST_CASE("human corrections override and annotate") {
    RiskTable t = RiskTable::seeded();
    PatternKey key{ObservableKind::human, SpeedBucket::slow, DistanceBucket::lt2};
    auto warnings = t.integrate_correction({{key, 0.6}});
    CHECK(warnings.empty());
    CHECK(t.estimate(key) == Catch::Approx(0.6));
    REQUIRE(t.entry(key) != nullptr);
    CHECK(t.entry(key)->human_sourced);

    SECTION("conflicting overrides resolve last-write-wins with a warning") {
        auto w2 = t.integrate_correction({{key, 0.4}, {key, 0.7}});
        REQUIRE(w2.size() == 1);
        CHECK(t.estimate(key) == Catch::Approx(0.7));
    }
    SECTION("out-of-range override throws") {
        CHECK_THROWS_AS(t.integrate_correction({{key, 1.5}}), std::out_of_range);
        CHECK_THROWS_AS(t.integrate_correction({{key, 0.0}}), std::out_of_range);
    }
}

TEST_CASE("table persists to a sorted diffable text file") {
    RiskTable t = RiskTable::seeded();
    t.calibrate_from_crash({ObservableKind::structure, SpeedBucket::fast, DistanceBucket::lt2},
                           0.42);
    std::ostringstream os;
    t.save(os);
    std::istringstream is(os.str());
    RiskTable back = RiskTable::load(is);
    CHECK(back == t);
    CHECK(os.str().rfind("# risk-table v1\n", 0) == 0);
    CHECK(os.str().find("structure/fast/lt2 0.5800000000000001,1,0.42") != std::string::npos);

    // saving twice is byte-identical
    std::ostringstream os2;
    t.save(os2);
    CHECK(os.str() == os2.str());
}

TEST_CASE("campaign split is deterministic and the report is honest") {
    std::vector<std::string> ids;
    for (int i = 0; i < 100; ++i) ids.push_back("crash_" + std::to_string(i));
    int heldout = 0;
    for (const auto& id : ids)
        if (is_heldout_scenario(id)) ++heldout;
    CHECK(heldout > 5);
    CHECK(heldout < 50);

    PatternKey key{ObservableKind::structure, SpeedBucket::fast, DistanceBucket::lt2};
    SECTION("synthetic campaign recovers the loss mean") {
        Rng rng(5);
        auto crash_fn = [&](const std::string&) -> std::optional<CrashObservation> {
            CrashObservation obs;
            obs.keys = {key};
            obs.realized_loss = std::clamp(0.35 + rng.uniform(-0.05, 0.05), 0.0, 1.0);
            return obs;
        };
        auto [table, report] = run_calibration_campaign(ids, RiskTable::untrained(), crash_fn);
        CHECK(report.n_crashes == 100);
        CHECK(report.n_scenarios_without_collision == 0);
        REQUIRE(!report.rows.empty());
        CHECK(report.mae < 0.05);
        CHECK(1.0 - table.estimate(key) == Catch::Approx(0.35).margin(0.05));
    }
    SECTION("collisionless scenarios are counted, not skipped") {
        auto crash_fn = [&](const std::string& id) -> std::optional<CrashObservation> {
            if (id == "crash_3" || id == "crash_4") return std::nullopt;
            CrashObservation obs;
            obs.keys = {key};
            obs.realized_loss = 0.2;
            return obs;
        };
        auto [table, report] = run_calibration_campaign(ids, RiskTable::untrained(), crash_fn);
        CHECK(report.n_scenarios_without_collision == 2);
        CHECK(report.n_crashes == 98);
    }
    SECTION("empty campaign is the identity") {
        auto crash_fn = [](const std::string&) -> std::optional<CrashObservation> {
            return std::nullopt;
        };
        RiskTable before = RiskTable::seeded();
        auto [table, report] = run_calibration_campaign({}, before, crash_fn);
        CHECK(table == before);
        CHECK(report.n_crashes == 0);
    }
}

TEST_CASE("pattern key text round-trip") {
    for (int i = 0; i < kPatternKeySpace; ++i) {
        PatternKey k = PatternKey::from_index(i);
        auto back = PatternKey::from_text(k.to_text());
        REQUIRE(back.has_value());
        CHECK(*back == k);
        CHECK(k.index() == i);
    }
    CHECK(!PatternKey::from_text("nonsense").has_value());
    CHECK(!PatternKey::from_text("human/slow").has_value());
}
