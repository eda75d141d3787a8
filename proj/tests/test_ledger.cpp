#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "homeodrive/ledger.hpp"
#include "homeodrive/rng.hpp"

using namespace homeo;

namespace {

IncidentRecord make_incident(const std::string& id, EnvironmentProfile profile,
                             bool unavoidable = false) {
    IncidentRecord rec;
    rec.record_id = id;
    rec.car_id = "car1";
    rec.profile = profile;
    for (int i = 0; i <= 240; ++i) {   // 12 s window at 50 ms
        SensorSnapshot s;
        s.tick = 1000 + i;
        s.ego_position = {static_cast<double>(i), 0.0};
        s.ego_speed = 8.0;
        if (i % 40 == 0) {
            Detection d;
            d.kind = ObservableKind::structure;
            d.distance = 20.0 - i * 0.05;
            d.radial_speed = -8.0;
            d.bands = kAllBands;
            d.entity_id = "wall";
            s.detections.push_back(d);
        }
        rec.window.push_back(s);
    }
    rec.active_sentences = {"set speed 30kph, drive 10s", "brake 0kph over 3s"};
    rec.outcome.body = 0.4;
    rec.aggregate_before = 1.0;
    rec.aggregate_after = 0.86;
    rec.unavoidable = unavoidable;
    return rec;
}

ValidationRecord make_validation(const std::string& record_id, bool approved = true,
                                 bool exclude = false) {
    ValidationRecord v;
    v.validator = "human1";
    v.record_id = record_id;
    v.alternate_manoeuvres = {"brake 0kph over 3s, hold 7s"};
    v.risk_overrides = {
        {{ObservableKind::small_object, SpeedBucket::fast, DistanceBucket::lt5}, 0.99}};
    v.approved = approved;
    v.exclude_from_training = exclude;
    return v;
}

} // namespace

TEST_CASE("chain construction from genesis") {
    Ledger ledger;
    REQUIRE(ledger.size() == 1);
    CHECK(ledger.block(0).prev_hash == Digest{});
    CHECK(ledger.block(0).kind == PayloadKind::genesis);

    const LedgerBlock& b1 = ledger.append_incident(make_incident("r1", EnvironmentProfile::urban), 7);
    CHECK(b1.index == 1);
    CHECK(b1.prev_hash == ledger.block(0).header_digest());

    ledger.append_validation(make_validation("r1"), 8);
    CHECK(ledger.size() == 3);   // two appends -> chain of 3
    CHECK(!ledger.verify_chain().has_value());
}

TEST_CASE("append validates its payloads") {
    Ledger ledger;
    SECTION("dangling validation reference") {
        CHECK_THROWS_WITH(ledger.append_validation(make_validation("ghost"), 1),
                          Catch::Matchers::ContainsSubstring("unknown record_id"));
    }
    SECTION("unavoidable incidents must be excluded from training") {
        ledger.append_incident(make_incident("r2", EnvironmentProfile::rural, true), 1);
        CHECK_THROWS_WITH(ledger.append_validation(make_validation("r2", true, false), 2),
                          Catch::Matchers::ContainsSubstring("exclude_from_training"));
        CHECK_NOTHROW(ledger.append_validation(make_validation("r2", true, true), 3));
    }
    SECTION("window span outside 10-20 s is rejected") {
        IncidentRecord bad = make_incident("r3", EnvironmentProfile::urban);
        bad.window.resize(50);   // 2.5 s
        CHECK_THROWS_WITH(ledger.append_incident(bad, 1),
                          Catch::Matchers::ContainsSubstring("10-20"));
    }
    SECTION("out-of-range override value") {
        ledger.append_incident(make_incident("r4", EnvironmentProfile::urban), 1);
        ValidationRecord v = make_validation("r4");
        v.risk_overrides[0].second = 0.001;
        CHECK_THROWS_AS(ledger.append_validation(v, 2), LedgerError);
    }
}

TEST_CASE("payload serialization round-trips") {
    IncidentRecord rec = make_incident("r1", EnvironmentProfile::suburban, true);
    IncidentRecord back = deserialize_incident(serialize(rec));
    CHECK(back.record_id == rec.record_id);
    CHECK(back.car_id == rec.car_id);
    CHECK(back.profile == rec.profile);
    CHECK(back.window.size() == rec.window.size());
    CHECK(back.window[40].detections.size() == rec.window[40].detections.size());
    CHECK(back.active_sentences == rec.active_sentences);
    CHECK(back.outcome == rec.outcome);
    CHECK(back.unavoidable == rec.unavoidable);

    ValidationRecord v = make_validation("r1", true, true);
    ValidationRecord vback = deserialize_validation(serialize(v));
    CHECK(vback.validator == v.validator);
    CHECK(vback.record_id == v.record_id);
    CHECK(vback.alternate_manoeuvres == v.alternate_manoeuvres);
    CHECK(vback.risk_overrides == v.risk_overrides);
    CHECK(vback.approved == v.approved);
    CHECK(vback.exclude_from_training == v.exclude_from_training);
}

TEST_CASE("tamper detection over the persisted file") {
    Ledger ledger;
    ledger.append_incident(make_incident("r1", EnvironmentProfile::urban), 1);
    ledger.append_validation(make_validation("r1"), 2);
    ledger.append_incident(make_incident("r2", EnvironmentProfile::rural), 3);
    std::ostringstream os;
    ledger.save(os);
    std::string bytes = os.str();

    SECTION("untouched ledger verifies") {
        std::istringstream is(bytes);
        CHECK(!Ledger::load(is).verify_chain().has_value());
    }
    SECTION("single-bit mutations are always detected") {
        Rng rng(55);
        int detected = 0;
        const int trials = 200;
        for (int i = 0; i < trials; ++i) {
            std::string mutated = bytes;
            std::size_t pos = 4 + rng.next_below(mutated.size() - 4);   // keep the magic
            mutated[pos] = static_cast<char>(mutated[pos] ^ (1 << rng.next_below(8)));
            std::istringstream is(mutated);
            try {
                Ledger l = Ledger::load(is);
                if (l.verify_chain().has_value()) ++detected;
            } catch (const std::exception&) {
                ++detected;   // refusing to load is detection too
            }
        }
        CHECK(detected == trials);
    }
    SECTION("a payload flip reports the mutated block") {
        // find a byte inside block 2's payload region by re-saving with a
        // mutated in-memory copy
        std::istringstream is(bytes);
        Ledger l = Ledger::load(is);
        // recompute offset: flip one byte of block 2's payload in the file
        // via a brute scan: the first mutation that loads cleanly but fails
        // verification at index 2
        bool found = false;
        for (std::size_t pos = 4; pos < bytes.size() && !found; ++pos) {
            std::string mutated = bytes;
            mutated[pos] = static_cast<char>(mutated[pos] ^ 0x01);
            std::istringstream mis(mutated);
            try {
                Ledger ml = Ledger::load(mis);
                auto bad = ml.verify_chain();
                if (bad && *bad == 2) found = true;
            } catch (const std::exception&) {
            }
        }
        CHECK(found);
    }
}

TEST_CASE("append-only: appends never change existing blocks") {
    Ledger ledger;
    ledger.append_incident(make_incident("r1", EnvironmentProfile::urban), 1);
    std::ostringstream before;
    ledger.save(before);
    std::string prefix = before.str();
    ledger.append_incident(make_incident("r2", EnvironmentProfile::urban), 2);
    std::ostringstream after;
    ledger.save(after);
    // the serialized prefix (minus the head record) is unchanged
    std::string prefix_blocks = prefix.substr(0, prefix.size() - 36);
    CHECK(after.str().compare(0, prefix_blocks.size(), prefix_blocks) == 0);
}

TEST_CASE("relevance filtering scores settings and key overlap") {
    Ledger ledger;
    ledger.append_incident(make_incident("urban1", EnvironmentProfile::urban), 1);
    ledger.append_validation(make_validation("urban1"), 2);
    ledger.append_incident(make_incident("rural1", EnvironmentProfile::rural), 3);
    ledger.append_validation(make_validation("rural1"), 4);
    ledger.append_incident(make_incident("sub1", EnvironmentProfile::suburban), 5);
    ledger.append_validation(make_validation("sub1"), 6);

    SECTION("urban car: urban first, rural filtered out") {
        auto out = filter_relevant(ledger, EnvironmentProfile::urban, {});
        REQUIRE(out.size() == 1);
        CHECK(out[0].validation.record_id == "urban1");
        CHECK(out[0].score == 2);
    }
    SECTION("key overlap lifts adjacent records over the threshold") {
        std::set<PatternKey> history{
            {ObservableKind::small_object, SpeedBucket::fast, DistanceBucket::lt5}};
        auto out = filter_relevant(ledger, EnvironmentProfile::urban, history);
        REQUIRE(out.size() == 2);
        CHECK(out[0].validation.record_id == "urban1");   // score 3
        CHECK(out[0].score == 3);
        CHECK(out[1].validation.record_id == "sub1");     // adjacent + overlap = 2
        CHECK(out[1].score == 2);
    }
    SECTION("excluded and unapproved records never surface") {
        Ledger l2;
        l2.append_incident(make_incident("a", EnvironmentProfile::urban), 1);
        l2.append_validation(make_validation("a", true, true), 2);    // excluded
        l2.append_incident(make_incident("b", EnvironmentProfile::urban), 3);
        l2.append_validation(make_validation("b", false, false), 4);  // unapproved
        CHECK(filter_relevant(l2, EnvironmentProfile::urban, {}).empty());
    }
    SECTION("empty ledger gives an empty list") {
        Ledger l2;
        CHECK(filter_relevant(l2, EnvironmentProfile::urban, {}).empty());
    }
}

TEST_CASE("regression gate accepts only non-worsening candidates") {
    RiskTable incumbent = RiskTable::seeded();
    Ledger ledger;
    ledger.append_incident(make_incident("r1", EnvironmentProfile::urban), 1);
    ledger.append_validation(make_validation("r1"), 2);
    auto records = filter_relevant(ledger, EnvironmentProfile::urban, {});
    REQUIRE(records.size() == 1);
    PatternKey overridden{ObservableKind::small_object, SpeedBucket::fast, DistanceBucket::lt5};

    SECTION("improving candidate is adopted") {
        auto suite = [&](const RiskTable& t) {
            SuiteStats s;
            s.ok = true;
            s.incidents = t.estimate(overridden) > 0.9 ? 1 : 3;
            s.calibration_mae = 0.05;
            return s;
        };
        auto [table, report] = integrate_with_regression_gate(incumbent, records, suite);
        CHECK(report.accepted);
        CHECK(table.estimate(overridden) == Catch::Approx(0.99));
        CHECK(report.candidate.incidents < report.incumbent.incidents);
    }
    SECTION("incident-increasing candidate is rejected, incumbent kept") {
        auto suite = [&](const RiskTable& t) {
            SuiteStats s;
            s.ok = true;
            s.incidents = t.estimate(overridden) > 0.9 ? 5 : 1;
            s.calibration_mae = 0.05;
            return s;
        };
        auto [table, report] = integrate_with_regression_gate(incumbent, records, suite);
        CHECK(!report.accepted);
        CHECK(table == incumbent);
    }
    SECTION("MAE-worsening candidate is rejected") {
        auto suite = [&](const RiskTable& t) {
            SuiteStats s;
            s.ok = true;
            s.incidents = 1;
            s.calibration_mae = t.estimate(overridden) > 0.9 ? 0.2 : 0.05;
            return s;
        };
        auto [table, report] = integrate_with_regression_gate(incumbent, records, suite);
        CHECK(!report.accepted);
        CHECK(table == incumbent);
    }
    SECTION("suite failure is a gate failure, never silent acceptance") {
        auto suite = [&](const RiskTable&) {
            SuiteStats s;
            s.ok = false;
            s.error = "scenario exploded";
            return s;
        };
        auto [table, report] = integrate_with_regression_gate(incumbent, records, suite);
        CHECK(!report.accepted);
        CHECK(report.reason.find("suite execution failure") != std::string::npos);
        CHECK(table == incumbent);
    }
    SECTION("no records: trivially passes with the incumbent") {
        auto suite = [&](const RiskTable&) {
            FAIL("suite must not run");
            return SuiteStats{};
        };
        auto [table, report] = integrate_with_regression_gate(incumbent, {}, suite);
        CHECK(report.accepted);
        CHECK(table == incumbent);
    }
}

TEST_CASE("validation record files parse and reject bad content") {
    ValidationRecord rec = load_validation_text(R"({
        "schema": 1,
        "validator": "reviewer7",
        "record_id": "car1-t123",
        "alternate_manoeuvres": ["brake 0kph over 5m", "hold 2s"],
        "risk_overrides": {"small_object/fast/lt5": 0.99},
        "approved": true,
        "exclude_from_training": false
    })");
    CHECK(rec.validator == "reviewer7");
    REQUIRE(rec.risk_overrides.size() == 1);
    CHECK(rec.risk_overrides[0].second == 0.99);

    CHECK_THROWS_AS(load_validation_text(R"({"schema": 1, "validator": "v",
        "record_id": "x", "alternate_manoeuvres": ["frobnicate 3s"]})"),
                    lang::ParseError);
    CHECK_THROWS_WITH(load_validation_text(R"({"schema": 1, "validator": "v",
        "record_id": "x", "risk_overrides": {"bogus/key/form": 0.5}})"),
                      Catch::Matchers::ContainsSubstring("bad key"));
}
